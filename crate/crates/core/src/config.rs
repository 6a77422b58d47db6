//! Run configuration files.
//!
//! A config is TOML with flat sections. Every key carries its unit in its
//! name: `_g1` for rates in units of γ̃₁, `_g1inv` for times in units of
//! 1/γ̃₁, `_gauss` for magnetic fields. Unset keys take the defaults of
//! [`SystemConfig::benchmark`] and [`SimulationPlan::default`]; unknown keys
//! are errors.
//!
//! ```toml
//! [system]
//! omega1_g1 = 1.0
//! delta_g1 = 0.01
//!
//! [noise]
//! model = "white"
//! d_g1 = 0.1
//!
//! [ensemble]
//! n_trajectories = 4
//! master_seed = 7
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::ZeemanParams;
use crate::dynamics::{RateSet, SystemConfig};
use crate::noise::{NoiseModel, PhaseNoise, WHITE_LIMIT_RATIO};
use crate::observables::{ChannelPairing, DetuningAxis, SecondaryAxis, SimulationPlan, SweepSpec};
use crate::{Error, Result};

pub const DEFAULT_TAU_MAX: f64 = 10.0;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawFile {
    rates: RawRates,
    system: RawSystem,
    noise: RawNoise,
    integration: RawIntegration,
    ensemble: RawEnsemble,
    sweep: Option<RawSweep>,
    zeeman: RawZeeman,
    calibration: RawCalibration,
    output: RawOutput,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawRates {
    g1_tilde_g1: Option<f64>,
    g2_tilde_g1: Option<f64>,
    g3_tilde_g1: Option<f64>,
    d21_g1: Option<f64>,
    d12_g1: Option<f64>,
    d32_g1: Option<f64>,
    d31_g1: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSystem {
    omega1_g1: Option<f64>,
    omega2_g1: Option<f64>,
    delta_g1: Option<f64>,
    delta1_g1: Option<f64>,
    kappa1_l: Option<f64>,
    kappa2_l: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawNoise {
    model: Option<String>,
    d_g1: Option<f64>,
    lambda_ratio: Option<f64>,
    theta_g1: Option<f64>,
    lambda_l_g1: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawIntegration {
    dt_g1inv: Option<f64>,
    dt_scale: Option<f64>,
    t_end_g1inv: Option<f64>,
    t_transient_g1inv: Option<f64>,
    dt_record_g1inv: Option<f64>,
    record_span_g1inv: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawEnsemble {
    n_trajectories: Option<usize>,
    master_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSweep {
    delta_g1: Option<Vec<f64>>,
    delta_over_gamma3: Option<Vec<f64>>,
    b_gauss: Option<Vec<f64>>,
    alpha_gauss: Option<f64>,
    gamma3_g1: Option<Vec<f64>>,
    omega_g1: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawZeeman {
    g_factor: Option<f64>,
    delta_m: Option<i32>,
    mu_b_over_hbar_mhz_per_gauss: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawCalibration {
    eit_width_gauss: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawOutput {
    pairing: Option<String>,
    tau_max_g1inv: Option<f64>,
}

/// Fully validated run description.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    /// System parameters; the noise field holds the resolved noise.
    pub system: SystemConfig,
    pub plan: SimulationPlan,
    pub sweep: Option<SweepSpec>,
    pub zeeman: ZeemanParams,
    pub eit_width_gauss: Option<f64>,
    pub tau_max: f64,
    /// Config text as read.
    #[serde(skip)]
    pub source: String,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let raw: RawFile = toml::from_str(text).map_err(|e| Error::Config {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let mut cfg = build(raw)?;
    cfg.source = text.to_string();
    cfg.validate()?;
    Ok(cfg)
}

fn build(raw: RawFile) -> Result<RunConfig> {
    let mut system = SystemConfig::benchmark(0.0);
    let r = &raw.rates;
    let base = system.rates;
    system.rates = RateSet {
        g1_tilde: r.g1_tilde_g1.unwrap_or(base.g1_tilde),
        g2_tilde: r.g2_tilde_g1.unwrap_or(base.g2_tilde),
        g3_tilde: r.g3_tilde_g1.unwrap_or(base.g3_tilde),
        d21: r.d21_g1.unwrap_or(base.d21),
        d12: r.d12_g1.unwrap_or(base.d12),
        d32: r.d32_g1.unwrap_or(base.d32),
        d31: r.d31_g1.unwrap_or(base.d31),
    };
    let s = &raw.system;
    system.omega1 = s.omega1_g1.unwrap_or(system.omega1);
    // Ω₂ follows Ω₁ unless given.
    system.omega2 = s.omega2_g1.unwrap_or(system.omega1);
    system.delta = s.delta_g1.unwrap_or(system.delta);
    system.delta1 = s.delta1_g1.unwrap_or(system.delta1);
    system.kappa1_l = s.kappa1_l.unwrap_or(system.kappa1_l);
    system.kappa2_l = s.kappa2_l.unwrap_or(system.kappa2_l);

    let n = &raw.noise;
    let noise = match n.model.as_deref().unwrap_or("white") {
        "white" => {
            if n.theta_g1.is_some() || n.lambda_l_g1.is_some() {
                return Err(Error::Validation(
                    "noise: theta_g1 and lambda_l_g1 belong to model = \"colored\"".into(),
                ));
            }
            NoiseModel::White {
                d: n.d_g1.unwrap_or(0.1),
                ratio: n.lambda_ratio.unwrap_or(WHITE_LIMIT_RATIO),
            }
        }
        "colored" => {
            if n.d_g1.is_some() || n.lambda_ratio.is_some() {
                return Err(Error::Validation(
                    "noise: d_g1 and lambda_ratio belong to model = \"white\"".into(),
                ));
            }
            match (n.theta_g1, n.lambda_l_g1) {
                (Some(theta), Some(lambda_l)) => {
                    NoiseModel::Colored(PhaseNoise { theta, lambda_l })
                }
                _ => {
                    return Err(Error::Validation(
                        "noise: colored model needs theta_g1 and lambda_l_g1".into(),
                    ))
                }
            }
        }
        other => {
            return Err(Error::Validation(format!(
                "noise: unknown model {other:?}, expected \"white\" or \"colored\""
            )))
        }
    };

    let defaults = SimulationPlan::default();
    let i = &raw.integration;
    let e = &raw.ensemble;
    let pairing = match raw.output.pairing.as_deref().unwrap_or("transmitted") {
        "transmitted" => ChannelPairing::Transmitted,
        "propagation" => ChannelPairing::Propagation,
        other => {
            return Err(Error::Validation(format!(
                "output: unknown pairing {other:?}, expected \"transmitted\" or \"propagation\""
            )))
        }
    };
    let plan = SimulationPlan {
        noise,
        record_span: i.record_span_g1inv,
        t_end: i.t_end_g1inv,
        transient: i.t_transient_g1inv,
        dt_record: i.dt_record_g1inv.unwrap_or(defaults.dt_record),
        dt: i.dt_g1inv,
        dt_scale: i.dt_scale.unwrap_or(defaults.dt_scale),
        n_trajectories: e.n_trajectories.unwrap_or(defaults.n_trajectories),
        master_seed: e.master_seed.unwrap_or(defaults.master_seed),
        pairing,
    };

    let sweep = raw.sweep.map(build_sweep).transpose()?;

    let z = &raw.zeeman;
    let zd = ZeemanParams::rb87();
    let zeeman = ZeemanParams {
        g_factor: z.g_factor.unwrap_or(zd.g_factor),
        delta_m: z.delta_m.unwrap_or(zd.delta_m),
        mu_b_over_hbar: z.mu_b_over_hbar_mhz_per_gauss.unwrap_or(zd.mu_b_over_hbar),
    };

    Ok(RunConfig {
        system,
        plan,
        sweep,
        zeeman,
        eit_width_gauss: raw.calibration.eit_width_gauss,
        tau_max: raw.output.tau_max_g1inv.unwrap_or(DEFAULT_TAU_MAX),
        source: String::new(),
    })
}

fn build_sweep(s: RawSweep) -> Result<SweepSpec> {
    let detuning = match (s.delta_g1, s.delta_over_gamma3, s.b_gauss) {
        (Some(v), None, None) => DetuningAxis::Delta(v),
        (None, Some(v), None) => DetuningAxis::Scaled(v),
        (None, None, Some(b_gauss)) => DetuningAxis::Field {
            b_gauss,
            alpha_gauss: s.alpha_gauss.unwrap_or(1.0),
        },
        _ => {
            return Err(Error::Validation(
                "sweep: give exactly one of delta_g1, delta_over_gamma3, b_gauss".into(),
            ))
        }
    };
    if s.alpha_gauss.is_some() && !matches!(detuning, DetuningAxis::Field { .. }) {
        return Err(Error::Validation(
            "sweep: alpha_gauss requires b_gauss".into(),
        ));
    }
    let secondary = match (s.gamma3_g1, s.omega_g1) {
        (None, None) => SecondaryAxis::Fixed,
        (Some(v), None) => SecondaryAxis::Gamma3(v),
        (None, Some(v)) => SecondaryAxis::Rabi(v),
        _ => {
            return Err(Error::Validation(
                "sweep: gamma3_g1 and omega_g1 cannot both be swept".into(),
            ))
        }
    };
    Ok(SweepSpec {
        detuning,
        secondary,
    })
}

impl RunConfig {
    /// Check every invariant a run relies on, including each sweep point.
    pub fn validate(&mut self) -> Result<()> {
        let p = &self.plan;
        if p.n_trajectories == 0 {
            return Err(Error::param("n_trajectories", "must be >= 1"));
        }
        if !(p.dt_record > 0.0) {
            return Err(Error::param("dt_record_g1inv", "must be > 0"));
        }
        if !(p.dt_scale > 0.0 && p.dt_scale <= 1.0) {
            return Err(Error::param("dt_scale", "must lie in (0, 1]"));
        }
        for (name, v) in [
            ("dt_g1inv", p.dt),
            ("t_end_g1inv", p.t_end),
            ("record_span_g1inv", p.record_span),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::param(name, "must be > 0"));
                }
            }
        }
        if let Some(tr) = p.transient {
            if !(tr >= 0.0) {
                return Err(Error::param("t_transient_g1inv", "must be >= 0"));
            }
        }
        if !(self.tau_max >= 0.0) {
            return Err(Error::param("tau_max_g1inv", "must be >= 0"));
        }
        if let Some(w) = self.eit_width_gauss {
            if !(w > 0.0) {
                return Err(Error::param("eit_width_gauss", "must be > 0"));
            }
        }
        self.zeeman.validate()?;
        self.system = self.plan.configure(self.system)?;
        self.plan.integration(&self.system)?;
        if let Some(spec) = &self.sweep {
            for (_, _, point) in spec.grid(&self.system)? {
                let point = self.plan.configure(point)?;
                self.plan.integration(&point)?;
            }
        }
        Ok(())
    }
}
