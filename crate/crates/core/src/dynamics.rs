//! Stochastic density-matrix dynamics of the three-level Λ system.
//!
//! Level `a` is the common excited state; `b` and `c` are the two ground
//! states. Field 1 (Rabi frequency Ω₁) couples `a`–`b`, field 2 (Ω₂) couples
//! `a`–`c`. Five components are evolved: the populations `ρ_bb`, `ρ_cc` and
//! the coherences `ρ_bc`, `ρ_ba`, `ρ_ca`; `ρ_aa = 1 - ρ_bb - ρ_cc` and every
//! daggered component is obtained by conjugation.
//!
//! The laser frequency noise ξ(t) enters both optical coherences as `+iξρ`.
//! Because ξ is a colored process with finite `λ_L`, the equations are
//! integrated as ordinary ODEs with the explicit Euler scheme and no
//! stochastic-calculus correction; the white-noise limit is reached as
//! `λ_L → ∞`.
//!
//! Averaging the multiplicative noise over Gaussian white realizations with
//! `⟨ξ(t)ξ(s)⟩ = 2D δ(t-s)` gives `dΨ̄/dt = M₀Ψ̄ - D M²Ψ̄`, where `M` is
//! diagonal with `±1` on the optical coherences and zero elsewhere. `M²` is
//! therefore the identity on `ρ_ba`, `ρ_ca` (and their conjugates), so the
//! averaged system is the noiseless one with `γ₁ → γ₁ + D`, `γ₂ → γ₂ + D`.
//! [`integrate_averaged`] integrates exactly that.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseStream, PhaseNoise};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Magnitude above which any component counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 10.0;
/// Tolerance on populations leaving [0, 1].
pub const POPULATION_TOLERANCE: f64 = 1e-6;
/// Tolerance on `|ρ_ij|² ≤ ρ_ii ρ_jj`.
pub const POSITIVITY_TOLERANCE: f64 = 1e-4;
/// Courant-like factor of the step-size rule.
pub const STEP_SAFETY: f64 = 0.05;

/// Raw decay and dephasing rates, in units of γ̃₁.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    pub g1_tilde: f64,
    pub g2_tilde: f64,
    pub g3_tilde: f64,
    pub d21: f64,
    pub d12: f64,
    pub d32: f64,
    pub d31: f64,
}

impl RateSet {
    /// Radiative decay only: γ̃₁ = γ̃₂ = 1, everything else zero.
    pub fn radiative() -> Self {
        RateSet {
            g1_tilde: 1.0,
            g2_tilde: 1.0,
            g3_tilde: 0.0,
            d21: 0.0,
            d12: 0.0,
            d32: 0.0,
            d31: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("g1_tilde", self.g1_tilde),
            ("g2_tilde", self.g2_tilde),
            ("g3_tilde", self.g3_tilde),
            ("d21", self.d21),
            ("d12", self.d12),
            ("d32", self.d32),
            ("d31", self.d31),
        ];
        for (name, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(
                    name,
                    format!("rate {v} must be finite and >= 0"),
                ));
            }
        }
        Ok(())
    }

    /// Set γ₃ by splitting `2γ₃ - γ̃₃` evenly between `d12` and `d21`.
    ///
    /// Keeps the b ↔ c symmetry of the rate set intact.
    pub fn with_gamma3(mut self, gamma3: f64) -> Result<Self> {
        let ground = 2.0 * gamma3 - self.g3_tilde;
        if !(ground >= 0.0) {
            return Err(Error::param(
                "gamma3",
                format!("gamma3 = {gamma3} is below g3_tilde / 2"),
            ));
        }
        self.d12 = 0.5 * ground;
        self.d21 = 0.5 * ground;
        Ok(self)
    }
}

/// Effective relaxation rates of the coherences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveRates {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

pub fn effective_rates(r: &RateSet) -> EffectiveRates {
    EffectiveRates {
        gamma3: (r.g3_tilde + r.d21 + r.d12) / 2.0,
        gamma1: (r.g1_tilde + r.g2_tilde + r.d21 + r.d31) / 2.0,
        gamma2: (r.g1_tilde + r.g2_tilde + r.g3_tilde + r.d12 + r.d32) / 2.0,
    }
}

/// Physical parameters of one simulation, in units of γ̃₁.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub rates: RateSet,
    pub omega1: f64,
    pub omega2: f64,
    /// Two-photon detuning Δ.
    pub delta: f64,
    /// One-photon detuning Δ₁.
    pub delta1: f64,
    pub kappa1_l: f64,
    pub kappa2_l: f64,
    pub noise: PhaseNoise,
}

impl SystemConfig {
    /// Symmetric Λ system: γ̃₁ = γ̃₂ = 1, γ̃₁₂ = γ̃₂₁ = 0.01, Ω₁ = Ω₂ = 1, white
    /// phase noise with D = 0.1 and λ_L = 50.
    pub fn benchmark(delta: f64) -> Self {
        SystemConfig {
            rates: RateSet {
                d12: 0.01,
                d21: 0.01,
                ..RateSet::radiative()
            },
            omega1: 1.0,
            omega2: 1.0,
            delta,
            delta1: 0.0,
            kappa1_l: 0.1,
            kappa2_l: 0.1,
            noise: PhaseNoise {
                theta: 0.1,
                lambda_l: 50.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        self.noise.validate()?;
        for (name, v) in [("omega1", self.omega1), ("omega2", self.omega2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(
                    name,
                    format!("Rabi frequency {v} must be >= 0"),
                ));
            }
        }
        for (name, v) in [("delta", self.delta), ("delta1", self.delta1)] {
            if !v.is_finite() {
                return Err(Error::param(name, "detuning must be finite"));
            }
        }
        for (name, v) in [("kappa1_l", self.kappa1_l), ("kappa2_l", self.kappa2_l)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::param(
                    name,
                    format!("{v} violates the thin-medium bound 0 <= kappa*L < 1"),
                ));
            }
        }
        Ok(())
    }

    pub fn effective_rates(&self) -> EffectiveRates {
        effective_rates(&self.rates)
    }

    /// Rate that sets the white-noise correlation time: max(γ̃₁, Ω₁, Ω₂).
    pub fn noise_reference_rate(&self) -> f64 {
        self.rates.g1_tilde.max(self.omega1).max(self.omega2)
    }

    /// Largest admissible Euler step.
    pub fn dt_max(&self) -> f64 {
        let e = self.effective_rates();
        let fastest = [
            e.gamma1,
            e.gamma2,
            self.omega1,
            self.omega2,
            self.delta1.abs(),
            self.noise.lambda_l,
        ]
        .into_iter()
        .fold(0.0, f64::max);
        if fastest > 0.0 {
            STEP_SAFETY / fastest
        } else {
            f64::INFINITY
        }
    }

    /// Transient discarded before recording: 20 / min(γ₃, γ₁).
    pub fn relaxation_time(&self) -> f64 {
        let e = self.effective_rates();
        let slowest = e.gamma3.min(e.gamma1);
        if slowest > 0.0 {
            20.0 / slowest
        } else {
            20.0 / e.gamma1.max(e.gamma2).max(1e-300)
        }
    }

    /// Copy with the noise replaced.
    pub fn with_noise(mut self, noise: PhaseNoise) -> Self {
        self.noise = noise;
        self
    }
}

/// The five independent density-matrix components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityState {
    pub rho_bb: f64,
    pub rho_cc: f64,
    pub rho_bc: Complex64,
    pub rho_ba: Complex64,
    pub rho_ca: Complex64,
}

/// Time derivative of a [`DensityState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub rho_bb: f64,
    pub rho_cc: f64,
    pub rho_bc: Complex64,
    pub rho_ba: Complex64,
    pub rho_ca: Complex64,
}

impl StateDerivative {
    pub fn max_abs(&self) -> f64 {
        [
            self.rho_bb.abs(),
            self.rho_cc.abs(),
            self.rho_bc.norm(),
            self.rho_ba.norm(),
            self.rho_ca.norm(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl Default for DensityState {
    fn default() -> Self {
        Self::unpolarized()
    }
}

impl DensityState {
    /// Ground population split evenly, no coherences.
    pub fn unpolarized() -> Self {
        DensityState {
            rho_bb: 0.5,
            rho_cc: 0.5,
            rho_bc: Complex64::new(0.0, 0.0),
            rho_ba: Complex64::new(0.0, 0.0),
            rho_ca: Complex64::new(0.0, 0.0),
        }
    }

    pub fn rho_aa(&self) -> f64 {
        1.0 - self.rho_bb - self.rho_cc
    }

    pub fn rho_ab(&self) -> Complex64 {
        self.rho_ba.conj()
    }

    pub fn rho_ac(&self) -> Complex64 {
        self.rho_ca.conj()
    }

    pub fn rho_cb(&self) -> Complex64 {
        self.rho_bc.conj()
    }

    pub fn advanced(&self, d: &StateDerivative, dt: f64) -> Self {
        DensityState {
            rho_bb: self.rho_bb + dt * d.rho_bb,
            rho_cc: self.rho_cc + dt * d.rho_cc,
            rho_bc: self.rho_bc + d.rho_bc * dt,
            rho_ba: self.rho_ba + d.rho_ba * dt,
            rho_ca: self.rho_ca + d.rho_ca * dt,
        }
    }

    /// Largest component and its name, for the divergence guard.
    fn largest(&self) -> (&'static str, f64) {
        [
            ("rho_bb", self.rho_bb.abs()),
            ("rho_cc", self.rho_cc.abs()),
            ("rho_bc", self.rho_bc.norm()),
            ("rho_ba", self.rho_ba.norm()),
            ("rho_ca", self.rho_ca.norm()),
        ]
        .into_iter()
        .fold(("rho_bb", f64::NAN), |best, cur| {
            if !(cur.1 <= best.1) {
                cur
            } else {
                best
            }
        })
    }

    fn diverged(&self) -> Option<(&'static str, f64)> {
        let (name, m) = self.largest();
        (!(m <= DIVERGENCE_LIMIT)).then_some((name, m))
    }

    /// Populations within tolerance of [0, 1].
    pub fn populations_ok(&self) -> bool {
        let eps = POPULATION_TOLERANCE;
        [self.rho_aa(), self.rho_bb, self.rho_cc]
            .iter()
            .all(|p| (-eps..=1.0 + eps).contains(p))
    }

    /// Soft positivity check on every coherence.
    pub fn positivity_ok(&self) -> bool {
        let eps = POSITIVITY_TOLERANCE;
        let aa = self.rho_aa();
        self.rho_bc.norm_sqr() <= self.rho_bb * self.rho_cc + eps
            && self.rho_ba.norm_sqr() <= self.rho_bb * aa + eps
            && self.rho_ca.norm_sqr() <= self.rho_cc * aa + eps
    }
}

/// Constant coefficients of the equations of motion for one configuration.
#[derive(Debug, Clone, Copy)]
struct Coefficients {
    /// γ₃ + iΔ
    bc: Complex64,
    /// γ₁ + iΔ₁
    ba: Complex64,
    /// γ₂ - iΔ₁
    ca: Complex64,
    omega1: f64,
    omega2: f64,
    g1_tilde: f64,
    g2_tilde: f64,
    g3_tilde: f64,
}

impl Coefficients {
    fn new(cfg: &SystemConfig, extra_damping: f64) -> Self {
        let e = cfg.effective_rates();
        Coefficients {
            bc: Complex64::new(e.gamma3, cfg.delta),
            ba: Complex64::new(e.gamma1 + extra_damping, cfg.delta1),
            ca: Complex64::new(e.gamma2 + extra_damping, -cfg.delta1),
            omega1: cfg.omega1,
            omega2: cfg.omega2,
            g1_tilde: cfg.rates.g1_tilde,
            g2_tilde: cfg.rates.g2_tilde,
            g3_tilde: cfg.rates.g3_tilde,
        }
    }

    #[inline]
    fn drift(&self, s: &DensityState, xi: f64) -> StateDerivative {
        let aa = s.rho_aa();
        let (o1, o2) = (self.omega1, self.omega2);
        let noise = Complex64::new(0.0, xi);
        StateDerivative {
            rho_bc: -self.bc * s.rho_bc + I * o1 * s.rho_ca.conj() - I * o2 * s.rho_ba,
            rho_ba: -self.ba * s.rho_ba - I * o1 * (s.rho_bb - aa) - I * o2 * s.rho_bc
                + noise * s.rho_ba,
            rho_ca: -self.ca * s.rho_ca - I * o2 * (s.rho_cc - aa) - I * o1 * s.rho_bc.conj()
                + noise * s.rho_ca,
            // iΩ(ρ† - ρ) = 2Ω Im ρ
            rho_bb: self.g3_tilde * s.rho_cc + self.g1_tilde * aa + 2.0 * o1 * s.rho_ba.im,
            rho_cc: self.g2_tilde * aa - self.g3_tilde * s.rho_cc + 2.0 * o2 * s.rho_ca.im,
        }
    }
}

/// Right-hand side of the equations of motion with φ̇ replaced by `xi`.
pub fn drift(state: &DensityState, cfg: &SystemConfig, xi: f64) -> StateDerivative {
    Coefficients::new(cfg, 0.0).drift(state, xi)
}

/// Right-hand side of the stochastically averaged equations for diffusion `d`.
pub fn averaged_drift(state: &DensityState, cfg: &SystemConfig, d: f64) -> StateDerivative {
    Coefficients::new(cfg, d).drift(state, 0.0)
}

/// One explicit Euler step.
pub fn step(state: &DensityState, cfg: &SystemConfig, xi: f64, dt: f64) -> DensityState {
    state.advanced(&drift(state, cfg, xi), dt)
}

/// Time grid of an integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integration {
    pub dt: f64,
    pub t_end: f64,
    pub t_transient: f64,
    /// Steps between recorded samples.
    pub record_stride: usize,
}

impl Integration {
    /// `dt_record` is rounded to the nearest multiple of `dt` (at least one step).
    pub fn new(dt: f64, t_end: f64, t_transient: f64, dt_record: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", format!("{dt} must be > 0")));
        }
        if !(t_transient >= 0.0) {
            return Err(Error::param("t_transient", "must be >= 0"));
        }
        if !(t_end > t_transient) || !t_end.is_finite() {
            return Err(Error::param(
                "t_end",
                format!("t_end = {t_end} must exceed t_transient = {t_transient}"),
            ));
        }
        if !(dt_record > 0.0) {
            return Err(Error::param("dt_record", "must be > 0"));
        }
        let record_stride = ((dt_record / dt).round() as usize).max(1);
        Ok(Integration {
            dt,
            t_end,
            t_transient,
            record_stride,
        })
    }

    /// Defaults: largest admissible step, transient of 20 / min(γ₃, γ₁),
    /// a recorded span of `span`.
    pub fn auto(cfg: &SystemConfig, span: f64, dt_record: f64) -> Result<Self> {
        let transient = cfg.relaxation_time();
        let dt = cfg.dt_max().min(dt_record);
        Self::new(dt, transient + span, transient, dt_record)
    }

    pub fn dt_record(&self) -> f64 {
        self.dt * self.record_stride as f64
    }

    pub fn total_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn transient_steps(&self) -> usize {
        (self.t_transient / self.dt).round() as usize
    }

    pub fn sample_count(&self) -> usize {
        (self.total_steps() - self.transient_steps()) / self.record_stride
    }

    pub fn check_step(&self, cfg: &SystemConfig) -> Result<()> {
        let dt_max = cfg.dt_max();
        if self.dt > dt_max * (1.0 + 1e-12) {
            return Err(Error::StepSize {
                dt: self.dt,
                dt_max,
            });
        }
        Ok(())
    }
}

/// Recorded post-transient evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub dt_record: f64,
    pub t_transient: f64,
    pub samples: Vec<DensityState>,
    pub seed: u64,
    pub stream: u64,
}

impl Trajectory {
    pub fn time(&self, index: usize) -> f64 {
        self.t_transient + index as f64 * self.dt_record
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// CSV with header `t,re_rho_ba,...,rho_cc`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "t,re_rho_ba,im_rho_ba,re_rho_ca,im_rho_ca,re_rho_bc,im_rho_bc,rho_bb,rho_cc"
        )?;
        for (k, s) in self.samples.iter().enumerate() {
            writeln!(
                w,
                "{:.14e},{:.14e},{:.14e},{:.14e},{:.14e},{:.14e},{:.14e},{:.14e},{:.14e}",
                self.time(k),
                s.rho_ba.re,
                s.rho_ba.im,
                s.rho_ca.re,
                s.rho_ca.im,
                s.rho_bc.re,
                s.rho_bc.im,
                s.rho_bb,
                s.rho_cc
            )?;
        }
        Ok(())
    }
}

fn run<F: FnMut() -> f64>(
    coeffs: &Coefficients,
    integ: &Integration,
    mut noise: F,
    mut xi: f64,
    seed: u64,
    stream: u64,
) -> Result<Trajectory> {
    let n_total = integ.total_steps();
    let n_transient = integ.transient_steps();
    let count = integ.sample_count();
    let mut samples = Vec::with_capacity(count);
    let mut state = DensityState::unpolarized();
    // last step index that is recorded
    let last = n_transient + count.saturating_sub(1) * integ.record_stride;
    for k in 0..=last {
        if k >= n_transient && (k - n_transient) % integ.record_stride == 0 {
            samples.push(state);
        }
        if k & 1023 == 0 || k == last {
            if let Some((component, magnitude)) = state.diverged() {
                return Err(Error::Divergence {
                    t: k as f64 * integ.dt,
                    component,
                    magnitude,
                });
            }
        }
        if k == last {
            break;
        }
        state = state.advanced(&coeffs.drift(&state, xi), integ.dt);
        xi = noise();
    }
    debug_assert!(last <= n_total);
    Ok(Trajectory {
        dt: integ.dt,
        dt_record: integ.dt_record(),
        t_transient: n_transient as f64 * integ.dt,
        samples,
        seed,
        stream,
    })
}

/// Integrate one noise realization, drawn from stream `stream` of `seed`.
pub fn simulate_trajectory(
    cfg: &SystemConfig,
    integ: &Integration,
    seed: u64,
    stream: u64,
) -> Result<Trajectory> {
    cfg.validate()?;
    integ.check_step(cfg)?;
    let coeffs = Coefficients::new(cfg, 0.0);
    if cfg.noise.is_silent() {
        return run(&coeffs, integ, || 0.0, 0.0, seed, stream);
    }
    let mut ns = NoiseStream::new(seed, stream, cfg.noise.sampled(integ.dt)?);
    let xi0 = ns.current();
    run(&coeffs, integ, || ns.advance(), xi0, seed, stream)
}

/// Integrate the stochastically averaged equations for white noise of
/// diffusion `d` (the noise in `cfg` is ignored).
pub fn integrate_averaged(cfg: &SystemConfig, d: f64, integ: &Integration) -> Result<Trajectory> {
    cfg.validate()?;
    if !(d >= 0.0) {
        return Err(Error::param("d", "diffusion must be >= 0"));
    }
    integ.check_step(cfg)?;
    let coeffs = Coefficients::new(cfg, d);
    run(&coeffs, integ, || 0.0, 0.0, 0, 0)
}

/// Ensemble average of `ρ_ba` on the recorded grid.
#[derive(Debug, Clone)]
pub struct EnsembleMean {
    pub times: Vec<f64>,
    pub mean: Vec<Complex64>,
    /// Standard errors of the real and imaginary parts.
    pub stderr: Vec<Complex64>,
    pub n_trajectories: usize,
}

/// Mean of `ρ_ba(t)` over `n` trajectories on streams `0..n` of `seed`.
///
/// Trajectories run in parallel; the reduction walks them in stream order so
/// the result does not depend on scheduling.
pub fn ensemble_mean_rho_ba(
    cfg: &SystemConfig,
    integ: &Integration,
    seed: u64,
    n: usize,
) -> Result<EnsembleMean> {
    if n < 2 {
        return Err(Error::param(
            "n_trajectories",
            "need at least 2 trajectories",
        ));
    }
    let runs: Vec<Vec<Complex64>> = (0..n as u64)
        .into_par_iter()
        .map(|s| {
            simulate_trajectory(cfg, integ, seed, s)
                .map(|t| t.samples.iter().map(|x| x.rho_ba).collect())
        })
        .collect::<Result<_>>()?;
    let len = runs[0].len();
    let nf = n as f64;
    let mut mean = vec![Complex64::new(0.0, 0.0); len];
    for r in &runs {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![Complex64::new(0.0, 0.0); len];
    for r in &runs {
        for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
            let d = x - m;
            *v += Complex64::new(d.re * d.re, d.im * d.im);
        }
    }
    let stderr = var
        .iter()
        .map(|v| {
            Complex64::new(
                (v.re / (nf - 1.0) / nf).sqrt(),
                (v.im / (nf - 1.0) / nf).sqrt(),
            )
        })
        .collect();
    let dt_record = integ.dt_record();
    let t0 = integ.transient_steps() as f64 * integ.dt;
    Ok(EnsembleMean {
        times: (0..len).map(|k| t0 + k as f64 * dt_record).collect(),
        mean,
        stderr,
        n_trajectories: n,
    })
}
