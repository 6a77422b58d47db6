//! Transmitted intensities and their normalized cross-correlation.
//!
//! In the thin-medium limit the output fields are the input plus the first
//! order induced field, `Ω₁ + iκ₁L ρ_ac` and `Ω₂ + iκ₂L ρ_ab`, so the intensity
//! fluctuations are `δI₁ = Ω₁κ₁L Im δρ_ac` and `δI₂ = Ω₂κ₂L Im δρ_ab`, with
//! `δρ` the deviation from the time mean over the recording window.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate_trajectory, Integration, SystemConfig, Trajectory};
use crate::error::{Error, Result};
use crate::noise::NoiseModel;

/// Blocks used for error bars of correlation estimates.
pub const DEFAULT_BLOCKS: usize = 8;

/// Which coherence feeds which detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPairing {
    /// Beam 1 reads `ρ_ac`, beam 2 reads `ρ_ab`.
    #[default]
    Transmitted,
    /// Beam 1 reads `ρ_ab`, beam 2 reads `ρ_ac`.
    Propagation,
}

/// Thin-medium output fields.
pub fn output_fields(
    omega1: f64,
    omega2: f64,
    kappa1_l: f64,
    kappa2_l: f64,
    rho_ac: Complex64,
    rho_ab: Complex64,
) -> (Complex64, Complex64) {
    let i = Complex64::new(0.0, 1.0);
    (
        omega1 + i * kappa1_l * rho_ac,
        omega2 + i * kappa2_l * rho_ab,
    )
}

/// Mean-removed intensity fluctuations of both beams.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySeries {
    pub dt_record: f64,
    pub di1: Vec<f64>,
    pub di2: Vec<f64>,
}

fn remove_mean(xs: &mut [f64]) {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter_mut().for_each(|x| *x -= mean);
}

impl IntensitySeries {
    /// Wrap two raw series, removing their means.
    pub fn from_raw(dt_record: f64, mut di1: Vec<f64>, mut di2: Vec<f64>) -> Result<Self> {
        if di1.is_empty() || di2.is_empty() {
            return Err(Error::EmptySeries);
        }
        if di1.len() != di2.len() {
            return Err(Error::Validation(format!(
                "channel lengths differ: {} vs {}",
                di1.len(),
                di2.len()
            )));
        }
        remove_mean(&mut di1);
        remove_mean(&mut di2);
        Ok(IntensitySeries {
            dt_record,
            di1,
            di2,
        })
    }

    pub fn len(&self) -> usize {
        self.di1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.di1.is_empty()
    }

    pub fn swapped(&self) -> Self {
        IntensitySeries {
            dt_record: self.dt_record,
            di1: self.di2.clone(),
            di2: self.di1.clone(),
        }
    }

    fn lag_of(&self, tau: f64) -> Result<isize> {
        let k = tau / self.dt_record;
        let rounded = k.round();
        if (k - rounded).abs() > 1e-9 * rounded.abs().max(1.0) {
            return Err(Error::DelayOffGrid {
                tau,
                dt: self.dt_record,
            });
        }
        let lag = rounded as isize;
        if lag.unsigned_abs() >= self.len() {
            return Err(Error::DelayTooLong { tau, n: self.len() });
        }
        Ok(lag)
    }
}

/// δI series of a recorded trajectory.
pub fn intensity_fluctuations(
    traj: &Trajectory,
    cfg: &SystemConfig,
    pairing: ChannelPairing,
) -> Result<IntensitySeries> {
    if traj.is_empty() {
        return Err(Error::EmptySeries);
    }
    // Im ρ_ac = -Im ρ_ca, Im ρ_ab = -Im ρ_ba
    let im_ac: Vec<f64> = traj.samples.iter().map(|s| s.rho_ac().im).collect();
    let im_ab: Vec<f64> = traj.samples.iter().map(|s| s.rho_ab().im).collect();
    let (src1, src2) = match pairing {
        ChannelPairing::Transmitted => (im_ac, im_ab),
        ChannelPairing::Propagation => (im_ab, im_ac),
    };
    let k1 = cfg.omega1 * cfg.kappa1_l;
    let k2 = cfg.omega2 * cfg.kappa2_l;
    IntensitySeries::from_raw(
        traj.dt_record,
        src1.into_iter().map(|x| k1 * x).collect(),
        src2.into_iter().map(|x| k2 * x).collect(),
    )
}

/// Sums entering one correlation estimate, so estimates can be pooled.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CrossMoments {
    pub s12: f64,
    pub s11: f64,
    pub s22: f64,
    pub count: usize,
}

impl CrossMoments {
    /// Sums of `δI₁(t) δI₂(t+k)`, `δI₁(t)²` and `δI₂(t+k)²` over every `t`
    /// with both indices inside the window.
    pub fn at_lag(di1: &[f64], di2: &[f64], lag: isize) -> Self {
        let n = di1.len().min(di2.len());
        let k = lag.unsigned_abs().min(n);
        let (a, b) = if lag >= 0 {
            (&di1[..n - k], &di2[k..n])
        } else {
            (&di1[k..n], &di2[..n - k])
        };
        let mut m = CrossMoments {
            count: a.len(),
            ..Default::default()
        };
        for (x, y) in a.iter().zip(b) {
            m.s12 += x * y;
            m.s11 += x * x;
            m.s22 += y * y;
        }
        m
    }

    pub fn merge(self, other: Self) -> Self {
        CrossMoments {
            s12: self.s12 + other.s12,
            s11: self.s11 + other.s11,
            s22: self.s22 + other.s22,
            count: self.count + other.count,
        }
    }

    pub fn g2(&self) -> Result<f64> {
        if !(self.s11 > 0.0) {
            return Err(Error::UndefinedCorrelation { channel: 1 });
        }
        if !(self.s22 > 0.0) {
            return Err(Error::UndefinedCorrelation { channel: 2 });
        }
        Ok(self.s12 / (self.s11 * self.s22).sqrt())
    }
}

/// Normalized cross-correlation G²(τ) over the full window.
///
/// Negative delays shift channel 2 backward.
pub fn g2(series: &IntensitySeries, tau: f64) -> Result<f64> {
    let lag = series.lag_of(tau)?;
    CrossMoments::at_lag(&series.di1, &series.di2, lag).g2()
}

fn block_moments(series: &IntensitySeries, lag: isize, n_blocks: usize) -> Vec<CrossMoments> {
    let n = series.len();
    (0..n_blocks)
        .map(|b| {
            let lo = b * n / n_blocks;
            let hi = (b + 1) * n / n_blocks;
            CrossMoments::at_lag(&series.di1[lo..hi], &series.di2[lo..hi], lag)
        })
        .collect()
}

/// Value and block error of a correlation estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    /// Mean of block-wise estimates.
    pub block_mean: f64,
    pub n_blocks: usize,
}

fn summarize(full: CrossMoments, blocks: &[CrossMoments]) -> Result<Estimate> {
    let value = full.g2()?;
    let vals: Vec<f64> = blocks.iter().filter_map(|m| m.g2().ok()).collect();
    let nb = vals.len();
    if nb < 2 {
        return Ok(Estimate {
            value,
            stderr: f64::NAN,
            block_mean: value,
            n_blocks: nb,
        });
    }
    let mean = vals.iter().sum::<f64>() / nb as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nb as f64 - 1.0);
    Ok(Estimate {
        value,
        stderr: (var / nb as f64).sqrt(),
        block_mean: mean,
        n_blocks: nb,
    })
}

/// G²(τ) with a block standard error, pooling several independent series.
pub fn g2_estimate(series: &[IntensitySeries], tau: f64, n_blocks: usize) -> Result<Estimate> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut full = CrossMoments::default();
    let mut blocks = Vec::new();
    for s in series {
        let lag = s.lag_of(tau)?;
        full = full.merge(CrossMoments::at_lag(&s.di1, &s.di2, lag));
        blocks.extend(block_moments(s, lag, n_blocks));
    }
    summarize(full, &blocks)
}

/// G² sampled on a delay grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub taus: Vec<f64>,
    pub g2: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Averaging span of one series.
    pub t_window: f64,
}

impl CorrelationCurve {
    /// Delay of the smallest G².
    pub fn argmin(&self) -> Option<f64> {
        self.g2
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| self.taus[i])
    }

    pub fn argmax(&self) -> Option<f64> {
        self.g2
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| self.taus[i])
    }

    pub fn value_at(&self, tau: f64) -> Option<f64> {
        self.taus
            .iter()
            .position(|t| (t - tau).abs() < 1e-12)
            .map(|i| self.g2[i])
    }

    /// `tau,g2,stderr`
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tau,g2,stderr")?;
        for ((t, g), e) in self.taus.iter().zip(&self.g2).zip(&self.stderr) {
            writeln!(w, "{t:.12e},{g:.12e},{e:.12e}")?;
        }
        Ok(())
    }
}

/// Symmetric delay grid `-tau_max..=tau_max` on the sampling lattice.
pub fn symmetric_tau_grid(dt_record: f64, tau_max: f64) -> Vec<f64> {
    let k = (tau_max / dt_record).floor() as isize;
    (-k..=k).map(|i| i as f64 * dt_record).collect()
}

pub fn g2_curve(series: &IntensitySeries, taus: &[f64]) -> Result<CorrelationCurve> {
    g2_curve_pooled(std::slice::from_ref(series), taus)
}

pub fn g2_curve_pooled(series: &[IntensitySeries], taus: &[f64]) -> Result<CorrelationCurve> {
    let mut g = Vec::with_capacity(taus.len());
    let mut e = Vec::with_capacity(taus.len());
    for &tau in taus {
        let est = g2_estimate(series, tau, DEFAULT_BLOCKS)?;
        g.push(est.value);
        e.push(est.stderr);
    }
    let t_window = series
        .first()
        .map(|s| s.len() as f64 * s.dt_record)
        .unwrap_or(0.0);
    Ok(CorrelationCurve {
        taus: taus.to_vec(),
        g2: g,
        stderr: e,
        t_window,
    })
}

/// How each grid point is integrated and seeded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub noise: NoiseModel,
    /// Recorded span per trajectory; `None` means 10⁴ / γ₁.
    pub record_span: Option<f64>,
    /// Total integration time; overrides `record_span` when set.
    pub t_end: Option<f64>,
    /// Discarded transient; `None` means 20 / min(γ₃, γ₁).
    pub transient: Option<f64>,
    pub dt_record: f64,
    /// Fixed step; `None` uses `dt_scale` times the largest admissible step.
    pub dt: Option<f64>,
    pub dt_scale: f64,
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub pairing: ChannelPairing,
}

impl Default for SimulationPlan {
    fn default() -> Self {
        SimulationPlan {
            noise: NoiseModel::white(0.1),
            record_span: None,
            t_end: None,
            transient: None,
            dt_record: 0.05,
            dt: None,
            dt_scale: 1.0,
            n_trajectories: 1,
            master_seed: 1,
            pairing: ChannelPairing::Transmitted,
        }
    }
}

impl SimulationPlan {
    /// Attach the resolved noise to `cfg`.
    pub fn configure(&self, mut cfg: SystemConfig) -> Result<SystemConfig> {
        cfg.noise = self.noise.resolve(cfg.noise_reference_rate())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn integration(&self, cfg: &SystemConfig) -> Result<Integration> {
        let e = cfg.effective_rates();
        let (transient, t_end) = match (self.t_end, self.transient) {
            (Some(t_end), Some(tr)) => (tr, t_end),
            (Some(t_end), None) => (cfg.relaxation_time().min(t_end / 2.0), t_end),
            (None, tr) => {
                let tr = tr.unwrap_or_else(|| cfg.relaxation_time());
                (tr, tr + self.record_span.unwrap_or(1e4 / e.gamma1))
            }
        };
        let dt = match self.dt {
            Some(dt) => dt,
            None => (self.dt_scale * cfg.dt_max()).min(self.dt_record),
        };
        let integ = Integration::new(dt, t_end, transient, self.dt_record)?;
        integ.check_step(cfg)?;
        Ok(integ)
    }

    /// Intensity series of every trajectory of grid point `point`.
    ///
    /// Trajectory `j` of point `p` uses stream `p * n_trajectories + j`.
    pub fn run_point(&self, cfg: &SystemConfig, point: usize) -> Result<Vec<IntensitySeries>> {
        let cfg = self.configure(*cfg)?;
        let integ = self.integration(&cfg)?;
        let n = self.n_trajectories.max(1);
        (0..n)
            .into_par_iter()
            .map(|j| {
                let stream = (point * n + j) as u64;
                let traj = simulate_trajectory(&cfg, &integ, self.master_seed, stream)?;
                intensity_fluctuations(&traj, &cfg, self.pairing)
            })
            .collect()
    }

    pub fn g2_zero(&self, cfg: &SystemConfig, point: usize) -> Result<Estimate> {
        let series = self.run_point(cfg, point)?;
        g2_estimate(&series, 0.0, DEFAULT_BLOCKS)
    }
}

/// Two-photon detuning axis of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetuningAxis {
    /// Δ in units of γ̃₁.
    Delta(Vec<f64>),
    /// Δ = x γ₃ for the point's γ₃.
    Scaled(Vec<f64>),
    /// Magnetic field B; Δ = γ₃ B / α.
    Field { b_gauss: Vec<f64>, alpha_gauss: f64 },
}

impl DetuningAxis {
    pub fn values(&self) -> &[f64] {
        match self {
            DetuningAxis::Delta(v) | DetuningAxis::Scaled(v) => v,
            DetuningAxis::Field { b_gauss, .. } => b_gauss,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DetuningAxis::Delta(_) => "delta_g1",
            DetuningAxis::Scaled(_) => "delta_over_gamma3",
            DetuningAxis::Field { .. } => "b_gauss",
        }
    }

    fn delta(&self, value: f64, gamma3: f64) -> f64 {
        match self {
            DetuningAxis::Delta(_) => value,
            DetuningAxis::Scaled(_) => value * gamma3,
            DetuningAxis::Field { alpha_gauss, .. } => gamma3 * value / alpha_gauss,
        }
    }
}

/// Second sweep axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondaryAxis {
    Fixed,
    Gamma3(Vec<f64>),
    /// Ω₁ = Ω₂.
    Rabi(Vec<f64>),
}

impl SecondaryAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SecondaryAxis::Fixed => "gamma3_g1",
            SecondaryAxis::Gamma3(_) => "gamma3_g1",
            SecondaryAxis::Rabi(_) => "omega_g1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub detuning: DetuningAxis,
    pub secondary: SecondaryAxis,
}

fn check_monotone(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Validation(format!("sweep axis {name} is empty")));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation(format!(
            "sweep axis {name} must be strictly increasing"
        )));
    }
    Ok(())
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        check_monotone(self.detuning.name(), self.detuning.values())?;
        if let DetuningAxis::Field { alpha_gauss, .. } = self.detuning {
            if !(alpha_gauss > 0.0) {
                return Err(Error::param("alpha_gauss", "must be > 0"));
            }
        }
        match &self.secondary {
            SecondaryAxis::Fixed => Ok(()),
            SecondaryAxis::Gamma3(v) | SecondaryAxis::Rabi(v) => {
                check_monotone(self.secondary.name(), v)
            }
        }
    }

    /// Configurations of every grid point, detuning varying fastest.
    pub fn grid(&self, base: &SystemConfig) -> Result<Vec<(f64, f64, SystemConfig)>> {
        self.validate()?;
        let seconds: Vec<Option<f64>> = match &self.secondary {
            SecondaryAxis::Fixed => vec![None],
            SecondaryAxis::Gamma3(v) | SecondaryAxis::Rabi(v) => {
                v.iter().map(|x| Some(*x)).collect()
            }
        };
        let mut out = Vec::new();
        for s in seconds {
            let mut cfg = *base;
            match (&self.secondary, s) {
                (SecondaryAxis::Gamma3(_), Some(g3)) => cfg.rates = cfg.rates.with_gamma3(g3)?,
                (SecondaryAxis::Rabi(_), Some(om)) => {
                    cfg.omega1 = om;
                    cfg.omega2 = om;
                }
                _ => {}
            }
            let gamma3 = cfg.effective_rates().gamma3;
            let axis2 = match &self.secondary {
                SecondaryAxis::Rabi(_) => cfg.omega1,
                _ => gamma3,
            };
            for &v in self.detuning.values() {
                let mut point = cfg;
                point.delta = self.detuning.delta(v, gamma3);
                out.push((v, axis2, point));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis1: f64,
    pub axis2: f64,
    pub g2_zero: f64,
    pub stderr: f64,
    pub config: SystemConfig,
}

/// G²(0) over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis1: String,
    pub axis2: String,
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    /// `axis1,axis2,g2_zero,stderr`
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "axis1,axis2,g2_zero,stderr")?;
        for p in &self.points {
            writeln!(
                w,
                "{:.12e},{:.12e},{:.12e},{:.12e}",
                p.axis1, p.axis2, p.g2_zero, p.stderr
            )?;
        }
        Ok(())
    }

    /// Points sharing one value of the second axis, in detuning order.
    pub fn rows(&self) -> Vec<Vec<&SweepPoint>> {
        let mut rows: Vec<Vec<&SweepPoint>> = Vec::new();
        for p in &self.points {
            match rows.last_mut() {
                Some(row) if row[0].axis2 == p.axis2 => row.push(p),
                _ => rows.push(vec![p]),
            }
        }
        rows
    }
}

/// G²(0) at every grid point of `spec`, in parallel over points.
pub fn g2_zero_sweep(
    base: &SystemConfig,
    spec: &SweepSpec,
    plan: &SimulationPlan,
) -> Result<SweepTable> {
    let grid = spec.grid(base)?;
    let points = grid
        .par_iter()
        .enumerate()
        .map(|(i, (a1, a2, cfg))| {
            let est = plan.g2_zero(cfg, i)?;
            Ok(SweepPoint {
                axis1: *a1,
                axis2: *a2,
                g2_zero: est.value,
                stderr: est.stderr,
                config: plan.configure(*cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        axis1: spec.detuning.name().into(),
        axis2: spec.secondary.name().into(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{GaussianSource, PhaseNoise};
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn noise_series(seed: u64, stream: u64, n: usize) -> Vec<f64> {
        let mut g = GaussianSource::new(seed, stream);
        (0..n).map(|_| g.sample()).collect()
    }

    #[test]
    fn output_field_examples() {
        let (o1, o2) = output_fields(1.0, 2.0, 0.1, 0.2, c(0.0, 0.0), c(0.0, 0.0));
        assert_eq!((o1, o2), (c(1.0, 0.0), c(2.0, 0.0)));
        let (o1, o2) = output_fields(1.0, 2.0, 0.0, 0.0, c(0.3, 0.1), c(0.2, -0.4));
        assert_eq!((o1, o2), (c(1.0, 0.0), c(2.0, 0.0)));
        let (o1, _) = output_fields(1.0, 1.0, 0.1, 0.1, c(0.0, -0.2), c(0.0, 0.0));
        assert_abs_diff_eq!(o1.re, 1.02, epsilon = 1e-15);
        assert_abs_diff_eq!(o1.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn identical_and_negated_series() {
        let x = noise_series(1, 0, 1000);
        let s = IntensitySeries::from_raw(0.1, x.clone(), x.clone()).unwrap();
        assert_eq!(g2(&s, 0.0).unwrap(), 1.0);
        let s = IntensitySeries::from_raw(0.1, x.clone(), x.iter().map(|v| -v).collect()).unwrap();
        assert_eq!(g2(&s, 0.0).unwrap(), -1.0);
    }

    #[test]
    fn independent_null() {
        let n = 100_000;
        let s =
            IntensitySeries::from_raw(1.0, noise_series(2, 0, n), noise_series(2, 1, n)).unwrap();
        let g = g2(&s, 0.0).unwrap();
        assert!(g.abs() < 5.0 / (n as f64).sqrt(), "g2 = {g}");
    }

    #[test]
    fn zero_variance_is_an_error() {
        let s = IntensitySeries::from_raw(1.0, vec![1.0; 10], noise_series(3, 0, 10)).unwrap();
        assert!(matches!(
            g2(&s, 0.0),
            Err(Error::UndefinedCorrelation { channel: 1 })
        ));
        let s = IntensitySeries::from_raw(1.0, noise_series(3, 0, 10), vec![2.0; 10]).unwrap();
        assert!(matches!(
            g2(&s, 0.0),
            Err(Error::UndefinedCorrelation { channel: 2 })
        ));
    }

    #[test]
    fn delay_validation() {
        let s = IntensitySeries::from_raw(0.1, noise_series(4, 0, 100), noise_series(4, 1, 100))
            .unwrap();
        assert!(matches!(g2(&s, 0.15), Err(Error::DelayOffGrid { .. })));
        assert!(matches!(g2(&s, 10.0), Err(Error::DelayTooLong { .. })));
        assert!(g2(&s, -0.3).is_ok());
    }

    #[test]
    fn shifted_copy_peaks_at_its_delay() {
        let base = noise_series(5, 0, 5003);
        let a = base[3..].to_vec();
        let b = base[..5000].to_vec();
        // b(t + 3) = a(t)
        let s = IntensitySeries::from_raw(0.5, a, b).unwrap();
        let curve = g2_curve(&s, &symmetric_tau_grid(0.5, 3.0)).unwrap();
        assert_abs_diff_eq!(curve.argmax().unwrap(), 1.5, epsilon = 1e-12);
        assert!(curve.value_at(1.5).unwrap() > 0.999);
    }

    #[test]
    fn single_point_curve() {
        let s = IntensitySeries::from_raw(0.1, noise_series(6, 0, 400), noise_series(6, 1, 400))
            .unwrap();
        let curve = g2_curve(&s, &[0.0]).unwrap();
        assert_eq!(curve.g2, vec![g2(&s, 0.0).unwrap()]);
        assert_eq!(curve.taus, vec![0.0]);
    }

    #[test]
    fn constant_coherences_give_zero_fluctuations() {
        let cfg = SystemConfig::benchmark(0.0).with_noise(PhaseNoise::silent());
        let state = crate::dynamics::DensityState {
            rho_ba: c(0.1, 0.2),
            rho_ca: c(-0.1, 0.3),
            ..Default::default()
        };
        let traj = Trajectory {
            dt: 0.01,
            dt_record: 0.1,
            t_transient: 0.0,
            samples: vec![state; 20],
            seed: 0,
            stream: 0,
        };
        let s = intensity_fluctuations(&traj, &cfg, ChannelPairing::Transmitted).unwrap();
        assert!(s.di1.iter().chain(&s.di2).all(|x| x.abs() < 1e-15));
        let empty = Trajectory {
            samples: vec![],
            ..traj
        };
        assert!(matches!(
            intensity_fluctuations(&empty, &cfg, ChannelPairing::Transmitted),
            Err(Error::EmptySeries)
        ));
    }

    #[test]
    fn sweep_grid_layout() {
        let spec = SweepSpec {
            detuning: DetuningAxis::Scaled(vec![0.0, 1.0, 2.0]),
            secondary: SecondaryAxis::Gamma3(vec![0.01, 0.05]),
        };
        let grid = spec.grid(&SystemConfig::benchmark(0.0)).unwrap();
        assert_eq!(grid.len(), 6);
        assert_abs_diff_eq!(grid[2].2.delta, 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(grid[5].2.delta, 0.10, epsilon = 1e-15);
        assert_abs_diff_eq!(grid[4].2.effective_rates().gamma3, 0.05, epsilon = 1e-15);

        let spec = SweepSpec {
            detuning: DetuningAxis::Field {
                b_gauss: vec![-0.5, 0.5],
                alpha_gauss: 0.25,
            },
            secondary: SecondaryAxis::Rabi(vec![1.0, 2.0]),
        };
        let grid = spec.grid(&SystemConfig::benchmark(0.0)).unwrap();
        assert_abs_diff_eq!(grid[0].2.delta, -0.02, epsilon = 1e-15);
        assert_eq!(grid[3].2.omega2, 2.0);

        let bad = SweepSpec {
            detuning: DetuningAxis::Delta(vec![0.0, 0.0]),
            secondary: SecondaryAxis::Fixed,
        };
        assert!(bad.validate().is_err());
    }
}
