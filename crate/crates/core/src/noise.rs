//! Laser phase-noise generation.
//!
//! The fluctuating laser frequency ξ(t) = φ̇(t) is modelled as an
//! Ornstein-Uhlenbeck process with stationary correlation
//! `Θ λ_L exp(-λ_L |t - t'|)`. Its area `2Θ` matches white phase diffusion
//! with coefficient `D = Θ`, so the white-noise limit is reached by taking
//! `λ_L` large at fixed `Θ`.
//!
//! Samples are produced with the exact (integral) OU update driven by
//! Box-Muller deviates. Every stream is derived from a master seed and a
//! stream index: `ChaCha8Rng::seed_from_u64(seed)` followed by
//! `set_stream(index)`. Streams with distinct indices are independent and can
//! be consumed on different threads.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ratio between `λ_L` and the fastest system rate in the white-noise limit.
pub const WHITE_LIMIT_RATIO: f64 = 50.0;

/// Continuous-time description of the phase noise, independent of sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseNoise {
    /// Noise strength Θ (rate units). Equals the diffusion coefficient D.
    pub theta: f64,
    /// Inverse correlation time λ_L.
    pub lambda_l: f64,
}

impl PhaseNoise {
    pub fn new(theta: f64, lambda_l: f64) -> Result<Self> {
        let noise = PhaseNoise { theta, lambda_l };
        noise.validate()?;
        Ok(noise)
    }

    pub fn silent() -> Self {
        PhaseNoise {
            theta: 0.0,
            lambda_l: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= 0.0) || !self.theta.is_finite() {
            return Err(Error::param(
                "theta",
                format!("{} must be >= 0", self.theta),
            ));
        }
        if !(self.lambda_l > 0.0) || !self.lambda_l.is_finite() {
            return Err(Error::param(
                "lambda_l",
                format!("{} must be > 0", self.lambda_l),
            ));
        }
        Ok(())
    }

    /// Stationary variance Θ λ_L of ξ.
    pub fn variance(&self) -> f64 {
        self.theta * self.lambda_l
    }

    /// Equivalent white-noise diffusion coefficient.
    pub fn diffusion(&self) -> f64 {
        self.theta
    }

    /// FWHM of the Lorentzian laser line, D/π in cycles per unit time.
    pub fn linewidth_fwhm(&self) -> f64 {
        self.theta / PI
    }

    pub fn is_silent(&self) -> bool {
        self.theta == 0.0
    }

    /// Bind the process to a sample spacing.
    pub fn sampled(&self, dt: f64) -> Result<NoiseParams> {
        NoiseParams::new(self.theta, self.lambda_l, dt)
    }
}

/// White-noise limit for diffusion coefficient `d`.
///
/// `λ_L` is set to [`WHITE_LIMIT_RATIO`] times `max_rate`, the fastest rate of
/// the system the noise drives.
pub fn white_noise_params(d: f64, max_rate: f64) -> Result<PhaseNoise> {
    white_noise_params_with_ratio(d, max_rate, WHITE_LIMIT_RATIO)
}

pub fn white_noise_params_with_ratio(d: f64, max_rate: f64, ratio: f64) -> Result<PhaseNoise> {
    if !(d >= 0.0) {
        return Err(Error::param("d", format!("{d} must be >= 0")));
    }
    if !(max_rate > 0.0) || !(ratio > 0.0) {
        return Err(Error::param(
            "lambda_ratio",
            format!("ratio {ratio} and reference rate {max_rate} must be > 0"),
        ));
    }
    PhaseNoise::new(d, ratio * max_rate)
}

/// How the phase noise of a configuration is specified.
///
/// `White` re-derives `λ_L` from the fastest system rate whenever the rates
/// change, which keeps sweeps over Rabi frequency in the white-noise regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    White { d: f64, ratio: f64 },
    Colored(PhaseNoise),
}

impl NoiseModel {
    pub fn white(d: f64) -> Self {
        NoiseModel::White {
            d,
            ratio: WHITE_LIMIT_RATIO,
        }
    }

    pub fn resolve(&self, max_rate: f64) -> Result<PhaseNoise> {
        match *self {
            NoiseModel::White { d, ratio } => white_noise_params_with_ratio(d, max_rate, ratio),
            NoiseModel::Colored(p) => {
                p.validate()?;
                Ok(p)
            }
        }
    }
}

/// OU parameters at a fixed sample spacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    theta: f64,
    lambda_l: f64,
    dt: f64,
    decay: f64,
    kick: f64,
}

impl NoiseParams {
    pub fn new(theta: f64, lambda_l: f64, dt: f64) -> Result<Self> {
        PhaseNoise { theta, lambda_l }.validate()?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", format!("{dt} must be > 0")));
        }
        let ldt = lambda_l * dt;
        if !ldt.is_finite() {
            return Err(Error::param("lambda_l", "lambda_l * dt is not finite"));
        }
        let decay = (-ldt).exp();
        // 1 - exp(-2x) without cancellation for small x
        let kick = (theta * lambda_l * -(-2.0 * ldt).exp_m1()).sqrt();
        Ok(NoiseParams {
            theta,
            lambda_l,
            dt,
            decay,
            kick,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn lambda_l(&self) -> f64 {
        self.lambda_l
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn stationary_variance(&self) -> f64 {
        self.theta * self.lambda_l
    }
}

/// Box-Muller transform of two uniforms, `u1` in (0, 1] and `u2` in [0, 1).
pub fn gaussian_pair(u1: f64, u2: f64) -> Result<(f64, f64)> {
    if !(u1 > 0.0 && u1 <= 1.0) {
        return Err(Error::InvalidUniform(u1));
    }
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * PI * u2).sin_cos();
    Ok((r * c, r * s))
}

/// Standard normal deviates from a seeded ChaCha stream.
#[derive(Debug, Clone)]
pub struct GaussianSource {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        GaussianSource { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // gen() is in [0, 1); flip it into (0, 1] for the logarithm.
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let (z1, z2) = gaussian_pair(u1, u2).expect("u1 in (0, 1] by construction");
        self.spare = Some(z2);
        z1
    }
}

/// Exact OU update over one sample spacing.
#[inline]
pub fn ou_step(x: f64, params: &NoiseParams, z: f64) -> f64 {
    x * params.decay + params.kick * z
}

/// One realization of ξ(t), started from the stationary distribution.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    stream: u64,
    params: NoiseParams,
    source: GaussianSource,
    current: f64,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64, params: NoiseParams) -> Self {
        let mut source = GaussianSource::new(seed, stream);
        let current = params.stationary_variance().sqrt() * source.sample();
        NoiseStream {
            seed,
            stream,
            params,
            source,
            current,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn params(&self) -> &NoiseParams {
        &self.params
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    /// Move one sample spacing forward and return the new value.
    pub fn advance(&mut self) -> f64 {
        let z = self.source.sample();
        self.current = ou_step(self.current, &self.params, z);
        self.current
    }
}

/// `n_samples` consecutive values of ξ on stream 0 of `seed`.
pub fn ou_trajectory(seed: u64, n_samples: usize, params: &NoiseParams) -> Result<Vec<f64>> {
    if n_samples < 2 {
        return Err(Error::param("n_samples", "need at least 2 samples"));
    }
    let mut stream = NoiseStream::new(seed, 0, *params);
    let mut out = Vec::with_capacity(n_samples);
    out.push(stream.current());
    for _ in 1..n_samples {
        out.push(stream.advance());
    }
    Ok(out)
}

/// Biased autocovariance estimates for lags `0..=max_lag`.
pub fn autocovariance(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    (0..=max_lag.min(n - 1))
        .map(|k| {
            centered[..n - k]
                .iter()
                .zip(&centered[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// Least-squares slope of `-ln C(k dt)` against lag, over lags where C > 0.
pub fn fit_decay_rate(acov: &[f64], dt: f64) -> Option<f64> {
    let points: Vec<(f64, f64)> = acov
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0.0)
        .map(|(k, c)| (k as f64 * dt, c.ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

/// Outcome of the generator self-test.
#[derive(Debug, Clone)]
pub struct NoiseReport {
    pub params: NoiseParams,
    pub n_samples: usize,
    pub mean: f64,
    pub variance: f64,
    pub expected_variance: f64,
    pub decay_rate: Option<f64>,
    /// `(lag, empirical, model)` autocorrelation rows.
    pub autocorrelation: Vec<(f64, f64, f64)>,
}

impl NoiseReport {
    pub fn variance_error(&self) -> f64 {
        (self.variance - self.expected_variance).abs() / self.expected_variance
    }

    pub fn decay_error(&self) -> f64 {
        match self.decay_rate {
            Some(rate) => (rate - self.params.lambda_l()).abs() / self.params.lambda_l(),
            None => f64::INFINITY,
        }
    }

    pub fn stationarity_ok(&self) -> bool {
        self.variance_error() < 0.03
    }

    pub fn decay_ok(&self) -> bool {
        self.decay_error() < 0.05
    }

    pub fn passed(&self) -> bool {
        self.stationarity_ok() && self.decay_ok()
    }
}

/// Generate `n_samples` of ξ and compare variance and autocorrelation with
/// the OU model over lags up to `3 / λ_L`.
pub fn self_test(seed: u64, n_samples: usize, params: &NoiseParams) -> Result<NoiseReport> {
    if params.stationary_variance() == 0.0 {
        return Err(Error::param("theta", "self-test needs theta > 0"));
    }
    let series = ou_trajectory(seed, n_samples, params)?;
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let max_lag = ((3.0 / (params.lambda_l() * params.dt())).round() as usize).max(2);
    let acov = autocovariance(&series, max_lag);
    let variance = acov[0];
    let decay_rate = fit_decay_rate(&acov, params.dt());
    let expected_variance = params.stationary_variance();
    let autocorrelation = acov
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let lag = k as f64 * params.dt();
            (
                lag,
                *c,
                expected_variance * (-params.lambda_l() * lag).exp(),
            )
        })
        .collect();
    Ok(NoiseReport {
        params: *params,
        n_samples,
        mean,
        variance,
        expected_variance,
        decay_rate,
        autocorrelation,
    })
}

/// Spectral estimate of the laser line produced by `noise`.
///
/// The phase φ is integrated from ξ (trapezoidal rule at spacing `dt`) and
/// the field `exp(iφ)` is sampled every `stride` steps into `segments`
/// segments of `segment_len` points. The averaged periodogram is fitted with
/// a Lorentzian through the linear relation `1/S(ω) ∝ ω² + HWHM²`. Returns
/// the FWHM in cycles per unit time.
pub fn simulated_linewidth(
    noise: &PhaseNoise,
    dt: f64,
    stride: usize,
    segment_len: usize,
    segments: usize,
    seed: u64,
) -> Result<f64> {
    if noise.is_silent() {
        return Err(Error::param("theta", "linewidth of a noiseless laser"));
    }
    if stride == 0 || segment_len < 16 || segments == 0 {
        return Err(Error::param("segment_len", "degenerate spectral layout"));
    }
    let params = noise.sampled(dt)?;
    let mut stream = NoiseStream::new(seed, 0, params);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(segment_len);
    let mut power = vec![0.0; segment_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_len];
    let mut phase = 0.0;
    let mut xi = stream.current();
    for _ in 0..segments {
        for slot in buf.iter_mut() {
            *slot = Complex64::from_polar(1.0, phase);
            for _ in 0..stride {
                let next = stream.advance();
                phase += 0.5 * (xi + next) * dt;
                xi = next;
            }
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
    }
    let span = segment_len as f64 * stride as f64 * dt;
    let omega = |k: usize| {
        let signed = if k < segment_len / 2 {
            k as f64
        } else {
            k as f64 - segment_len as f64
        };
        2.0 * PI * signed / span
    };
    // Start from the half-maximum width, then fit 1/S = a + b ω² over
    // |ω| <= 3 HWHM with weights from the previous model. Selecting bins by
    // frequency rather than by power keeps noisy bins from biasing the width.
    let peak = power.iter().cloned().fold(0.0, f64::max);
    let dw = 2.0 * PI / span;
    let above = power.iter().filter(|p| **p >= 0.5 * peak).count();
    let mut hwhm = 0.5 * above as f64 * dw;
    let mut model: Option<(f64, f64)> = None;
    for _ in 0..6 {
        let cut = 3.0 * hwhm;
        let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut used = 0;
        for (k, p) in power.iter().enumerate() {
            let w = omega(k);
            if w.abs() > cut || *p <= 0.0 {
                continue;
            }
            let x = w * w;
            let y = 1.0 / p;
            let weight = match model {
                Some((a, b)) => 1.0 / (a + b * x).powi(2),
                None => 1.0,
            };
            sw += weight;
            sx += weight * x;
            sy += weight * y;
            sxx += weight * x * x;
            sxy += weight * x * y;
            used += 1;
        }
        if used < 3 {
            return Err(Error::Validation(
                "line narrower than the frequency resolution".into(),
            ));
        }
        let slope = (sw * sxy - sx * sy) / (sw * sxx - sx * sx);
        let intercept = (sy - slope * sx) / sw;
        if !(slope > 0.0 && intercept > 0.0) {
            return Err(Error::Validation("spectrum is not Lorentzian".into()));
        }
        hwhm = (intercept / slope).sqrt();
        model = Some((intercept, slope));
    }
    Ok(hwhm / PI)
}
