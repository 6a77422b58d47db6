//! Zeeman detuning, master curves and the decoherence-rate fit.
//!
//! A magnetic field B splits the ground levels by `Δ = a B` with
//! `a = (μ_B/ħ) g (m₂ - m₁)`. Because G²(0) depends on the detuning only
//! through `Δ/γ₃`, a measured sweep G²(0; B) is a rescaled copy of the master
//! curve, `B = α Δ/γ₃`, and the decoherence rate follows as `γ₃ = α a`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::SystemConfig;
use crate::error::{Error, Result};
use crate::observables::{g2_zero_sweep, DetuningAxis, SecondaryAxis, SimulationPlan, SweepSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeemanParams {
    pub g_factor: f64,
    /// m₂ - m₁
    pub delta_m: i32,
    /// μ_B/ħ in MHz per Gauss.
    pub mu_b_over_hbar: f64,
}

impl ZeemanParams {
    /// ⁸⁷Rb, 5S₁/₂ F = 2, m = -1 ↔ m = +1.
    pub fn rb87() -> Self {
        ZeemanParams {
            g_factor: 0.5,
            delta_m: 2,
            mu_b_over_hbar: 1.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_b_over_hbar > 0.0) || !self.mu_b_over_hbar.is_finite() {
            return Err(Error::param("mu_b_over_hbar", "must be > 0"));
        }
        if !self.g_factor.is_finite() {
            return Err(Error::param("g_factor", "must be finite"));
        }
        Ok(())
    }

    /// Zeeman constant `a` in MHz/G.
    pub fn a(&self) -> f64 {
        self.mu_b_over_hbar * self.g_factor * f64::from(self.delta_m)
    }
}

/// Two-photon detuning (MHz) produced by field `b` (Gauss).
pub fn zeeman_detuning(b: f64, zp: &ZeemanParams) -> f64 {
    zp.a() * b
}

/// G²(0) against the scaled detuning `x = Δ/γ₃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterCurve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Configuration at x = 0.
    pub provenance: Option<SystemConfig>,
    slopes: Vec<f64>,
}

impl MasterCurve {
    pub fn new(x: Vec<f64>, y: Vec<f64>, stderr: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() != stderr.len() {
            return Err(Error::Validation(
                "master curve columns differ in length".into(),
            ));
        }
        if x.len() < 2 {
            return Err(Error::Validation(
                "master curve needs at least 2 points".into(),
            ));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation(
                "master curve x must be strictly increasing".into(),
            ));
        }
        if y.iter().any(|v| !(v.abs() <= 1.0 + 1e-9)) {
            return Err(Error::Validation(
                "master curve values must lie in [-1, 1]".into(),
            ));
        }
        let slopes = monotone_slopes(&x, &y);
        Ok(MasterCurve {
            x,
            y,
            stderr,
            provenance: None,
            slopes,
        })
    }

    pub fn with_provenance(mut self, cfg: SystemConfig) -> Self {
        self.provenance = Some(cfg);
        self
    }

    /// Monotone cubic (Fritsch-Carlson) interpolation, held constant beyond
    /// the ends. A curve tabulated only for x ≥ 0 is treated as even.
    pub fn eval(&self, x: f64) -> f64 {
        let x = if self.x[0] >= 0.0 { x.abs() } else { x };
        let n = self.x.len();
        if x <= self.x[0] {
            return self.y[0];
        }
        if x >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.x.partition_point(|&xi| xi <= x) - 1;
        let h = self.x[i + 1] - self.x[i];
        let t = (x - self.x[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y[i]
            + h10 * h * self.slopes[i]
            + h01 * self.y[i + 1]
            + h11 * h * self.slopes[i + 1]
    }

    /// Same grid, values `y(x · factor)`.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        let y = self.x.iter().map(|&x| self.eval(x * factor)).collect();
        MasterCurve::new(self.x.clone(), y, self.stderr.clone())
    }

    /// Smallest x > 0 at which the curve changes sign, by linear interpolation.
    pub fn zero_crossing(&self) -> Option<f64> {
        self.x
            .windows(2)
            .zip(self.y.windows(2))
            .find(|(xs, ys)| xs[1] > 0.0 && ys[0] > 0.0 && ys[1] <= 0.0)
            .map(|(xs, ys)| xs[0] + (xs[1] - xs[0]) * ys[0] / (ys[0] - ys[1]))
    }

    /// `x,g2_zero,stderr`
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,g2_zero,stderr")?;
        for ((x, y), e) in self.x.iter().zip(&self.y).zip(&self.stderr) {
            writeln!(w, "{x:.12e},{y:.12e},{e:.12e}")?;
        }
        Ok(())
    }
}

fn monotone_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let secants: Vec<f64> = (0..n - 1)
        .map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i]))
        .collect();
    let mut m = vec![0.0; n];
    m[0] = secants[0];
    m[n - 1] = secants[n - 2];
    for i in 1..n - 1 {
        m[i] = if secants[i - 1] * secants[i] <= 0.0 {
            0.0
        } else {
            (secants[i - 1] + secants[i]) / 2.0
        };
    }
    for i in 0..n - 1 {
        let d = secants[i];
        if d == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let a = m[i] / d;
        let b = m[i + 1] / d;
        let s = a * a + b * b;
        if s > 9.0 {
            let tau = 3.0 / s.sqrt();
            m[i] = tau * a * d;
            m[i + 1] = tau * b * d;
        }
    }
    m
}

fn check_invariance_regime(cfg: &SystemConfig) -> Result<()> {
    if cfg.omega1 != cfg.omega2 {
        return Err(Error::Validation(format!(
            "master curves need omega1 = omega2, got {} and {}",
            cfg.omega1, cfg.omega2
        )));
    }
    if cfg.omega1 < cfg.rates.g1_tilde {
        return Err(Error::Validation(format!(
            "master curves need omega1 >= g1_tilde, got {} < {}",
            cfg.omega1, cfg.rates.g1_tilde
        )));
    }
    Ok(())
}

/// Master curves for every value of `secondary`, from one parallel sweep.
pub fn build_master_curves(
    base: &SystemConfig,
    x_grid: &[f64],
    secondary: SecondaryAxis,
    plan: &SimulationPlan,
) -> Result<Vec<MasterCurve>> {
    let spec = SweepSpec {
        detuning: DetuningAxis::Scaled(x_grid.to_vec()),
        secondary,
    };
    for (_, _, cfg) in spec.grid(base)? {
        check_invariance_regime(&cfg)?;
    }
    let table = g2_zero_sweep(base, &spec, plan)?;
    table
        .rows()
        .into_iter()
        .map(|row| {
            let curve = MasterCurve::new(
                row.iter().map(|p| p.axis1).collect(),
                row.iter().map(|p| p.g2_zero).collect(),
                row.iter().map(|p| p.stderr).collect(),
            )?;
            let mut at_zero = row[0].config;
            at_zero.delta = 0.0;
            Ok(curve.with_provenance(at_zero))
        })
        .collect()
}

/// Master curve at decoherence rate `gamma3`.
pub fn build_master_curve(
    base: &SystemConfig,
    x_grid: &[f64],
    gamma3: f64,
    plan: &SimulationPlan,
) -> Result<MasterCurve> {
    let mut curves = build_master_curves(base, x_grid, SecondaryAxis::Gamma3(vec![gamma3]), plan)?;
    Ok(curves.remove(0))
}

fn same_grid(a: &MasterCurve, b: &MasterCurve) -> bool {
    a.x.len() == b.x.len()
        && a.x
            .iter()
            .zip(&b.x)
            .all(|(p, q)| (p - q).abs() <= 1e-12 * p.abs().max(1.0))
}

/// RMS deviation between every pair of curves, `(i, j, rms)`.
pub fn pairwise_residuals(curves: &[MasterCurve]) -> Result<Vec<(usize, usize, f64)>> {
    if curves.len() < 2 {
        return Err(Error::Validation("collapse needs at least 2 curves".into()));
    }
    if curves.iter().any(|c| !same_grid(c, &curves[0])) {
        return Err(Error::GridMismatch);
    }
    let mut out = Vec::new();
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            let ss: f64 = curves[i]
                .y
                .iter()
                .zip(&curves[j].y)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            out.push((i, j, (ss / curves[i].x.len() as f64).sqrt()));
        }
    }
    Ok(out)
}

/// RMS pairwise deviation pooled over all pairs and grid points.
pub fn collapse_residual(curves: &[MasterCurve]) -> Result<f64> {
    let pairs = pairwise_residuals(curves)?;
    let ms = pairs.iter().map(|p| p.2 * p.2).sum::<f64>() / pairs.len() as f64;
    Ok(ms.sqrt())
}

/// One point of a measured G²(0) sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub b_gauss: f64,
    pub g2_zero: f64,
    pub stderr: Option<f64>,
}

/// Rows of a numeric CSV whose header starts with `columns` and may carry a
/// trailing `stderr` column.
fn read_columns(path: &Path, columns: [&str; 2]) -> Result<Vec<(f64, f64, Option<f64>)>> {
    let shown = path.display().to_string();
    let csv_err = |line: usize, message: String| Error::Csv {
        path: shown.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(0, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let ok = match names.as_slice() {
        [a, b] => [*a, *b] == columns,
        [a, b, c] => [*a, *b] == columns && *c == "stderr",
        _ => false,
    };
    if !ok {
        return Err(csv_err(
            1,
            format!(
                "expected header {},{}[,stderr], got {}",
                columns[0],
                columns[1],
                names.join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| csv_err(line, e.to_string()))?;
        let mut values = Vec::with_capacity(3);
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| csv_err(line, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(csv_err(line, format!("non-finite value {v}")));
            }
            values.push(v);
        }
        rows.push((values[0], values[1], values.get(2).copied()));
    }
    if rows.is_empty() {
        return Err(csv_err(2, "no data rows".into()));
    }
    Ok(rows)
}

/// Measured sweep from a `b_gauss,g2_zero[,stderr]` CSV.
pub fn read_measurements(path: &Path) -> Result<Vec<Measurement>> {
    Ok(read_columns(path, ["b_gauss", "g2_zero"])?
        .into_iter()
        .map(|(b_gauss, g2_zero, stderr)| Measurement {
            b_gauss,
            g2_zero,
            stderr,
        })
        .collect())
}

/// Master curve from an `x,g2_zero[,stderr]` CSV.
pub fn read_master_curve(path: &Path) -> Result<MasterCurve> {
    let rows = read_columns(path, ["x", "g2_zero"])?;
    MasterCurve::new(
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
        rows.iter().map(|r| r.2.unwrap_or(0.0)).collect(),
    )
}

/// Write a measured sweep as `b_gauss,g2_zero[,stderr]`.
pub fn write_measurements<W: std::io::Write>(
    measured: &[Measurement],
    mut w: W,
) -> std::io::Result<()> {
    let with_err = measured.iter().all(|m| m.stderr.is_some());
    if with_err {
        writeln!(w, "b_gauss,g2_zero,stderr")?;
    } else {
        writeln!(w, "b_gauss,g2_zero")?;
    }
    for m in measured {
        match (with_err, m.stderr) {
            (true, Some(e)) => writeln!(w, "{:.12e},{:.12e},{e:.12e}", m.b_gauss, m.g2_zero)?,
            _ => writeln!(w, "{:.12e},{:.12e}", m.b_gauss, m.g2_zero)?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Scaling factor α in Gauss.
    pub alpha: f64,
    pub alpha_stderr: f64,
    /// γ₃ = α a, in MHz.
    pub gamma3_physical: f64,
    /// RMS misfit of G²(0).
    pub residual: f64,
    /// Zeeman constant used.
    pub a: f64,
}

impl FitResult {
    pub fn csv_header() -> &'static str {
        "alpha_gauss,alpha_stderr,gamma3_mhz,residual"
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{:.12e},{:.12e},{:.12e},{:.12e}",
            self.alpha, self.alpha_stderr, self.gamma3_physical, self.residual
        )
    }

    pub fn summary(&self) -> String {
        format!(
            "alpha = {:.6} ± {:.6} G\na = {:.6} MHz/G\ngamma3 = alpha * a = {:.6} MHz\nRMS residual = {:.6}",
            self.alpha, self.alpha_stderr, self.a, self.gamma3_physical, self.residual
        )
    }
}

fn weighted_sse(measured: &[Measurement], master: &MasterCurve, alpha: f64, weighted: bool) -> f64 {
    measured
        .iter()
        .map(|m| {
            let r = m.g2_zero - master.eval(m.b_gauss / alpha);
            let w = match (weighted, m.stderr) {
                (true, Some(s)) => 1.0 / (s * s),
                _ => 1.0,
            };
            w * r * r
        })
        .sum()
}

const SCAN_POINTS: usize = 800;
const GOLDEN_TOL: f64 = 1e-10;

/// Scale factor α minimizing the misfit between measured G²(0; B) and
/// `master(B / α)`.
///
/// Per-point standard errors are used as weights when every point carries one.
/// A dense log-spaced scan brackets the global minimum and golden-section
/// search refines it in log α.
pub fn fit_alpha(
    measured: &[Measurement],
    master: &MasterCurve,
    zp: &ZeemanParams,
) -> Result<FitResult> {
    zp.validate()?;
    if measured.len() < 2 {
        return Err(Error::Unidentifiable("need at least 2 measurements".into()));
    }
    if measured
        .iter()
        .any(|m| !m.b_gauss.is_finite() || !m.g2_zero.is_finite())
    {
        return Err(Error::Validation("measurements must be finite".into()));
    }
    let has_pos = measured.iter().any(|m| m.g2_zero > 0.0);
    let has_neg = measured.iter().any(|m| m.g2_zero < 0.0);
    if !(has_pos && has_neg) {
        return Err(Error::Unidentifiable(
            "sweep does not span both correlated and anticorrelated values".into(),
        ));
    }
    let weighted = measured
        .iter()
        .all(|m| matches!(m.stderr, Some(s) if s > 0.0));
    let b_abs: Vec<f64> = measured
        .iter()
        .map(|m| m.b_gauss.abs())
        .filter(|b| *b > 0.0)
        .collect();
    if b_abs.is_empty() {
        return Err(Error::Unidentifiable("all fields are zero".into()));
    }
    let b_min = b_abs.iter().cloned().fold(f64::INFINITY, f64::min);
    let b_max = b_abs.iter().cloned().fold(0.0, f64::max);
    let x_max = master.x.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let x_min = master
        .x
        .iter()
        .map(|x| x.abs())
        .filter(|x| *x > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !(x_max > 0.0) {
        return Err(Error::Validation("master curve spans no detuning".into()));
    }
    let lo = (b_min / x_max / 10.0).ln();
    let hi = (b_max / x_min * 10.0).ln();
    let objective = |log_alpha: f64| weighted_sse(measured, master, log_alpha.exp(), weighted);

    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let (best, _) = (0..SCAN_POINTS)
        .map(|k| (k, objective(lo + k as f64 * step)))
        .fold(
            (0, f64::INFINITY),
            |acc, cur| if cur.1 < acc.1 { cur } else { acc },
        );
    let mut a = lo + best.saturating_sub(1) as f64 * step;
    let mut b = lo + (best + 1).min(SCAN_POINTS - 1) as f64 * step;

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while (b - a).abs() > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = objective(d);
        }
    }
    let alpha = (0.5 * (a + b)).exp();

    let n = measured.len() as f64;
    let sse = weighted_sse(measured, master, alpha, false);
    let residual = (sse / n).sqrt();

    // Gauss-Newton variance from a central-difference Jacobian.
    let h = alpha * 1e-4;
    let jac: Vec<f64> = measured
        .iter()
        .map(|m| {
            (master.eval(m.b_gauss / (alpha + h)) - master.eval(m.b_gauss / (alpha - h)))
                / (2.0 * h)
        })
        .collect();
    let alpha_stderr = if weighted {
        let info: f64 = jac
            .iter()
            .zip(measured)
            .map(|(j, m)| (j / m.stderr.unwrap()).powi(2))
            .sum();
        (1.0 / info).sqrt()
    } else {
        let info: f64 = jac.iter().map(|j| j * j).sum();
        let s2 = if n > 1.0 { sse / (n - 1.0) } else { f64::NAN };
        (s2 / info).sqrt()
    };

    Ok(FitResult {
        alpha,
        alpha_stderr,
        gamma3_physical: alpha * zp.a(),
        residual,
        a: zp.a(),
    })
}
