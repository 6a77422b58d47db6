use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lambda_corr::calibration::{
    build_master_curves, fit_alpha, pairwise_residuals, read_master_curve, read_measurements,
    FitResult, MasterCurve, Measurement,
};
use lambda_corr::config::{parse_config, parse_config_str, RunConfig};
use lambda_corr::dynamics::simulate_trajectory;
use lambda_corr::noise::self_test;
use lambda_corr::observables::{
    g2_curve_pooled, g2_zero_sweep, symmetric_tau_grid, DetuningAxis, SecondaryAxis, SweepSpec,
    SweepTable,
};
use lambda_corr::{Error, Result};

const EXIT_VALIDATION: u8 = 1;
const EXIT_DIVERGENCE: u8 = 2;
const EXIT_SELF_TEST: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "lambda-corr",
    version,
    about = "Phase-noise intensity correlations in a lambda medium"
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `[ensemble] master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
struct FieldRange {
    #[arg(long, allow_hyphen_values = true)]
    b_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    b_max: Option<f64>,
    #[arg(long)]
    b_steps: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one trajectory and write it out.
    Simulate,
    /// G²(τ) of the configured point.
    Correlate {
        /// Largest delay, in units of 1/γ̃₁.
        #[arg(long)]
        tau_max: Option<f64>,
    },
    /// G²(0) over the configured sweep grid.
    Sweep {
        #[command(flatten)]
        range: FieldRange,
    },
    /// Statistical check of the phase-noise generator.
    NoiseTest {
        #[arg(long, default_value_t = 2_000_000)]
        samples: usize,
    },
    /// Fit the field scale α of a measured sweep.
    FitAlpha {
        #[arg(long)]
        measured: PathBuf,
        /// Master curve CSV; built from `[sweep] delta_over_gamma3` otherwise.
        #[arg(long)]
        master: Option<PathBuf>,
        /// Field grid of the fitted-curve output.
        #[command(flatten)]
        range: FieldRange,
    },
    /// Master curves over the secondary sweep axis and their collapse residuals.
    Collapse,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Correlate { .. } => "correlate",
            Command::Sweep { .. } => "sweep",
            Command::NoiseTest { .. } => "noise-test",
            Command::FitAlpha { .. } => "fit-alpha",
            Command::Collapse => "collapse",
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            _ => EXIT_VALIDATION,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        message: message.into(),
    }
}

impl FieldRange {
    fn grid(&self) -> std::result::Result<Option<Vec<f64>>, Failure> {
        match (self.b_min, self.b_max, self.b_steps) {
            (None, None, None) => Ok(None),
            (Some(lo), Some(hi), Some(n)) => {
                if !(lo < hi) || n < 2 {
                    return Err(invalid("need --b-min < --b-max and --b-steps >= 2"));
                }
                let h = (hi - lo) / (n - 1) as f64;
                Ok(Some((0..n).map(|i| lo + h * i as f64).collect()))
            }
            _ => Err(invalid("--b-min, --b-max and --b-steps go together")),
        }
    }
}

/// Everything a subcommand needs, checked before any file is written.
enum Job {
    Simulate,
    Correlate {
        taus: Vec<f64>,
    },
    Sweep {
        spec: SweepSpec,
    },
    NoiseTest {
        samples: usize,
    },
    FitAlpha {
        measured: Vec<Measurement>,
        master: MasterSource,
        curve_b: Vec<f64>,
    },
    Collapse {
        spec: SweepSpec,
    },
}

enum MasterSource {
    File(MasterCurve),
    Build {
        x: Vec<f64>,
        secondary: SecondaryAxis,
    },
}

fn prepare(cli: &Cli, cfg: &RunConfig) -> std::result::Result<Job, Failure> {
    match &cli.command {
        Command::Simulate => Ok(Job::Simulate),
        Command::Correlate { tau_max } => {
            let tau_max = tau_max.unwrap_or(cfg.tau_max);
            if !(tau_max >= 0.0) {
                return Err(invalid("--tau-max must be >= 0"));
            }
            Ok(Job::Correlate {
                taus: symmetric_tau_grid(cfg.plan.dt_record, tau_max),
            })
        }
        Command::Sweep { range } => {
            let spec = match (range.grid()?, &cfg.sweep) {
                (Some(b_gauss), sweep) => {
                    let (alpha_gauss, secondary) = match sweep {
                        Some(SweepSpec {
                            detuning: DetuningAxis::Field { alpha_gauss, .. },
                            secondary,
                        }) => (*alpha_gauss, secondary.clone()),
                        Some(s) => (1.0, s.secondary.clone()),
                        None => (1.0, SecondaryAxis::Fixed),
                    };
                    SweepSpec {
                        detuning: DetuningAxis::Field { b_gauss, alpha_gauss },
                        secondary,
                    }
                }
                (None, Some(spec)) => spec.clone(),
                (None, None) => return Err(invalid("sweep needs a [sweep] section or --b-min/--b-max/--b-steps")),
            };
            check_grid(cfg, &spec)?;
            Ok(Job::Sweep { spec })
        }
        Command::NoiseTest { samples } => {
            if *samples < 2 {
                return Err(invalid("--samples must be >= 2"));
            }
            if cfg.system.noise.is_silent() {
                return Err(invalid("noise-test needs theta > 0"));
            }
            Ok(Job::NoiseTest { samples: *samples })
        }
        Command::FitAlpha {
            measured,
            master,
            range,
        } => {
            let measured = read_measurements(measured)?;
            let master = match master {
                Some(path) => MasterSource::File(read_master_curve(path)?),
                None => match &cfg.sweep {
                    Some(SweepSpec {
                        detuning: DetuningAxis::Scaled(x),
                        secondary,
                    }) => {
                        let secondary = match secondary {
                            SecondaryAxis::Fixed => SecondaryAxis::Fixed,
                            SecondaryAxis::Gamma3(v) => SecondaryAxis::Gamma3(vec![v[0]]),
                            SecondaryAxis::Rabi(v) => SecondaryAxis::Rabi(vec![v[0]]),
                        };
                        MasterSource::Build {
                            x: x.clone(),
                            secondary,
                        }
                    }
                    _ => {
                        return Err(invalid(
                            "fit-alpha needs --master or a [sweep] section with delta_over_gamma3",
                        ))
                    }
                },
            };
            let curve_b = match range.grid()? {
                Some(b) => b,
                None => {
                    let lo = measured.iter().map(|m| m.b_gauss).fold(f64::INFINITY, f64::min);
                    let hi = measured.iter().map(|m| m.b_gauss).fold(f64::NEG_INFINITY, f64::max);
                    let n = 201;
                    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
                }
            };
            Ok(Job::FitAlpha {
                measured,
                master,
                curve_b,
            })
        }
        Command::Collapse => match &cfg.sweep {
            Some(spec @ SweepSpec {
                detuning: DetuningAxis::Scaled(_),
                secondary: SecondaryAxis::Gamma3(v) | SecondaryAxis::Rabi(v),
            }) if v.len() >= 2 => Ok(Job::Collapse { spec: spec.clone() }),
            _ => Err(invalid(
                "collapse needs [sweep] delta_over_gamma3 with at least two gamma3_g1 or omega_g1 values",
            )),
        },
    }
}

fn check_grid(cfg: &RunConfig, spec: &SweepSpec) -> Result<()> {
    for (_, _, point) in spec.grid(&cfg.system)? {
        let point = cfg.plan.configure(point)?;
        cfg.plan.integration(&point)?;
    }
    Ok(())
}

fn create(out: &Path, name: &str) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn write_table(out: &Path, table: &SweepTable) -> std::io::Result<()> {
    let mut w = create(out, "sweep.csv")?;
    table.write_csv(&mut w)?;
    w.flush()?;
    let points: Vec<_> = table
        .points
        .iter()
        .map(|p| json!({"axis1": p.axis1, "axis2": p.axis2, "config": p.config}))
        .collect();
    fs::write(
        out.join("sweep_points.json"),
        serde_json::to_string_pretty(&points)?,
    )?;
    Ok(())
}

/// Half width of the correlated window: the first |B| at which G²(0) changes
/// sign, interpolated linearly.
fn correlation_half_width(table: &SweepTable) -> Option<f64> {
    let row = table.rows().into_iter().next()?;
    let mut best: Option<f64> = None;
    for w in row.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.g2_zero.signum() != b.g2_zero.signum() {
            let x = a.axis1 + (b.axis1 - a.axis1) * a.g2_zero / (a.g2_zero - b.g2_zero);
            best = Some(best.map_or(x.abs(), |v: f64| v.min(x.abs())));
        }
    }
    best
}

fn run(cli: &Cli, cfg: &RunConfig, job: Job) -> std::result::Result<serde_json::Value, Failure> {
    let out = cli.out.as_path();
    let plan = &cfg.plan;
    match job {
        Job::Simulate => {
            let integ = plan.integration(&cfg.system)?;
            let traj = simulate_trajectory(&cfg.system, &integ, plan.master_seed, 0)?;
            let mut w = create(out, "trajectory.csv")?;
            traj.write_csv(&mut w)?;
            w.flush()?;
            println!("{} samples, dt = {:.3e}", traj.len(), integ.dt);
            Ok(json!({"samples": traj.len(), "dt": integ.dt}))
        }
        Job::Correlate { taus } => {
            let series = plan.run_point(&cfg.system, 0)?;
            let curve = g2_curve_pooled(&series, &taus)?;
            let mut w = create(out, "curve.csv")?;
            curve.write_csv(&mut w)?;
            w.flush()?;
            let g0 = curve.value_at(0.0);
            println!(
                "G2(0) = {:.4}, argmax tau = {:.3}, argmin tau = {:.3}",
                g0.unwrap_or(f64::NAN),
                curve.argmax().unwrap_or(f64::NAN),
                curve.argmin().unwrap_or(f64::NAN)
            );
            Ok(json!({"g2_zero": g0, "argmax": curve.argmax(), "argmin": curve.argmin()}))
        }
        Job::Sweep { spec } => {
            let table = g2_zero_sweep(&cfg.system, &spec, plan)?;
            write_table(out, &table)?;
            let mut info = json!({"points": table.points.len()});
            if let (DetuningAxis::Field { .. }, Some(w)) = (&spec.detuning, cfg.eit_width_gauss) {
                if let Some(half) = correlation_half_width(&table) {
                    println!(
                        "correlation window {:.4} G, EIT width {:.4} G, ratio {:.3}",
                        2.0 * half,
                        w,
                        w / (2.0 * half)
                    );
                    info["correlation_width_gauss"] = json!(2.0 * half);
                    info["eit_width_gauss"] = json!(w);
                }
            }
            println!("{} grid points", table.points.len());
            Ok(info)
        }
        Job::NoiseTest { samples } => {
            let integ = plan.integration(&cfg.system)?;
            let params = cfg.system.noise.sampled(integ.dt)?;
            let report = self_test(plan.master_seed, samples, &params)?;
            let mut w = create(out, "noise_autocorr.csv")?;
            writeln!(w, "lag,empirical_autocorrelation,model_autocorrelation")?;
            for (lag, emp, model) in &report.autocorrelation {
                let v = report.expected_variance;
                writeln!(w, "{lag:.12e},{:.12e},{:.12e}", emp / v, model / v)?;
            }
            w.flush()?;
            let verdict = if report.passed() { "PASS" } else { "FAIL" };
            println!(
                "noise-test {verdict}: variance error {:.4} (limit 0.03), decay error {:.4} (limit 0.05)",
                report.variance_error(),
                report.decay_error()
            );
            let info = json!({
                "variance": report.variance,
                "expected_variance": report.expected_variance,
                "decay_rate": report.decay_rate,
                "lambda_l": params.lambda_l(),
                "passed": report.passed(),
            });
            if report.passed() {
                Ok(info)
            } else {
                Err(Failure {
                    code: EXIT_SELF_TEST,
                    message: "noise generator failed its self-test".into(),
                })
            }
        }
        Job::FitAlpha {
            measured,
            master,
            curve_b,
        } => {
            let master = match master {
                MasterSource::File(curve) => curve,
                MasterSource::Build { x, secondary } => {
                    let curve = build_master_curves(&cfg.system, &x, secondary, plan)?.remove(0);
                    let mut w = create(out, "master_curve.csv")?;
                    curve.write_csv(&mut w)?;
                    w.flush()?;
                    curve
                }
            };
            let fit = fit_alpha(&measured, &master, &cfg.zeeman)?;
            fs::write(
                out.join("fit.csv"),
                format!("{}\n{}\n", FitResult::csv_header(), fit.csv_line()),
            )?;
            fs::write(out.join("fit_summary.txt"), format!("{}\n", fit.summary()))?;
            let mut w = create(out, "fit_curve.csv")?;
            writeln!(w, "b_gauss,g2_zero_model")?;
            for b in curve_b {
                writeln!(w, "{b:.12e},{:.12e}", master.eval(b / fit.alpha))?;
            }
            w.flush()?;
            println!("{}", fit.summary());
            Ok(serde_json::to_value(fit).map_err(std::io::Error::from)?)
        }
        Job::Collapse { spec } => {
            let curves = build_master_curves(
                &cfg.system,
                spec.detuning.values(),
                spec.secondary.clone(),
                plan,
            )?;
            let axis: Vec<f64> = match &spec.secondary {
                SecondaryAxis::Gamma3(v) | SecondaryAxis::Rabi(v) => v.clone(),
                SecondaryAxis::Fixed => unreachable!("checked in prepare"),
            };
            let name = spec.secondary.name();
            let mut w = create(out, "master_curves.csv")?;
            writeln!(w, "{name},x,g2_zero,stderr")?;
            for (c, a) in curves.iter().zip(&axis) {
                for ((x, y), e) in c.x.iter().zip(&c.y).zip(&c.stderr) {
                    writeln!(w, "{a:.12e},{x:.12e},{y:.12e},{e:.12e}")?;
                }
            }
            w.flush()?;
            let pairs = pairwise_residuals(&curves)?;
            let mut w = create(out, "collapse.csv")?;
            writeln!(w, "{name}_i,{name}_j,rms")?;
            for (i, j, rms) in &pairs {
                writeln!(w, "{:.12e},{:.12e},{rms:.12e}", axis[*i], axis[*j])?;
                println!("{name} {} vs {}: rms {rms:.4}", axis[*i], axis[*j]);
            }
            w.flush()?;
            let worst = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
            println!("largest pairwise rms {worst:.4}");
            Ok(json!({"max_pairwise_rms": worst}))
        }
    }
}

fn load(cli: &Cli) -> std::result::Result<(RunConfig, Option<String>), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(path).map_err(|e| match e {
            Error::Io(io) => invalid(format!("cannot read {}: {io}", path.display())),
            other => other.into(),
        })?,
        None => parse_config_str("")?,
    };
    if let Some(seed) = cli.seed {
        cfg.plan.master_seed = seed;
    }
    let path = cli.config.as_ref().map(|p| p.display().to_string());
    Ok((cfg, path))
}

fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    let started = Instant::now();
    let (cfg, config_path) = load(cli)?;
    let job = prepare(cli, &cfg)?;
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| invalid(e.to_string()))?;
    }
    fs::create_dir_all(&cli.out)?;
    let result = run(cli, &cfg, job);
    let (status, info) = match &result {
        Ok(info) => ("ok", info.clone()),
        Err(f) => ("failed", json!({"error": f.message, "exit_code": f.code})),
    };
    let metadata = json!({
        "program": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": cli.command.name(),
        "arguments": std::env::args().skip(1).collect::<Vec<_>>(),
        "master_seed": cfg.plan.master_seed,
        "threads": rayon::current_num_threads(),
        "config_path": config_path,
        "config_text": cfg.source,
        "resolved_config": cfg,
        "status": status,
        "result": info,
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    fs::write(
        cli.out.join("metadata.json"),
        serde_json::to_string_pretty(&metadata).map_err(std::io::Error::from)? + "\n",
    )?;
    result.map(|_| ())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
