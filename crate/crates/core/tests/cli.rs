use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lambda-corr"))
}

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    bin().arg("--config").arg(&cfg).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

const SHORT: &str = "[integration]\nrecord_span_g1inv = 400.0\n";

#[test]
fn minimal_config_runs_and_echoes_itself() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let config = "[system]\nomega1_g1 = 1.0\n[integration]\nrecord_span_g1inv = 10.0\n";
    let o = run(
        dir.path(),
        config,
        &["--out", out.to_str().unwrap(), "simulate"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["config_text"], config);
    assert_eq!(meta["master_seed"], 1);
    assert_eq!(meta["subcommand"], "simulate");
    assert!(meta["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(meta["resolved_config"]["system"]["omega2"], 1.0);
    let header = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(header.starts_with(
        "t,re_rho_ba,im_rho_ba,re_rho_ca,im_rho_ca,re_rho_bc,im_rho_bc,rho_bb,rho_cc\n"
    ));
}

#[test]
fn identical_seed_gives_identical_csv() {
    let dir = TempDir::new().unwrap();
    let config = format!("[system]\ndelta_g1 = 0.01\n{SHORT}");
    let mut outputs = Vec::new();
    for (name, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        let out = dir.path().join(name);
        let o = run(
            dir.path(),
            &config,
            &[
                "--out",
                out.to_str().unwrap(),
                "--seed",
                seed,
                "correlate",
                "--tau-max",
                "2",
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(out.join("curve.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_ne!(outputs[0], outputs[2]);
}

#[test]
fn validation_failure_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(
        dir.path(),
        "[system]\nkappa1_l = 1.5\n",
        &["--out", out.to_str().unwrap(), "simulate"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("thin-medium"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_key_is_an_error_with_line() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(
        dir.path(),
        "[system]\nomega1_g1 = 1.0\n\n[noise]\nd_g1 = 0.1\nlinewidth = 3\n",
        &["--out", out.to_str().unwrap(), "simulate"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 6"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn missing_input_csv_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(
        dir.path(),
        "",
        &[
            "--out",
            out.to_str().unwrap(),
            "fit-alpha",
            "--measured",
            "/nonexistent.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn noiseless_simulation_is_stationary() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(
        dir.path(),
        "[noise]\nd_g1 = 0.0\n[integration]\nrecord_span_g1inv = 20.0\n",
        &["--out", out.to_str().unwrap(), "simulate"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = rows(&out.join("trajectory.csv"));
    assert!(rows.len() > 100);
    for r in &rows {
        for k in 1..r.len() {
            assert!(
                (r[k] - rows[0][k]).abs() < 1e-9,
                "column {k}: {} vs {}",
                r[k],
                rows[0][k]
            );
        }
    }
}

#[test]
fn resonant_correlation_peaks_at_zero_delay() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let config = format!(
        "[rates]\nd12_g1 = 0.01\nd21_g1 = 0.01\n[system]\nomega1_g1 = 1.0\ndelta_g1 = 0.0\n{SHORT}"
    );
    let o = run(
        dir.path(),
        &config,
        &[
            "--out",
            out.to_str().unwrap(),
            "correlate",
            "--tau-max",
            "3",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = rows(&out.join("curve.csv"));
    let best = rows.iter().max_by(|a, b| a[1].total_cmp(&b[1])).unwrap();
    assert_eq!(best[0], 0.0);
    assert!(best[1] >= 0.8, "{}", best[1]);
}

#[test]
fn fit_alpha_roundtrip() {
    let dir = TempDir::new().unwrap();
    let master = dir.path().join("master.csv");
    let measured = dir.path().join("measured.csv");
    let shape = |x: f64| 0.95 * (2.0 * (-(x / 0.6f64).powi(2)).exp() - 1.0);
    let mut text = String::from("x,g2_zero\n");
    for i in 0..=40 {
        let x = i as f64 * 0.125;
        text += &format!("{x},{}\n", shape(x));
    }
    fs::write(&master, text).unwrap();
    let alpha = 0.8;
    let mut text = String::from("b_gauss,g2_zero\n");
    for i in 0..=40 {
        let b = -2.0 + 0.1 * i as f64;
        // deterministic wiggle in place of measurement noise
        let wiggle = 0.05 * (7.3 * i as f64).sin();
        text += &format!("{b},{}\n", shape(b / alpha) + wiggle);
    }
    fs::write(&measured, text).unwrap();
    let out = dir.path().join("out");
    let o = run(
        dir.path(),
        "",
        &[
            "--out",
            out.to_str().unwrap(),
            "fit-alpha",
            "--measured",
            measured.to_str().unwrap(),
            "--master",
            master.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let fit = fs::read_to_string(out.join("fit.csv")).unwrap();
    let mut lines = fit.lines();
    assert_eq!(
        lines.next(),
        Some("alpha_gauss,alpha_stderr,gamma3_mhz,residual")
    );
    let v: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert!((v[0] - alpha).abs() / alpha < 0.1, "alpha {}", v[0]);
    assert!((v[2] - v[0] * 1.4).abs() <= 1e-12 * v[2]);
    assert!(out.join("fit_summary.txt").exists());
    assert_eq!(rows(&out.join("fit_curve.csv")).len(), 201);
}

#[test]
fn single_signed_sweep_is_unidentifiable() {
    let dir = TempDir::new().unwrap();
    let master = dir.path().join("master.csv");
    let measured = dir.path().join("measured.csv");
    fs::write(&master, "x,g2_zero\n0,0.9\n1,0.0\n2,-0.8\n").unwrap();
    fs::write(&measured, "b_gauss,g2_zero\n0.0,0.9\n0.1,0.8\n").unwrap();
    let out = dir.path().join("out");
    let o = run(
        dir.path(),
        "",
        &[
            "--out",
            out.to_str().unwrap(),
            "fit-alpha",
            "--measured",
            measured.to_str().unwrap(),
            "--master",
            master.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unidentifiable"), "{}", stderr(&o));
}

#[test]
fn noise_test_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("ok");
    let o = run(
        dir.path(),
        "",
        &[
            "--out",
            out.to_str().unwrap(),
            "noise-test",
            "--samples",
            "400000",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("noise_autocorr.csv")).unwrap();
    assert!(text.starts_with("lag,empirical_autocorrelation,model_autocorrelation\n"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));

    // too short a record to pin the variance
    let out = dir.path().join("short");
    let o = run(
        dir.path(),
        "",
        &[
            "--out",
            out.to_str().unwrap(),
            "noise-test",
            "--samples",
            "300",
        ],
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    assert!(out.join("metadata.json").exists());
}

#[test]
fn runaway_noise_exits_with_divergence() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(
        dir.path(),
        "[noise]\nmodel = \"colored\"\ntheta_g1 = 1e6\nlambda_l_g1 = 50.0\n[integration]\nrecord_span_g1inv = 10.0\n",
        &["--out", out.to_str().unwrap(), "simulate"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn field_sweep_and_collapse_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sweep");
    let o = run(
        dir.path(),
        &format!("[sweep]\nb_gauss = [0.0]\nalpha_gauss = 0.5\n[calibration]\neit_width_gauss = 0.85\n{SHORT}"),
        &["--out", out.to_str().unwrap(), "sweep", "--b-min", "-0.5", "--b-max", "0.5", "--b-steps", "5"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(table.starts_with("axis1,axis2,g2_zero,stderr\n"));
    assert_eq!(table.lines().count(), 6);
    let points: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("sweep_points.json")).unwrap()).unwrap();
    assert_eq!(points.as_array().unwrap().len(), 5);

    let out = dir.path().join("collapse");
    let o = run(
        dir.path(),
        &format!("[sweep]\ndelta_over_gamma3 = [0.0, 1.0, 4.0]\ngamma3_g1 = [0.05, 0.1]\n{SHORT}"),
        &["--out", out.to_str().unwrap(), "collapse"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(rows(&out.join("master_curves.csv")).len(), 6);
    let pairs = rows(&out.join("collapse.csv"));
    assert_eq!(pairs.len(), 1);
    assert!(pairs[0][2] >= 0.0);
}
