use lambda_corr::dynamics::{
    averaged_drift, drift, integrate_averaged, simulate_trajectory, Integration, SystemConfig,
    Trajectory,
};
use lambda_corr::noise::GaussianSource;
use lambda_corr::observables::{
    g2, g2_estimate, intensity_fluctuations, ChannelPairing, SimulationPlan,
};

const D: f64 = 0.1;

fn noisy(delta: f64, span: f64) -> (SystemConfig, Trajectory) {
    let cfg = SystemConfig::benchmark(delta);
    let integ = Integration::auto(&cfg, span, 0.05).unwrap();
    let traj = simulate_trajectory(&cfg, &integ, 11, 0).unwrap();
    (cfg, traj)
}

fn in_phase_fraction(traj: &Trajectory) -> f64 {
    let n = traj.len() as f64;
    let mb = traj.samples.iter().map(|s| s.rho_ba.im).sum::<f64>() / n;
    let mc = traj.samples.iter().map(|s| s.rho_ca.im).sum::<f64>() / n;
    let same = traj
        .samples
        .iter()
        .filter(|s| (s.rho_ba.im - mb) * (s.rho_ca.im - mc) > 0.0)
        .count();
    same as f64 / n
}

#[test]
fn averaged_fixed_point() {
    let cfg = SystemConfig::benchmark(0.0);
    let integ = Integration::new(cfg.dt_max(), 6000.0, 5990.0, 1.0).unwrap();
    let traj = integrate_averaged(&cfg, D, &integ).unwrap();
    let last = traj.samples.last().unwrap();
    let residual = averaged_drift(last, &cfg, D).max_abs();
    assert!(residual < 1e-8, "residual {residual:e}");
    assert!(
        last.rho_bc.im.abs() < 1e-6,
        "Im rho_bc {:e}",
        last.rho_bc.im
    );
    // the averaged equations are the noiseless ones with extra optical damping
    assert!(drift(last, &cfg, 0.0).max_abs() > 1e-4);
}

#[test]
fn resonant_modes_stay_locked() {
    let (_, traj) = noisy(0.0, 2000.0);
    let peak = traj
        .samples
        .iter()
        .map(|s| s.rho_ba.norm())
        .fold(0.0, f64::max);
    let split = traj
        .samples
        .iter()
        .map(|s| (s.rho_ba - s.rho_ca).norm())
        .fold(0.0, f64::max);
    assert!(split / peak < 1e-3, "{split:e} / {peak:e}");
    let pop = traj
        .samples
        .iter()
        .map(|s| (s.rho_bb - s.rho_cc).abs())
        .fold(0.0, f64::max);
    assert!(pop < 1e-3, "{pop:e}");
    assert!(traj.samples.iter().all(|s| s.populations_ok()));
}

#[test]
fn resonant_series_in_phase_detuned_out_of_phase() {
    let (cfg, traj) = noisy(0.0, 2000.0);
    assert!(in_phase_fraction(&traj) > 0.8);
    let series = intensity_fluctuations(&traj, &cfg, ChannelPairing::Transmitted).unwrap();
    let positive = series
        .di1
        .iter()
        .zip(&series.di2)
        .filter(|(a, b)| *a * *b > 0.0)
        .count();
    assert!(positive as f64 > 0.8 * series.len() as f64);

    let (_, traj) = noisy(0.01, 2000.0);
    let f = in_phase_fraction(&traj);
    assert!(f < 0.5, "in-phase fraction {f}");
}

#[test]
fn excited_population_is_nearly_stationary() {
    let (_, traj) = noisy(0.0, 2000.0);
    // windows of 100 / γ₁
    let per_window = (100.0 / traj.dt_record).round() as usize;
    for w in traj.samples.chunks_exact(per_window) {
        let rate = (w[w.len() - 1].rho_aa() - w[0].rho_aa()) / 100.0;
        assert!(rate.abs() < 1e-4, "mean d rho_aa / dt = {rate:e}");
    }
}

#[test]
fn coupling_strength_does_not_change_g2() {
    let (cfg, traj) = noisy(0.01, 1000.0);
    let base = intensity_fluctuations(&traj, &cfg, ChannelPairing::Transmitted).unwrap();
    let mut doubled = cfg;
    doubled.kappa1_l *= 2.0;
    let scaled = intensity_fluctuations(&traj, &doubled, ChannelPairing::Transmitted).unwrap();
    for (a, b) in base.di1.iter().zip(&scaled.di1) {
        assert!((2.0 * a - b).abs() <= 1e-15 * b.abs().max(1e-300) * 10.0);
    }
    assert!((g2(&base, 0.0).unwrap() - g2(&scaled, 0.0).unwrap()).abs() < 1e-12);
}

#[test]
fn pairing_switch_is_symmetric_at_zero_delay() {
    let (cfg, traj) = noisy(0.01, 1000.0);
    let a = intensity_fluctuations(&traj, &cfg, ChannelPairing::Transmitted).unwrap();
    let b = intensity_fluctuations(&traj, &cfg, ChannelPairing::Propagation).unwrap();
    assert_eq!(g2(&a, 0.0).unwrap(), g2(&b, 0.0).unwrap());
}

#[test]
fn detuned_point_is_anticorrelated() {
    let (cfg, traj) = noisy(0.01, 2000.0);
    let series = intensity_fluctuations(&traj, &cfg, ChannelPairing::Transmitted).unwrap();
    let est = g2_estimate(&[series], 0.0, 8).unwrap();
    assert!(est.value < -0.5, "{est:?}");
    // full-window estimate agrees with the block mean
    assert!(
        (est.value - est.block_mean).abs() < 3.0 * est.stderr,
        "{est:?}"
    );
}

#[test]
fn rate_unit_does_not_matter() {
    let base = SystemConfig::benchmark(0.02);
    let plan = SimulationPlan {
        record_span: Some(1000.0),
        transient: Some(500.0),
        ..SimulationPlan::default()
    };
    let reference = plan.g2_zero(&base, 0).unwrap();

    let s = 2.0;
    let mut cfg = base;
    let r = &mut cfg.rates;
    for v in [
        &mut r.g1_tilde,
        &mut r.g2_tilde,
        &mut r.g3_tilde,
        &mut r.d12,
        &mut r.d21,
        &mut r.d31,
        &mut r.d32,
    ] {
        *v *= s;
    }
    cfg.omega1 *= s;
    cfg.omega2 *= s;
    cfg.delta *= s;
    let scaled_plan = SimulationPlan {
        noise: lambda_corr::noise::NoiseModel::white(D * s),
        record_span: Some(1000.0 / s),
        transient: Some(500.0 / s),
        dt_record: plan.dt_record / s,
        ..plan
    };
    let scaled = scaled_plan.g2_zero(&cfg, 0).unwrap();
    assert!(
        (reference.value - scaled.value).abs() < reference.stderr.max(1e-6),
        "{reference:?} vs {scaled:?}"
    );
}

#[test]
fn gaussian_moments() {
    let mut src = GaussianSource::new(2024, 0);
    let n = 1_000_000;
    let xs: Vec<f64> = (0..n).map(|_| src.sample()).collect();
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / nf;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    assert!(mean.abs() < 5.0 / nf.sqrt(), "mean {mean}");
    assert!((m2 - 1.0).abs() < 0.01, "variance {m2}");
    assert!(skew.abs() < 0.01, "skewness {skew}");
    assert!(kurt.abs() < 0.02, "excess kurtosis {kurt}");
}
