use lambda_corr::noise::GaussianSource;
use lambda_corr::observables::{g2, g2_estimate, IntensitySeries};
use proptest::prelude::*;

fn series(seed: u64, n: usize, mix: f64) -> IntensitySeries {
    let mut a = GaussianSource::new(seed, 0);
    let mut b = GaussianSource::new(seed, 1);
    let x: Vec<f64> = (0..n).map(|_| a.sample()).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| mix * v + (1.0 - mix.abs()) * b.sample())
        .collect();
    IntensitySeries::from_raw(0.1, x, y).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bounded(seed in 0u64..1000, mix in -1.0f64..1.0, lag in -20i32..=20) {
        let s = series(seed, 500, mix);
        let v = g2(&s, lag as f64 * 0.1).unwrap();
        prop_assert!(v.abs() <= 1.0 + 1e-9, "{}", v);
    }

    #[test]
    fn positive_scaling_is_exact(seed in 0u64..1000, mix in -1.0f64..1.0, k in 0i32..8, lag in -10i32..=10) {
        let s = series(seed, 400, mix);
        // powers of two keep the rescaled data exact
        let c = 2f64.powi(k - 4);
        let mut t = s.clone();
        t.di2.iter_mut().for_each(|v| *v *= c);
        let tau = lag as f64 * 0.1;
        prop_assert_eq!(g2(&s, tau).unwrap(), g2(&t, tau).unwrap());
    }

    #[test]
    fn generic_scaling_to_rounding(seed in 0u64..1000, mix in -1.0f64..1.0, c in 1e-3f64..1e3) {
        let s = series(seed, 400, mix);
        let mut t = s.clone();
        t.di1.iter_mut().for_each(|v| *v *= c);
        prop_assert!((g2(&s, 0.0).unwrap() - g2(&t, 0.0).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn swap_symmetric_at_zero_delay(seed in 0u64..1000, mix in -1.0f64..1.0) {
        let s = series(seed, 300, mix);
        prop_assert_eq!(g2(&s, 0.0).unwrap(), g2(&s.swapped(), 0.0).unwrap());
    }

    #[test]
    fn negative_delay_is_swapped_positive(seed in 0u64..1000, mix in -1.0f64..1.0, lag in 1i32..10) {
        let s = series(seed, 300, mix);
        let tau = lag as f64 * 0.1;
        prop_assert_eq!(g2(&s, -tau).unwrap(), g2(&s.swapped(), tau).unwrap());
    }
}

#[test]
fn exact_extremes() {
    let s = series(3, 1000, 1.0);
    assert_eq!(g2(&s, 0.0).unwrap(), 1.0);
    let neg =
        IntensitySeries::from_raw(0.1, s.di1.clone(), s.di1.iter().map(|v| -v).collect()).unwrap();
    assert_eq!(g2(&neg, 0.0).unwrap(), -1.0);
}

#[test]
fn independent_null() {
    let n = 100_000;
    let s = series(17, n, 0.0);
    let v = g2(&s, 0.0).unwrap();
    assert!(v.abs() < 5.0 / (n as f64).sqrt(), "{v}");
}

#[test]
fn block_mean_agrees_with_full_window() {
    for seed in 0..20 {
        let s = series(seed, 8000, 0.6);
        let e = g2_estimate(&[s], 0.0, 8).unwrap();
        assert_eq!(e.n_blocks, 8);
        assert!((e.value - e.block_mean).abs() < 3.0 * e.stderr, "{e:?}");
    }
}
