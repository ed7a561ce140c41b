use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg32;

const LEVEL: Transform = Transform { log: false };

fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Pcg32::seed_from_u64(seed);
    let mut y = Vec::with_capacity(n);
    let mut x: f64 = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
    for _ in 0..n {
        y.push(x);
        x = phi * x + rng.sample::<f64, _>(StandardNormal);
    }
    y
}

/// Simulates `(1 - 0.5L)(1-L)(1-L^4) y = (1 + 0.3L) e` from a burn-in.
fn sarima_path(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Pcg32::seed_from_u64(seed);
    let burn = 50;
    let mut e_prev = 0.0;
    let mut w = vec![0.0; n + burn];
    for t in 1..n + burn {
        let e: f64 = rng.sample(StandardNormal);
        w[t] = 0.5 * w[t - 1] + e + 0.3 * e_prev;
        e_prev = e;
    }
    let w = &w[burn..];
    let init: Vec<f64> = (0..5).map(|i| 100.0 + i as f64).collect();
    integrate(&w[5..], &init, 1, 1, 4)
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

#[test]
fn difference_examples() {
    assert_eq!(difference(&[1.0, 2.0, 4.0], 1, 0, 4).unwrap(), vec![1.0, 2.0]);
    let x = [3.0, 1.0, 4.0, 1.5, 3.0, 1.0, 4.0, 1.5];
    assert_eq!(difference(&x, 0, 1, 4).unwrap(), vec![0.0; 4]);
    assert!(matches!(difference(&[1.0; 5], 1, 1, 4), Err(SarimaxError::TooShort { .. })));
}

proptest! {
    #[test]
    fn integrate_inverts_difference(
        x in proptest::collection::vec(-100.0f64..100.0, 12..40),
        d in 0usize..3,
        sd in 0usize..2,
    ) {
        let w = difference(&x, d, sd, 4).unwrap();
        let m = d + 4 * sd;
        let back = integrate(&w, &x[..m], d, sd, 4);
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()) * 100.0);
        }
    }

    #[test]
    fn level_shift_moves_forecasts_by_the_shift(seed in 0u64..50, c in -50.0f64..50.0) {
        let y = sarima_path(40, seed);
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let order = SarimaxOrder::default();
        let a = rolling_walk_forward(&y, &[], LEVEL, &order, &RollingConfig::default(), 36..40, None).unwrap();
        let b = rolling_walk_forward(&shifted, &[], LEVEL, &order, &RollingConfig::default(), 36..40, None).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            prop_assert_eq!(sa.fallback, sb.fallback);
            prop_assert!((sb.forecast - sa.forecast - c).abs() < 1e-6);
        }
    }
}

#[test]
fn ar1_coefficient_recovered() {
    let order = SarimaxOrder::new((1, 0, 0), (0, 0, 0), 4);
    let mut est = Vec::new();
    for seed in 0..30 {
        let p = fit(&ar1(0.6, 200, seed), &[], &order).unwrap();
        assert!(p.converged && p.sigma2 > 0.0);
        est.push(p.phi[0]);
    }
    let mean = est.iter().sum::<f64>() / est.len() as f64;
    assert!((mean - 0.6).abs() < 0.05, "mean phi {mean}");
}

/// On white noise the ARMA(1,1) likelihood has a ridge along phi = -theta,
/// so only the implied first impulse response `phi + theta` is identified.
#[test]
fn white_noise_gives_near_white_arma() {
    let order = SarimaxOrder::new((1, 0, 1), (0, 0, 0), 4);
    let mut psi = Vec::new();
    for seed in 0..40 {
        let mut rng = Pcg32::seed_from_u64(1000 + seed);
        let y: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(p) = fit(&y, &[], &order) {
            psi.push((p.phi[0] + p.theta[0]).abs());
        }
    }
    assert!(psi.len() >= 38);
    psi.sort_by(f64::total_cmp);
    assert!(psi[psi.len() / 2] < 0.15, "median |phi + theta| {}", psi[psi.len() / 2]);
}

#[test]
fn constant_window_is_degenerate() {
    for order in [SarimaxOrder::default(), SarimaxOrder::new((1, 0, 0), (0, 0, 0), 4)] {
        assert_eq!(fit(&[5.0; 32], &[], &order), Err(SarimaxError::Degenerate));
    }
}

#[test]
fn random_walk_model_forecasts_last_value() {
    let order = SarimaxOrder::new((0, 1, 0), (0, 0, 0), 4);
    let y = sarima_path(30, 3);
    let p = fit(&y, &[], &order).unwrap();
    assert_eq!(forecast_one_step(&p, &y, &[], &[]).unwrap(), y[29]);
}

#[test]
fn ar1_forecast_closed_form() {
    let p = SarimaxParams {
        order: SarimaxOrder::new((1, 0, 0), (0, 0, 0), 4),
        phi: vec![0.6],
        theta: vec![],
        seasonal_phi: vec![],
        seasonal_theta: vec![],
        beta: vec![],
        sigma2: 1.0,
        converged: true,
        loglik: 0.0,
        ridge: false,
        iterations: 0,
    };
    let y = ar1(0.6, 20, 4);
    let f = forecast_one_step(&p, &y, &[], &[]).unwrap();
    assert!((f - 0.6 * y[19]).abs() < 1e-12);
    let bad = SarimaxParams { converged: false, ..p };
    assert_eq!(forecast_one_step(&bad, &y, &[], &[]), Err(SarimaxError::NotConverged));
}

#[test]
fn sarima_forecasts_beat_persistence() {
    let y = sarima_path(140, 11);
    let order = SarimaxOrder::new((1, 1, 1), (0, 1, 0), 4);
    let cfg = RollingConfig { window: 40, ..Default::default() };
    let steps = rolling_walk_forward(&y, &[], LEVEL, &order, &cfg, 40..140, None).unwrap();
    let fc: Vec<f64> = steps.iter().map(|s| s.forecast).collect();
    assert!(rmse(&fc, &y[40..140]) < rmse(&y[39..139], &y[40..140]));
}

#[test]
fn failing_fits_fall_back_to_persistence() {
    let y = sarima_path(30, 5);
    let cfg = RollingConfig { window: 8, ..Default::default() };
    let steps = rolling_walk_forward(&y, &[], LEVEL, &SarimaxOrder::default(), &cfg, 10..30, None).unwrap();
    for s in &steps {
        assert_eq!(s.forecast, y[s.index - 1]);
        assert_eq!(s.fallback, Some(FallbackReason::TooShort));
    }
}

#[test]
fn exact_seasonal_series_forecast_exactly() {
    let pattern = [2.0, -1.0, 0.5, -1.5];
    let y: Vec<f64> = (0..60).map(|t| 100.0 + 0.7 * t as f64 + pattern[t % 4]).collect();
    let steps =
        rolling_walk_forward(&y, &[], LEVEL, &SarimaxOrder::default(), &RollingConfig::default(), 32..60, None)
            .unwrap();
    for s in &steps {
        assert!((s.forecast - y[s.index]).abs() < 1e-9);
    }
    let flagged = steps.iter().filter(|s| s.fallback.is_some()).count();
    assert!(flagged <= steps.len());
}

#[test]
fn exogenous_regression_recovered() {
    let mut rng = Pcg32::seed_from_u64(21);
    let n = 150;
    let mut x = vec![0.0; n];
    for t in 1..n {
        x[t] = x[t - 1] + rng.sample::<f64, _>(StandardNormal);
    }
    let noise = ar1(0.4, n, 22);
    let y: Vec<f64> = x.iter().zip(&noise).map(|(a, e)| 2.0 * a + 0.3 * e).collect();
    let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
    let order = SarimaxOrder::new((1, 1, 0), (0, 0, 0), 4);
    let p = fit(&y, &rows, &order).unwrap();
    assert!((p.beta[0] - 2.0).abs() < 0.1, "beta {}", p.beta[0]);
    assert!(!p.ridge);

    let dup: Vec<Vec<f64>> = x.iter().map(|v| vec![*v, *v]).collect();
    let p = fit(&y, &dup, &order).unwrap();
    assert!(p.ridge);
    assert!((p.beta[0] + p.beta[1] - 2.0).abs() < 0.1);
}

#[test]
fn zero_exog_equals_pure_fit() {
    let y = sarima_path(40, 8);
    let a = fit(&y, &[], &SarimaxOrder::default()).unwrap();
    assert!(a.beta.is_empty());
    let empty_rows: Vec<Vec<f64>> = vec![Vec::new(); y.len()];
    let b = fit(&y, &empty_rows, &SarimaxOrder::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fault_injection_is_deterministic_and_calibrated() {
    let plan = FaultInjection { seed: 9, rate: 0.3, stream: "061000".into() };
    let hits = (0..10_000).filter(|&s| plan.fails(s)).count();
    assert!((2800..3200).contains(&hits), "{hits}");
    assert_eq!(plan.fails(17), plan.clone().fails(17));

    let y = sarima_path(60, 2);
    let steps =
        rolling_walk_forward(&y, &[], LEVEL, &SarimaxOrder::default(), &RollingConfig::default(), 32..60, Some(&plan))
            .unwrap();
    for s in &steps {
        if plan.fails(s.index) {
            assert_eq!(s.fallback, Some(FallbackReason::Injected));
            assert_eq!(s.forecast, y[s.index - 1]);
        }
    }
}

#[test]
fn forecast_past_end_of_data() {
    let y = sarima_path(40, 6);
    let steps =
        rolling_walk_forward(&y, &[], LEVEL, &SarimaxOrder::default(), &RollingConfig::default(), 38..41, None)
            .unwrap();
    let cut = rolling_walk_forward(&y[..39], &[], LEVEL, &SarimaxOrder::default(), &RollingConfig::default(), 38..40, None)
        .unwrap();
    assert_eq!(steps[0], cut[0]);
    assert_eq!(steps[1], cut[1]);
}

