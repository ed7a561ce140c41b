use super::*;
use crate::data::{Panel, Series, SeriesKey};
use crate::features::{build_matrix, FeatureSpec};
use crate::nn::{max_relative_error, numeric_gradient};
use rand::Rng;
use rand_distr::StandardNormal;

fn random_rows(r: &mut rand_pcg::Pcg32, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()
}

fn small_cfg() -> AttentionConfig {
    AttentionConfig { lookback: 6, horizon: 3, d_model: 8, n_heads: 2, ..AttentionConfig::default() }
}

#[test]
fn single_key_returns_its_value() {
    let (out, a) = attention(&[vec![0.3, -1.0], vec![2.0, 0.5]], &[vec![1.0, 1.0]], &[vec![4.0, 5.0, 6.0]]).unwrap();
    assert_eq!(out, vec![vec![4.0, 5.0, 6.0]; 2]);
    assert_eq!(a, vec![vec![1.0]; 2]);
}

#[test]
fn identical_keys_average_values() {
    let mut r = rng(1);
    let q = random_rows(&mut r, 3, 4);
    let k = vec![vec![0.2, 0.1, -0.3, 0.5]; 5];
    let v = random_rows(&mut r, 5, 2);
    let (out, _) = attention(&q, &k, &v).unwrap();
    for row in out {
        for j in 0..2 {
            let mean = v.iter().map(|x| x[j]).sum::<f64>() / 5.0;
            assert!((row[j] - mean).abs() < 1e-15);
        }
    }
}

#[test]
fn attention_shapes_checked() {
    let q = vec![vec![1.0, 2.0]];
    assert!(matches!(attention(&q, &[vec![1.0, 2.0]], &[]), Err(NnError::ShapeMismatch(_))));
    assert!(matches!(attention(&q, &[vec![1.0]], &[vec![1.0]]), Err(NnError::ShapeMismatch(_))));
}

#[test]
fn softmax_rows_sum_to_one_and_ignore_shifts() {
    let mut r = rng(2);
    for _ in 0..50 {
        let row: Vec<f64> = (0..7).map(|_| r.gen_range(-30.0..30.0)).collect();
        let shift = r.gen_range(-100.0..100.0);
        let mut a = row.clone();
        let mut b: Vec<f64> = row.iter().map(|v| v + shift).collect();
        softmax_rows(&mut a, 7);
        softmax_rows(&mut b, 7);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(max_relative_error(&a, &b, 1e-300) < 1e-9);
    }
}

#[test]
fn attention_gradient_matches_finite_differences() {
    let mut r = rng(3);
    let (q, k, v, g) = (random_rows(&mut r, 4, 3), random_rows(&mut r, 5, 3), random_rows(&mut r, 5, 2), random_rows(&mut r, 4, 2));
    let (dq, dk, dv) = attention_gradient(&q, &k, &v, &g).unwrap();
    let objective = |q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]| -> f64 {
        let (out, _) = attention(q, k, v).unwrap();
        out.iter().flatten().zip(g.iter().flatten()).map(|(a, b)| a * b).sum()
    };
    let reshape = |p: &[f64], w: usize| p.chunks(w).map(|c| c.to_vec()).collect::<Vec<_>>();
    let nq = numeric_gradient(|p| objective(&reshape(p, 3), &k, &v), &q.concat(), 1e-6);
    let nk = numeric_gradient(|p| objective(&q, &reshape(p, 3), &v), &k.concat(), 1e-6);
    let nv = numeric_gradient(|p| objective(&q, &k, &reshape(p, 2)), &v.concat(), 1e-6);
    assert!(max_relative_error(&dq, &nq, 1e-6) < 1e-4);
    assert!(max_relative_error(&dk, &nk, 1e-6) < 1e-4);
    assert!(max_relative_error(&dv, &nv, 1e-6) < 1e-4);
}

#[test]
fn zero_weights_give_output_bias() {
    let layout = small_cfg().layout(3);
    let mut w = AttentionWeights::zeros(layout);
    w.mean_bias_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
    w.log_scale_bias_mut().copy_from_slice(&[0.0, 1.0, -2.0]);
    let mut r = rng(4);
    let out = encode_and_project(&w, &random_rows(&mut r, 6, 3), true).unwrap();
    assert_eq!(out, vec![(0.5, 0.0), (-1.0, 1.0), (2.0, -2.0)]);
    assert_eq!(w.mean_bias(), &[0.5, -1.0, 2.0]);
}

#[test]
fn window_width_checked() {
    let w = AttentionWeights::zeros(small_cfg().layout(3));
    assert!(matches!(encode_and_project(&w, &[vec![1.0; 2]], true), Err(NnError::ShapeMismatch(_))));
}

#[test]
fn permutation_sensitivity_depends_on_positions() {
    let w = AttentionWeights::init(small_cfg().layout(3), 5);
    let mut r = rng(6);
    let rows = random_rows(&mut r, 6, 3);
    let mut perm = rows.clone();
    perm.swap(0, 4);
    perm.swap(1, 2);
    let a = encode_and_project(&w, &rows, true).unwrap();
    let b = encode_and_project(&w, &perm, true).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| (x.0 - y.0).abs() > 1e-6));
    let a = encode_and_project(&w, &rows, false).unwrap();
    let b = encode_and_project(&w, &perm, false).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
    }
}

#[test]
fn nll_gradient_matches_finite_differences() {
    let cfg = small_cfg();
    let mut r = rng(7);
    for seed in 0..3 {
        let mut w = AttentionWeights::init(cfg.layout(3), seed);
        let o = w.layout.offsets();
        // Shift the ReLU pre-activations away from zero.
        for v in &mut w.params[o.b1..o.w2] {
            *v += 0.3;
        }
        let ex = Examples {
            len: 6,
            input: 3,
            windows: (0..3).map(|_| random_rows(&mut r, 6, 3).concat()).collect(),
            targets: vec![vec![0.3, f64::NAN, -0.2], vec![1.0, 0.5, 0.0], vec![-0.4, 0.1, f64::NAN]],
        };
        let (_, g) = nll_and_gradient(&w, &ex, true).unwrap();
        let num = numeric_gradient(
            |p| nll_and_gradient(&AttentionWeights { layout: w.layout, params: p.to_vec() }, &ex, true).unwrap().0,
            &w.params,
            1e-5,
        );
        let err = max_relative_error(&g, &num, 1e-6);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn z_for_five_percent() {
    assert!((z_quantile(0.05) - 1.959964).abs() < 1e-6);
}

#[test]
fn intervals_are_symmetric_and_widen_with_level() {
    let f = ProbabilisticForecast::from_moments(vec![1.0, 2.0], vec![0.5, 0.0], 0.05);
    assert!((f.upper[0] - f.lower[0] - 2.0 * z_quantile(0.05) * 0.5).abs() < 1e-15);
    assert_eq!((f.lower[1], f.upper[1]), (2.0, 2.0));
    let mut prev = 0.0;
    for alpha in [0.5, 0.2, 0.1, 0.05, 0.01] {
        let f = ProbabilisticForecast::from_moments(vec![0.0], vec![1.0], alpha);
        let width = f.upper[0] - f.lower[0];
        assert!(width >= prev);
        prev = width;
    }
}

#[test]
fn config_validation() {
    assert!(AttentionConfig { n_heads: 3, ..AttentionConfig::default() }.validate().is_err());
    assert!(AttentionConfig { alpha: 1.0, ..AttentionConfig::default() }.validate().is_err());
    assert!(AttentionConfig::default().validate().is_ok());
}

/// Single-series matrix of an AR(1) around 100 without log transform.
pub(super) fn ar1_matrix(n: usize, phi: f64, seed: u64) -> FeatureMatrix {
    let start = Quarter::new(1900, 1).unwrap();
    let key = SeriesKey::csi("061000").unwrap();
    let mut r = rng(seed);
    let mut x = 0.0;
    let values: Vec<f64> = (0..n)
        .map(|_| {
            x = phi * x + r.sample::<f64, _>(StandardNormal);
            100.0 + x
        })
        .collect();
    let mut p = Panel::new(start, n);
    p.insert(Series::new(key.clone(), start, values)).unwrap();
    let spec = FeatureSpec {
        use_log: false,
        lag_set: vec![],
        yoy: false,
        rolling_windows: vec![],
        quarter_dummies: false,
        augmented: false,
        screening: None,
        ..FeatureSpec::default()
    };
    build_matrix(&p, &key, &spec, p.end()).unwrap()
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let m = ar1_matrix(80, 0.5, 1);
    let cfg = AttentionConfig { epochs: 80, learning_rate: 5e-3, ..small_cfg() };
    let a = train_gaussian_nll(&m, m.quarters[60], &cfg).unwrap();
    let b = train_gaussian_nll(&m, m.quarters[60], &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.loss_curve.last().unwrap() < &a.loss_curve[0]);
    let f = a.predict_with_intervals(&m, m.quarters[70]).unwrap();
    assert_eq!(f.point.len(), 3);
    for j in 0..3 {
        assert!(f.lower[j] <= f.point[j] && f.point[j] <= f.upper[j] && f.sigma[j] > 0.0);
    }
}

#[test]
fn training_ignores_rows_after_train_end() {
    let m = ar1_matrix(80, 0.5, 2);
    let cfg = AttentionConfig { epochs: 20, ..small_cfg() };
    let a = train_gaussian_nll(&m, m.quarters[50], &cfg).unwrap();
    let mut cut = m.clone();
    cut.quarters.truncate(51);
    cut.target.truncate(51);
    cut.data.truncate(51);
    let b = train_gaussian_nll(&cut, m.quarters[50], &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.predict_with_intervals(&m, m.quarters[50]).unwrap(), b.predict_with_intervals(&cut, m.quarters[50]).unwrap());
    let mut buf = Vec::new();
    a.to_saved().write(&mut buf).unwrap();
    let loaded = AttentionModel::from_saved(crate::nn::SavedState::read(buf.as_slice()).unwrap(), &m, m.quarters[50], &cfg).unwrap();
    assert_eq!(loaded.predict_with_intervals(&m, m.quarters[60]).unwrap(), a.predict_with_intervals(&m, m.quarters[60]).unwrap());
}

#[test]
fn short_training_span_rejected() {
    let m = ar1_matrix(40, 0.5, 3);
    let r = train_gaussian_nll(&m, m.quarters[5], &small_cfg());
    assert!(matches!(r, Err(NnError::InsufficientData(_))));
}

#[test]
fn coverage_on_gaussian_ar1() {
    let m = ar1_matrix(1501, 0.6, 11);
    let cfg = AttentionConfig { lookback: 4, horizon: 1, epochs: 150, learning_rate: 1e-2, seed: 1, ..small_cfg() };
    let model = train_gaussian_nll(&m, m.quarters[999], &cfg).unwrap();
    let mut hit = 0;
    for origin in 999..1499 {
        let f = model.predict_with_intervals(&m, m.quarters[origin]).unwrap();
        let y = m.target[origin + 1];
        if f.lower[0] <= y && y <= f.upper[0] {
            hit += 1;
        }
    }
    let cov = hit as f64 / 500.0;
    assert!((0.90..=0.99).contains(&cov), "coverage {cov}");
}
