//! Univariate relevance screening of exogenous columns.

use statrs::statistics::{Data, OrderStatistics, RankTieBreaker};

use super::FeatureMatrix;

/// Per-column screening scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScore {
    pub name: String,
    pub pearson: f64,
    pub spearman: f64,
    /// Residual sum of squares of `target ~ a + b * column`.
    pub ssr: f64,
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = Data::new(x.to_vec()).ranks(RankTieBreaker::Average);
    let ry = Data::new(y.to_vec()).ranks(RankTieBreaker::Average);
    pearson(&rx, &ry)
}

/// Residual sum of squares of an intercept-plus-slope least-squares fit.
pub fn univariate_ssr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum()
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

/// Whether a column takes part in screening. Target-derived columns and
/// calendar dummies are always kept.
pub fn is_exogenous(name: &str) -> bool {
    name.starts_with("x:")
}

/// Scores every exogenous column against `target` (aligned with the matrix
/// rows; non-finite targets exclude the row). Degenerate columns are
/// returned separately.
pub fn score_columns(m: &FeatureMatrix, target: &[f64]) -> (Vec<ColumnScore>, Vec<String>) {
    assert_eq!(target.len(), m.n_rows(), "target must align with matrix rows");
    let rows: Vec<usize> = (0..m.n_rows()).filter(|&i| target[i].is_finite()).collect();
    let y: Vec<f64> = rows.iter().map(|&i| target[i]).collect();
    let mut scores = Vec::new();
    let mut degenerate = Vec::new();
    for (j, name) in m.column_names.iter().enumerate() {
        if !is_exogenous(name) {
            continue;
        }
        let x: Vec<f64> = rows.iter().map(|&i| m.data[i][j]).collect();
        if x.len() < 3 || variance(&x) <= 1e-24 || variance(&y) <= 1e-24 {
            degenerate.push(name.clone());
            continue;
        }
        scores.push(ColumnScore {
            name: name.clone(),
            pearson: pearson(&x, &y),
            spearman: spearman(&x, &y),
            ssr: univariate_ssr(&x, &y),
        });
    }
    (scores, degenerate)
}

/// Names of the union of the `top_m` columns under each metric. Ties break
/// lexicographically by name.
pub fn select_top(scores: &[ColumnScore], top_m: usize) -> Vec<String> {
    let mut keep = std::collections::BTreeSet::new();
    let metrics: [fn(&ColumnScore) -> f64; 3] = [
        |s| -s.pearson.abs(),
        |s| -s.spearman.abs(),
        |s| s.ssr,
    ];
    for metric in metrics {
        let mut order: Vec<&ColumnScore> = scores.iter().collect();
        order.sort_by(|a, b| {
            metric(a)
                .total_cmp(&metric(b))
                .then_with(|| a.name.cmp(&b.name))
        });
        keep.extend(order.into_iter().take(top_m).map(|s| s.name.clone()));
    }
    keep.into_iter().collect()
}

/// Keeps all non-exogenous columns plus the screened exogenous ones, in
/// their original order.
pub fn screen_features(m: &FeatureMatrix, target: &[f64], top_m: usize) -> FeatureMatrix {
    let (scores, _) = score_columns(m, target);
    let keep = select_top(&scores, top_m);
    let names: Vec<String> = m
        .column_names
        .iter()
        .filter(|n| !is_exogenous(n) || keep.binary_search(n).is_ok())
        .cloned()
        .collect();
    m.select(&names).expect("names drawn from the matrix")
}
