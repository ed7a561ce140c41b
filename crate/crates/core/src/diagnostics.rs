//! Exploratory statistics for the panel: cross-sectional dispersion,
//! seasonal indices, autocorrelation, rolling correlation and correlation
//! clustering of quarter-over-quarter log changes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Panel, Quarter, Series, SeriesKind};
use crate::features::pearson;

#[derive(Debug, Error, PartialEq)]
pub enum DiagError {
    #[error("need at least {need} observations, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("non-positive value at position {0}")]
    NonPositive(usize),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no sections in panel")]
    NoSections,
    #[error("invalid cluster count {k} for {n} series")]
    InvalidK { k: usize, n: usize },
}

pub type Result<T> = std::result::Result<T, DiagError>;

/// Linear interpolation between order statistics (Hyndman–Fan type 7).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionRow {
    pub quarter: Quarter,
    pub n_sections: usize,
    pub non_null_pct: f64,
    pub median: Option<f64>,
    pub iqr: Option<f64>,
    pub mean: Option<f64>,
    /// Sample standard deviation (n − 1).
    pub sd: Option<f64>,
    pub cv: Option<f64>,
}

/// Cross-sectional summary of section values at each listed quarter.
pub fn dispersion_table(panel: &Panel, quarters: &[Quarter]) -> Result<Vec<DispersionRow>> {
    let sections: Vec<&Series> = panel.series().filter(|s| s.key.kind == SeriesKind::CsiSection).collect();
    if sections.is_empty() {
        return Err(DiagError::NoSections);
    }
    Ok(quarters
        .iter()
        .map(|&q| {
            let mut v: Vec<f64> = sections.iter().filter_map(|s| s.value_at(q)).collect();
            v.sort_by(f64::total_cmp);
            dispersion_row(q, sections.len(), &v)
        })
        .collect())
}

fn dispersion_row(quarter: Quarter, n_sections: usize, sorted: &[f64]) -> DispersionRow {
    let n = sorted.len();
    let non_null_pct = 100.0 * n as f64 / n_sections as f64;
    if n == 0 {
        return DispersionRow { quarter, n_sections, non_null_pct, median: None, iqr: None, mean: None, sd: None, cv: None };
    }
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    DispersionRow {
        quarter,
        n_sections,
        non_null_pct,
        median: Some(quantile(sorted, 0.5)),
        iqr: Some(quantile(sorted, 0.75) - quantile(sorted, 0.25)),
        mean: Some(mean),
        sd,
        cv: sd.filter(|_| mean != 0.0).map(|s| s / mean),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeasonalMethod {
    /// Log deviations from a centered 2x4 moving average.
    #[default]
    MovingAverage,
    /// Quarter-dummy coefficients of a log-linear trend regression.
    DummyRegression,
}

/// Seasonal indices in `index − 1` form for quarters 1..4.
///
/// Both methods estimate additive log effects `m_q` (centered), then report
/// `exp(m_q) / mean(exp(m)) − 1`.
pub fn seasonal_indices(values: &[f64], start: Quarter, method: SeasonalMethod) -> Result<[f64; 4]> {
    if values.len() < 8 {
        return Err(DiagError::TooShort { need: 8, got: values.len() });
    }
    if let Some(i) = values.iter().position(|v| !(*v > 0.0)) {
        return Err(DiagError::NonPositive(i));
    }
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let qidx = |t: usize| start.offset(t as i64).q() as usize - 1;
    let mut effects = [0.0; 4];
    match method {
        SeasonalMethod::MovingAverage => {
            let mut sum = [0.0; 4];
            let mut count = [0usize; 4];
            for t in 2..logs.len() - 2 {
                let ma = (0.5 * logs[t - 2] + logs[t - 1] + logs[t] + logs[t + 1] + 0.5 * logs[t + 2]) / 4.0;
                sum[qidx(t)] += logs[t] - ma;
                count[qidx(t)] += 1;
            }
            for q in 0..4 {
                effects[q] = sum[q] / count[q] as f64;
            }
        }
        SeasonalMethod::DummyRegression => {
            let n = logs.len();
            let x = DMatrix::from_fn(n, 5, |t, j| match j {
                0 => t as f64,
                j => f64::from(qidx(t) == j - 1),
            });
            let y = DVector::from_column_slice(&logs);
            let beta = x
                .clone()
                .svd(true, true)
                .solve(&y, 1e-12)
                .map_err(|_| DiagError::ZeroVariance)?;
            for q in 0..4 {
                effects[q] = beta[q + 1];
            }
        }
    }
    let centre = effects.iter().sum::<f64>() / 4.0;
    let expd: Vec<f64> = effects.iter().map(|e| (e - centre).exp()).collect();
    let m = expd.iter().sum::<f64>() / 4.0;
    Ok([expd[0] / m - 1.0, expd[1] / m - 1.0, expd[2] / m - 1.0, expd[3] / m - 1.0])
}

/// Sample autocorrelations at lags `1..=max_lag`.
pub fn acf(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if max_lag >= n {
        return Err(DiagError::TooShort { need: max_lag + 1, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let c0: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    if c0 == 0.0 {
        return Err(DiagError::ZeroVariance);
    }
    Ok((1..=max_lag)
        .map(|k| (k..n).map(|t| (values[t] - mean) * (values[t - k] - mean)).sum::<f64>() / c0)
        .collect())
}

/// Pearson correlation over each trailing window; element `i` covers
/// positions `i + 1 − window ..= i` and is `None` before the first full
/// window or when either side is constant.
pub fn rolling_correlation(a: &[f64], b: &[f64], window: usize) -> Result<Vec<Option<f64>>> {
    if a.len() != b.len() {
        return Err(DiagError::LengthMismatch(a.len(), b.len()));
    }
    if window < 2 || a.len() < window {
        return Err(DiagError::TooShort { need: window.max(2), got: a.len() });
    }
    Ok((0..a.len())
        .map(|i| {
            if i + 1 < window {
                return None;
            }
            let r = pearson(&a[i + 1 - window..=i], &b[i + 1 - window..=i]);
            r.is_finite().then_some(r.clamp(-1.0, 1.0))
        })
        .collect())
}

/// Pairwise correlations of quarter-over-quarter log changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub keys: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// The change series the matrix was computed from.
    pub changes: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    /// From equal-length change series; constant series correlate 0 with
    /// everything but themselves.
    pub fn from_changes(keys: Vec<String>, changes: Vec<Vec<f64>>) -> Result<Self> {
        let n = keys.len();
        let len = changes.first().map_or(0, |c| c.len());
        if let Some(c) = changes.iter().find(|c| c.len() != len) {
            return Err(DiagError::LengthMismatch(len, c.len()));
        }
        if changes.len() != n {
            return Err(DiagError::LengthMismatch(n, changes.len()));
        }
        if len < 3 {
            return Err(DiagError::TooShort { need: 3, got: len });
        }
        let mut values = vec![vec![0.0; n]; n];
        for i in 0..n {
            values[i][i] = 1.0;
            for j in i + 1..n {
                let r = pearson(&changes[i], &changes[j]);
                let r = if r.is_finite() { r.clamp(-1.0, 1.0) } else { 0.0 };
                values[i][j] = r;
                values[j][i] = r;
            }
        }
        Ok(Self { keys, values, changes })
    }

    /// Sections of `panel` over the quarters where every section is
    /// observed.
    pub fn from_panel(panel: &Panel) -> Result<Self> {
        let sections: Vec<&Series> = panel.series().filter(|s| s.key.kind == SeriesKind::CsiSection).collect();
        if sections.is_empty() {
            return Err(DiagError::NoSections);
        }
        let quarters: Vec<Quarter> = panel.quarters().collect();
        let mut keys = Vec::new();
        let mut changes = vec![Vec::new(); sections.len()];
        for w in quarters.windows(2) {
            let pairs: Option<Vec<(f64, f64)>> = sections
                .iter()
                .map(|s| Some((s.value_at(w[0])?, s.value_at(w[1])?)).filter(|(a, b)| *a > 0.0 && *b > 0.0))
                .collect();
            if let Some(p) = pairs {
                for (c, (a, b)) in changes.iter_mut().zip(p) {
                    c.push((b / a).ln());
                }
            }
        }
        for s in &sections {
            keys.push(s.key.code.clone());
        }
        Self::from_changes(keys, changes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster label per key, numbered by first appearance.
    pub labels: Vec<usize>,
    /// Mean standardized change series per cluster.
    pub prototypes: Vec<Vec<f64>>,
}

/// Average-linkage agglomerative clustering on `1 − correlation`, cut at
/// `k` clusters. Ties merge the pair with the smallest member indices.
pub fn correlation_cluster(m: &CorrelationMatrix, k: usize) -> Result<Clustering> {
    let n = m.keys.len();
    if k == 0 || k > n {
        return Err(DiagError::InvalidK { k, n });
    }
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let dist = |a: &[usize], b: &[usize]| -> f64 {
        let s: f64 = a.iter().flat_map(|&i| b.iter().map(move |&j| 1.0 - m.values[i][j])).sum();
        s / (a.len() * b.len()) as f64
    };
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let d = dist(&clusters[i], &clusters[j]);
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let merged = clusters.remove(best.2);
        clusters[best.1].extend(merged);
        clusters[best.1].sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    let mut labels = vec![0; n];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            labels[i] = c;
        }
    }
    let standardized: Vec<Vec<f64>> = m.changes.iter().map(|s| standardize(s)).collect();
    let len = m.changes.first().map_or(0, |c| c.len());
    let prototypes = clusters
        .iter()
        .map(|members| {
            (0..len)
                .map(|t| members.iter().map(|&i| standardized[i][t]).sum::<f64>() / members.len() as f64)
                .collect()
        })
        .collect();
    Ok(Clustering { labels, prototypes })
}

fn standardize(s: &[f64]) -> Vec<f64> {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    s.iter().map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 }).collect()
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(a.len() as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
