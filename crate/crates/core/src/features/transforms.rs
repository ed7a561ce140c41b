//! Column-level transforms. Every column is aligned with its source series;
//! positions without enough history hold NaN and are dropped when rows are
//! assembled.

use serde::{Deserialize, Serialize};

use super::{FeatureError, Result};
use crate::data::{Panel, Quarter, Series, SeriesKey, SeriesKind};

/// A named feature column aligned with a quarterly axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub start: Quarter,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, start: Quarter, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            start,
            values,
        }
    }

    /// The available `(quarter, value)` rows.
    pub fn rows(&self) -> Vec<(Quarter, f64)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| (self.start.offset(i as i64), v))
            .collect()
    }
}

/// The invertible value transform `g` applied before column construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transform {
    pub log: bool,
}

impl Transform {
    pub fn apply(self, v: f64) -> f64 {
        if self.log {
            v.ln()
        } else {
            v
        }
    }

    pub fn invert(self, v: f64) -> f64 {
        if self.log {
            v.exp()
        } else {
            v
        }
    }

    pub fn apply_series(self, s: &Series) -> Result<Series> {
        if self.log {
            log_transform(s)
        } else {
            Ok(s.clone())
        }
    }
}

/// Elementwise natural log; missing values stay missing.
pub fn log_transform(s: &Series) -> Result<Series> {
    let mut values = Vec::with_capacity(s.len());
    for (i, &v) in s.values.iter().enumerate() {
        if v.is_nan() {
            values.push(v);
            continue;
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(FeatureError::NonPositiveValue {
                key: s.key.to_string(),
                quarter: s.quarter_at(i),
                value: v,
            });
        }
        values.push(v.ln());
    }
    let mut out = Series::new(s.key.clone(), s.start, values);
    out.observed = s.observed.clone();
    Ok(out)
}

fn shifted(values: &[f64], by: usize) -> Vec<f64> {
    (0..values.len())
        .map(|t| if t >= by { values[t - by] } else { f64::NAN })
        .collect()
}

/// Columns `lag{l}` holding `s[t-l]`.
pub fn lag_features(s: &Series, lags: &[usize]) -> Vec<Column> {
    lags.iter()
        .map(|&l| Column::new(format!("lag{l}"), s.start, shifted(&s.values, l)))
        .collect()
}

/// `s[t] - s[t-lag]`.
pub fn difference(s: &Series, lag: usize, name: &str) -> Column {
    let prev = shifted(&s.values, lag);
    let values = s.values.iter().zip(&prev).map(|(a, b)| a - b).collect();
    Column::new(name, s.start, values)
}

/// Year-over-year change `y[t] - y[t-4]`.
pub fn yoy_change(s: &Series) -> Column {
    difference(s, 4, "yoy")
}

/// Quarter-over-quarter change `y[t] - y[t-1]`.
pub fn qoq_change(s: &Series) -> Column {
    difference(s, 1, "dq")
}

/// Trailing mean `ma{k}` and sample standard deviation `sd{k}` over the `k`
/// values ending at `t`.
pub fn rolling_stats(s: &Series, k: usize) -> Result<[Column; 2]> {
    if k < 2 {
        return Err(FeatureError::InvalidSpec(format!(
            "rolling window {k} too short for a standard deviation"
        )));
    }
    let n = s.len();
    let mut ma = vec![f64::NAN; n];
    let mut sd = vec![f64::NAN; n];
    for t in k - 1..n {
        let w = &s.values[t + 1 - k..=t];
        let m = w.iter().sum::<f64>() / k as f64;
        let v = w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1) as f64;
        ma[t] = m;
        sd[t] = v.sqrt();
    }
    Ok([
        Column::new(format!("ma{k}"), s.start, ma),
        Column::new(format!("sd{k}"), s.start, sd),
    ])
}

/// One-hot quarter-of-year indicators `q1..q4`.
pub fn quarter_dummies(start: Quarter, len: usize) -> [Column; 4] {
    let mut cols: [Vec<f64>; 4] = Default::default();
    for t in 0..len {
        let q = start.offset(t as i64).q() as usize;
        for (j, c) in cols.iter_mut().enumerate() {
            c.push(if j + 1 == q { 1.0 } else { 0.0 });
        }
    }
    let [a, b, c, d] = cols;
    [
        Column::new("q1", start, a),
        Column::new("q2", start, b),
        Column::new("q3", start, c),
        Column::new("q4", start, d),
    ]
}

/// A named group of PPI series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PpiCluster {
    pub name: String,
    pub members: Vec<SeriesKey>,
}

/// Equal-weighted mean of the cluster members, missing wherever any member
/// is missing.
pub fn ppi_cluster_aggregate(panel: &Panel, cluster: &PpiCluster) -> Result<Series> {
    if cluster.members.is_empty() {
        return Err(FeatureError::EmptyCluster(cluster.name.clone()));
    }
    let mut sum = vec![0.0; panel.len()];
    for key in &cluster.members {
        let s = panel
            .get(key)
            .ok_or_else(|| FeatureError::MissingSeries(key.to_string()))?;
        for (acc, &v) in sum.iter_mut().zip(&s.values) {
            // NaN propagates, masking the quarter
            *acc += v;
        }
    }
    let n = cluster.members.len() as f64;
    let values = sum.into_iter().map(|v| v / n).collect();
    let key = SeriesKey::new(SeriesKind::Ppi, cluster.name.as_str())
        .map_err(|e| FeatureError::InvalidSpec(e.to_string()))?;
    Ok(Series::new(key, panel.start(), values))
}
