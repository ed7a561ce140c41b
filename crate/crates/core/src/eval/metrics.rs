use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    /// Percent; `None` when every actual is zero.
    pub mape: Option<f64>,
    /// `None` when the actuals have zero variance.
    pub r2: Option<f64>,
    pub n: usize,
    /// Terms left out of MAPE because the actual was exactly zero.
    pub mape_skipped: usize,
}

/// RMSE, MAPE and R² (against the mean of `actual`).
pub fn metrics(actual: &[f64], predicted: &[f64]) -> Result<MetricReport> {
    if actual.len() != predicted.len() {
        return Err(EvalError::LengthMismatch(actual.len(), predicted.len()));
    }
    if actual.is_empty() {
        return Err(EvalError::TooShort { need: 1, got: 0 });
    }
    if actual.iter().chain(predicted).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let n = actual.len() as f64;
    let sse: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p) * (a - p)).sum();
    let mean = actual.iter().sum::<f64>() / n;
    let sst: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    let (ape, used) = actual
        .iter()
        .zip(predicted)
        .filter(|(a, _)| **a != 0.0)
        .fold((0.0, 0usize), |(s, c), (a, p)| (s + ((a - p) / a).abs(), c + 1));
    Ok(MetricReport {
        rmse: (sse / n).sqrt(),
        mape: (used > 0).then(|| 100.0 * ape / used as f64),
        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
        n: actual.len(),
        mape_skipped: actual.len() - used,
    })
}
