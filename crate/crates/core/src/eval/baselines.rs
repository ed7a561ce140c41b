use super::{EvalError, ForecastRecord, ForecastResult, Result};
use crate::data::{Quarter, Series};

fn lagged(series: &Series, targets: &[Quarter], lag: i64, model: &str) -> Result<ForecastResult> {
    let records = targets
        .iter()
        .map(|&q| {
            let src = q.offset(-lag);
            let forecast = series.value_at(src).filter(|v| v.is_finite()).ok_or(EvalError::NoHistory(q))?;
            Ok(ForecastRecord::point(q, series.value_at(q), forecast))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForecastResult {
        section: series.key.code.clone(),
        model: model.into(),
        spec: "base".into(),
        records,
    })
}

/// `ŷ_t = y_{t−1}` using realized values.
pub fn naive_persistence(series: &Series, targets: &[Quarter]) -> Result<ForecastResult> {
    lagged(series, targets, 1, "naive")
}

/// `ŷ_t = y_{t−s}` using realized values.
pub fn seasonal_naive(series: &Series, targets: &[Quarter], s: usize) -> Result<ForecastResult> {
    lagged(series, targets, s.max(1) as i64, "seasonal_naive")
}
