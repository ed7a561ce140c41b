//! Accuracy metrics, Diebold–Mariano comparisons, temporally stratified
//! cross-validation, grid search, naive baselines and summary tables.

mod baselines;
mod cv;
mod dm;
mod metrics;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Quarter;

pub use baselines::{naive_persistence, seasonal_naive};
pub use cv::{grid_search, stratified_cv, CvPlan, CvRow, GridResult};
pub use dm::{dm_test, significance_stars, DmResult};
pub use metrics::{metrics, MetricReport};
pub use report::{aggregate_report, dm_table, spec_label, SectionMetrics, SummaryRow};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} actual vs {1} predicted")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("loss differential has zero variance")]
    DegenerateVariance,
    #[error("{rows} rows cannot fill {k} folds")]
    TooFewRows { rows: usize, k: usize },
    #[error("empty search space")]
    EmptySpace,
    #[error("no history before {0}")]
    NoHistory(Quarter),
    #[error("nothing to aggregate")]
    Empty,
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// One forecast point. `fallback` names the substitution reason when the
/// model could not produce the value itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub quarter: Quarter,
    pub actual: Option<f64>,
    pub forecast: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub sigma: Option<f64>,
    pub fallback: Option<String>,
}

impl ForecastRecord {
    pub fn point(quarter: Quarter, actual: Option<f64>, forecast: f64) -> Self {
        Self { quarter, actual, forecast, lower: None, upper: None, sigma: None, fallback: None }
    }
}

/// Forecasts of one model for one section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub section: String,
    pub model: String,
    pub spec: String,
    pub records: Vec<ForecastRecord>,
}

impl ForecastResult {
    /// `(actual, forecast)` over records with a known actual.
    pub fn pairs(&self) -> (Vec<f64>, Vec<f64>) {
        self.records.iter().filter_map(|r| r.actual.map(|a| (a, r.forecast))).unzip()
    }

    /// Forecast errors `actual - forecast`.
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.actual.map(|a| a - r.forecast)).collect()
    }

    pub fn fallback_count(&self) -> usize {
        self.records.iter().filter(|r| r.fallback.is_some()).count()
    }

    pub fn metrics(&self) -> Result<MetricReport> {
        let (a, p) = self.pairs();
        metrics(&a, &p)
    }
}
