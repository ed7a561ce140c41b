//! The JSON run configuration.

use std::path::{Path, PathBuf};

use forecast_core::attention::AttentionConfig;
use forecast_core::data::Quarter;
use forecast_core::diagnostics::SeasonalMethod;
use forecast_core::features::FeatureSpec;
use forecast_core::lstm::LstmConfig;
use forecast_core::sarimax::SarimaxOrder;
use forecast_core::synth::DgpConfig;
use forecast_core::vecm::VecmConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Generate a synthetic panel.
    #[serde(default)]
    pub synthetic: Option<DgpConfig>,
    /// Read observed data from files.
    #[serde(default)]
    pub input: Option<InputConfig>,
    /// Rebase CSI and PPI series to 100 at this quarter.
    #[serde(default)]
    pub base_quarter: Option<Quarter>,
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default = "default_specs")]
    pub specs: Vec<SpecKind>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Restrict to these section codes; all sections when absent.
    #[serde(default)]
    pub sections: Option<Vec<String>>,
    #[serde(default)]
    pub cv: Option<CvConfig>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default = "default_dm_horizon")]
    pub dm_horizon: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_specs() -> Vec<SpecKind> {
    vec![SpecKind::Base, SpecKind::Augmented]
}

fn default_train_fraction() -> f64 {
    0.85
}

fn default_dm_horizon() -> usize {
    1
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecKind {
    Base,
    Augmented,
}

impl SpecKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpecKind::Base => "base",
            SpecKind::Augmented => "augmented",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "base" => Some(SpecKind::Base),
            "augmented" => Some(SpecKind::Augmented),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Long-format panel CSV.
    pub panel: PathBuf,
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    /// Monthly CSV (PPI or macro) averaged into quarters and merged.
    #[serde(default)]
    pub monthly: Option<PathBuf>,
    /// Code of a city cost index series (kind `cci`) to normalize sections.
    #[serde(default)]
    pub cci_code: Option<String>,
    #[serde(default = "default_impute_cap")]
    pub impute_cap: usize,
}

fn default_impute_cap() -> usize {
    2
}

/// Enabled models. Omitted models do not run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    #[serde(default)]
    pub naive: Option<Empty>,
    #[serde(default)]
    pub seasonal_naive: Option<Empty>,
    #[serde(default)]
    pub sarimax: Option<SarimaxModelConfig>,
    #[serde(default)]
    pub vecm: Option<VecmConfig>,
    #[serde(default)]
    pub lstm: Option<LstmConfig>,
    #[serde(default)]
    pub attention: Option<AttentionConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Empty {}

impl ModelsConfig {
    /// Enabled model names in execution order.
    pub fn enabled(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.naive.is_some() {
            out.push("naive");
        }
        if self.seasonal_naive.is_some() {
            out.push("seasonal_naive");
        }
        if self.sarimax.is_some() {
            out.push("sarimax");
        }
        if self.vecm.is_some() {
            out.push("vecm");
        }
        if self.lstm.is_some() {
            out.push("lstm");
        }
        if self.attention.is_some() {
            out.push("attention");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SarimaxModelConfig {
    pub order: SarimaxOrder,
    pub window: usize,
    /// Exogenous columns used by the augmented specification (top by
    /// absolute Pearson correlation on training rows).
    pub exog_columns: usize,
    /// Probability of an injected fit failure per window.
    pub fault_rate: f64,
}

impl Default for SarimaxModelConfig {
    fn default() -> Self {
        Self { order: SarimaxOrder::default(), window: 32, exog_columns: 5, fault_rate: 0.0 }
    }
}

/// Grid search for the LSTM over the listed overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub lstm_space: Vec<LstmOverride>,
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmOverride {
    #[serde(default)]
    pub hidden_size: Option<usize>,
    #[serde(default)]
    pub dense_size: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
}

impl LstmOverride {
    pub fn apply(&self, base: &LstmConfig) -> LstmConfig {
        LstmConfig {
            hidden_size: self.hidden_size.unwrap_or(base.hidden_size),
            dense_size: self.dense_size.or(base.dense_size),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            epochs: self.epochs.unwrap_or(base.epochs),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub clusters: usize,
    pub acf_lags: usize,
    pub rolling_window: usize,
    pub seasonal_method: SeasonalMethod,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { clusters: 2, acf_lags: 12, rolling_window: 24, seasonal_method: SeasonalMethod::MovingAverage }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        match (&self.synthetic, &self.input) {
            (Some(_), Some(_)) | (None, None) => return bad("exactly one of `synthetic` and `input` is required".into()),
            (Some(d), None) => d.validate().map_err(|e| CliError::Config(e.to_string()))?,
            (None, Some(_)) => {}
        }
        self.features.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        if self.specs.is_empty() {
            return bad("at least one specification is required".into());
        }
        if self.models.enabled().is_empty() {
            return bad("no models enabled".into());
        }
        if self.workers == 0 || self.dm_horizon == 0 {
            return bad("workers and dm_horizon must be positive".into());
        }
        if let Some(s) = &self.models.sarimax {
            if !(0.0..=1.0).contains(&s.fault_rate) || s.window < s.order.min_window() {
                return bad("sarimax fault_rate must be in [0, 1] and window cover the order".into());
            }
        }
        if let Some(v) = &self.models.vecm {
            v.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(l) = &self.models.lstm {
            l.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(a) = &self.models.attention {
            a.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(cv) = &self.cv {
            if cv.folds < 2 || cv.lstm_space.is_empty() || self.models.lstm.is_none() {
                return bad("cv needs at least 2 folds, a non-empty lstm_space and the lstm model".into());
            }
        }
        if self.diagnostics.clusters == 0 || self.diagnostics.rolling_window < 2 {
            return bad("diagnostics need at least one cluster and a rolling window of 2".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let text = serde_json::to_string(&value).expect("value serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }

    pub fn run_id(&self) -> String {
        self.hash()[..12].to_string()
    }
}
