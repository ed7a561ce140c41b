//! Pipeline stages and the per-section forecasting routine.
//!
//! Every stage has an in-memory form used by the fused `run` command and a
//! file form that reads the previous stage's artifacts. Both go through the
//! same functions, so staged and fused runs produce the same bytes.

use std::collections::BTreeMap;
use std::ops::Range;

use forecast_core::attention::{self, AttentionModel};
use forecast_core::data::{
    self, align_monthly_to_quarterly, cci_adjust, impute_locf, load_catalog, load_monthly, load_panel,
    load_taxonomy, partition_services, rebase, Panel, PanelMeta, Quarter, Series, SeriesKey, SeriesKind,
};
use forecast_core::eval::{self, stratified_cv, CvRow, ForecastRecord, ForecastResult};
use forecast_core::features::{build_matrix, is_exogenous, pearson, FeatureMatrix, FeatureSpec, Transform};
use forecast_core::lstm::{self, LstmModel};
use forecast_core::nn::{derive_seed, SavedState};
use forecast_core::sarimax::{self, difference, FaultInjection, RollingConfig};
use forecast_core::synth::{generate_panel, GroundTruth};
use forecast_core::vecm::{block_walk_forward, pca_fit};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SpecKind};
use crate::error::{CliError, Result};

/// Fallback label for a model that produced no forecasts of its own.
pub const MODEL_FAILURE: &str = "model_failure";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// Some forecasts were substituted.
    Partial,
    /// The model failed; every forecast was substituted.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStatus {
    pub section: String,
    pub model: String,
    pub spec: String,
    pub status: Status,
    pub fallbacks: usize,
    pub message: Option<String>,
}

/// Chronological split shared by every section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train_end: Quarter,
    pub targets: Vec<Quarter>,
    pub sections: Vec<String>,
}

/// Last training quarter and test quarters for a panel.
pub fn split_panel(panel: &Panel, train_fraction: f64) -> Result<(Quarter, Vec<Quarter>)> {
    let cut = (panel.len() as f64 * train_fraction).floor() as usize;
    if cut == 0 || cut >= panel.len() {
        return Err(CliError::Data(format!(
            "train fraction {train_fraction} leaves no training or test quarters on {} quarters",
            panel.len()
        )));
    }
    Ok((panel.quarter_at(cut - 1), (cut..panel.len()).map(|i| panel.quarter_at(i)).collect()))
}

pub fn section_key(code: &str) -> Result<SeriesKey> {
    Ok(SeriesKey::csi(code)?)
}

/// Section codes to forecast, in panel order.
pub fn selected_sections(cfg: &RunConfig, panel: &Panel) -> Result<Vec<String>> {
    let all: Vec<String> = panel.keys_of(SeriesKind::CsiSection).into_iter().map(|k| k.code).collect();
    match &cfg.sections {
        None => {
            if all.is_empty() {
                return Err(CliError::Data("panel has no sections".into()));
            }
            Ok(all)
        }
        Some(wanted) => {
            if let Some(missing) = wanted.iter().find(|c| !all.contains(c)) {
                return Err(CliError::Config(format!("section {missing} is not in the panel")));
            }
            Ok(all.into_iter().filter(|c| wanted.contains(c)).collect())
        }
    }
}

/// Deterministic per-(section, model, spec) seed.
pub fn model_seed(run_seed: u64, section: &str, model: &str, spec: SpecKind) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in format!("{section}/{model}/{}", spec.as_str()).bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    derive_seed(run_seed, h)
}

/// Fault-injection stream for one section and specification.
pub fn fault_stream(section: &str, spec: SpecKind) -> String {
    format!("{section}:{}", spec.as_str())
}

// ---------------------------------------------------------------- ingest

/// Synthetic panel and its ground truth.
pub fn generate(cfg: &RunConfig) -> Result<(Panel, GroundTruth)> {
    let dgp = cfg
        .synthetic
        .as_ref()
        .ok_or_else(|| CliError::Config("`generate` needs a `synthetic` section".into()))?;
    generate_panel(dgp).map_err(|e| CliError::Config(e.to_string()))
}

/// Raw panel from the configured input files.
pub fn load_input(cfg: &RunConfig) -> Result<(Panel, PanelMeta)> {
    let input = cfg.input.as_ref().ok_or_else(|| CliError::Config("no `input` section".into()))?;
    let mut panel = load_panel(&input.panel)?;
    let mut meta = PanelMeta::default();
    if let Some(path) = &input.monthly {
        for m in load_monthly(path)? {
            let q = align_monthly_to_quarterly(m.key.clone(), m.start_year, m.start_month, &m.values)?;
            let values = panel.quarters().map(|t| q.value_at(t).unwrap_or(f64::NAN)).collect();
            let s = Series::new(m.key, panel.start(), values);
            if panel.contains(&s.key) {
                panel.replace(s)?;
            } else {
                panel.insert(s)?;
            }
        }
    }
    if let Some(path) = &input.catalog {
        let rows = load_catalog(path)?;
        let taxonomy = match &input.taxonomy {
            Some(t) => load_taxonomy(t)?,
            None => Vec::new(),
        };
        let (kept, dropped) = partition_services(&rows, &taxonomy);
        meta.catalog_rows_retained = kept.len();
        meta.catalog_rows_excluded = dropped.len();
        let mut excluded: Vec<String> = dropped
            .iter()
            .map(|r| r.section.clone())
            .filter(|s| !kept.iter().any(|k| &k.section == s))
            .collect();
        excluded.sort();
        excluded.dedup();
        for code in &excluded {
            if let Ok(key) = SeriesKey::csi(code) {
                panel.remove(&key);
            }
        }
        meta.sections_excluded = excluded;
    }
    Ok((panel, meta))
}

/// Imputation, city-cost normalization and rebasing.
pub fn preprocess(cfg: &RunConfig, mut panel: Panel, mut meta: PanelMeta) -> Result<(Panel, PanelMeta)> {
    let cap = cfg.input.as_ref().map_or(2, |i| i.impute_cap);
    let keys: Vec<SeriesKey> = panel.keys().cloned().collect();
    for key in keys {
        let s = panel.get(&key).expect("listed key").clone();
        if s.values.iter().all(|v| v.is_finite()) {
            continue;
        }
        match impute_locf(&s, cap) {
            Ok((filled, report)) => {
                panel.replace(filled)?;
                meta.imputation.insert(key.to_string(), report);
            }
            Err(e @ (data::DataError::GapTooLong { .. } | data::DataError::LeadingGap { .. } | data::DataError::EmptyInput(_))) => {
                panel.remove(&key);
                meta.rejected.insert(key.to_string(), e.to_string());
            }
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(code) = cfg.input.as_ref().and_then(|i| i.cci_code.as_ref()) {
        let key = SeriesKey::new(SeriesKind::CityCostIndex, code.as_str())?;
        let cci = panel
            .get(&key)
            .cloned()
            .ok_or_else(|| CliError::Data(format!("city cost index {key} not in the panel")))?;
        for k in panel.keys_of(SeriesKind::CsiSection) {
            let adjusted = cci_adjust(panel.get(&k).expect("listed key"), &cci)?;
            panel.replace(adjusted)?;
        }
        meta.cci_adjusted = true;
    }
    if let Some(base) = cfg.base_quarter {
        for kind in [SeriesKind::CsiSection, SeriesKind::Ppi] {
            for k in panel.keys_of(kind) {
                let rebased = rebase(panel.get(&k).expect("listed key"), base, 100.0)?;
                panel.replace(rebased)?;
            }
        }
        panel.base = Some(base);
        meta.base = Some(base);
    }
    Ok((panel, meta))
}

// -------------------------------------------------------------- features

/// Feature specification for one specification kind.
pub fn spec_features(base: &FeatureSpec, spec: SpecKind) -> FeatureSpec {
    FeatureSpec { augmented: spec == SpecKind::Augmented, ..base.clone() }
}

/// Matrix over the whole panel whose columns were chosen with data up to
/// `train_end` only.
pub fn section_matrix(panel: &Panel, key: &SeriesKey, spec: &FeatureSpec, train_end: Quarter) -> Result<FeatureMatrix> {
    let unscreened = FeatureSpec { screening: None, ..spec.clone() };
    let full = build_matrix(panel, key, &unscreened, panel.end())?;
    if spec.screening.is_none() {
        return Ok(full);
    }
    let screened = build_matrix(panel, key, spec, train_end)?;
    Ok(full.select(&screened.column_names)?)
}

#[derive(Debug, Clone)]
pub struct SectionFeatures {
    pub section: String,
    pub matrices: Vec<(SpecKind, FeatureMatrix)>,
}

impl SectionFeatures {
    pub fn matrix(&self, spec: SpecKind) -> &FeatureMatrix {
        &self.matrices.iter().find(|(s, _)| *s == spec).expect("spec built").1
    }
}

pub fn section_features(cfg: &RunConfig, panel: &Panel, section: &str, train_end: Quarter) -> Result<SectionFeatures> {
    let key = section_key(section)?;
    let matrices = cfg
        .specs
        .iter()
        .map(|&s| Ok((s, section_matrix(panel, &key, &spec_features(&cfg.features, s), train_end)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SectionFeatures { section: section.to_string(), matrices })
}

// ----------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub enum Trained {
    Lstm(LstmModel),
    Attention(AttentionModel),
}

impl Trained {
    pub fn to_saved(&self) -> SavedState {
        match self {
            Trained::Lstm(m) => m.to_saved(),
            Trained::Attention(m) => m.to_saved(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub section: String,
    pub model: &'static str,
    pub spec: SpecKind,
    pub outcome: std::result::Result<Trained, String>,
    /// Cross-validation table when a grid search chose the configuration.
    pub cv: Option<(Vec<CvRow>, usize)>,
}

/// LSTM configuration after seeding and, when configured, grid search.
fn lstm_config(
    cfg: &RunConfig,
    m: &FeatureMatrix,
    train_end: Quarter,
    section: &str,
    spec: SpecKind,
) -> std::result::Result<(lstm::LstmConfig, Option<(Vec<CvRow>, usize)>), String> {
    let base = cfg.models.lstm.as_ref().expect("lstm enabled");
    let seed = model_seed(cfg.seed, section, "lstm", spec);
    let seeded = lstm::LstmConfig { seed, ..base.clone() };
    let Some(cv) = &cfg.cv else { return Ok((seeded, None)) };
    let space: Vec<lstm::LstmConfig> = cv.lstm_space.iter().map(|o| o.apply(&seeded)).collect();
    let quarters = lstm::training_quarters(m, train_end, &seeded).map_err(|e| e.to_string())?;
    let plan = stratified_cv(&quarters, cv.folds, seed).map_err(|e| e.to_string())?;
    let grid = eval::grid_search(
        &space,
        &plan,
        |c| c.hidden_size * c.dense(),
        |c, fit, hold| {
            let pick = |rows: &[usize]| rows.iter().map(|&i| quarters[i]).collect::<Vec<_>>();
            lstm::fit_predict_subset(m, train_end, c, &pick(fit), &pick(hold)).map_err(|e| e.to_string())
        },
    )
    .map_err(|e| e.to_string())?;
    Ok((grid.best, Some((grid.table, grid.best_index))))
}

pub fn train_section(cfg: &RunConfig, feats: &SectionFeatures, train_end: Quarter) -> Vec<TrainedModel> {
    let mut out = Vec::new();
    for &(spec, ref m) in &feats.matrices {
        if cfg.models.lstm.is_some() {
            let mut cv = None;
            let outcome = lstm_config(cfg, m, train_end, &feats.section, spec).and_then(|(c, table)| {
                cv = table;
                lstm::train(m, train_end, &c).map(Trained::Lstm).map_err(|e| e.to_string())
            });
            out.push(TrainedModel { section: feats.section.clone(), model: "lstm", spec, outcome, cv });
        }
        if let Some(a) = &cfg.models.attention {
            let c = attention::AttentionConfig { seed: model_seed(cfg.seed, &feats.section, "attention", spec), ..a.clone() };
            let outcome = attention::train_gaussian_nll(m, train_end, &c)
                .map(Trained::Attention)
                .map_err(|e| e.to_string());
            out.push(TrainedModel { section: feats.section.clone(), model: "attention", spec, outcome, cv: None });
        }
    }
    out
}

/// Rebuilds a trained model from saved weights. The configuration is
/// recovered the same way training derived it.
pub fn restore_model(
    cfg: &RunConfig,
    feats: &SectionFeatures,
    train_end: Quarter,
    model: &str,
    spec: SpecKind,
    saved: SavedState,
    chosen: Option<usize>,
) -> Result<Trained> {
    let m = feats.matrix(spec);
    let section = &feats.section;
    let err = |e: forecast_core::nn::NnError| CliError::Model(format!("{model} {section}: {e}"));
    match model {
        "lstm" => {
            let base = cfg.models.lstm.as_ref().ok_or_else(|| CliError::Config("lstm not enabled".into()))?;
            let seeded = lstm::LstmConfig { seed: model_seed(cfg.seed, section, "lstm", spec), ..base.clone() };
            let c = match (chosen, &cfg.cv) {
                (Some(i), Some(cv)) => cv.lstm_space[i].apply(&seeded),
                _ => seeded,
            };
            Ok(Trained::Lstm(LstmModel::from_saved(saved, m, train_end, &c).map_err(err)?))
        }
        "attention" => {
            let a = cfg.models.attention.as_ref().ok_or_else(|| CliError::Config("attention not enabled".into()))?;
            let c = attention::AttentionConfig { seed: model_seed(cfg.seed, section, "attention", spec), ..a.clone() };
            Ok(Trained::Attention(AttentionModel::from_saved(saved, m, train_end, &c).map_err(err)?))
        }
        other => Err(CliError::Model(format!("no saved form for model {other}"))),
    }
}

// -------------------------------------------------------------- forecast

/// Forecasts of one section plus per-model statuses.
#[derive(Debug, Clone, Default)]
pub struct SectionForecasts {
    pub results: Vec<ForecastResult>,
    pub statuses: Vec<ModelStatus>,
}

/// Target quarters as contiguous panel positions; the last may be one past
/// the panel end.
fn target_positions(panel: &Panel, targets: &[Quarter]) -> Result<Range<usize>> {
    let first = *targets.first().ok_or_else(|| CliError::Data("no target quarters".into()))?;
    let start = panel.start().distance_to(first);
    if start < 1 || targets.windows(2).any(|w| w[0].succ() != w[1]) {
        return Err(CliError::Data("targets must be contiguous quarters after the panel start".into()));
    }
    let range = start as usize..start as usize + targets.len();
    if range.end > panel.len() + 1 {
        return Err(CliError::Data("targets extend more than one quarter past the panel".into()));
    }
    Ok(range)
}

fn persistence(series: &Series, q: Quarter) -> f64 {
    series.value_at(q.pred()).unwrap_or(f64::NAN)
}

fn substituted(section: &str, model: &str, spec: SpecKind, series: &Series, targets: &[Quarter]) -> ForecastResult {
    ForecastResult {
        section: section.to_string(),
        model: model.to_string(),
        spec: spec.as_str().to_string(),
        records: targets
            .iter()
            .map(|&q| ForecastRecord {
                fallback: Some(MODEL_FAILURE.into()),
                ..ForecastRecord::point(q, series.value_at(q), persistence(series, q))
            })
            .collect(),
    }
}

fn status_of(r: &ForecastResult, message: Option<String>) -> ModelStatus {
    let fallbacks = r.fallback_count();
    let status = if message.is_some() {
        Status::Failed
    } else if fallbacks > 0 {
        Status::Partial
    } else {
        Status::Ok
    };
    ModelStatus {
        section: r.section.clone(),
        model: r.model.clone(),
        spec: r.spec.clone(),
        status,
        fallbacks,
        message,
    }
}

/// Exogenous rows for the augmented SARIMAX: row `p` holds the chosen
/// columns at panel position `p - 1` (NaN when unavailable), for positions
/// `0..=panel.len()`. Columns are the exogenous ones whose differenced
/// values correlate most with the differenced transformed target over
/// training positions.
pub fn sarimax_exog(
    panel: &Panel,
    m: &FeatureMatrix,
    g: Transform,
    levels: &[f64],
    train_end: Quarter,
    order: &sarimax::SarimaxOrder,
    n_columns: usize,
) -> Vec<Vec<f64>> {
    let n = panel.len();
    let cols: Vec<usize> = (0..m.n_cols()).filter(|&j| is_exogenous(&m.column_names[j])).collect();
    let lagged = |j: usize| -> Vec<f64> {
        (0..=n)
            .map(|p| {
                if p == 0 {
                    return f64::NAN;
                }
                m.row_of(panel.start().offset(p as i64 - 1)).map_or(f64::NAN, |r| m.data[r][j])
            })
            .collect()
    };
    let train_len = (panel.start().distance_to(train_end) + 1).clamp(0, n as i64) as usize;
    let gy: Vec<f64> = levels[..train_len].iter().map(|&v| g.apply(v)).collect();
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for &j in &cols {
        let x = lagged(j);
        let first = (0..train_len).find(|&p| x[p].is_finite() && gy[p].is_finite());
        let Some(first) = first else { continue };
        let (xs, ys) = (&x[first..train_len], &gy[first..train_len]);
        if xs.iter().chain(ys).any(|v| !v.is_finite()) {
            continue;
        }
        let (Ok(dx), Ok(dy)) = (
            difference(xs, order.d, order.seasonal_d, order.s),
            difference(ys, order.d, order.seasonal_d, order.s),
        ) else {
            continue;
        };
        let r = pearson(&dx, &dy);
        if r.is_finite() {
            scored.push((r.abs(), j));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let chosen: Vec<usize> = scored.iter().take(n_columns).map(|&(_, j)| j).collect();
    let series: Vec<Vec<f64>> = chosen.iter().map(|&j| lagged(j)).collect();
    (0..=n).map(|p| series.iter().map(|s| s[p]).collect()).collect()
}

fn sarimax_forecasts(
    cfg: &RunConfig,
    panel: &Panel,
    feats: &SectionFeatures,
    spec: SpecKind,
    train_end: Quarter,
    targets: &[Quarter],
) -> std::result::Result<ForecastResult, String> {
    let sc = cfg.models.sarimax.as_ref().expect("sarimax enabled");
    let series = panel.get(&section_key(&feats.section).map_err(|e| e.to_string())?).expect("section exists");
    let m = feats.matrix(spec);
    let g = m.transform;
    let range = target_positions(panel, targets).map_err(|e| e.to_string())?;
    let exog = if spec == SpecKind::Augmented && sc.exog_columns > 0 {
        sarimax_exog(panel, m, g, &series.values, train_end, &sc.order, sc.exog_columns)
    } else {
        Vec::new()
    };
    let faults = (sc.fault_rate > 0.0).then(|| FaultInjection {
        seed: cfg.seed,
        rate: sc.fault_rate,
        stream: fault_stream(&feats.section, spec),
    });
    let rolling = RollingConfig { window: sc.window, ..RollingConfig::default() };
    let steps = sarimax::rolling_walk_forward(&series.values, &exog, g, &sc.order, &rolling, range, faults.as_ref())
        .map_err(|e| e.to_string())?;
    let records = steps
        .iter()
        .zip(targets)
        .map(|(s, &q)| ForecastRecord {
            fallback: s.fallback.map(|r| serde_json::to_value(r).expect("enum").as_str().expect("string").to_string()),
            ..ForecastRecord::point(q, series.value_at(q), s.forecast)
        })
        .collect();
    Ok(ForecastResult {
        section: feats.section.clone(),
        model: "sarimax".into(),
        spec: spec.as_str().into(),
        records,
    })
}

/// Transformed, fully observed series of `keys` (one column each), or
/// `None` when any value is missing.
fn transformed_columns(panel: &Panel, keys: &[SeriesKey], g: Transform) -> Option<Vec<Vec<f64>>> {
    keys.iter()
        .map(|k| {
            let s = panel.get(k)?;
            let v: Vec<f64> = s.values.iter().map(|&x| g.apply(x)).collect();
            v.iter().all(|x| x.is_finite()).then_some(v)
        })
        .collect()
}

fn vecm_forecasts(
    cfg: &RunConfig,
    panel: &Panel,
    feats: &SectionFeatures,
    spec: SpecKind,
    train_end: Quarter,
    targets: &[Quarter],
) -> std::result::Result<ForecastResult, String> {
    let vc = cfg.models.vecm.as_ref().expect("vecm enabled");
    let key = section_key(&feats.section).map_err(|e| e.to_string())?;
    let series = panel.get(&key).expect("section exists");
    let g = feats.matrix(spec).transform;
    let y = transformed_columns(panel, std::slice::from_ref(&key), g).ok_or("target has missing values")?;
    let others: Vec<SeriesKey> = match spec {
        SpecKind::Base => panel.keys_of(SeriesKind::CsiSection).into_iter().filter(|k| *k != key).collect(),
        SpecKind::Augmented => panel.keys_of(SeriesKind::Ppi),
    };
    let mut cols = transformed_columns(panel, &others, g).ok_or("system member has missing values")?;
    if spec == SpecKind::Augmented {
        let macros = panel.keys_of(SeriesKind::Macro);
        cols.extend(transformed_columns(panel, &macros, Transform { log: false }).ok_or("macro series has missing values")?);
    }
    let train_len = (panel.start().distance_to(train_end) + 1).clamp(0, panel.len() as i64) as usize;
    let rows = |r: Range<usize>| -> Vec<Vec<f64>> { r.map(|t| cols.iter().map(|c| c[t]).collect()).collect() };
    let mut system: Vec<Vec<f64>> = (0..panel.len()).map(|t| vec![y[0][t]]).collect();
    if !cols.is_empty() {
        let k = vc.n_components.min(cols.len());
        let pca = pca_fit(&rows(0..train_len), k, true).map_err(|e| e.to_string())?;
        for (t, scores) in pca.transform(&rows(0..panel.len())).into_iter().enumerate() {
            system[t].extend(scores);
        }
    }
    let range = target_positions(panel, targets).map_err(|e| e.to_string())?;
    let blocks = block_walk_forward(&system, panel.start(), vc, range.clone());
    let mut path: BTreeMap<usize, f64> = BTreeMap::new();
    let mut failures = Vec::new();
    for b in blocks {
        match &b.error {
            Some(e) => failures.push(format!("block at {}: {e}", panel.start().offset(b.origin as i64))),
            None => path.extend(b.path.iter().map(|(i, r)| (*i, g.invert(r[0])))),
        }
    }
    if path.is_empty() {
        return Err(failures.join("; "));
    }
    let records = targets
        .iter()
        .zip(range)
        .map(|(&q, p)| match path.get(&p).filter(|v| v.is_finite()) {
            Some(&f) => ForecastRecord::point(q, series.value_at(q), f),
            None => ForecastRecord {
                fallback: Some("convergence_failure".into()),
                ..ForecastRecord::point(q, series.value_at(q), persistence(series, q))
            },
        })
        .collect();
    Ok(ForecastResult { section: feats.section.clone(), model: "vecm".into(), spec: spec.as_str().into(), records })
}

fn neural_forecasts(
    trained: &Trained,
    panel: &Panel,
    feats: &SectionFeatures,
    spec: SpecKind,
    targets: &[Quarter],
) -> std::result::Result<ForecastResult, String> {
    let m = feats.matrix(spec);
    let series = panel.get(&section_key(&feats.section).map_err(|e| e.to_string())?).expect("section exists");
    let (model, records) = match trained {
        Trained::Lstm(model) => {
            let mut model = model.clone();
            let f = model.walk_forward(m, targets).map_err(|e| e.to_string())?;
            let recs = targets.iter().zip(f).map(|(&q, v)| ForecastRecord::point(q, series.value_at(q), v)).collect();
            ("lstm", recs)
        }
        Trained::Attention(model) => {
            let recs = targets
                .iter()
                .map(|&q| {
                    let f = model.predict_with_intervals(m, q.pred()).map_err(|e| e.to_string())?;
                    Ok(ForecastRecord {
                        lower: Some(f.lower[0]),
                        upper: Some(f.upper[0]),
                        sigma: Some(f.sigma[0]),
                        ..ForecastRecord::point(q, series.value_at(q), f.point[0])
                    })
                })
                .collect::<std::result::Result<Vec<_>, String>>()?;
            ("attention", recs)
        }
    };
    Ok(ForecastResult { section: feats.section.clone(), model: model.into(), spec: spec.as_str().into(), records })
}

/// Runs every enabled model for one section over `targets` given trained
/// neural models. Failures become persistence substitutions.
pub fn forecast_with(
    cfg: &RunConfig,
    panel: &Panel,
    feats: &SectionFeatures,
    trained: &[TrainedModel],
    train_end: Quarter,
    targets: &[Quarter],
) -> Result<SectionForecasts> {
    let key = section_key(&feats.section)?;
    let series = panel
        .get(&key)
        .ok_or_else(|| CliError::Data(format!("section {} not in the panel", feats.section)))?;
    let mut out = SectionForecasts::default();
    let mut push = |spec: SpecKind, model: &str, r: std::result::Result<ForecastResult, String>| {
        let (res, msg) = match r {
            Ok(res) => (res, None),
            Err(e) => (substituted(&feats.section, model, spec, series, targets), Some(e)),
        };
        out.statuses.push(status_of(&res, msg));
        out.results.push(res);
    };
    if cfg.models.naive.is_some() {
        push(SpecKind::Base, "naive", eval::naive_persistence(series, targets).map_err(|e| e.to_string()));
    }
    if cfg.models.seasonal_naive.is_some() {
        let s = cfg.models.sarimax.as_ref().map_or(4, |c| c.order.s);
        push(SpecKind::Base, "seasonal_naive", eval::seasonal_naive(series, targets, s).map_err(|e| e.to_string()));
    }
    for &spec in &cfg.specs {
        if cfg.models.sarimax.is_some() {
            push(spec, "sarimax", sarimax_forecasts(cfg, panel, feats, spec, train_end, targets));
        }
        if cfg.models.vecm.is_some() {
            push(spec, "vecm", vecm_forecasts(cfg, panel, feats, spec, train_end, targets));
        }
        for name in ["lstm", "attention"] {
            let Some(t) = trained.iter().find(|t| t.model == name && t.spec == spec) else { continue };
            let r = match &t.outcome {
                Ok(model) => neural_forecasts(model, panel, feats, spec, targets),
                Err(e) => Err(e.clone()),
            };
            push(spec, name, r);
        }
    }
    Ok(out)
}

/// Features, training and forecasts for one section, using only data up to
/// each forecast origin.
pub fn forecast_section(
    cfg: &RunConfig,
    panel: &Panel,
    section: &str,
    train_end: Quarter,
    targets: &[Quarter],
) -> Result<SectionForecasts> {
    let feats = section_features(cfg, panel, section, train_end)?;
    let trained = train_section(cfg, &feats, train_end);
    forecast_with(cfg, panel, &feats, &trained, train_end, targets)
}
