//! Subcommand implementations on top of the run directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::time::Instant;

use forecast_core::data::{load_panel, write_panel_csv, Panel, PanelMeta, SeriesKind};
use forecast_core::diagnostics::{
    acf, correlation_cluster, dispersion_table, rolling_correlation, seasonal_indices, CorrelationMatrix,
};
use forecast_core::eval::{aggregate_report, dm_table, spec_label, DmResult, ForecastResult, SectionMetrics, SummaryRow};
use forecast_core::features::FeatureMatrix;
use forecast_core::nn::SavedState;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, forecast_csv, read_json, require, write_atomic, write_json, write_rows, Layout};
use crate::config::{RunConfig, SpecKind};
use crate::error::{CliError, Result};
use crate::pipeline::{
    forecast_with, generate, load_input, preprocess, section_features, selected_sections, split_panel, train_section,
    restore_model, ModelStatus, SectionFeatures, Split, TrainedModel,
};

/// Outcome of training one neural model, persisted between stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub section: String,
    pub model: String,
    pub spec: SpecKind,
    pub error: Option<String>,
    /// Index into the configured search space chosen by cross-validation.
    pub cv_choice: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub command: String,
    pub stages: Vec<String>,
    pub sections: Vec<String>,
    pub statuses: Vec<ModelStatus>,
    /// Substituted forecasts per `model/spec`.
    pub fallback_counts: BTreeMap<String, usize>,
    pub interval_alpha: Option<f64>,
}

/// Shared state of one CLI invocation.
pub struct Context {
    pub cfg: RunConfig,
    pub layout: Layout,
    pub run_id: String,
    pub command: String,
    timings: Vec<(String, f64)>,
    stages: Vec<String>,
    pool: rayon::ThreadPool,
}

impl Context {
    pub fn new(cfg: RunConfig, layout: Layout, command: &str) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
        fs::create_dir_all(&layout.root).map_err(|e| CliError::io(&layout.root, e))?;
        Ok(Self {
            run_id: cfg.run_id(),
            cfg,
            layout,
            command: command.to_string(),
            timings: Vec::new(),
            stages: Vec::new(),
            pool,
        })
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f(self)?;
        self.timings.push((stage.to_string(), t0.elapsed().as_secs_f64()));
        self.stages.push(stage.to_string());
        Ok(out)
    }

    fn par_sections<T: Send>(&self, sections: &[String], f: impl Fn(&str) -> Result<T> + Sync) -> Result<Vec<T>> {
        self.pool.install(|| sections.par_iter().map(|s| f(s)).collect::<Vec<_>>()).into_iter().collect()
    }
}

fn panel_bytes(panel: &Panel) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_panel_csv(panel, &mut buf)?;
    Ok(buf)
}

fn read_panel(layout: &Layout) -> Result<Panel> {
    require(&layout.panel(), "ingest")?;
    let mut panel = load_panel(layout.panel())?;
    if layout.panel_meta().exists() {
        let meta: PanelMeta = read_json(&layout.panel_meta(), "ingest")?;
        panel.base = meta.base;
    }
    Ok(panel)
}

// ------------------------------------------------------------------ stages

pub fn cmd_generate(ctx: &mut Context) -> Result<Panel> {
    ctx.timed("generate", |ctx| {
        let (panel, truth) = generate(&ctx.cfg)?;
        write_atomic(&ctx.layout.raw_panel(), &panel_bytes(&panel)?)?;
        write_json(&ctx.layout.ground_truth(), &truth)?;
        Ok(panel)
    })
}

pub fn cmd_ingest(ctx: &mut Context, raw: Option<Panel>) -> Result<Panel> {
    ctx.timed("ingest", |ctx| {
        let (panel, meta) = match (&ctx.cfg.synthetic, raw) {
            (Some(_), Some(p)) => (p, PanelMeta::default()),
            (Some(_), None) => {
                require(&ctx.layout.raw_panel(), "generate")?;
                (load_panel(ctx.layout.raw_panel())?, PanelMeta::default())
            }
            (None, _) => load_input(&ctx.cfg)?,
        };
        let (panel, meta) = preprocess(&ctx.cfg, panel, meta)?;
        write_atomic(&ctx.layout.panel(), &panel_bytes(&panel)?)?;
        write_json(&ctx.layout.panel_meta(), &meta)?;
        Ok(panel)
    })
}

pub fn cmd_features(ctx: &mut Context, panel: Option<Panel>) -> Result<(Panel, Split, Vec<SectionFeatures>)> {
    ctx.timed("features", |ctx| {
        let panel = match panel {
            Some(p) => p,
            None => read_panel(&ctx.layout)?,
        };
        let sections = selected_sections(&ctx.cfg, &panel)?;
        let (train_end, targets) = split_panel(&panel, ctx.cfg.train_fraction)?;
        let feats = ctx.par_sections(&sections, |s| section_features(&ctx.cfg, &panel, s, train_end))?;
        for f in &feats {
            for (spec, m) in &f.matrices {
                let mut buf = Vec::new();
                m.write_csv(&mut buf)?;
                write_atomic(&ctx.layout.features(&f.section, spec.as_str()), &buf)?;
            }
        }
        let split = Split { train_end, targets, sections };
        write_json(&ctx.layout.split(), &split)?;
        Ok((panel, split, feats))
    })
}

fn read_features(ctx: &Context, split: &Split) -> Result<Vec<SectionFeatures>> {
    ctx.par_sections(&split.sections, |section| {
        let matrices = ctx
            .cfg
            .specs
            .iter()
            .map(|&spec| {
                let path = ctx.layout.features(section, spec.as_str());
                require(&path, "features")?;
                let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
                Ok((spec, FeatureMatrix::read_csv(BufReader::new(file))?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SectionFeatures { section: section.to_string(), matrices })
    })
}

type Staged = (Panel, Split, Vec<SectionFeatures>);

fn load_staged(ctx: &Context) -> Result<Staged> {
    let panel = read_panel(&ctx.layout)?;
    let split: Split = read_json(&ctx.layout.split(), "features")?;
    let feats = read_features(ctx, &split)?;
    Ok((panel, split, feats))
}

pub fn cmd_train(ctx: &mut Context, staged: Option<&Staged>) -> Result<Vec<Vec<TrainedModel>>> {
    ctx.timed("train", |ctx| {
        let loaded;
        let (_, split, feats) = match staged {
            Some(s) => s,
            None => {
                loaded = load_staged(ctx)?;
                &loaded
            }
        };
        let train_end = split.train_end;
        let trained = ctx.pool.install(|| {
            feats.par_iter().map(|f| train_section(&ctx.cfg, f, train_end)).collect::<Vec<_>>()
        });
        let mut records = Vec::new();
        for t in trained.iter().flatten() {
            if let Ok(model) = &t.outcome {
                let mut buf = Vec::new();
                model.to_saved().write(&mut buf).map_err(|e| CliError::Model(e.to_string()))?;
                write_atomic(&ctx.layout.model(t.model, t.spec.as_str(), &t.section), &buf)?;
            }
            if let Some((table, _)) = &t.cv {
                let rows: Vec<Vec<String>> = table
                    .iter()
                    .map(|r| vec![r.candidate.to_string(), r.fold.to_string(), r.rmse.map(|v| v.to_string()).unwrap_or_default()])
                    .collect();
                write_rows(&ctx.layout.cv_table(&t.section, t.spec.as_str()), &["candidate", "fold", "rmse"], &rows)?;
            }
            records.push(TrainRecord {
                section: t.section.clone(),
                model: t.model.to_string(),
                spec: t.spec,
                error: t.outcome.as_ref().err().cloned(),
                cv_choice: t.cv.as_ref().map(|c| c.1),
            });
        }
        write_json(&ctx.layout.train_status(), &records)?;
        Ok(trained)
    })
}

fn restore_trained(ctx: &Context, split: &Split, feats: &[SectionFeatures]) -> Result<Vec<Vec<TrainedModel>>> {
    let needs_training = ctx.cfg.models.lstm.is_some() || ctx.cfg.models.attention.is_some();
    if !needs_training {
        return Ok(vec![Vec::new(); feats.len()]);
    }
    let records: Vec<TrainRecord> = read_json(&ctx.layout.train_status(), "train")?;
    feats
        .iter()
        .map(|f| {
            records
                .iter()
                .filter(|r| r.section == f.section)
                .map(|r| {
                    let model: &'static str = if r.model == "lstm" { "lstm" } else { "attention" };
                    let outcome = match &r.error {
                        Some(e) => Err(e.clone()),
                        None => {
                            let path = ctx.layout.model(model, r.spec.as_str(), &f.section);
                            require(&path, "train")?;
                            let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
                            let saved = SavedState::read(BufReader::new(file)).map_err(|e| CliError::Model(e.to_string()))?;
                            Ok(restore_model(&ctx.cfg, f, split.train_end, model, r.spec, saved, r.cv_choice)?)
                        }
                    };
                    Ok(TrainedModel { section: f.section.clone(), model, spec: r.spec, outcome, cv: None })
                })
                .collect()
        })
        .collect()
}

pub fn cmd_forecast(
    ctx: &mut Context,
    staged: Option<&Staged>,
    trained: Option<Vec<Vec<TrainedModel>>>,
) -> Result<(Vec<ForecastResult>, Vec<ModelStatus>)> {
    ctx.timed("forecast", |ctx| {
        let loaded;
        let (panel, split, feats) = match staged {
            Some(s) => s,
            None => {
                loaded = load_staged(ctx)?;
                &loaded
            }
        };
        let trained = match trained {
            Some(t) => t,
            None => restore_trained(ctx, split, feats)?,
        };
        let outputs = ctx.pool.install(|| {
            feats
                .par_iter()
                .zip(trained.par_iter())
                .map(|(f, t)| forecast_with(&ctx.cfg, panel, f, t, split.train_end, &split.targets))
                .collect::<Vec<_>>()
        });
        let mut results = Vec::new();
        let mut statuses = Vec::new();
        for o in outputs {
            let o = o?;
            results.extend(o.results);
            statuses.extend(o.statuses);
        }
        let dir = ctx.layout.forecast_dir();
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        for r in &results {
            write_atomic(&ctx.layout.forecast(&r.model, &r.spec, &r.section), forecast_csv(&[r]).as_bytes())?;
        }
        let all: Vec<&ForecastResult> = results.iter().collect();
        write_atomic(&ctx.layout.all_forecasts(), forecast_csv(&all).as_bytes())?;
        write_json(&ctx.layout.forecast_status(), &statuses)?;
        Ok((results, statuses))
    })
}

// ---------------------------------------------------------------- evaluate

/// Per-section metrics of every result with at least one known actual.
pub fn section_metrics(results: &[ForecastResult]) -> Vec<SectionMetrics> {
    results
        .iter()
        .filter_map(|r| {
            r.metrics().ok().map(|report| SectionMetrics {
                section: r.section.clone(),
                model: r.model.clone(),
                spec: r.spec.clone(),
                report,
            })
        })
        .collect()
}

/// Errors of `a` and `b` on the `(section, quarter)` pairs both cover.
pub fn paired_errors(results: &[ForecastResult], a: (&str, &str), b: (&str, &str)) -> (Vec<f64>, Vec<f64>) {
    let mut ea = Vec::new();
    let mut eb = Vec::new();
    for ra in results.iter().filter(|r| r.model == a.0 && r.spec == a.1) {
        let Some(rb) = results.iter().find(|r| r.model == b.0 && r.spec == b.1 && r.section == ra.section) else {
            continue;
        };
        for x in &ra.records {
            let Some(act) = x.actual else { continue };
            if let Some(y) = rb.records.iter().find(|y| y.quarter == x.quarter && y.actual.is_some()) {
                ea.push(act - x.forecast);
                eb.push(y.actual.expect("checked") - y.forecast);
            }
        }
    }
    (ea, eb)
}

/// Pooled DM comparisons: every model against naive persistence, and the
/// augmented against the base specification of each model.
pub fn dm_comparisons(results: &[ForecastResult], h: usize) -> Vec<(String, String, DmResult)> {
    let mut groups: Vec<(String, String)> = Vec::new();
    for r in results {
        let g = (r.model.clone(), r.spec.clone());
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    let label = |m: &str, s: &str| format!("{m}:{}", spec_label(s));
    let mut out = Vec::new();
    let mut test = |a: (&str, &str), b: (&str, &str)| {
        let (ea, eb) = paired_errors(results, a, b);
        if let Ok(r) = forecast_core::eval::dm_test(&ea, &eb, h) {
            out.push((label(a.0, a.1), label(b.0, b.1), r));
        }
    };
    let has_naive = groups.iter().any(|(m, _)| m == "naive");
    for (m, s) in &groups {
        if has_naive && m != "naive" {
            test((m, s), ("naive", "base"));
        }
    }
    for (m, s) in &groups {
        if s == "augmented" && groups.contains(&(m.clone(), "base".to_string())) {
            test((m, "augmented"), (m, "base"));
        }
    }
    out
}

/// Sorts by model (configuration order), specification, then section, so
/// in-memory and reloaded results evaluate identically.
pub fn canonical_order(cfg: &RunConfig, results: &mut [ForecastResult]) {
    let models = cfg.models.enabled();
    let rank = |m: &str| models.iter().position(|x| *x == m).unwrap_or(models.len());
    let spec = |s: &str| SpecKind::parse(s).map_or(2, |k| k as usize);
    results.sort_by(|a, b| {
        (spec(&a.spec), rank(&a.model), &a.section, &a.model)
            .cmp(&(spec(&b.spec), rank(&b.model), &b.section, &b.model))
    });
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cmd_evaluate(ctx: &mut Context, results: Option<&[ForecastResult]>) -> Result<(Vec<SummaryRow>, Vec<(String, String, DmResult)>)> {
    ctx.timed("evaluate", |ctx| {
        let mut results = match results {
            Some(r) => r.to_vec(),
            None => artifacts::read_forecast_dir(&ctx.layout.forecast_dir())?,
        };
        canonical_order(&ctx.cfg, &mut results);
        let results = &results;
        let per_section = section_metrics(results);
        let rows: Vec<Vec<String>> = per_section
            .iter()
            .map(|m| {
                let fallbacks = results
                    .iter()
                    .find(|r| r.section == m.section && r.model == m.model && r.spec == m.spec)
                    .map_or(0, |r| r.fallback_count());
                vec![
                    m.section.clone(),
                    m.model.clone(),
                    m.spec.clone(),
                    m.report.n.to_string(),
                    m.report.rmse.to_string(),
                    opt(m.report.mape),
                    opt(m.report.r2),
                    fallbacks.to_string(),
                ]
            })
            .collect();
        write_rows(
            &ctx.layout.metrics(),
            &["section", "model", "spec", "n", "rmse", "mape", "r2", "fallbacks"],
            &rows,
        )?;
        let summary = aggregate_report(&per_section).map_err(|e| CliError::Data(format!("evaluate: {e}")))?;
        let rows: Vec<Vec<String>> = summary
            .iter()
            .map(|r| {
                vec![
                    r.model.clone(),
                    r.spec.clone(),
                    spec_label(&r.spec).to_string(),
                    r.sections.to_string(),
                    r.median_rmse.to_string(),
                    opt(r.median_mape),
                    opt(r.median_r2),
                    r.mean_rmse.to_string(),
                    opt(r.mean_mape),
                    opt(r.mean_r2),
                ]
            })
            .collect();
        write_rows(
            &ctx.layout.summary_csv(),
            &[
                "model", "spec", "label", "sections", "median_rmse", "median_mape", "median_r2", "mean_rmse", "mean_mape",
                "mean_r2",
            ],
            &rows,
        )?;
        write_atomic(&ctx.layout.summary_txt(), SummaryRow::render_table(&summary).as_bytes())?;
        let dm = dm_comparisons(results, ctx.cfg.dm_horizon);
        let rows: Vec<Vec<String>> = dm
            .iter()
            .map(|(a, b, r)| {
                vec![
                    a.clone(),
                    b.clone(),
                    r.n.to_string(),
                    r.dbar.to_string(),
                    r.statistic.to_string(),
                    r.pvalue.to_string(),
                    forecast_core::eval::significance_stars(r.pvalue).to_string(),
                ]
            })
            .collect();
        write_rows(&ctx.layout.dm_csv(), &["model_a", "model_b", "n", "dbar", "statistic", "pvalue", "stars"], &rows)?;
        write_atomic(&ctx.layout.dm_txt(), dm_table(&dm).as_bytes())?;
        Ok((summary, dm))
    })
}

// ---------------------------------------------------------------- diagnose

fn log_changes(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
}

pub fn cmd_diagnose(ctx: &mut Context, panel: Option<&Panel>) -> Result<Vec<std::path::PathBuf>> {
    ctx.timed("diagnose", |ctx| {
        let loaded;
        let panel = match panel {
            Some(p) => p,
            None => {
                loaded = read_panel(&ctx.layout)?;
                &loaded
            }
        };
        let d = ctx.cfg.diagnostics.clone();
        let id = ctx.run_id.clone();
        let l = &ctx.layout;
        let derr = |e: forecast_core::diagnostics::DiagError| CliError::Data(format!("diagnose: {e}"));
        let sections = panel.keys_of(SeriesKind::CsiSection);
        let quarters: Vec<_> = panel.quarters().collect();
        let mut written = Vec::new();

        let rows: Vec<Vec<String>> = dispersion_table(panel, &quarters)
            .map_err(derr)?
            .iter()
            .map(|r| {
                vec![
                    r.quarter.to_string(),
                    r.n_sections.to_string(),
                    r.non_null_pct.to_string(),
                    opt(r.median),
                    opt(r.iqr),
                    opt(r.mean),
                    opt(r.sd),
                    opt(r.cv),
                ]
            })
            .collect();
        let p = l.diagnostic("dispersion", &id);
        write_rows(&p, &["quarter", "n_sections", "non_null_pct", "median", "iqr", "mean", "sd", "cv"], &rows)?;
        written.push(p);

        let mut seasonal = Vec::new();
        let mut acf_rows = Vec::new();
        for key in &sections {
            let s = panel.get(key).expect("listed key");
            if !s.values.iter().all(|v| v.is_finite()) {
                continue;
            }
            if let Ok(idx) = seasonal_indices(&s.values, s.start, d.seasonal_method) {
                for (q, v) in idx.iter().enumerate() {
                    seasonal.push(vec![key.code.clone(), format!("Q{}", q + 1), v.to_string()]);
                }
            }
            let lags = d.acf_lags.min(s.values.len().saturating_sub(2));
            if let Ok(r) = acf(&log_changes(&s.values), lags) {
                for (lag, v) in r.iter().enumerate() {
                    acf_rows.push(vec![key.code.clone(), lag.to_string(), v.to_string()]);
                }
            }
        }
        let p = l.diagnostic("seasonal", &id);
        write_rows(&p, &["section", "quarter", "index"], &seasonal)?;
        written.push(p);
        let p = l.diagnostic("acf", &id);
        write_rows(&p, &["section", "lag", "acf"], &acf_rows)?;
        written.push(p);

        let mut rolling = Vec::new();
        let ppis = panel.keys_of(SeriesKind::Ppi);
        for key in &sections {
            let s = panel.get(key).expect("listed key");
            for pk in &ppis {
                let x = panel.get(pk).expect("listed key");
                if !s.values.iter().chain(&x.values).all(|v| v.is_finite() && *v > 0.0) {
                    continue;
                }
                let (a, b) = (log_changes(&s.values), log_changes(&x.values));
                if let Ok(r) = rolling_correlation(&a, &b, d.rolling_window) {
                    for (i, v) in r.iter().enumerate() {
                        if let Some(v) = v {
                            rolling.push(vec![key.code.clone(), pk.code.clone(), panel.quarter_at(i + 1).to_string(), v.to_string()]);
                        }
                    }
                }
            }
        }
        let p = l.diagnostic("rolling_correlation", &id);
        write_rows(&p, &["section", "ppi", "quarter", "correlation"], &rolling)?;
        written.push(p);

        let m = CorrelationMatrix::from_panel(panel).map_err(derr)?;
        let clustering = correlation_cluster(&m, d.clusters.min(m.keys.len())).map_err(derr)?;
        let rows: Vec<Vec<String>> = m
            .keys
            .iter()
            .zip(&clustering.labels)
            .map(|(k, c)| vec![k.clone(), c.to_string()])
            .collect();
        let p = l.diagnostic("cluster", &id);
        write_rows(&p, &["section", "cluster"], &rows)?;
        written.push(p);
        let mut corr = Vec::new();
        for (i, a) in m.keys.iter().enumerate() {
            for (j, b) in m.keys.iter().enumerate() {
                corr.push(vec![a.clone(), b.clone(), m.values[i][j].to_string()]);
            }
        }
        let p = l.diagnostic("correlation", &id);
        write_rows(&p, &["section_a", "section_b", "correlation"], &corr)?;
        written.push(p);
        Ok(written)
    })
}

// ---------------------------------------------------------------- manifest

/// Writes the manifest and the separate timing file.
pub fn finish(ctx: &Context, statuses: Option<Vec<ModelStatus>>) -> Result<Manifest> {
    let statuses = match statuses {
        Some(s) => s,
        None if ctx.layout.forecast_status().exists() => read_json(&ctx.layout.forecast_status(), "forecast")?,
        None => Vec::new(),
    };
    let mut fallback_counts = BTreeMap::new();
    for s in &statuses {
        *fallback_counts.entry(format!("{}/{}", s.model, s.spec)).or_insert(0) += s.fallbacks;
    }
    let sections = if ctx.layout.split().exists() {
        read_json::<Split>(&ctx.layout.split(), "features")?.sections
    } else {
        Vec::new()
    };
    let manifest = Manifest {
        run_id: ctx.run_id.clone(),
        config_hash: ctx.cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: ctx.cfg.seed,
        command: ctx.command.clone(),
        stages: ctx.stages.clone(),
        sections,
        statuses,
        fallback_counts,
        interval_alpha: ctx.cfg.models.attention.as_ref().map(|a| a.alpha),
    };
    write_json(&ctx.layout.config_copy(), &ctx.cfg)?;
    let timings: BTreeMap<&str, f64> = ctx.timings.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    write_json(&ctx.layout.timings(), &timings)?;
    write_json(&ctx.layout.manifest(), &manifest)?;
    Ok(manifest)
}

/// Every stage in order, passing results in memory.
pub fn run_pipeline(ctx: &mut Context) -> Result<Manifest> {
    let raw = if ctx.cfg.synthetic.is_some() { Some(cmd_generate(ctx)?) } else { None };
    let panel = cmd_ingest(ctx, raw)?;
    let staged = cmd_features(ctx, Some(panel))?;
    let trained = cmd_train(ctx, Some(&staged))?;
    let (results, statuses) = cmd_forecast(ctx, Some(&staged), Some(trained))?;
    cmd_evaluate(ctx, Some(&results))?;
    cmd_diagnose(ctx, Some(&staged.0))?;
    finish(ctx, Some(statuses))
}
