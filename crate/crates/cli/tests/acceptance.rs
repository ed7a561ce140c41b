//! Acceptance suite. Runs without the libtest harness: every criterion runs in
//! sequence so wall-clock limits are measured without competing test threads,
//! each prints a single PASS/FAIL line, and the process exits non-zero if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use forecast_core::attention::{self, nll_and_gradient, train_gaussian_nll, AttentionConfig, AttentionWeights, Examples};
use forecast_core::data::{load_panel, Panel, PanelMeta, Quarter, Series, SeriesKey, SeriesKind};
use forecast_core::diagnostics::{
    adjusted_rand_index, correlation_cluster, dispersion_table, seasonal_indices, CorrelationMatrix, SeasonalMethod,
};
use forecast_core::eval::{dm_test, metrics, ForecastResult};
use forecast_core::features::{build_matrix, FeatureSpec};
use forecast_core::lstm::{loss_and_gradient, Batch, LstmLayout, LstmWeights};
use forecast_core::nn::{dropout_mask, rng};
use forecast_core::sarimax::{self, fault_draw, SarimaxOrder};
use forecast_core::synth::{generate_cointegrated_pair, generate_panel, pair_keys, DgpConfig, PairConfig};
use forecast_core::vecm::{johansen_fit, VecmConfig};
use forecastctl::artifacts::{parse_forecast_csv, Layout};
use forecastctl::config::SpecKind;
use forecastctl::pipeline::{self, fault_stream, forecast_section, section_key, section_matrix, split_panel};
use forecastctl::{Manifest, RunConfig};
use rand::Rng;
use rand_distr::StandardNormal;

/// Outcome of one criterion: pass flag plus a short measurement summary.
struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// ------------------------------------------------------------------ oracles

fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn worst_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn type7_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn gaussian_ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut x = r.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
    (0..n)
        .map(|_| {
            let v = x;
            x = phi * x + r.sample::<f64, _>(StandardNormal);
            v
        })
        .collect()
}

// --------------------------------------------------------------- criteria

fn lstm_gradient_check() -> Verdict {
    let t0 = Instant::now();
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for inst in 0..20u64 {
        let layout = LstmLayout { input: r.gen_range(1..=4), hidden: r.gen_range(1..=8), dense: r.gen_range(1..=8) };
        let (len, batch) = (r.gen_range(1..=6), r.gen_range(1..=4));
        let mut w = LstmWeights::init(layout, 500 + inst);
        // Move dense pre-activations off the ReLU kink.
        for b in w.dense_bias_mut() {
            *b += 0.5;
        }
        let seqs: Vec<Vec<Vec<f64>>> = (0..batch)
            .map(|_| (0..len).map(|_| (0..layout.input).map(|_| r.gen_range(-1.0..1.0)).collect()).collect())
            .collect();
        let y: Vec<f64> = (0..batch).map(|_| r.gen_range(-1.0..1.0)).collect();
        let x = Batch::from_sequences(&seqs).unwrap();
        let mask = (inst % 2 == 0).then(|| dropout_mask(&mut r, batch * layout.hidden, 0.2));
        let (_, g) = loss_and_gradient(&w, &x, &y, mask.as_deref()).unwrap();
        let mut f = |p: &[f64]| {
            let w2 = LstmWeights { layout, params: p.to_vec() };
            loss_and_gradient(&w2, &x, &y, mask.as_deref()).unwrap().0
        };
        let num = central_difference(&mut f, &w.params, 1e-5);
        worst = worst.max(worst_relative_error(&g, &num));
    }
    let el = t0.elapsed();
    verdict(worst < 1e-4 && within(el, 10.0), format!("max relative error {worst:.2e} over 20 instances in {:.2}s", el.as_secs_f64()))
}

fn attention_gradient_check() -> Verdict {
    let t0 = Instant::now();
    let mut r = rng(2025);
    let mut worst: f64 = 0.0;
    for inst in 0..20u64 {
        let n_heads = r.gen_range(1..=2);
        let d_model = n_heads * r.gen_range(1..=4);
        let cfg = AttentionConfig {
            lookback: r.gen_range(1..=6),
            horizon: r.gen_range(1..=3),
            d_model,
            n_heads,
            ..AttentionConfig::default()
        };
        let input = r.gen_range(1..=3);
        let mut w = AttentionWeights::init(cfg.layout(input), 900 + inst);
        for b in w.ffn_bias_mut() {
            *b += 0.3;
        }
        let n_ex = r.gen_range(1..=3);
        let ex = Examples {
            len: cfg.lookback,
            input,
            windows: (0..n_ex).map(|_| (0..cfg.lookback * input).map(|_| r.gen_range(-1.0..1.0)).collect()).collect(),
            targets: (0..n_ex)
                .map(|e| {
                    (0..cfg.horizon)
                        .map(|h| if h > 0 && (e + h) % 3 == 0 { f64::NAN } else { r.gen_range(-1.0..1.0) })
                        .collect()
                })
                .collect(),
        };
        let positional = inst % 3 != 0;
        let (_, g) = nll_and_gradient(&w, &ex, positional).unwrap();
        let layout = w.layout;
        let mut f = |p: &[f64]| nll_and_gradient(&AttentionWeights { layout, params: p.to_vec() }, &ex, positional).unwrap().0;
        let num = central_difference(&mut f, &w.params, 1e-5);
        worst = worst.max(worst_relative_error(&g, &num));

        // The scaled dot-product block on its own.
        let rows = |r: &mut rand_pcg::Pcg32, n: usize, d: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()
        };
        let (nq, nk, dk, dv) = (r.gen_range(1..=6), r.gen_range(1..=6), r.gen_range(1..=8), r.gen_range(1..=8));
        let (q, k, v, og) = (rows(&mut r, nq, dk), rows(&mut r, nk, dk), rows(&mut r, nk, dv), rows(&mut r, nq, dv));
        let (dq, dkk, dvv) = attention::attention_gradient(&q, &k, &v, &og).unwrap();
        let objective = |q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]| -> f64 {
            let (out, _) = attention::attention(q, k, v).unwrap();
            out.iter().flatten().zip(og.iter().flatten()).map(|(a, b)| a * b).sum()
        };
        let reshape = |p: &[f64], w: usize| p.chunks(w).map(|c| c.to_vec()).collect::<Vec<_>>();
        let nqg = central_difference(&mut |p| objective(&reshape(p, dk), &k, &v), &q.concat(), 1e-5);
        let nkg = central_difference(&mut |p| objective(&q, &reshape(p, dk), &v), &k.concat(), 1e-5);
        let nvg = central_difference(&mut |p| objective(&q, &k, &reshape(p, dv)), &v.concat(), 1e-5);
        for (a, b) in [(&dq, &nqg), (&dkk, &nkg), (&dvv, &nvg)] {
            worst = worst.max(worst_relative_error(a, b));
        }
    }
    let el = t0.elapsed();
    verdict(worst < 1e-4 && within(el, 10.0), format!("max relative error {worst:.2e} over 20 instances in {:.2}s", el.as_secs_f64()))
}

fn sarimax_ar1_recovery() -> Verdict {
    let t0 = Instant::now();
    let order = SarimaxOrder::new((1, 0, 0), (0, 0, 0), 4);
    let mut est = Vec::new();
    let mut failures = 0;
    for seed in 0..100u64 {
        match sarimax::fit(&gaussian_ar1(0.6, 200, 7000 + seed), &[], &order) {
            Ok(p) if p.converged => est.push(p.phi[0]),
            _ => failures += 1,
        }
    }
    let el = t0.elapsed();
    let mean = est.iter().sum::<f64>() / est.len().max(1) as f64;
    let pass = (mean - 0.6).abs() <= 0.05 && (failures as f64) < 5.0 && within(el, 120.0);
    verdict(pass, format!("mean phi {mean:.4}, {failures}/100 failed fits, {:.1}s", el.as_secs_f64()))
}

fn johansen_recovery() -> Verdict {
    let t0 = Instant::now();
    let (k1, k2) = pair_keys();
    let mut est: Vec<f64> = (0..100u64)
        .map(|seed| {
            let p = generate_cointegrated_pair(&PairConfig::new(500, 1.0, 3000 + seed)).unwrap();
            let (y1, y2) = (&p.get(&k1).unwrap().values, &p.get(&k2).unwrap().values);
            let rows: Vec<Vec<f64>> = y2.iter().zip(y1).map(|(a, b)| vec![*a, *b]).collect();
            johansen_fit(&rows, p.start(), &VecmConfig::default()).unwrap().beta_coint[1]
        })
        .collect();
    let el = t0.elapsed();
    let med = median(&mut est);
    verdict((med + 1.0).abs() <= 0.1 && within(el, 120.0), format!("median beta2 {med:.4}, {:.1}s", el.as_secs_f64()))
}

fn dm_size() -> Verdict {
    let t0 = Instant::now();
    let mut r = rng(555);
    let mut rejections = 0;
    for _ in 0..1000 {
        let a: Vec<f64> = (0..100).map(|_| r.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..100).map(|_| r.sample(StandardNormal)).collect();
        if dm_test(&a, &b, 1).unwrap().pvalue < 0.05 {
            rejections += 1;
        }
    }
    let el = t0.elapsed();
    let rate = rejections as f64 / 1000.0;
    verdict((0.03..=0.07).contains(&rate) && within(el, 60.0), format!("rejection rate {rate:.3}, {:.2}s", el.as_secs_f64()))
}

fn metrics_oracle() -> Verdict {
    let mut r = rng(99);
    let mut worst: f64 = 0.0;
    let mut scale_worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.gen_range(2..=40);
        let actual: Vec<f64> = (0..n).map(|_| r.gen_range(50.0..150.0)).collect();
        let pred: Vec<f64> = actual.iter().map(|a| a + r.gen_range(-10.0..10.0)).collect();
        let m = metrics(&actual, &pred).unwrap();
        let nf = n as f64;
        let sse: f64 = actual.iter().zip(&pred).map(|(a, p)| (a - p) * (a - p)).sum();
        let rmse = (sse / nf).sqrt();
        let mape = 100.0 * actual.iter().zip(&pred).map(|(a, p)| ((a - p) / a).abs()).sum::<f64>() / nf;
        let mean = actual.iter().sum::<f64>() / nf;
        let r2 = 1.0 - sse / actual.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>();
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1.0);
        worst = worst.max(rel(m.rmse, rmse)).max(rel(m.mape.unwrap(), mape)).max(rel(m.r2.unwrap(), r2));

        let c = r.gen_range(0.01..100.0);
        let sa: Vec<f64> = actual.iter().map(|v| v * c).collect();
        let sp: Vec<f64> = pred.iter().map(|v| v * c).collect();
        let s = metrics(&sa, &sp).unwrap();
        scale_worst = scale_worst
            .max(rel(s.mape.unwrap(), m.mape.unwrap()))
            .max(rel(s.r2.unwrap(), m.r2.unwrap()))
            .max(rel(s.rmse, c * m.rmse));
    }
    verdict(
        worst <= 1e-12 && scale_worst <= 1e-12,
        format!("oracle deviation {worst:.1e}, scaling deviation {scale_worst:.1e} over 100 instances"),
    )
}

fn small_config(extra_models: &str, n_sections: usize, seed: u64, workers: usize) -> String {
    format!(
        r#"{{
  "synthetic": {{"n_sections": {n_sections}, "quarters": 78, "seed": 3}},
  "features": {{"lag_set": [1,2,3,4], "rolling_windows": [4], "lookback_l": 8, "screening": 3}},
  "models": {{ {extra_models} }},
  "seed": {seed},
  "workers": {workers}
}}"#
    )
}

const ALL_MODELS: &str = r#""naive": {}, "seasonal_naive": {},
    "sarimax": {"order": {"p":1,"d":1,"q":0,"seasonal_p":0,"seasonal_d":1,"seasonal_q":0,"s":4}},
    "vecm": {"n_components": 3},
    "lstm": {"hidden_size": 8, "epochs": 40, "finetune_epochs": 3, "lookback": 4},
    "attention": {"lookback": 8, "horizon": 2, "d_model": 8, "n_heads": 2, "epochs": 40}"#;

fn prepared_panel(cfg: &RunConfig) -> Panel {
    let (raw, _) = pipeline::generate(cfg).unwrap();
    pipeline::preprocess(cfg, raw, PanelMeta::default()).unwrap().0
}

fn same_result(a: &ForecastResult, b: &ForecastResult, upto: Quarter) -> bool {
    let pick = |r: &ForecastResult| -> Vec<_> {
        r.records
            .iter()
            .filter(|x| x.quarter <= upto)
            .map(|x| {
                (
                    x.quarter,
                    x.forecast.to_bits(),
                    x.lower.map(f64::to_bits),
                    x.upper.map(f64::to_bits),
                    x.fallback.clone(),
                )
            })
            .collect()
    };
    let (pa, pb) = (pick(a), pick(b));
    !pa.is_empty() && pa == pb
}

fn leakage() -> Verdict {
    let cfg = RunConfig::from_json(&small_config(ALL_MODELS, 3, 11, 1)).unwrap();
    let panel = prepared_panel(&cfg);
    let sections = pipeline::selected_sections(&cfg, &panel).unwrap();
    let (train_end, targets) = split_panel(&panel, cfg.train_fraction).unwrap();
    let origins = [train_end, train_end.offset(5)];
    let mut checked = 0;
    let mut broken = Vec::new();
    for section in &sections {
        let key = section_key(section).unwrap();
        let full = forecast_section(&cfg, &panel, section, train_end, &targets).unwrap();
        for &origin in &origins {
            let cut = panel.truncate_after(origin);
            for spec in [SpecKind::Base, SpecKind::Augmented] {
                let fs = pipeline::spec_features(&cfg.features, spec);
                let a = section_matrix(&panel, &key, &fs, train_end).unwrap();
                let b = section_matrix(&cut, &key, &fs, train_end).unwrap();
                let rows = |m: &forecast_core::features::FeatureMatrix| -> Vec<(Quarter, Vec<u64>)> {
                    m.quarters
                        .iter()
                        .zip(&m.data)
                        .filter(|(q, _)| **q <= origin)
                        .map(|(q, r)| (*q, r.iter().map(|v| v.to_bits()).collect()))
                        .collect()
                };
                checked += 1;
                if a.column_names != b.column_names || rows(&a) != rows(&b) {
                    broken.push(format!("features {section} {} @{origin}", spec.as_str()));
                }
            }
            let upto = origin.succ();
            let short: Vec<Quarter> = targets.iter().copied().filter(|q| *q <= upto).collect();
            let part = forecast_section(&cfg, &cut, section, train_end, &short).unwrap();
            for res in &full.results {
                checked += 1;
                let other = part.results.iter().find(|r| r.model == res.model && r.spec == res.spec);
                if !other.is_some_and(|o| same_result(res, o, upto)) {
                    broken.push(format!("{} {} {section} @{origin}", res.model, res.spec));
                }
            }
        }
    }
    let models: Vec<&str> = cfg.models.enabled();
    verdict(
        broken.is_empty() && checked > 0,
        format!("{checked} comparisons over models {models:?} and features; mismatches: {broken:?}"),
    )
}

const BENCH_SEEDS: u64 = 20;

fn bench_config(seed: u64) -> RunConfig {
    RunConfig::from_json(&format!(
        r#"{{
  "synthetic": {{"n_sections": 10, "quarters": 78, "seed": {seed}, "driver_lead": 1}},
  "features": {{"lag_set": [1,2,3,4], "rolling_windows": [4], "lookback_l": 8, "screening": 3}},
  "models": {{
    "naive": {{}},
    "sarimax": {{}},
    "lstm": {{"hidden_size": 32, "epochs": 100, "finetune_epochs": 5, "lookback": 4}}
  }},
  "seed": {seed}
}}"#
    ))
    .unwrap()
}

fn benchmark() -> Verdict {
    let t0 = Instant::now();
    // (model, spec) -> RMSE per (seed, section); pooled errors per (model, spec).
    let mut rmse: BTreeMap<(String, String), Vec<Vec<f64>>> = BTreeMap::new();
    let mut errors: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for seed in 1..=BENCH_SEEDS {
        let cfg = bench_config(seed);
        let panel = prepared_panel(&cfg);
        let (train_end, targets) = split_panel(&panel, cfg.train_fraction).unwrap();
        let mut per_seed: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for section in pipeline::selected_sections(&cfg, &panel).unwrap() {
            let out = forecast_section(&cfg, &panel, &section, train_end, &targets).unwrap();
            for res in &out.results {
                let key = (res.model.clone(), res.spec.clone());
                per_seed.entry(key.clone()).or_default().push(res.metrics().unwrap().rmse);
                errors.entry(key).or_default().extend(res.errors());
            }
        }
        for (k, v) in per_seed {
            rmse.entry(k).or_default().push(v);
        }
    }
    let el = t0.elapsed();
    let key = |m: &str, s: &str| (m.to_string(), s.to_string());
    let pooled_median = |k: &(String, String)| median(&mut rmse[k].concat());
    let naive = pooled_median(&key("naive", "base"));
    let lstm_aug = pooled_median(&key("lstm", "augmented"));
    let sar_aug = pooled_median(&key("sarimax", "augmented"));
    let gain = |v: f64| 1.0 - v / naive;
    let a = gain(lstm_aug) >= 0.2 && gain(sar_aug) >= 0.2;

    let wins = |m: &str| -> usize {
        let (aug, base) = (&rmse[&key(m, "augmented")], &rmse[&key(m, "base")]);
        aug.iter().zip(base).filter(|(x, y)| median(&mut x.to_vec()) < median(&mut y.to_vec())).count()
    };
    let (lw, sw) = (wins("lstm"), wins("sarimax"));
    let need = (0.7 * BENCH_SEEDS as f64).ceil() as usize;
    let b = lw >= need && sw >= need;

    let dm = dm_test(&errors[&key("lstm", "augmented")], &errors[&key("naive", "base")], 1).unwrap();
    let c = dm.statistic < 0.0 && dm.pvalue < 0.05;
    let pass = a && b && c && within(el, 900.0);
    verdict(
        pass,
        format!(
            "(a) {} median RMSE naive {naive:.3}, lstm aug {lstm_aug:.3} ({:.0}%), sarimax aug {sar_aug:.3} ({:.0}%); \
             (b) {} aug<base in {lw}/{BENCH_SEEDS} lstm, {sw}/{BENCH_SEEDS} sarimax; \
             (c) {} DM stat {:.2} p {:.2e}; {:.0}s",
            if a { "ok" } else { "FAIL" },
            100.0 * gain(lstm_aug),
            100.0 * gain(sar_aug),
            if b { "ok" } else { "FAIL" },
            if c { "ok" } else { "FAIL" },
            dm.statistic,
            dm.pvalue,
            el.as_secs_f64()
        ),
    )
}

fn run_binary(config: &str, dir: &Path) -> std::process::Output {
    let cfg_path = dir.join("config.json");
    fs::write(&cfg_path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_forecastctl"))
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.join("run"))
        .output()
        .unwrap()
}

fn fallback_injection() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let models = r#""naive": {}, "sarimax": {"fault_rate": 0.3}"#;
    let out = run_binary(&small_config(models, 4, 17, 1), tmp.path());
    if !out.status.success() {
        return verdict(false, format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    let layout = Layout::new(tmp.path().join("run"));
    let panel = load_panel(layout.panel()).unwrap();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(layout.manifest()).unwrap()).unwrap();
    let mut problems = Vec::new();
    let (mut injected, mut steps) = (0, 0);
    for spec in [SpecKind::Base, SpecKind::Augmented] {
        let mut flagged = 0;
        for section in &manifest.sections {
            let path = layout.forecast("sarimax", spec.as_str(), section);
            let res = &parse_forecast_csv(&fs::read_to_string(&path).unwrap(), &path).unwrap()[0];
            let series = panel.get(&section_key(section).unwrap()).unwrap();
            let stream = fault_stream(section, spec);
            for rec in &res.records {
                let pos = series.index_of(rec.quarter).unwrap();
                let expect = fault_draw(manifest.seed, &stream, pos) < 0.3;
                let got = rec.fallback.as_deref() == Some("injected");
                steps += 1;
                injected += got as usize;
                flagged += rec.fallback.is_some() as usize;
                if expect != got {
                    problems.push(format!("{section} {} {}: expected {expect}", spec.as_str(), rec.quarter));
                }
                if got && Some(rec.forecast) != series.value_at(rec.quarter.pred()) {
                    problems.push(format!("{section} {}: not persistence", rec.quarter));
                }
            }
        }
        let counted = manifest.fallback_counts.get(&format!("sarimax/{}", spec.as_str())).copied().unwrap_or(0);
        if counted != flagged {
            problems.push(format!("manifest counts {counted} flags for {} but files hold {flagged}", spec.as_str()));
        }
    }
    verdict(
        problems.is_empty() && injected > 0,
        format!("exit 0, {injected}/{steps} injected failures replaced by persistence; issues: {problems:?}"),
    )
}

fn reproducibility() -> Verdict {
    let config = small_config(ALL_MODELS, 3, 5, 2);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = run_binary(&config, d.path());
        if !out.status.success() {
            return verdict(false, format!("run failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    let (la, lb) = (Layout::new(a.path().join("run")), Layout::new(b.path().join("run")));
    let mut files = vec![la.all_forecasts(), la.manifest()];
    let mut names: Vec<_> = fs::read_dir(la.forecast_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    files.extend(names);
    let differing: Vec<String> = files
        .iter()
        .filter(|p| {
            let rel = p.strip_prefix(&la.root).unwrap();
            fs::read(p).unwrap() != fs::read(lb.root.join(rel)).unwrap_or_default()
        })
        .map(|p| p.display().to_string())
        .collect();
    verdict(differing.is_empty(), format!("{} files compared; differing: {differing:?}", files.len()))
}

fn interval_coverage() -> Verdict {
    let n = 1501;
    let start = Quarter::new(1700, 1).unwrap();
    let key = SeriesKey::csi("061000").unwrap();
    let values: Vec<f64> = gaussian_ar1(0.6, n, 11).into_iter().map(|v| 100.0 + v).collect();
    let mut panel = Panel::new(start, n);
    panel.insert(Series::new(key.clone(), start, values)).unwrap();
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
    let m = build_matrix(&panel, &key, &spec, panel.end()).unwrap();
    let cfg = AttentionConfig {
        lookback: 4,
        horizon: 1,
        d_model: 8,
        n_heads: 2,
        epochs: 150,
        learning_rate: 1e-2,
        seed: 1,
        ..AttentionConfig::default()
    };
    let model = train_gaussian_nll(&m, m.quarters[999], &cfg).unwrap();
    let hits = (999..1499)
        .filter(|&o| {
            let f = model.predict_with_intervals(&m, m.quarters[o]).unwrap();
            let y = m.target[o + 1];
            f.lower[0] <= y && y <= f.upper[0]
        })
        .count();
    let cov = hits as f64 / 500.0;
    verdict((0.90..=0.99).contains(&cov), format!("95% interval coverage {cov:.3} on 500 forecasts"))
}

fn diagnostics_oracles() -> Verdict {
    // Seasonal indices at zero noise.
    let mut seasonal_err: f64 = 0.0;
    for seed in 0..5 {
        let cfg = DgpConfig { noise_sd: 0.0, driver_sd: Some(0.0), seasonal_amplitude: 0.05, seed, ..DgpConfig::default() };
        let (panel, truth) = generate_panel(&cfg).unwrap();
        for (i, code) in truth.section_codes.iter().enumerate() {
            let s = panel.get(&SeriesKey::csi(code).unwrap()).unwrap();
            for method in [SeasonalMethod::MovingAverage, SeasonalMethod::DummyRegression] {
                let idx = seasonal_indices(&s.values, s.start, method).unwrap();
                for q in 0..4 {
                    seasonal_err = seasonal_err.max((idx[q] - truth.seasonal_factors[i][q]).abs());
                }
            }
        }
    }

    // Dispersion against a brute-force recomputation.
    let (panel, _) = generate_panel(&DgpConfig { n_sections: 12, seed: 4, ..DgpConfig::default() }).unwrap();
    let quarters: Vec<Quarter> = panel.quarters().collect();
    let table = dispersion_table(&panel, &quarters).unwrap();
    let mut disp_err: f64 = 0.0;
    for (row, &q) in table.iter().zip(&quarters) {
        let mut v: Vec<f64> = panel
            .series()
            .filter(|s| s.key.kind == SeriesKind::CsiSection)
            .filter_map(|s| s.value_at(q))
            .collect();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let iqr = type7_quantile(&v, 0.75) - type7_quantile(&v, 0.25);
        let med = type7_quantile(&v, 0.5);
        for (got, want) in [(row.mean, mean), (row.sd, sd), (row.iqr, iqr), (row.median, med), (row.cv, sd / mean)] {
            disp_err = disp_err.max(got.map_or(f64::INFINITY, |g| (g - want).abs()));
        }
    }

    // Correlation clustering against the driver grouping.
    let mut ari = 0.0;
    for seed in 0..10 {
        let cfg = DgpConfig { n_sections: 10, n_ppi: 2, seed, ..DgpConfig::default() };
        let (panel, _) = generate_panel(&cfg).unwrap();
        let c = correlation_cluster(&CorrelationMatrix::from_panel(&panel).unwrap(), 2).unwrap();
        let truth: Vec<usize> = (0..10).map(|i| i % 2).collect();
        ari += adjusted_rand_index(&c.labels, &truth);
    }
    ari /= 10.0;
    verdict(
        seasonal_err <= 1e-9 && disp_err <= 1e-9 && ari >= 0.8,
        format!("seasonal max error {seasonal_err:.1e}, dispersion max error {disp_err:.1e}, mean ARI {ari:.3}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 12] = [
        ("LSTM gradient check", lstm_gradient_check),
        ("attention gradient check", attention_gradient_check),
        ("SARIMAX AR(1) recovery", sarimax_ar1_recovery),
        ("Johansen cointegration recovery", johansen_recovery),
        ("Diebold-Mariano size", dm_size),
        ("metrics oracle and scaling", metrics_oracle),
        ("no look-ahead leakage", leakage),
        ("end-to-end benchmark", benchmark),
        ("fallback under injected failures", fallback_injection),
        ("reproducible artifacts", reproducibility),
        ("attention interval coverage", interval_coverage),
        ("diagnostics oracles", diagnostics_oracles),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!("criterion {n:2} {}: {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed.push(n);
        }
    }
    let ran = only.map_or(criteria.len(), |_| 1);
    println!("acceptance: {}/{ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
