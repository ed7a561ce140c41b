use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{significance_stars, DmResult, EvalError, MetricReport, Result};

/// Metrics of one model/specification on one section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionMetrics {
    pub section: String,
    pub model: String,
    pub spec: String,
    pub report: MetricReport,
}

/// Median and mean metrics across sections for one model and specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub spec: String,
    pub sections: usize,
    pub median_rmse: f64,
    pub median_mape: Option<f64>,
    pub median_r2: Option<f64>,
    pub mean_rmse: f64,
    pub mean_mape: Option<f64>,
    pub mean_r2: Option<f64>,
}

/// Row label used in summary tables.
pub fn spec_label(spec: &str) -> &str {
    match spec {
        "base" => "base_model",
        "augmented" => "fine_model",
        other => other,
    }
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Groups by `(model, spec)` in first-seen order.
pub fn aggregate_report(rows: &[SectionMetrics]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut groups: Vec<(String, String)> = Vec::new();
    for r in rows {
        let g = (r.model.clone(), r.spec.clone());
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    Ok(groups
        .into_iter()
        .map(|(model, spec)| {
            let members: Vec<&MetricReport> =
                rows.iter().filter(|r| r.model == model && r.spec == spec).map(|r| &r.report).collect();
            let mut rmse: Vec<f64> = members.iter().map(|m| m.rmse).collect();
            let mut mape: Vec<f64> = members.iter().filter_map(|m| m.mape).collect();
            let mut r2: Vec<f64> = members.iter().filter_map(|m| m.r2).collect();
            SummaryRow {
                sections: members.len(),
                mean_rmse: mean(&rmse).expect("non-empty group"),
                mean_mape: mean(&mape),
                mean_r2: mean(&r2),
                median_rmse: median(&mut rmse).expect("non-empty group"),
                median_mape: median(&mut mape),
                median_r2: median(&mut r2),
                model,
                spec,
            }
        })
        .collect())
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.2}"))
}

impl SummaryRow {
    pub fn render_table(rows: &[SummaryRow]) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "", "", "Median", "", "", "Mean", "", ""
        );
        let _ = writeln!(
            s,
            "{:<16} {:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "Model", "Spec", "RMSE", "MAPE", "R2", "RMSE", "MAPE", "R2"
        );
        for r in rows {
            let _ = writeln!(
                s,
                "{:<16} {:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
                r.model,
                spec_label(&r.spec),
                cell(Some(r.median_rmse)),
                cell(r.median_mape),
                cell(r.median_r2),
                cell(Some(r.mean_rmse)),
                cell(r.mean_mape),
                cell(r.mean_r2)
            );
        }
        s
    }
}

/// Aligned text table of pairwise DM results.
pub fn dm_table(rows: &[(String, String, DmResult)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<28} {:<28} {:>12} {:>10} {:>8} {:<4} {:>5}", "Model A", "Model B", "dbar", "DM", "p", "", "n");
    for (a, b, r) in rows {
        let _ = writeln!(
            s,
            "{:<28} {:<28} {:>12.4} {:>10.3} {:>8.4} {:<4} {:>5}",
            a,
            b,
            r.dbar,
            r.statistic,
            r.pvalue,
            significance_stars(r.pvalue),
            r.n
        );
    }
    let _ = writeln!(s, "Stars: * p < 0.10, ** p < 0.05, *** p < 0.01. Negative dbar favors model A.");
    s
}
