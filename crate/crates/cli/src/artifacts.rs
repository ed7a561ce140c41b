//! File layout of a run directory and the CSV/JSON formats stored in it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use forecast_core::data::Quarter;
use forecast_core::eval::{ForecastRecord, ForecastResult};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

pub const FORECAST_HEADER: [&str; 10] =
    ["section", "model", "spec", "quarter", "actual", "forecast", "lower", "upper", "fallback", "sigma"];

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn raw_panel(&self) -> PathBuf {
        self.root.join("raw_panel.csv")
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("ground_truth.json")
    }

    pub fn panel(&self) -> PathBuf {
        self.root.join("panel.csv")
    }

    pub fn panel_meta(&self) -> PathBuf {
        self.root.join("panel_meta.json")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn features(&self, section: &str, spec: &str) -> PathBuf {
        self.root.join("features").join(format!("{section}_{spec}.csv"))
    }

    pub fn model(&self, model: &str, spec: &str, section: &str) -> PathBuf {
        self.root.join("models").join(format!("{model}_{spec}_{section}.bin"))
    }

    pub fn cv_table(&self, section: &str, spec: &str) -> PathBuf {
        self.root.join("cv").join(format!("lstm_{spec}_{section}.csv"))
    }

    pub fn train_status(&self) -> PathBuf {
        self.root.join("train_status.json")
    }

    pub fn forecast_dir(&self) -> PathBuf {
        self.root.join("forecasts")
    }

    pub fn forecast(&self, model: &str, spec: &str, section: &str) -> PathBuf {
        self.forecast_dir().join(format!("{model}_{spec}_{section}.csv"))
    }

    pub fn all_forecasts(&self) -> PathBuf {
        self.root.join("forecasts.csv")
    }

    pub fn forecast_status(&self) -> PathBuf {
        self.root.join("forecast_status.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn summary_csv(&self) -> PathBuf {
        self.root.join("summary.csv")
    }

    pub fn summary_txt(&self) -> PathBuf {
        self.root.join("summary.txt")
    }

    pub fn dm_csv(&self) -> PathBuf {
        self.root.join("dm.csv")
    }

    pub fn dm_txt(&self) -> PathBuf {
        self.root.join("dm.txt")
    }

    pub fn diagnostic(&self, op: &str, run_id: &str) -> PathBuf {
        self.root.join(format!("diag_{op}_{run_id}.csv"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.json")
    }

    pub fn config_copy(&self) -> PathBuf {
        self.root.join("config.json")
    }
}

/// Errors with [`CliError::MissingArtifact`] when `path` does not exist.
pub fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact { path: path.to_path_buf(), stage })
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, stage: &'static str) -> Result<T> {
    require(path, stage)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Forecast records as CSV text (header included).
pub fn forecast_csv(results: &[&ForecastResult]) -> String {
    let mut out = FORECAST_HEADER.join(",");
    out.push('\n');
    for r in results {
        for rec in &r.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.section,
                r.model,
                r.spec,
                rec.quarter,
                opt(rec.actual),
                rec.forecast,
                opt(rec.lower),
                opt(rec.upper),
                rec.fallback.as_deref().unwrap_or(""),
                opt(rec.sigma),
            ));
        }
    }
    out
}

/// Parses forecast CSV text into one result per `(section, model, spec)`
/// in first-seen order. The trailing `sigma` column is optional.
pub fn parse_forecast_csv(text: &str, origin: &Path) -> Result<Vec<ForecastResult>> {
    let bad = |row: usize, m: String| CliError::Data(format!("{}:{row}: {m}", origin.display()));
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 9 || header.iter().zip(FORECAST_HEADER.iter()).any(|(a, b)| a != b) {
        return Err(bad(1, format!("expected header `{}`", FORECAST_HEADER[..9].join(","))));
    }
    let mut out: Vec<ForecastResult> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let num = |j: usize| -> Result<Option<f64>> {
            match rec.get(j).unwrap_or("").trim() {
                "" => Ok(None),
                s => s.parse::<f64>().map(Some).map_err(|e| bad(row, format!("{}: {e}", FORECAST_HEADER[j]))),
            }
        };
        let quarter: Quarter = rec.get(3).unwrap_or("").parse().map_err(|e| bad(row, format!("{e}")))?;
        let forecast = num(5)?.ok_or_else(|| bad(row, "empty forecast".into()))?;
        let fallback = rec.get(8).filter(|s| !s.is_empty()).map(str::to_string);
        let record = ForecastRecord {
            quarter,
            actual: num(4)?,
            forecast,
            lower: num(6)?,
            upper: num(7)?,
            sigma: num(9)?,
            fallback,
        };
        let (section, model, spec) = (&rec[0], &rec[1], &rec[2]);
        match out.iter_mut().find(|r| r.section == section && r.model == model && r.spec == spec) {
            Some(r) => r.records.push(record),
            None => out.push(ForecastResult {
                section: section.to_string(),
                model: model.to_string(),
                spec: spec.to_string(),
                records: vec![record],
            }),
        }
    }
    Ok(out)
}

/// Reads every `*.csv` under the forecast directory in file-name order.
pub fn read_forecast_dir(dir: &Path) -> Result<Vec<ForecastResult>> {
    require(dir, "forecast")?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::MissingArtifact { path: dir.join("*.csv"), stage: "forecast" });
    }
    let mut out = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(|e| CliError::io(&f, e))?;
        out.extend(parse_forecast_csv(&text, &f)?);
    }
    Ok(out)
}

/// Writes rows of already formatted fields as CSV.
pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(path, &bytes)
}
