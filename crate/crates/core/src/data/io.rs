//! CSV/JSON persistence for panels, catalogs, taxonomies and monthly inputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prep::CatalogRow;
use super::{DataError, ImputationReport, Panel, Quarter, Result, Series, SeriesKey, SeriesKind};

const PANEL_HEADER: [&str; 4] = ["kind", "code", "quarter", "value"];
const CATALOG_HEADER: [&str; 4] = ["division", "section", "title", "description"];
const MONTHLY_HEADER: [&str; 4] = ["kind", "code", "month", "value"];

/// JSON sidecar written next to a preprocessed panel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelMeta {
    pub base: Option<Quarter>,
    pub cci_adjusted: bool,
    pub catalog_rows_retained: usize,
    pub catalog_rows_excluded: usize,
    pub sections_excluded: Vec<String>,
    pub imputation: BTreeMap<String, ImputationReport>,
    pub rejected: BTreeMap<String, String>,
}

fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(DataError::Schema {
            row: 1,
            column: "header".into(),
            message: format!("expected `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn schema(row: usize, column: &str, message: impl Into<String>) -> DataError {
    DataError::Schema {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Reads a long-format panel (`kind,code,quarter,value`). Absent rows are
/// missing observations; the axis spans the earliest to latest quarter seen.
pub fn load_panel(path: impl AsRef<Path>) -> Result<Panel> {
    parse_panel_csv(File::open(path)?)
}

pub fn parse_panel_csv<R: Read>(reader: R) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, &PANEL_HEADER)?;
    let mut cells: BTreeMap<SeriesKey, BTreeMap<Quarter, f64>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != 4 {
            return Err(schema(row, "*", format!("expected 4 fields, found {}", rec.len())));
        }
        let kind: SeriesKind = rec[0]
            .parse()
            .map_err(|_| schema(row, "kind", format!("unknown kind `{}`", &rec[0])))?;
        let key = SeriesKey::new(kind, rec[1].trim())
            .map_err(|e| schema(row, "code", e.to_string()))?;
        let quarter: Quarter = rec[2]
            .parse()
            .map_err(|_| schema(row, "quarter", format!("invalid quarter `{}`", &rec[2])))?;
        let value: f64 = rec[3]
            .trim()
            .parse()
            .map_err(|_| schema(row, "value", format!("invalid number `{}`", &rec[3])))?;
        if !value.is_finite() {
            return Err(schema(row, "value", "value must be finite"));
        }
        let entry = cells.entry(key.clone()).or_default();
        if entry.insert(quarter, value).is_some() {
            return Err(DataError::DuplicateKey(format!("{key} at {quarter}")));
        }
    }
    let mut all: Vec<Quarter> = cells.values().flat_map(|m| m.keys().copied()).collect();
    all.sort();
    all.dedup();
    let (first, last) = match (all.first(), all.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(DataError::EmptyInput("panel file has no rows".into())),
    };
    for w in all.windows(2) {
        if w[0].distance_to(w[1]) != 1 {
            return Err(DataError::NonContiguousAxis {
                after: w[0],
                before: w[1],
            });
        }
    }
    let len = (first.distance_to(last) + 1) as usize;
    let mut panel = Panel::new(first, len);
    for (key, obs) in cells {
        let mut values = vec![f64::NAN; len];
        for (q, v) in obs {
            values[first.distance_to(q) as usize] = v;
        }
        panel.insert(Series::new(key, first, values))?;
    }
    Ok(panel)
}

/// Writes `panel` in the long CSV schema. Non-finite cells are omitted.
pub fn save_panel(panel: &Panel, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_panel_csv(panel, file)
}

pub fn write_panel_csv<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PANEL_HEADER)?;
    for s in panel.series() {
        for (i, v) in s.values.iter().enumerate() {
            if v.is_finite() {
                w.write_record([
                    s.key.kind.as_str(),
                    s.key.code.as_str(),
                    &s.quarter_at(i).to_string(),
                    &v.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Vec<CatalogRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    check_header(rdr.headers()?, &CATALOG_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != 4 {
            return Err(schema(row, "*", format!("expected 4 fields, found {}", rec.len())));
        }
        let division = rec[0].trim().to_string();
        if division.len() != 2 || !division.bytes().all(|b| b.is_ascii_digit()) {
            return Err(schema(row, "division", "expected a two-digit division"));
        }
        let section = rec[1].trim().to_string();
        if section.len() != 6 || !section.bytes().all(|b| b.is_ascii_digit()) {
            return Err(schema(row, "section", "expected a six-digit section"));
        }
        out.push(CatalogRow {
            division,
            section,
            title: rec[2].to_string(),
            description: rec[3].to_string(),
            is_material: true,
        });
    }
    Ok(out)
}

/// One keyword per line; `#` starts a comment.
pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if !content.is_empty() {
            out.push(content.to_string());
        }
    }
    Ok(out)
}

/// A monthly input series before quarterly alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlySeries {
    pub key: SeriesKey,
    pub start_year: i32,
    pub start_month: u32,
    pub values: Vec<Option<f64>>,
}

fn parse_month(s: &str) -> Option<(i32, u32)> {
    let (y, m) = s.trim().split_once('-')?;
    let y: i32 = y.parse().ok()?;
    let m: u32 = m.parse().ok()?;
    (1..=12).contains(&m).then_some((y, m))
}

/// Reads `kind,code,month,value` rows (month as `YYYY-MM`).
pub fn load_monthly(path: impl AsRef<Path>) -> Result<Vec<MonthlySeries>> {
    let mut rdr = csv::Reader::from_path(path)?;
    check_header(rdr.headers()?, &MONTHLY_HEADER)?;
    let mut cells: BTreeMap<SeriesKey, BTreeMap<i64, f64>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let kind: SeriesKind = rec[0]
            .parse()
            .map_err(|_| schema(row, "kind", format!("unknown kind `{}`", &rec[0])))?;
        let key =
            SeriesKey::new(kind, rec[1].trim()).map_err(|e| schema(row, "code", e.to_string()))?;
        let (y, m) = parse_month(&rec[2])
            .ok_or_else(|| schema(row, "month", format!("invalid month `{}`", &rec[2])))?;
        let value: f64 = rec[3]
            .trim()
            .parse()
            .map_err(|_| schema(row, "value", format!("invalid number `{}`", &rec[3])))?;
        let ordinal = y as i64 * 12 + m as i64 - 1;
        if cells.entry(key.clone()).or_default().insert(ordinal, value).is_some() {
            return Err(DataError::DuplicateKey(format!("{key} at {}", &rec[2])));
        }
    }
    Ok(cells
        .into_iter()
        .map(|(key, obs)| {
            let first = *obs.keys().next().expect("non-empty");
            let last = *obs.keys().last().expect("non-empty");
            let mut values = vec![None; (last - first + 1) as usize];
            for (o, v) in obs {
                values[(o - first) as usize] = Some(v);
            }
            MonthlySeries {
                key,
                start_year: first.div_euclid(12) as i32,
                start_month: (first.rem_euclid(12) + 1) as u32,
                values,
            }
        })
        .collect())
}
