//! Quarterly panel data model.
//!
//! A [`Panel`] is a gap-free quarterly axis plus a keyed collection of
//! [`Series`] aligned to it. Missing observations are stored as `NaN` with the
//! parallel `observed` mask set to `false`; imputed points carry a finite
//! value but stay unobserved.

mod io;
mod prep;

pub use io::{
    load_catalog, load_monthly, load_panel, load_taxonomy, parse_panel_csv, save_panel,
    write_panel_csv, MonthlySeries, PanelMeta,
};
pub use prep::{
    align_monthly_to_quarterly, cci_adjust, exclude_services, impute_locf, partition_services,
    rebase, train_test_split, CatalogRow, ImputationReport, MAX_IMPUTED_RUN,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid quarter `{0}`")]
    InvalidQuarter(String),
    #[error("invalid series key {kind}:{code}: {reason}")]
    InvalidKey {
        kind: String,
        code: String,
        reason: String,
    },
    #[error("series {key} is not observed at base quarter {base}")]
    MissingBase { key: SeriesKey, base: Quarter },
    #[error("series {key} has non-positive value {value} at base quarter {base}")]
    NonPositiveBase {
        key: SeriesKey,
        base: Quarter,
        value: f64,
    },
    #[error("series axes differ: {0}")]
    MisalignedAxis(String),
    #[error("city cost index is missing or non-positive at {0}")]
    NonPositiveCci(Quarter),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("series too short: {0}")]
    TooShort(String),
    #[error("schema error at row {row}, column `{column}`: {message}")]
    Schema {
        row: usize,
        column: String,
        message: String,
    },
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("axis is not contiguous: no data between {after} and {before}")]
    NonContiguousAxis { after: Quarter, before: Quarter },
    #[error("series {key} has {run} consecutive missing quarters ending at {end} (cap {cap})")]
    GapTooLong {
        key: SeriesKey,
        run: usize,
        end: Quarter,
        cap: usize,
    },
    #[error("series {key} has no observation before {first}")]
    LeadingGap { key: SeriesKey, first: Quarter },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Calendar quarter. Ordering is chronological.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter {
    year: i32,
    q: u8,
}

impl Quarter {
    pub fn new(year: i32, q: u8) -> Result<Self> {
        if !(1..=4).contains(&q) {
            return Err(DataError::InvalidQuarter(format!("{year}Q{q}")));
        }
        Ok(Self { year, q })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    /// Quarter of the year, 1..=4.
    pub fn q(self) -> u8 {
        self.q
    }

    /// Absolute quarter count since year 0; consecutive quarters differ by one.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.q as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        let year = ordinal.div_euclid(4) as i32;
        let q = ordinal.rem_euclid(4) as u8 + 1;
        Self { year, q }
    }

    pub fn offset(self, quarters: i64) -> Self {
        Self::from_ordinal(self.ordinal() + quarters)
    }

    pub fn succ(self) -> Self {
        self.offset(1)
    }

    pub fn pred(self) -> Self {
        self.offset(-1)
    }

    /// Number of quarters from `self` to `other` (negative when `other` is earlier).
    pub fn distance_to(self, other: Quarter) -> i64 {
        other.ordinal() - self.ordinal()
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.q)
    }
}

impl FromStr for Quarter {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || DataError::InvalidQuarter(s.to_string());
        let (year, q) = s.trim().split_once(['Q', 'q']).ok_or_else(bad)?;
        if year.len() != 4 || q.len() != 1 {
            return Err(bad());
        }
        let year: i32 = year.parse().map_err(|_| bad())?;
        let q: u8 = q.parse().map_err(|_| bad())?;
        Quarter::new(year, q).map_err(|_| bad())
    }
}

impl Serialize for Quarter {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quarter {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    CsiSection,
    Ppi,
    Macro,
    CityCostIndex,
}

impl SeriesKind {
    /// Token used in the `kind` column of panel CSV files.
    pub fn as_str(self) -> &'static str {
        match self {
            SeriesKind::CsiSection => "csi",
            SeriesKind::Ppi => "ppi",
            SeriesKind::Macro => "macro",
            SeriesKind::CityCostIndex => "cci",
        }
    }
}

impl FromStr for SeriesKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csi" => Ok(SeriesKind::CsiSection),
            "ppi" => Ok(SeriesKind::Ppi),
            "macro" => Ok(SeriesKind::Macro),
            "cci" => Ok(SeriesKind::CityCostIndex),
            other => Err(DataError::InvalidKey {
                kind: other.to_string(),
                code: String::new(),
                reason: "unknown kind".into(),
            }),
        }
    }
}

/// Identity of a panel series. CSI section codes are six decimal digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub kind: SeriesKind,
    pub code: String,
}

impl SeriesKey {
    pub fn new(kind: SeriesKind, code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        let invalid = |reason: &str| DataError::InvalidKey {
            kind: kind.as_str().to_string(),
            code: code.clone(),
            reason: reason.to_string(),
        };
        if code.is_empty() {
            return Err(invalid("empty code"));
        }
        if code.contains([',', '\n', '"']) {
            return Err(invalid("code contains a reserved character"));
        }
        if kind == SeriesKind::CsiSection
            && (code.len() != 6 || !code.bytes().all(|b| b.is_ascii_digit()))
        {
            return Err(invalid("CSI section codes are exactly six digits"));
        }
        Ok(Self { kind, code })
    }

    pub fn csi(code: &str) -> Result<Self> {
        Self::new(SeriesKind::CsiSection, code)
    }

    pub fn ppi(code: &str) -> Result<Self> {
        Self::new(SeriesKind::Ppi, code)
    }

    pub fn macro_series(code: &str) -> Result<Self> {
        Self::new(SeriesKind::Macro, code)
    }

    /// Two-digit division of a CSI section, `None` for other kinds.
    pub fn division(&self) -> Option<&str> {
        (self.kind == SeriesKind::CsiSection).then(|| &self.code[..2])
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.code)
    }
}

impl FromStr for SeriesKey {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, code) = s.split_once(':').ok_or_else(|| DataError::InvalidKey {
            kind: s.to_string(),
            code: String::new(),
            reason: "expected kind:code".into(),
        })?;
        SeriesKey::new(kind.parse()?, code)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub key: SeriesKey,
    pub start: Quarter,
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

impl Series {
    /// Fully observed series.
    pub fn new(key: SeriesKey, start: Quarter, values: Vec<f64>) -> Self {
        let observed = values.iter().map(|v| v.is_finite()).collect();
        Self {
            key,
            start,
            values,
            observed,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> Quarter {
        self.start.offset(self.values.len() as i64 - 1)
    }

    pub fn quarter_at(&self, index: usize) -> Quarter {
        self.start.offset(index as i64)
    }

    pub fn index_of(&self, quarter: Quarter) -> Option<usize> {
        let d = self.start.distance_to(quarter);
        (d >= 0 && (d as usize) < self.values.len()).then_some(d as usize)
    }

    /// Finite value at `quarter`, whether observed or imputed.
    pub fn value_at(&self, quarter: Quarter) -> Option<f64> {
        self.index_of(quarter)
            .map(|i| self.values[i])
            .filter(|v| v.is_finite())
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Elements `range` as a new series starting at the range's first quarter.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Series {
        Series {
            key: self.key.clone(),
            start: self.quarter_at(range.start),
            values: self.values[range.clone()].to_vec(),
            observed: self.observed[range].to_vec(),
        }
    }

    pub(crate) fn check_invariants(&self) -> Result<()> {
        if self.values.len() != self.observed.len() {
            return Err(DataError::MisalignedAxis(format!(
                "{}: {} values but {} mask entries",
                self.key,
                self.values.len(),
                self.observed.len()
            )));
        }
        for (i, (&v, &obs)) in self.values.iter().zip(&self.observed).enumerate() {
            if obs && !v.is_finite() {
                return Err(DataError::InvalidArgument(format!(
                    "{} has a non-finite observed value at {}",
                    self.key,
                    self.quarter_at(i)
                )));
            }
        }
        Ok(())
    }
}

/// Time-aligned collection of quarterly series on a gap-free axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    start: Quarter,
    len: usize,
    series: BTreeMap<SeriesKey, Series>,
    pub base: Option<Quarter>,
}

impl Panel {
    pub fn new(start: Quarter, len: usize) -> Self {
        Self {
            start,
            len,
            series: BTreeMap::new(),
            base: None,
        }
    }

    pub fn start(&self) -> Quarter {
        self.start
    }

    pub fn end(&self) -> Quarter {
        self.start.offset(self.len as i64 - 1)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn quarters(&self) -> impl Iterator<Item = Quarter> + '_ {
        (0..self.len).map(|i| self.start.offset(i as i64))
    }

    pub fn quarter_at(&self, index: usize) -> Quarter {
        self.start.offset(index as i64)
    }

    pub fn index_of(&self, quarter: Quarter) -> Option<usize> {
        let d = self.start.distance_to(quarter);
        (d >= 0 && (d as usize) < self.len).then_some(d as usize)
    }

    pub fn insert(&mut self, series: Series) -> Result<()> {
        series.check_invariants()?;
        if series.start != self.start || series.len() != self.len {
            return Err(DataError::MisalignedAxis(format!(
                "{} spans {}..{} but the panel axis is {}..{}",
                series.key,
                series.start,
                series.end(),
                self.start,
                self.end()
            )));
        }
        if self.series.contains_key(&series.key) {
            return Err(DataError::DuplicateKey(series.key.to_string()));
        }
        self.series.insert(series.key.clone(), series);
        Ok(())
    }

    /// Replaces an existing series (same key, same axis).
    pub fn replace(&mut self, series: Series) -> Result<()> {
        self.series.remove(&series.key);
        self.insert(series)
    }

    pub fn remove(&mut self, key: &SeriesKey) -> Option<Series> {
        self.series.remove(key)
    }

    pub fn get(&self, key: &SeriesKey) -> Option<&Series> {
        self.series.get(key)
    }

    pub fn contains(&self, key: &SeriesKey) -> bool {
        self.series.contains_key(key)
    }

    pub fn series(&self) -> impl Iterator<Item = &Series> {
        self.series.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = &SeriesKey> {
        self.series.keys()
    }

    pub fn keys_of(&self, kind: SeriesKind) -> Vec<SeriesKey> {
        self.series
            .keys()
            .filter(|k| k.kind == kind)
            .cloned()
            .collect()
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    /// Sub-panel over axis positions `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Panel {
        assert!(range.end <= self.len, "slice beyond panel axis");
        let mut out = Panel::new(self.quarter_at(range.start), range.len());
        out.base = self.base;
        for (k, s) in &self.series {
            out.series.insert(k.clone(), s.slice(range.clone()));
        }
        out
    }

    /// Panel truncated after `last` (inclusive).
    pub fn truncate_after(&self, last: Quarter) -> Panel {
        let end = (self.start.distance_to(last) + 1).clamp(0, self.len as i64) as usize;
        self.slice(0..end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_ordering_and_arithmetic() {
        let a = Quarter::new(2020, 4).unwrap();
        let b = Quarter::new(2021, 1).unwrap();
        assert!(a < b);
        assert_eq!(a.succ(), b);
        assert_eq!(b.pred(), a);
        assert_eq!(a.offset(4), Quarter::new(2021, 4).unwrap());
        assert_eq!(b.offset(-5), Quarter::new(2019, 4).unwrap());
        assert!(Quarter::new(2020, 5).is_err());
        assert!(Quarter::new(2020, 0).is_err());
    }

    #[test]
    fn quarter_parse_round_trip() {
        let q: Quarter = "2007Q1".parse().unwrap();
        assert_eq!(q.to_string(), "2007Q1");
        assert!("2020Q5".parse::<Quarter>().is_err());
        assert!("20Q1".parse::<Quarter>().is_err());
        assert!("2020-1".parse::<Quarter>().is_err());
    }

    #[test]
    fn csi_keys_need_six_digits() {
        let k = SeriesKey::csi("061623").unwrap();
        assert_eq!(k.division(), Some("06"));
        assert!(SeriesKey::csi("06162").is_err());
        assert!(SeriesKey::csi("06162a").is_err());
        assert_eq!(SeriesKey::ppi("WPU081").unwrap().division(), None);
    }

    #[test]
    fn panel_rejects_duplicates_and_misaligned_series() {
        let start = Quarter::new(2010, 1).unwrap();
        let mut p = Panel::new(start, 3);
        let key = SeriesKey::csi("030000").unwrap();
        p.insert(Series::new(key.clone(), start, vec![1.0, 2.0, 3.0]))
            .unwrap();
        assert!(matches!(
            p.insert(Series::new(key.clone(), start, vec![1.0, 2.0, 3.0])),
            Err(DataError::DuplicateKey(_))
        ));
        let other = SeriesKey::csi("030001").unwrap();
        assert!(matches!(
            p.insert(Series::new(other, start, vec![1.0, 2.0])),
            Err(DataError::MisalignedAxis(_))
        ));
    }

    #[test]
    fn truncate_keeps_prefix() {
        let start = Quarter::new(2010, 1).unwrap();
        let mut p = Panel::new(start, 6);
        let key = SeriesKey::csi("030000").unwrap();
        p.insert(Series::new(key.clone(), start, (0..6).map(f64::from).collect()))
            .unwrap();
        let t = p.truncate_after(start.offset(2));
        assert_eq!(t.len(), 3);
        assert_eq!(t.get(&key).unwrap().values, vec![0.0, 1.0, 2.0]);
    }
}
