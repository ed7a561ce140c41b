//! Leakage-safe feature matrices for a target section.
//!
//! Column names are namespaced: `y:<stat>` for target-derived columns,
//! `x:ppi:<cluster>:<stat>` and `x:macro:<code>:<stat>` for exogenous ones,
//! `q1..q4` for calendar dummies. `<stat>` is one of `level`, `lag{l}`,
//! `yoy`, `dq`, `ma{k}`, `sd{k}`, computed on the transformed series.

mod screen;
mod transforms;

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{Panel, Quarter, Series, SeriesKey, SeriesKind};

pub use screen::{
    is_exogenous, pearson, score_columns, screen_features, select_top, spearman,
    univariate_ssr, ColumnScore,
};
pub use transforms::{
    difference, lag_features, log_transform, ppi_cluster_aggregate, qoq_change,
    quarter_dummies, rolling_stats, yoy_change, Column, PpiCluster, Transform,
};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("non-positive value {value} in {key} at {quarter}")]
    NonPositiveValue {
        key: String,
        quarter: Quarter,
        value: f64,
    },
    #[error("cluster {0} has no members")]
    EmptyCluster(String),
    #[error("series {0} not in panel")]
    MissingSeries(String),
    #[error("no complete feature row on or before {as_of}")]
    InsufficientHistory { as_of: Quarter },
    #[error("as-of quarter {0} outside the panel axis")]
    AsOfOutsideAxis(Quarter),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("invalid feature spec: {0}")]
    InvalidSpec(String),
    #[error("malformed feature file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    /// Log the target and PPI series. Macro series are never logged.
    pub use_log: bool,
    pub lag_set: Vec<usize>,
    /// Adds `yoy` and `dq` columns.
    pub yoy: bool,
    pub rolling_windows: Vec<usize>,
    pub quarter_dummies: bool,
    /// Sequence length available to models.
    pub lookback_l: usize,
    pub augmented: bool,
    /// Empty means one singleton cluster per PPI series in the panel.
    pub ppi_clusters: Vec<PpiCluster>,
    /// Empty means every macro series in the panel.
    pub macro_keys: Vec<SeriesKey>,
    /// Keep the union of the top `m` exogenous columns per screening metric.
    pub screening: Option<usize>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            use_log: true,
            lag_set: (1..=12).collect(),
            yoy: true,
            rolling_windows: vec![4, 8],
            quarter_dummies: true,
            lookback_l: 12,
            augmented: false,
            ppi_clusters: Vec::new(),
            macro_keys: Vec::new(),
            screening: None,
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lag_set.contains(&0) {
            return Err(FeatureError::InvalidSpec("lags must be positive".into()));
        }
        if self.rolling_windows.iter().any(|&k| k < 2) {
            return Err(FeatureError::InvalidSpec("rolling windows must be at least 2".into()));
        }
        if self.lookback_l == 0 {
            return Err(FeatureError::InvalidSpec("lookback must be positive".into()));
        }
        if self.screening == Some(0) {
            return Err(FeatureError::InvalidSpec("screening top_m must be positive".into()));
        }
        Ok(())
    }

    pub fn transform(&self) -> Transform {
        Transform { log: self.use_log }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    /// Quarters of history needed before the first complete row.
    pub fn warmup(&self) -> usize {
        let lag = self.lag_set.iter().copied().max().unwrap_or(0);
        let win = self.rolling_windows.iter().map(|k| k - 1).max().unwrap_or(0);
        let yoy = if self.yoy { 4 } else { 0 };
        lag.max(win).max(yoy)
    }

    /// PPI clusters used by the augmented specification on `panel`.
    pub fn resolved_clusters(&self, panel: &Panel) -> Vec<PpiCluster> {
        if !self.ppi_clusters.is_empty() {
            return self.ppi_clusters.clone();
        }
        panel
            .keys_of(SeriesKind::Ppi)
            .into_iter()
            .map(|k| PpiCluster {
                name: k.code.clone(),
                members: vec![k],
            })
            .collect()
    }

    pub fn resolved_macros(&self, panel: &Panel) -> Vec<SeriesKey> {
        if !self.macro_keys.is_empty() {
            return self.macro_keys.clone();
        }
        panel.keys_of(SeriesKind::Macro)
    }
}

/// Complete feature rows for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub target_key: SeriesKey,
    pub as_of: Quarter,
    pub spec_hash: String,
    pub transform: Transform,
    pub column_names: Vec<String>,
    pub quarters: Vec<Quarter>,
    /// Untransformed target level at each row's quarter.
    pub target: Vec<f64>,
    /// Row-major feature values.
    pub data: Vec<Vec<f64>>,
    pub first_valid: Quarter,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.quarters.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(self.data.iter().map(|r| r[j]).collect())
    }

    pub fn row_of(&self, quarter: Quarter) -> Option<usize> {
        self.quarters.binary_search(&quarter).ok()
    }

    /// Projection onto `names`, in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeatureMatrix> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| FeatureError::UnknownColumn(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureMatrix {
            column_names: names.to_vec(),
            data: self
                .data
                .iter()
                .map(|r| idx.iter().map(|&j| r[j]).collect())
                .collect(),
            ..self.clone()
        })
    }

    /// Rows whose quarter lies in `[from, to]`.
    pub fn rows_between(&self, from: Quarter, to: Quarter) -> std::ops::Range<usize> {
        let lo = self.quarters.partition_point(|q| *q < from);
        let hi = self.quarters.partition_point(|q| *q <= to);
        lo..hi.max(lo)
    }

    /// CSV with a `#` provenance line recording `as_of` and the spec hash.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# target={} as_of={} spec_hash={} log={}",
            self.target_key, self.as_of, self.spec_hash, self.transform.log
        )?;
        write!(w, "quarter,target")?;
        for n in &self.column_names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for (i, q) in self.quarters.iter().enumerate() {
            write!(w, "{q},{}", self.target[i])?;
            for v in &self.data[i] {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Parses the output of [`FeatureMatrix::write_csv`]. Values round-trip
    /// exactly.
    pub fn read_csv<R: std::io::BufRead>(r: R) -> Result<FeatureMatrix> {
        let bad = |m: String| FeatureError::Format(m);
        let mut lines = r.lines();
        let mut next = || lines.next().transpose().map_err(FeatureError::Io);
        let meta = next()?.ok_or_else(|| bad("empty file".into()))?;
        let field = |name: &str| -> Result<String> {
            meta.split_whitespace()
                .find_map(|t| t.strip_prefix(name).and_then(|v| v.strip_prefix('=')))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("missing {name} in header comment")))
        };
        let target_key: SeriesKey = field("target")?.parse().map_err(|e| bad(format!("{e}")))?;
        let as_of: Quarter = field("as_of")?.parse().map_err(|e| bad(format!("{e}")))?;
        let spec_hash = field("spec_hash")?;
        let log = field("log")?.parse::<bool>().map_err(|e| bad(e.to_string()))?;
        let header = next()?.ok_or_else(|| bad("missing header".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("quarter") || cols.next() != Some("target") {
            return Err(bad("header must start with quarter,target".into()));
        }
        let column_names: Vec<String> = cols.map(str::to_string).collect();
        let (mut quarters, mut target, mut data) = (Vec::new(), Vec::new(), Vec::new());
        while let Some(line) = next()? {
            let mut f = line.split(',');
            let num = |v: Option<&str>| -> Result<f64> {
                v.ok_or_else(|| bad(format!("short row: {line}")))?
                    .parse::<f64>()
                    .map_err(|e| bad(format!("{e} in row: {line}")))
            };
            let q: Quarter = f
                .next()
                .ok_or_else(|| bad("empty row".into()))?
                .parse()
                .map_err(|e| bad(format!("{e}")))?;
            target.push(num(f.next())?);
            let row = (0..column_names.len()).map(|_| num(f.next())).collect::<Result<Vec<_>>>()?;
            if f.next().is_some() {
                return Err(bad(format!("long row: {line}")));
            }
            quarters.push(q);
            data.push(row);
        }
        let first_valid = *quarters.first().ok_or(FeatureError::InsufficientHistory { as_of })?;
        Ok(FeatureMatrix {
            target_key,
            as_of,
            spec_hash,
            transform: Transform { log },
            column_names,
            quarters,
            target,
            data,
            first_valid,
        })
    }
}

fn series_columns(prefix: &str, s: &Series, spec: &FeatureSpec) -> Result<Vec<Column>> {
    let mut cols = vec![Column::new("level", s.start, s.values.clone())];
    cols.extend(lag_features(s, &spec.lag_set));
    if spec.yoy {
        cols.push(yoy_change(s));
        cols.push(qoq_change(s));
    }
    for &k in &spec.rolling_windows {
        cols.extend(rolling_stats(s, k)?);
    }
    for c in &mut cols {
        c.name = format!("{prefix}:{}", c.name);
    }
    Ok(cols)
}

/// All columns of the specification over the whole panel axis.
pub fn build_columns(panel: &Panel, target_key: &SeriesKey, spec: &FeatureSpec) -> Result<Vec<Column>> {
    spec.validate()?;
    let g = spec.transform();
    let target = panel
        .get(target_key)
        .ok_or_else(|| FeatureError::MissingSeries(target_key.to_string()))?;
    let mut cols = series_columns("y", &g.apply_series(target)?, spec)?;
    if spec.quarter_dummies {
        cols.extend(quarter_dummies(panel.start(), panel.len()));
    }
    if spec.augmented {
        for cluster in spec.resolved_clusters(panel) {
            let agg = ppi_cluster_aggregate(panel, &cluster)?;
            let prefix = format!("x:ppi:{}", cluster.name);
            cols.extend(series_columns(&prefix, &g.apply_series(&agg)?, spec)?);
        }
        for key in spec.resolved_macros(panel) {
            let s = panel
                .get(&key)
                .ok_or_else(|| FeatureError::MissingSeries(key.to_string()))?;
            cols.extend(series_columns(&format!("x:macro:{}", key.code), s, spec)?);
        }
    }
    Ok(cols)
}

/// Builds the matrix from data on or before `as_of`. With screening
/// configured, exogenous columns are screened against the next-quarter
/// change of the transformed target over rows whose successor is also on
/// or before `as_of`.
pub fn build_matrix(
    panel: &Panel,
    target_key: &SeriesKey,
    spec: &FeatureSpec,
    as_of: Quarter,
) -> Result<FeatureMatrix> {
    if panel.index_of(as_of).is_none() {
        return Err(FeatureError::AsOfOutsideAxis(as_of));
    }
    let p = panel.truncate_after(as_of);
    let cols = build_columns(&p, target_key, spec)?;
    let target = p.get(target_key).expect("checked in build_columns");

    let mut quarters = Vec::new();
    let mut levels = Vec::new();
    let mut data = Vec::new();
    for t in 0..p.len() {
        if !target.values[t].is_finite() || cols.iter().any(|c| !c.values[t].is_finite()) {
            continue;
        }
        quarters.push(p.quarter_at(t));
        levels.push(target.values[t]);
        data.push(cols.iter().map(|c| c.values[t]).collect());
    }
    let Some(&first_valid) = quarters.first() else {
        return Err(FeatureError::InsufficientHistory { as_of });
    };
    let m = FeatureMatrix {
        target_key: target_key.clone(),
        as_of,
        spec_hash: spec.hash(),
        transform: spec.transform(),
        column_names: cols.into_iter().map(|c| c.name).collect(),
        quarters,
        target: levels,
        data,
        first_valid,
    };
    match spec.screening {
        Some(top_m) => {
            let y = next_change_target(&m, target, spec.transform());
            Ok(screen_features(&m, &y, top_m))
        }
        None => Ok(m),
    }
}

/// `g(y[t+1]) - g(y[t])` for each row, NaN where `t+1` is unavailable.
pub fn next_change_target(m: &FeatureMatrix, target: &Series, g: Transform) -> Vec<f64> {
    m.quarters
        .iter()
        .zip(&m.target)
        .map(|(q, &y)| match target.value_at(q.succ()) {
            Some(next) if next.is_finite() => g.apply(next) - g.apply(y),
            _ => f64::NAN,
        })
        .collect()
}
