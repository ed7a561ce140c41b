//! Seeded data-generating process for desk-scale panels with known truth.
//!
//! Randomness comes from PCG-XSH-RR 64/32 (`rand_pcg::Pcg32`, 64-bit state),
//! seeded through `SeedableRng::seed_from_u64`; normal draws use the ziggurat
//! sampler of `rand_distr::StandardNormal`. Both are platform independent, so
//! a config plus seed reproduces a panel bit for bit.
//!
//! Everything is generated in log space and exponentiated, which keeps every
//! index strictly positive:
//!
//! ```text
//! log d[j,t]   = log d[j,t-1] + drift + driver_sd * z          (PPI drivers)
//! log y[i,t]   = sum_j w[i,j] * log d[j,t-lead] + s[i,q(t)] + noise_sd * z
//! ```
//!
//! Sections and drivers are then rebased to 100 at the first quarter.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Panel, Quarter, Series, SeriesKey, SeriesKind};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

pub fn rng_from_seed(seed: u64) -> Pcg32 {
    Pcg32::seed_from_u64(seed)
}

/// Multiplicative level shock applied to section indices in `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockWindow {
    pub start: Quarter,
    pub end: Quarter,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n_sections: usize,
    pub n_ppi: usize,
    pub n_macro: usize,
    /// Number of quarters.
    pub quarters: usize,
    pub start: Quarter,
    pub seed: u64,
    /// Amplitude of the quarter-of-year pattern in log space.
    pub seasonal_amplitude: f64,
    /// Drift of the driver random walks, log points per quarter.
    pub trend_drift: f64,
    /// Idiosyncratic section noise (log space).
    pub noise_sd: f64,
    /// Driver innovation sd; defaults to `noise_sd` when absent.
    pub driver_sd: Option<f64>,
    pub shock_window: Option<ShockWindow>,
    /// `n_sections x n_ppi` loadings; default loads section `i` on driver
    /// `i mod n_ppi` with weight one.
    pub cointegration: Option<Vec<Vec<f64>>>,
    /// Quarters by which drivers lead sections.
    pub driver_lead: usize,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_sections: 5,
            n_ppi: 4,
            n_macro: 2,
            quarters: 78,
            start: Quarter::new(2007, 1).expect("valid quarter"),
            seed: 42,
            seasonal_amplitude: 0.02,
            trend_drift: 0.008,
            noise_sd: 0.01,
            driver_sd: Some(0.03),
            shock_window: None,
            cointegration: None,
            driver_lead: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_sections == 0 || self.n_ppi == 0 || self.n_macro == 0 {
            return bad("all series counts must be at least 1".into());
        }
        if self.n_sections > 9000 {
            return bad("at most 9000 sections".into());
        }
        if self.quarters < 24 {
            return bad(format!("T = {} but at least 24 quarters required", self.quarters));
        }
        if !(self.noise_sd >= 0.0) || self.driver_sd.is_some_and(|s| !(s >= 0.0)) {
            return bad("noise standard deviations must be non-negative".into());
        }
        if let Some(sh) = &self.shock_window {
            if !(sh.multiplier > 0.0) || sh.end < sh.start {
                return bad("shock window needs multiplier > 0 and start <= end".into());
            }
        }
        if let Some(w) = &self.cointegration {
            if w.len() != self.n_sections || w.iter().any(|r| r.len() != self.n_ppi) {
                return bad("cointegration weights must be n_sections x n_ppi".into());
            }
            if w.iter().flatten().any(|v| !v.is_finite()) {
                return bad("cointegration weights must be finite".into());
            }
        }
        Ok(())
    }

    pub fn section_codes(&self) -> Vec<String> {
        (0..self.n_sections).map(|i| format!("06{:04}", 1000 + i)).collect()
    }

    pub fn ppi_codes(&self) -> Vec<String> {
        (0..self.n_ppi).map(|j| format!("PPI{:03}", j + 1)).collect()
    }

    pub fn macro_codes(&self) -> Vec<String> {
        (0..self.n_macro).map(|j| format!("MACRO{:02}", j + 1)).collect()
    }

    fn weights(&self) -> Vec<Vec<f64>> {
        self.cointegration.clone().unwrap_or_else(|| {
            (0..self.n_sections)
                .map(|i| {
                    let mut row = vec![0.0; self.n_ppi];
                    row[i % self.n_ppi] = 1.0;
                    row
                })
                .collect()
        })
    }
}

/// The parameters that produced a generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub section_codes: Vec<String>,
    pub ppi_codes: Vec<String>,
    pub macro_codes: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    /// Log-space quarter effects `s[i][q-1]`.
    pub seasonal_log: Vec<[f64; 4]>,
    /// Seasonal factors in index-minus-one form:
    /// `exp(s_q) / mean_q(exp(s_q)) - 1`.
    pub seasonal_factors: Vec<[f64; 4]>,
    pub driver_lead: usize,
    /// Driver log levels including `driver_lead` pre-sample quarters.
    pub driver_log_levels: Vec<Vec<f64>>,
    pub shock_window: Option<ShockWindow>,
}

impl GroundTruth {
    /// Log level of driver `j` at panel position `t` (may be negative down to
    /// `-driver_lead`).
    pub fn driver_log(&self, j: usize, t: i64) -> f64 {
        self.driver_log_levels[j][(t + self.driver_lead as i64) as usize]
    }
}

/// Generates a section/PPI/macro panel plus the truth behind it.
pub fn generate_panel(cfg: &DgpConfig) -> Result<(Panel, GroundTruth), SynthError> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let t_len = cfg.quarters;
    let lead = cfg.driver_lead;
    let driver_sd = cfg.driver_sd.unwrap_or(cfg.noise_sd);
    let base_log = 100f64.ln();

    let normal = |rng: &mut Pcg32| -> f64 { rng.sample(StandardNormal) };

    let mut drivers = Vec::with_capacity(cfg.n_ppi);
    for _ in 0..cfg.n_ppi {
        let mut path = Vec::with_capacity(t_len + lead);
        let mut level = base_log;
        for _ in 0..t_len + lead {
            path.push(level);
            level += cfg.trend_drift + driver_sd * normal(&mut rng);
        }
        drivers.push(path);
    }
    let mut macros = Vec::with_capacity(cfg.n_macro);
    for _ in 0..cfg.n_macro {
        let mut path = Vec::with_capacity(t_len);
        let mut level = base_log;
        for _ in 0..t_len {
            path.push(level);
            level += 0.5 * cfg.trend_drift + driver_sd * normal(&mut rng);
        }
        macros.push(path);
    }
    let phases: Vec<f64> = (0..cfg.n_sections)
        .map(|_| rng.gen_range(0.0..2.0 * PI))
        .collect();
    let seasonal_log: Vec<[f64; 4]> = phases
        .iter()
        .map(|&phi| {
            let mut s = [0.0; 4];
            for (q, v) in s.iter_mut().enumerate() {
                *v = cfg.seasonal_amplitude * (2.0 * PI * q as f64 / 4.0 - phi).cos();
            }
            s
        })
        .collect();
    let seasonal_factors = seasonal_log
        .iter()
        .map(|s| {
            let m = s.iter().map(|v| v.exp()).sum::<f64>() / 4.0;
            let mut f = [0.0; 4];
            for q in 0..4 {
                f[q] = s[q].exp() / m - 1.0;
            }
            f
        })
        .collect();

    let weights = cfg.weights();
    let section_codes = cfg.section_codes();
    let mut panel = Panel::new(cfg.start, t_len);
    panel.base = Some(cfg.start);
    let quarter_of = |t: usize| cfg.start.offset(t as i64).q() as usize - 1;

    for (i, code) in section_codes.iter().enumerate() {
        let mut logs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut v = 0.0;
            for (j, w) in weights[i].iter().enumerate() {
                // driver index t - lead maps to path position t
                v += w * drivers[j][t];
            }
            v += seasonal_log[i][quarter_of(t)];
            v += cfg.noise_sd * normal(&mut rng);
            if let Some(sh) = &cfg.shock_window {
                let q = cfg.start.offset(t as i64);
                if q >= sh.start && q <= sh.end {
                    v += sh.multiplier.ln();
                }
            }
            logs.push(v);
        }
        let key = SeriesKey::new(SeriesKind::CsiSection, code.as_str()).expect("valid code");
        panel
            .insert(Series::new(key, cfg.start, rebased_exp(&logs)))
            .expect("fresh key");
    }
    for (j, code) in cfg.ppi_codes().iter().enumerate() {
        let key = SeriesKey::new(SeriesKind::Ppi, code.as_str()).expect("valid code");
        let vals = rebased_exp(&drivers[j][lead..]);
        panel
            .insert(Series::new(key, cfg.start, vals))
            .expect("fresh key");
    }
    for (j, code) in cfg.macro_codes().iter().enumerate() {
        let key = SeriesKey::new(SeriesKind::Macro, code.as_str()).expect("valid code");
        let vals = rebased_exp(&macros[j]);
        panel
            .insert(Series::new(key, cfg.start, vals))
            .expect("fresh key");
    }

    let truth = GroundTruth {
        section_codes,
        ppi_codes: cfg.ppi_codes(),
        macro_codes: cfg.macro_codes(),
        weights,
        seasonal_log,
        seasonal_factors,
        driver_lead: lead,
        driver_log_levels: drivers,
        shock_window: cfg.shock_window,
    };
    Ok((panel, truth))
}

/// `100 * exp(l_t - l_0)`, exact 100 at the first position.
fn rebased_exp(logs: &[f64]) -> Vec<f64> {
    let l0 = logs[0];
    logs.iter().map(|l| 100.0 * (l - l0).exp()).collect()
}

/// Two-variable system `y2 = beta * y1 + u`, `u` stationary AR(1), `y1` a
/// Gaussian random walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub quarters: usize,
    pub beta: f64,
    pub seed: u64,
    pub error_ar: f64,
    pub error_sd: f64,
    pub walk_sd: f64,
}

impl PairConfig {
    pub fn new(quarters: usize, beta: f64, seed: u64) -> Self {
        Self {
            quarters,
            beta,
            seed,
            error_ar: 0.5,
            error_sd: 1.0,
            walk_sd: 1.0,
        }
    }
}

/// Series keys of the generated pair, `(y1, y2)`.
pub fn pair_keys() -> (SeriesKey, SeriesKey) {
    (
        SeriesKey::new(SeriesKind::Macro, "Y1").expect("valid"),
        SeriesKey::new(SeriesKind::Macro, "Y2").expect("valid"),
    )
}

/// Generates a cointegrated pair; `(1, -beta)` annihilates `(y2, y1)`.
pub fn generate_cointegrated_pair(cfg: &PairConfig) -> Result<Panel, SynthError> {
    if cfg.quarters < 50 {
        return Err(SynthError::InvalidConfig(format!(
            "T = {} but at least 50 required",
            cfg.quarters
        )));
    }
    if !(cfg.error_ar.abs() < 1.0) || !(cfg.error_sd >= 0.0) || !(cfg.walk_sd >= 0.0) {
        return Err(SynthError::InvalidConfig(
            "need |error_ar| < 1 and non-negative standard deviations".into(),
        ));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut y1 = Vec::with_capacity(cfg.quarters);
    let mut y2 = Vec::with_capacity(cfg.quarters);
    let mut level = 100.0;
    // start u from its stationary distribution
    let mut u = cfg.error_sd / (1.0 - cfg.error_ar * cfg.error_ar).sqrt()
        * rng.sample::<f64, _>(StandardNormal);
    for _ in 0..cfg.quarters {
        level += cfg.walk_sd * rng.sample::<f64, _>(StandardNormal);
        u = cfg.error_ar * u + cfg.error_sd * rng.sample::<f64, _>(StandardNormal);
        y1.push(level);
        y2.push(cfg.beta * level + u);
    }
    let start = Quarter::new(1900, 1).expect("valid");
    let (k1, k2) = pair_keys();
    let mut p = Panel::new(start, cfg.quarters);
    p.insert(Series::new(k1, start, y1)).expect("fresh");
    p.insert(Series::new(k2, start, y2)).expect("fresh");
    Ok(p)
}
