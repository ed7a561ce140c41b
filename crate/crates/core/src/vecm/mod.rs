//! Rank-one vector error correction models estimated by Johansen's
//! reduced-rank regression, with PCA compression of large driver blocks.
//!
//! ```text
//! dY_t = alpha beta' Y_{t-1} + sum_i Gamma_i dY_{t-i} + Phi D_t + e_t
//! ```
//!
//! `D_t` holds three centered quarter dummies when the seasonal indicator
//! is enabled; there are no other deterministic terms.

mod pca;

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Quarter;

pub use pca::{pca_fit, pca_transform, PcaModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VecmError {
    #[error("{len} observations, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("system moment matrix is near singular")]
    NearSingular,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, VecmError>;

/// Minimum number of quarters for a system fit.
pub const MIN_QUARTERS: usize = 30;

/// 5% critical value of the maximum-eigenvalue statistic for testing zero
/// against one cointegrating relation in a two-variable system without
/// deterministic terms.
pub const MAX_EIGEN_CRITICAL_5PCT_DIM2: f64 = 11.2246;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VecmConfig {
    pub diff_lags: usize,
    /// Only rank one is supported.
    pub rank: usize,
    pub horizon: usize,
    pub n_components: usize,
    pub seasonal_indicator: bool,
    /// Refit the driver PCA for every section instead of once per run.
    pub per_section_pca: bool,
}

impl Default for VecmConfig {
    fn default() -> Self {
        Self {
            diff_lags: 1,
            rank: 1,
            horizon: 10,
            n_components: 10,
            seasonal_indicator: true,
            per_section_pca: false,
        }
    }
}

impl VecmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank != 1 {
            return Err(VecmError::InvalidInput(format!("rank {} unsupported, only 1", self.rank)));
        }
        if self.horizon == 0 || self.n_components == 0 {
            return Err(VecmError::InvalidInput("horizon and n_components must be positive".into()));
        }
        Ok(())
    }
}

type Mat = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecmParams {
    pub alpha: Vec<f64>,
    /// Cointegrating vector normalized so the first element is one.
    pub beta_coint: Vec<f64>,
    /// `alpha beta'`.
    pub pi: Mat,
    /// Short-run matrices, one per differenced lag.
    pub gamma: Vec<Mat>,
    /// Seasonal dummy coefficients, `m x 3` (empty rows without dummies).
    pub exog_coefs: Mat,
    pub resid_cov: Mat,
    /// All canonical eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub n_obs: usize,
    pub seasonal_indicator: bool,
}

impl VecmParams {
    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// `-n ln(1 - lambda_1)`, the likelihood-ratio statistic for
    /// `alpha = 0` against a rank-one alternative.
    pub fn max_eigen_statistic(&self) -> f64 {
        -(self.n_obs as f64) * (1.0 - self.eigenvalues[0]).ln()
    }
}

/// Centered quarter dummies for quarters 1..3.
pub fn seasonal_dummies(q: Quarter) -> [f64; 3] {
    let mut d = [-0.25; 3];
    if q.q() <= 3 {
        d[q.q() as usize - 1] += 1.0;
    }
    d
}

fn to_rows(m: &DMatrix<f64>) -> Mat {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Residuals of regressing each column of `z` on `x` (no-op when `x` has no
/// columns).
fn partial_out(z: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() == 0 {
        return Ok(z.clone());
    }
    let xtx = x.transpose() * x;
    let chol = xtx.cholesky().ok_or(VecmError::NearSingular)?;
    let b = chol.solve(&(x.transpose() * z));
    Ok(z - x * b)
}

fn well_conditioned(s: &DMatrix<f64>) -> bool {
    let d: Vec<f64> = s.diagonal().iter().copied().collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return false;
    }
    let scaled = DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| s[(i, j)] / (d[i] * d[j]).sqrt());
    let e = SymmetricEigen::new(scaled).eigenvalues;
    let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = e.iter().copied().fold(0.0, f64::max);
    lo > 1e-10 * hi
}

/// Johansen reduced-rank regression on level rows `y` (quarters by
/// variables, first column the target). `start` is the quarter of `y[0]`.
pub fn johansen_fit(y: &[Vec<f64>], start: Quarter, cfg: &VecmConfig) -> Result<VecmParams> {
    cfg.validate()?;
    let t_len = y.len();
    if t_len < MIN_QUARTERS {
        return Err(VecmError::TooShort { len: t_len, needed: MIN_QUARTERS });
    }
    let m = y[0].len();
    if m < 2 {
        return Err(VecmError::InvalidInput("a system needs at least two variables".into()));
    }
    if y.iter().any(|r| r.len() != m || r.iter().any(|v| !v.is_finite())) {
        return Err(VecmError::InvalidInput("levels must be finite and rectangular".into()));
    }
    let p = cfg.diff_lags;
    let n = t_len - p - 1;
    let n_dum = if cfg.seasonal_indicator { 3 } else { 0 };
    let k2 = m * p + n_dum;
    if n <= k2 + m + 2 {
        return Err(VecmError::TooShort { len: t_len, needed: k2 + m + p + 4 });
    }
    let dy = |t: usize, j: usize| y[t][j] - y[t - 1][j];
    let z0 = DMatrix::from_fn(n, m, |i, j| dy(i + p + 1, j));
    let z1 = DMatrix::from_fn(n, m, |i, j| y[i + p][j]);
    let z2 = DMatrix::from_fn(n, k2, |i, c| {
        let t = i + p + 1;
        if c < m * p {
            let (lag, j) = (c / m + 1, c % m);
            dy(t - lag, j)
        } else {
            seasonal_dummies(start.offset(t as i64))[c - m * p]
        }
    });

    let r0 = partial_out(&z0, &z2)?;
    let r1 = partial_out(&z1, &z2)?;
    let nf = n as f64;
    let s00 = r0.transpose() * &r0 / nf;
    let s11 = r1.transpose() * &r1 / nf;
    let s01 = r0.transpose() * &r1 / nf;
    if !well_conditioned(&s00) || !well_conditioned(&s11) {
        return Err(VecmError::NearSingular);
    }
    let c00 = s00.clone().cholesky().ok_or(VecmError::NearSingular)?;
    let c11 = s11.clone().cholesky().ok_or(VecmError::NearSingular)?;
    let l = c11.l();
    let nmat = s01.transpose() * c00.solve(&s01);
    let a1 = l.solve_lower_triangular(&nmat).ok_or(VecmError::NearSingular)?;
    let a = l.solve_lower_triangular(&a1.transpose()).ok_or(VecmError::NearSingular)?;
    let a = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].clamp(0.0, 1.0 - 1e-15)).collect();
    let v = eig.eigenvectors.column(order[0]).into_owned();
    let beta = l
        .transpose()
        .solve_upper_triangular(&v)
        .ok_or(VecmError::NearSingular)?;
    let norm = beta.norm();
    if !(beta[0].abs() > 1e-10 * norm) {
        return Err(VecmError::NearSingular);
    }
    let b0 = beta[0];
    let beta: DVector<f64> = beta / b0;
    let bsb = (beta.transpose() * &s11 * &beta)[(0, 0)];
    let alpha: DVector<f64> = &s01 * &beta / bsb;

    // Short-run and dummy coefficients given alpha, beta.
    let lhs = &z0 - &z1 * &beta * alpha.transpose();
    let (coefs, resid) = if k2 > 0 {
        let chol = (z2.transpose() * &z2).cholesky().ok_or(VecmError::NearSingular)?;
        let c = chol.solve(&(z2.transpose() * &lhs));
        let resid = &lhs - &z2 * &c;
        (c, resid)
    } else {
        (DMatrix::zeros(0, m), lhs)
    };
    let gamma = (0..p)
        .map(|lag| {
            (0..m)
                .map(|i| (0..m).map(|j| coefs[(lag * m + j, i)]).collect())
                .collect()
        })
        .collect();
    let exog_coefs = (0..m)
        .map(|i| (0..n_dum).map(|d| coefs[(m * p + d, i)]).collect())
        .collect();
    let resid_cov = resid.transpose() * &resid / nf;
    let pi = &alpha * beta.transpose();

    Ok(VecmParams {
        alpha: alpha.iter().copied().collect(),
        beta_coint: beta.iter().copied().collect(),
        pi: to_rows(&pi),
        gamma,
        exog_coefs,
        resid_cov: to_rows(&resid_cov),
        eigenvalues,
        n_obs: n,
        seasonal_indicator: cfg.seasonal_indicator,
    })
}

/// The lagged levels a forecast starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct VecmState {
    /// The last `diff_lags + 1` level rows, oldest first.
    pub levels: Vec<Vec<f64>>,
    /// Quarter of the first forecast.
    pub next_quarter: Quarter,
}

impl VecmState {
    pub fn from_history(y: &[Vec<f64>], diff_lags: usize, next_quarter: Quarter) -> Result<Self> {
        if y.len() < diff_lags + 1 {
            return Err(VecmError::TooShort { len: y.len(), needed: diff_lags + 1 });
        }
        Ok(Self {
            levels: y[y.len() - diff_lags - 1..].to_vec(),
            next_quarter,
        })
    }
}

/// Iterates the error-correction recursion `horizon` steps and returns the
/// level path of every system variable.
pub fn vecm_forecast(params: &VecmParams, state: &VecmState, horizon: usize) -> Vec<Vec<f64>> {
    let m = params.dim();
    let p = params.gamma.len();
    assert_eq!(state.levels.len(), p + 1, "state must hold diff_lags + 1 rows");
    let mut hist = state.levels.clone();
    let mut out = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let last = &hist[hist.len() - 1];
        let mut dy = vec![0.0; m];
        for i in 0..m {
            let mut v: f64 = (0..m).map(|j| params.pi[i][j] * last[j]).sum();
            for (lag, g) in params.gamma.iter().enumerate() {
                let a = &hist[hist.len() - 1 - lag];
                let b = &hist[hist.len() - 2 - lag];
                v += (0..m).map(|j| g[i][j] * (a[j] - b[j])).sum::<f64>();
            }
            if params.seasonal_indicator {
                let d = seasonal_dummies(state.next_quarter.offset(h as i64));
                v += (0..3).map(|k| params.exog_coefs[i][k] * d[k]).sum::<f64>();
            }
            dy[i] = v;
        }
        let next: Vec<f64> = last.iter().zip(&dy).map(|(a, b)| a + b).collect();
        out.push(next.clone());
        hist.push(next);
        hist.remove(0);
    }
    out
}

/// One block forecast of a walk-forward run.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockForecast {
    pub origin: usize,
    /// `(index, level path row)` for each forecast position.
    pub path: Vec<(usize, Vec<f64>)>,
    pub params: Option<VecmParams>,
    pub error: Option<VecmError>,
}

/// Refits on all rows before each block origin and forecasts `horizon`
/// steps, covering `targets`. Failed fits leave the block's forecast empty
/// so the caller can substitute persistence.
pub fn block_walk_forward(
    y: &[Vec<f64>],
    start: Quarter,
    cfg: &VecmConfig,
    targets: Range<usize>,
) -> Vec<BlockForecast> {
    let mut out = Vec::new();
    let mut origin = targets.start;
    while origin < targets.end {
        let h = cfg.horizon.min(targets.end - origin);
        let hist = &y[..origin.min(y.len())];
        let fitted = johansen_fit(hist, start, cfg).and_then(|p| {
            let state = VecmState::from_history(hist, cfg.diff_lags, start.offset(origin as i64))?;
            Ok((vecm_forecast(&p, &state, h), p))
        });
        out.push(match fitted {
            Ok((path, p)) => BlockForecast {
                origin,
                path: path.into_iter().enumerate().map(|(i, r)| (origin + i, r)).collect(),
                params: Some(p),
                error: None,
            },
            Err(e) => BlockForecast { origin, path: Vec::new(), params: None, error: Some(e) },
        });
        origin += h;
    }
    out
}
