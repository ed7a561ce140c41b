//! Regression with seasonal ARIMA errors, estimated by exact maximum
//! likelihood, and a rolling one-step walk-forward with persistence
//! fallback.
//!
//! The target and every exogenous column are differenced by
//! `(1-L)^d (1-L^s)^D`; the differenced target minus `beta' x` follows a
//! zero-mean ARMA with polynomials `phi(L) Phi(L^s)` and
//! `theta(L) Theta(L^s)`. The innovation variance and `beta` are
//! concentrated out of the likelihood (the latter by GLS), leaving only the
//! ARMA coefficients to the simplex search.

mod kalman;
pub mod poly;

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Transform;
use crate::optim::{nelder_mead, NelderMeadOptions};
use kalman::Gains;
pub use poly::differencing_coefficients;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SarimaxError {
    #[error("series of length {len} too short (need more than {needed})")]
    TooShort { len: usize, needed: usize },
    #[error("differenced window has no variation")]
    Degenerate,
    #[error("likelihood optimization did not converge")]
    ConvergenceFailure,
    #[error("parameters are not from a converged fit")]
    NotConverged,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, SarimaxError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SarimaxOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub seasonal_p: usize,
    pub seasonal_d: usize,
    pub seasonal_q: usize,
    pub s: usize,
}

impl Default for SarimaxOrder {
    fn default() -> Self {
        Self::new((1, 1, 1), (1, 1, 1), 4)
    }
}

impl SarimaxOrder {
    pub fn new(pdq: (usize, usize, usize), seasonal: (usize, usize, usize), s: usize) -> Self {
        Self {
            p: pdq.0,
            d: pdq.1,
            q: pdq.2,
            seasonal_p: seasonal.0,
            seasonal_d: seasonal.1,
            seasonal_q: seasonal.2,
            s,
        }
    }

    /// Observations consumed by differencing.
    pub fn diff_len(&self) -> usize {
        self.d + self.seasonal_d * self.s
    }

    pub fn n_arma(&self) -> usize {
        self.p + self.q + self.seasonal_p + self.seasonal_q
    }

    /// Smallest admissible window length minus one.
    pub fn min_window(&self) -> usize {
        self.diff_len() + self.p + self.q + (self.seasonal_p + self.seasonal_q) * self.s
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(SarimaxError::InvalidInput("season length must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarimaxParams {
    pub order: SarimaxOrder,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub seasonal_phi: Vec<f64>,
    pub seasonal_theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub converged: bool,
    pub loglik: f64,
    /// Exogenous design was ill-conditioned and a ridge term was added.
    pub ridge: bool,
    pub iterations: usize,
}

impl SarimaxParams {
    fn ar_poly(&self) -> Vec<f64> {
        poly::seasonal_ar(&self.phi, &self.seasonal_phi, self.order.s)
    }

    fn ma_poly(&self) -> Vec<f64> {
        poly::seasonal_ma(&self.theta, &self.seasonal_theta, self.order.s)
    }
}

/// Applies `(1-L)^d (1-L^s)^D`; output is shorter by `d + D*s`.
pub fn difference(values: &[f64], d: usize, seasonal_d: usize, s: usize) -> Result<Vec<f64>> {
    let c = differencing_coefficients(d, seasonal_d, s);
    let m = c.len();
    if values.len() <= m {
        return Err(SarimaxError::TooShort {
            len: values.len(),
            needed: m,
        });
    }
    Ok((m..values.len())
        .map(|t| values[t] - c.iter().enumerate().map(|(k, ck)| ck * values[t - 1 - k]).sum::<f64>())
        .collect())
}

/// Inverse of [`difference`] given the first `d + D*s` original values.
pub fn integrate(diffed: &[f64], initial: &[f64], d: usize, seasonal_d: usize, s: usize) -> Vec<f64> {
    let c = differencing_coefficients(d, seasonal_d, s);
    assert_eq!(initial.len(), c.len(), "need d + D*s initial values");
    let mut out = initial.to_vec();
    for &w in diffed {
        let t = out.len();
        let carry: f64 = c.iter().enumerate().map(|(k, ck)| ck * out[t - 1 - k]).sum();
        out.push(w + carry);
    }
    out
}

/// Differenced target and exogenous columns of one window.
struct Prepared {
    w: Vec<f64>,
    xw: Vec<Vec<f64>>,
}

fn prepare(values: &[f64], exog: &[Vec<f64>], order: &SarimaxOrder) -> Result<Prepared> {
    order.validate()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SarimaxError::InvalidInput("non-finite target value".into()));
    }
    let k = exog.first().map_or(0, |r| r.len());
    if k > 0 && exog.len() != values.len() {
        return Err(SarimaxError::InvalidInput(format!(
            "{} exogenous rows for {} observations",
            exog.len(),
            values.len()
        )));
    }
    if exog.iter().any(|r| r.len() != k || r.iter().any(|v| !v.is_finite())) {
        return Err(SarimaxError::InvalidInput("ragged or non-finite exogenous rows".into()));
    }
    let needed = order.min_window();
    if values.len() <= needed {
        return Err(SarimaxError::TooShort {
            len: values.len(),
            needed,
        });
    }
    let w = difference(values, order.d, order.seasonal_d, order.s)?;
    let xw = (0..k)
        .map(|j| {
            let col: Vec<f64> = exog.iter().map(|r| r[j]).collect();
            difference(&col, order.d, order.seasonal_d, order.s)
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
    if var.sqrt() <= 1e-12 * scale {
        return Err(SarimaxError::Degenerate);
    }
    Ok(Prepared { w, xw })
}

struct Evaluation {
    loglik: f64,
    beta: Vec<f64>,
    sigma2: f64,
    ridge: bool,
}

/// Generalized least squares for `beta` given innovations of the target
/// and of each exogenous column under shared gains.
fn gls(vw: &[f64], vx: &[Vec<f64>], f: &[f64]) -> (Vec<f64>, bool) {
    let k = vx.len();
    if k == 0 {
        return (Vec::new(), false);
    }
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for t in 0..vw.len() {
        let wt = 1.0 / f[t];
        for i in 0..k {
            b[i] += wt * vx[i][t] * vw[t];
            for j in 0..=i {
                a[(i, j)] += wt * vx[i][t] * vx[j][t];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            a[(j, i)] = a[(i, j)];
        }
    }
    let diag: Vec<f64> = (0..k).map(|i| a[(i, i)]).collect();
    let scale = DMatrix::from_fn(k, k, |i, j| {
        let d = (diag[i] * diag[j]).sqrt();
        if d > 0.0 {
            a[(i, j)] / d
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(scale).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let ridge = !(lo > 1e-10 * hi) || diag.iter().any(|&d| !(d > 0.0));
    if ridge {
        let lambda = 1e-6 * (diag.iter().sum::<f64>() / k as f64).max(1e-12);
        for i in 0..k {
            a[(i, i)] += lambda;
        }
    }
    let beta = a
        .cholesky()
        .map(|c| c.solve(&b))
        .map(|x| x.as_slice().to_vec())
        .unwrap_or_else(|| vec![0.0; k]);
    (beta, ridge)
}

fn unpack(u: &[f64], order: &SarimaxOrder) -> [Vec<f64>; 4] {
    let (p, q, sp) = (order.p, order.q, order.seasonal_p);
    [
        poly::constrain_ar(&u[..p]),
        poly::constrain_ma(&u[p..p + q]),
        poly::constrain_ar(&u[p + q..p + q + sp]),
        poly::constrain_ma(&u[p + q + sp..]),
    ]
}

fn evaluate(u: &[f64], data: &Prepared, order: &SarimaxOrder) -> Option<Evaluation> {
    let [phi, theta, sphi, stheta] = unpack(u, order);
    let ar = poly::seasonal_ar(&phi, &sphi, order.s);
    let ma = poly::seasonal_ma(&theta, &stheta, order.s);
    let n = data.w.len();
    let gains = Gains::new(&ar, &ma, n)?;
    let (vw, _) = gains.filter(&data.w);
    let vx: Vec<Vec<f64>> = data.xw.iter().map(|x| gains.filter(x).0).collect();
    let (beta, ridge) = gls(&vw, &vx, &gains.f);
    let mut ssr = 0.0;
    for t in 0..n {
        let mut e = vw[t];
        for (b, x) in beta.iter().zip(&vx) {
            e -= b * x[t];
        }
        ssr += e * e / gains.f[t];
    }
    let sigma2 = ssr / n as f64;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return None;
    }
    let logdet: f64 = gains.f.iter().map(|f| f.ln()).sum();
    let nf = n as f64;
    let loglik = -0.5 * nf * ((2.0 * std::f64::consts::PI).ln() + 1.0 + sigma2.ln()) - 0.5 * logdet;
    Some(Evaluation {
        loglik,
        beta,
        sigma2,
        ridge,
    })
}

/// Fixed multi-start points in the unconstrained parameter space.
const STARTS: [f64; 3] = [0.0, 0.3, -0.3];

/// Maximum-likelihood fit on one window. `exog` rows align with `values`
/// and may be empty for a pure SARIMA fit.
pub fn fit(values: &[f64], exog: &[Vec<f64>], order: &SarimaxOrder) -> Result<SarimaxParams> {
    let data = prepare(values, exog, order)?;
    let opts = NelderMeadOptions {
        max_iter: 500,
        f_tol: 1e-8,
        x_tol: f64::INFINITY,
        initial_step: 0.5,
    };
    let dim = order.n_arma();
    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    for start in STARTS {
        let x0 = vec![start; dim];
        let m = nelder_mead(
            |u| evaluate(u, &data, order).map_or(f64::INFINITY, |e| -e.loglik),
            &x0,
            &opts,
        );
        if m.converged && m.f.is_finite() && best.as_ref().map_or(true, |b| m.f < b.1) {
            best = Some((m.x, m.f, m.iterations));
        }
        if dim == 0 {
            break;
        }
    }
    let (u, _, iterations) = best.ok_or(SarimaxError::ConvergenceFailure)?;
    let e = evaluate(&u, &data, order).ok_or(SarimaxError::ConvergenceFailure)?;
    let [phi, theta, seasonal_phi, seasonal_theta] = unpack(&u, order);
    Ok(SarimaxParams {
        order: *order,
        phi,
        theta,
        seasonal_phi,
        seasonal_theta,
        beta: e.beta,
        sigma2: e.sigma2,
        converged: true,
        loglik: e.loglik,
        ridge: e.ridge,
        iterations,
    })
}

/// Conditional expectation of the next level given the window and the
/// exogenous row for the forecast quarter.
pub fn forecast_one_step(
    params: &SarimaxParams,
    values: &[f64],
    exog: &[Vec<f64>],
    exog_next: &[f64],
) -> Result<f64> {
    if !params.converged {
        return Err(SarimaxError::NotConverged);
    }
    let order = &params.order;
    let k = params.beta.len();
    if exog_next.len() != k || (k > 0 && exog.len() != values.len()) {
        return Err(SarimaxError::InvalidInput("exogenous shape mismatch".into()));
    }
    let c = differencing_coefficients(order.d, order.seasonal_d, order.s);
    if values.len() <= c.len() {
        return Err(SarimaxError::TooShort {
            len: values.len(),
            needed: c.len(),
        });
    }
    let w = difference(values, order.d, order.seasonal_d, order.s)?;
    let gains = Gains::new(&params.ar_poly(), &params.ma_poly(), w.len())
        .ok_or(SarimaxError::NotConverged)?;
    let (_, mut z_hat) = gains.filter(&w);
    let mut w_hat = 0.0;
    for j in 0..k {
        let mut col: Vec<f64> = exog.iter().map(|r| r[j]).collect();
        col.push(exog_next[j]);
        let xw = difference(&col, order.d, order.seasonal_d, order.s)?;
        let (_, pred) = gains.filter(&xw[..xw.len() - 1]);
        z_hat -= params.beta[j] * pred;
        w_hat += params.beta[j] * xw[xw.len() - 1];
    }
    w_hat += z_hat;
    Ok(continuation(values, &c) + w_hat)
}

/// Next level implied by a zero differenced value.
fn continuation(values: &[f64], c: &[f64]) -> f64 {
    let n = values.len();
    c.iter().enumerate().map(|(k, ck)| ck * values[n - 1 - k]).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    #[default]
    NaivePersistence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RollingConfig {
    pub window: usize,
    pub fallback: FallbackPolicy,
}

impl Default for RollingConfig {
    fn default() -> Self {
        Self {
            window: 32,
            fallback: FallbackPolicy::NaivePersistence,
        }
    }
}

/// Why a step did not use the fitted model's forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackReason {
    /// Deliberate failure from a [`FaultInjection`] plan.
    Injected,
    ConvergenceFailure,
    TooShort,
    InvalidInput,
    /// The differenced window was constant; the forecast repeats its last
    /// differenced value through the differencing recursion.
    DegenerateWindow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollingStep {
    /// Position of the forecast quarter in the input arrays.
    pub index: usize,
    pub forecast: f64,
    pub fallback: Option<FallbackReason>,
}

/// Deterministic fit-failure injection keyed on `(seed, stream, step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultInjection {
    pub seed: u64,
    pub rate: f64,
    pub stream: String,
}

impl FaultInjection {
    pub fn fails(&self, step: usize) -> bool {
        fault_draw(self.seed, &self.stream, step) < self.rate
    }
}

/// Uniform draw in `[0, 1)` from a SplitMix64 hash of the key.
pub fn fault_draw(seed: u64, stream: &str, step: usize) -> f64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// One-step walk-forward over `targets`. `levels` are untransformed; the
/// model runs on `transform(levels)`. Exogenous row `t` must be known when
/// forecasting quarter `t` (callers pass lagged features). Forecasting one
/// position past the end of `levels` is allowed when `exog` extends there.
pub fn rolling_walk_forward(
    levels: &[f64],
    exog: &[Vec<f64>],
    transform: Transform,
    order: &SarimaxOrder,
    cfg: &RollingConfig,
    targets: Range<usize>,
    faults: Option<&FaultInjection>,
) -> Result<Vec<RollingStep>> {
    let k = exog.first().map_or(0, |r| r.len());
    if targets.start == 0 || targets.end > levels.len() + 1 {
        return Err(SarimaxError::InvalidInput("target range outside the series".into()));
    }
    if k > 0 && exog.len() < targets.end {
        return Err(SarimaxError::InvalidInput("exogenous rows do not cover the targets".into()));
    }
    let g: Vec<f64> = levels.iter().map(|&v| transform.apply(v)).collect();
    let c = differencing_coefficients(order.d, order.seasonal_d, order.s);
    let mut steps = Vec::with_capacity(targets.len());
    for tau in targets {
        let lo = tau.saturating_sub(cfg.window);
        let persistence = levels[tau - 1];
        let step = |forecast, fallback| RollingStep {
            index: tau,
            forecast,
            fallback,
        };
        if faults.is_some_and(|f| f.fails(tau)) {
            steps.push(step(persistence, Some(FallbackReason::Injected)));
            continue;
        }
        let win = &g[lo..tau];
        let (wx, next): (&[Vec<f64>], &[f64]) = if k > 0 { (&exog[lo..tau], &exog[tau]) } else { (&[], &[]) };
        let outcome = fit(win, wx, order).and_then(|p| forecast_one_step(&p, win, wx, next));
        let s = match outcome {
            Ok(f) if transform.invert(f).is_finite() => step(transform.invert(f), None),
            Ok(_) => step(persistence, Some(FallbackReason::ConvergenceFailure)),
            Err(SarimaxError::Degenerate) => {
                let w = difference(win, order.d, order.seasonal_d, order.s)?;
                let f = continuation(win, &c) + w[w.len() - 1];
                step(transform.invert(f), Some(FallbackReason::DegenerateWindow))
            }
            Err(SarimaxError::TooShort { .. }) => step(persistence, Some(FallbackReason::TooShort)),
            Err(SarimaxError::InvalidInput(_)) => step(persistence, Some(FallbackReason::InvalidInput)),
            Err(_) => step(persistence, Some(FallbackReason::ConvergenceFailure)),
        };
        steps.push(s);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests;
