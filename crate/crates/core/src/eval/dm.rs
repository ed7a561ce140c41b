use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{EvalError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub dbar: f64,
    pub statistic: f64,
    pub pvalue: f64,
    pub n: usize,
    pub nw_lag: usize,
    pub hln_applied: bool,
}

/// Two-sided test of equal squared-error loss. `d_t = e_a² − e_b²`, so a
/// negative statistic favors `errors_a`. Long-run variance is Newey–West
/// (Bartlett) at lag `h − 1`, scaled by the Harvey–Leybourne–Newbold
/// factor, against Student t with `n − 1` degrees of freedom.
pub fn dm_test(errors_a: &[f64], errors_b: &[f64], h: usize) -> Result<DmResult> {
    if errors_a.len() != errors_b.len() {
        return Err(EvalError::LengthMismatch(errors_a.len(), errors_b.len()));
    }
    let n = errors_a.len();
    if n < 10 {
        return Err(EvalError::TooShort { need: 10, got: n });
    }
    if errors_a.iter().chain(errors_b).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let h = h.max(1);
    let d: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a * a - b * b).collect();
    let nf = n as f64;
    let dbar = d.iter().sum::<f64>() / nf;
    let autocov = |lag: usize| -> f64 { (lag..n).map(|t| (d[t] - dbar) * (d[t - lag] - dbar)).sum::<f64>() / nf };
    let gamma0 = autocov(0);
    let scale = d.iter().map(|v| v * v).sum::<f64>() / nf;
    if gamma0 <= 1e-24 * scale || gamma0 == 0.0 {
        return Err(EvalError::DegenerateVariance);
    }
    let lag = (h - 1).min(n - 1);
    let lrv = gamma0 + 2.0 * (1..=lag).map(|l| (1.0 - l as f64 / (lag as f64 + 1.0)) * autocov(l)).sum::<f64>();
    let hf = h as f64;
    let hln = ((nf + 1.0 - 2.0 * hf + hf * (hf - 1.0) / nf) / nf).sqrt();
    let statistic = hln * dbar / (lrv / nf).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 1.0).expect("positive degrees of freedom");
    let pvalue = (2.0 * (1.0 - t.cdf(statistic.abs()))).clamp(0.0, 1.0);
    Ok(DmResult { dbar, statistic, pvalue, n, nw_lag: lag, hln_applied: true })
}

/// `***`, `**`, `*` at 1%, 5%, 10%.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}
