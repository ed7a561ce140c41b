//! Exact ARMA likelihood through a Kalman filter on the Harvey state-space
//! form, with the innovation variance scaled out.
//!
//! For `z_t = sum a_k z_{t-k} + e_t + sum b_k e_{t-k}` the state has
//! dimension `r = max(len(a), len(b) + 1)`, transition `T` with `a` in the
//! first column and ones on the superdiagonal, and disturbance loading
//! `R = (1, b_1, ..., b_{r-1})`.

use nalgebra::{DMatrix, DVector};

/// Data-independent filter quantities for a given ARMA polynomial pair.
#[derive(Debug, Clone)]
pub(crate) struct Gains {
    r: usize,
    a: Vec<f64>,
    /// Kalman gains, `n x r` row-major.
    k: Vec<f64>,
    /// Scaled innovation variances.
    pub f: Vec<f64>,
}

fn padded(v: &[f64], r: usize) -> Vec<f64> {
    let mut out = vec![0.0; r];
    out[..v.len()].copy_from_slice(v);
    out
}

/// Unconditional state covariance from `P = T P T' + R R'`.
fn initial_covariance(a: &[f64], rvec: &[f64]) -> Option<Vec<f64>> {
    let r = a.len();
    let rr = r * r;
    // Build I - T (x) T with T[i][0] = a[i], T[i][i+1] = 1.
    let t = |i: usize, j: usize| -> f64 {
        let mut v = 0.0;
        if j == 0 {
            v += a[i];
        }
        if j == i + 1 {
            v += 1.0;
        }
        v
    };
    let mut m = DMatrix::<f64>::identity(rr, rr);
    for i in 0..r {
        for j in 0..r {
            let tij = t(i, j);
            if tij == 0.0 {
                continue;
            }
            for k in 0..r {
                for l in 0..r {
                    let tkl = t(k, l);
                    if tkl != 0.0 {
                        m[(i * r + k, j * r + l)] -= tij * tkl;
                    }
                }
            }
        }
    }
    let rhs = DVector::from_fn(rr, |idx, _| rvec[idx / r] * rvec[idx % r]);
    let sol = m.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(sol.as_slice().to_vec())
}

impl Gains {
    /// Runs the covariance recursion for `n` observations. `None` when the
    /// model is not stationary enough for an unconditional start or an
    /// innovation variance collapses.
    pub(crate) fn new(ar: &[f64], ma: &[f64], n: usize) -> Option<Gains> {
        let r = ar.len().max(ma.len() + 1);
        let a = padded(ar, r);
        let mut rvec = vec![1.0];
        rvec.extend(padded(ma, r - 1));
        let q: Vec<f64> = (0..r * r).map(|idx| rvec[idx / r] * rvec[idx % r]).collect();
        let mut p = initial_covariance(&a, &rvec)?;

        let mut k = vec![0.0; n * r];
        let mut f = vec![0.0; n];
        let mut tp = vec![0.0; r * r];
        for t in 0..n {
            let ft = p[0];
            if !(ft > 1e-12) || !ft.is_finite() {
                return None;
            }
            f[t] = ft;
            // TP
            for i in 0..r {
                for j in 0..r {
                    let mut v = a[i] * p[j];
                    if i + 1 < r {
                        v += p[(i + 1) * r + j];
                    }
                    tp[i * r + j] = v;
                }
            }
            let kt = &mut k[t * r..(t + 1) * r];
            for i in 0..r {
                kt[i] = tp[i * r] / ft;
            }
            // P <- TPT' + RR' - K K' F
            for i in 0..r {
                for j in 0..r {
                    let mut v = a[j] * tp[i * r];
                    if j + 1 < r {
                        v += tp[i * r + j + 1];
                    }
                    p[i * r + j] = v + q[i * r + j] - kt[i] * kt[j] * ft;
                }
            }
        }
        Some(Gains { r, a, k, f })
    }

    /// Innovations of `y` and the one-step prediction of the observation
    /// following it.
    pub(crate) fn filter(&self, y: &[f64]) -> (Vec<f64>, f64) {
        let r = self.r;
        let mut state = vec![0.0; r];
        let mut next = vec![0.0; r];
        let mut v = Vec::with_capacity(y.len());
        for (t, &yt) in y.iter().enumerate() {
            let vt = yt - state[0];
            v.push(vt);
            let kt = &self.k[t * r..(t + 1) * r];
            for i in 0..r {
                let mut s = self.a[i] * state[0] + kt[i] * vt;
                if i + 1 < r {
                    s += state[i + 1];
                }
                next[i] = s;
            }
            std::mem::swap(&mut state, &mut next);
        }
        (v, state[0])
    }
}
