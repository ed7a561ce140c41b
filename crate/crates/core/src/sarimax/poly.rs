//! Lag-polynomial helpers: differencing, stationarity transforms and
//! seasonal expansion.

/// Coefficients `c` of the differencing operator written as
/// `(1-L)^d (1-L^s)^D = 1 - sum_k c[k-1] L^k`.
pub fn differencing_coefficients(d: usize, seasonal_d: usize, s: usize) -> Vec<f64> {
    let mut poly = vec![1.0];
    for _ in 0..d {
        poly = multiply(&poly, &[1.0, -1.0]);
    }
    let mut seasonal = vec![0.0; s + 1];
    seasonal[0] = 1.0;
    seasonal[s] = -1.0;
    for _ in 0..seasonal_d {
        poly = multiply(&poly, &seasonal);
    }
    poly[1..].iter().map(|c| -c).collect()
}

/// Polynomial product, coefficients in increasing powers.
pub fn multiply(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Maps unconstrained values to the coefficients of a stationary AR
/// polynomial `1 - sum phi_k L^k` through partial autocorrelations
/// `tanh(u)` and the Durbin–Levinson recursion.
pub fn constrain_ar(u: &[f64]) -> Vec<f64> {
    let mut phi: Vec<f64> = Vec::with_capacity(u.len());
    for (k, &uk) in u.iter().enumerate() {
        let r = uk.tanh();
        let prev = phi.clone();
        for j in 0..k {
            phi[j] = prev[j] - r * prev[k - 1 - j];
        }
        phi.push(r);
    }
    phi
}

/// Inverse of [`constrain_ar`] for a stationary polynomial.
pub fn unconstrain_ar(phi: &[f64]) -> Vec<f64> {
    let mut cur = phi.to_vec();
    let mut u = vec![0.0; phi.len()];
    for k in (0..phi.len()).rev() {
        let r = cur[k].clamp(-0.999_999, 0.999_999);
        u[k] = r.atanh();
        let denom = 1.0 - r * r;
        let prev: Vec<f64> = (0..k).map(|j| (cur[j] + r * cur[k - 1 - j]) / denom).collect();
        cur = prev;
    }
    u
}

/// Invertible MA coefficients for `1 + sum theta_k L^k`.
pub fn constrain_ma(u: &[f64]) -> Vec<f64> {
    constrain_ar(u).into_iter().map(|v| -v).collect()
}

pub fn unconstrain_ma(theta: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = theta.iter().map(|v| -v).collect();
    unconstrain_ar(&neg)
}

/// Combined AR coefficients of `phi(L) Phi(L^s)`, as `a` in
/// `1 - sum a_k L^k`.
pub fn seasonal_ar(phi: &[f64], big_phi: &[f64], s: usize) -> Vec<f64> {
    let mut a = vec![1.0];
    a.extend(phi.iter().map(|v| -v));
    let mut b = vec![0.0; big_phi.len() * s + 1];
    b[0] = 1.0;
    for (k, v) in big_phi.iter().enumerate() {
        b[(k + 1) * s] = -v;
    }
    multiply(&a, &b)[1..].iter().map(|v| -v).collect()
}

/// Combined MA coefficients of `theta(L) Theta(L^s)`, as `b` in
/// `1 + sum b_k L^k`.
pub fn seasonal_ma(theta: &[f64], big_theta: &[f64], s: usize) -> Vec<f64> {
    let mut a = vec![1.0];
    a.extend_from_slice(theta);
    let mut b = vec![0.0; big_theta.len() * s + 1];
    b[0] = 1.0;
    for (k, v) in big_theta.iter().enumerate() {
        b[(k + 1) * s] = *v;
    }
    multiply(&a, &b)[1..].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Stationarity via the Schur–Cohn step-down test.
    fn is_stationary(phi: &[f64]) -> bool {
        let mut a = phi.to_vec();
        while let Some(&last) = a.last() {
            if last.abs() >= 1.0 {
                return false;
            }
            let k = a.len() - 1;
            let d = 1.0 - last * last;
            a = (0..k).map(|j| (a[j] + last * a[k - 1 - j]) / d).collect();
        }
        true
    }

    #[test]
    fn differencing_operator_coefficients() {
        assert_eq!(differencing_coefficients(1, 0, 4), vec![1.0]);
        assert_eq!(differencing_coefficients(2, 0, 4), vec![2.0, -1.0]);
        assert_eq!(differencing_coefficients(1, 1, 4), vec![1.0, 0.0, 0.0, 1.0, -1.0]);
    }

    #[test]
    fn seasonal_expansion() {
        // (1 - 0.5L)(1 - 0.3L^4) = 1 - 0.5L - 0.3L^4 + 0.15L^5
        let a = seasonal_ar(&[0.5], &[0.3], 4);
        let want = [0.5, 0.0, 0.0, 0.3, -0.15];
        for (x, y) in a.iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
        // (1 + 0.2L)(1 + 0.4L^4) = 1 + 0.2L + 0.4L^4 + 0.08L^5
        let b = seasonal_ma(&[0.2], &[0.4], 4);
        let want = [0.2, 0.0, 0.0, 0.4, 0.08];
        for (x, y) in b.iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn constrained_ar_is_stationary(u in proptest::collection::vec(-5.0f64..5.0, 1..6)) {
            prop_assert!(is_stationary(&constrain_ar(&u)));
        }

        #[test]
        fn ar_transform_round_trip(u in proptest::collection::vec(-3.0f64..3.0, 1..6)) {
            let back = unconstrain_ar(&constrain_ar(&u));
            for (a, b) in u.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
