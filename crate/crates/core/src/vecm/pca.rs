//! Principal components by eigen-decomposition of the sample covariance.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{Result, VecmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub means: Vec<f64>,
    /// Column scales applied after centering (all ones unless standardized).
    pub scales: Vec<f64>,
    /// Component directions, one vector per component.
    pub loadings: Vec<Vec<f64>>,
    /// Variance along each component, descending.
    pub explained_variance: Vec<f64>,
    /// Fewer than the requested components had non-negligible variance.
    pub rank_deficient: bool,
}

/// Fits up to `k` components to `rows` (observations by variables). With
/// `standardize`, columns are scaled to unit sample variance first;
/// constant columns keep scale one.
pub fn pca_fit(rows: &[Vec<f64>], k: usize, standardize: bool) -> Result<PcaModel> {
    let n = rows.len();
    if n < 2 {
        return Err(VecmError::TooShort { len: n, needed: 2 });
    }
    let m = rows[0].len();
    if m == 0 || rows.iter().any(|r| r.len() != m || r.iter().any(|v| !v.is_finite())) {
        return Err(VecmError::InvalidInput("PCA rows must be finite and rectangular".into()));
    }
    let means: Vec<f64> = (0..m)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let scales: Vec<f64> = (0..m)
        .map(|j| {
            if !standardize {
                return 1.0;
            }
            let v = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / (n - 1) as f64;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let x = DMatrix::from_fn(n, m, |i, j| (rows[i][j] - means[j]) / scales[j]);
    let cov = (x.transpose() * &x) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut loadings = Vec::new();
    let mut explained = Vec::new();
    let mut rank_deficient = false;
    for &i in order.iter().take(k) {
        let lambda = eig.eigenvalues[i];
        if !(lambda > 1e-10 * top) {
            rank_deficient = true;
            break;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        // Sign convention: the largest-magnitude entry is positive.
        let (_, pivot) = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (j, &x)| if x.abs() > acc.1.abs() { (j, x) } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        loadings.push(v);
        explained.push(lambda);
    }
    if k > m {
        rank_deficient = true;
    }
    if loadings.is_empty() {
        return Err(VecmError::NearSingular);
    }
    Ok(PcaModel {
        means,
        scales,
        loadings,
        explained_variance: explained,
        rank_deficient,
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.loadings.len()
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        self.loadings
            .iter()
            .map(|l| {
                l.iter()
                    .zip(row)
                    .zip(self.means.iter().zip(&self.scales))
                    .map(|((w, x), (m, s))| w * (x - m) / s)
                    .sum()
            })
            .collect()
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }

    /// Maps scores back to the (centered, scaled) variable space.
    pub fn reconstruct_centered(&self, scores: &[f64]) -> Vec<f64> {
        let m = self.means.len();
        let mut out = vec![0.0; m];
        for (s, l) in scores.iter().zip(&self.loadings) {
            for (o, w) in out.iter_mut().zip(l) {
                *o += s * w;
            }
        }
        out
    }
}

pub fn pca_transform(model: &PcaModel, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    model.transform(rows)
}
