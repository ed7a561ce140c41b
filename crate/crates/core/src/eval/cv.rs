use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::data::Quarter;
use crate::nn::rng;

/// Fold assignment of training rows (indices into the caller's row list).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: Vec<Vec<usize>>,
}

impl CvPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Rows outside fold `i`, ascending.
    pub fn training_rows(&self, i: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        rows.sort_unstable();
        rows
    }
}

/// Sorts rows by quarter and deals them round-robin into `k` folds starting
/// at a seeded offset, so every fold spans the full period.
pub fn stratified_cv(quarters: &[Quarter], k: usize, seed: u64) -> Result<CvPlan> {
    if k == 0 || quarters.len() < k {
        return Err(EvalError::TooFewRows { rows: quarters.len(), k });
    }
    let mut order: Vec<usize> = (0..quarters.len()).collect();
    order.sort_by_key(|&i| (quarters[i], i));
    let offset = rng(seed).gen_range(0..k);
    let mut folds = vec![Vec::new(); k];
    for (pos, row) in order.into_iter().enumerate() {
        folds[(pos + offset) % k].push(row);
    }
    Ok(CvPlan { folds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub candidate: usize,
    pub fold: usize,
    /// `None` when the candidate failed on this fold.
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult<C> {
    pub best: C,
    pub best_index: usize,
    /// Mean held-out RMSE per candidate; infinite if any fold failed.
    pub mean_scores: Vec<f64>,
    pub table: Vec<CvRow>,
}

/// Scores every candidate by mean held-out RMSE across the folds of `plan`.
/// `fit_predict(candidate, train_rows, valid_rows)` returns
/// `(actual, predicted)` for the validation rows. Ties go to the smaller
/// `capacity`, then to the lexicographically smaller JSON form.
pub fn grid_search<C, F, K>(space: &[C], plan: &CvPlan, capacity: K, mut fit_predict: F) -> Result<GridResult<C>>
where
    C: Clone + Serialize,
    K: Fn(&C) -> usize,
    F: FnMut(&C, &[usize], &[usize]) -> std::result::Result<(Vec<f64>, Vec<f64>), String>,
{
    if space.is_empty() {
        return Err(EvalError::EmptySpace);
    }
    let mut table = Vec::with_capacity(space.len() * plan.k());
    let mut mean_scores = Vec::with_capacity(space.len());
    for (ci, cand) in space.iter().enumerate() {
        let mut total = 0.0;
        for (fi, valid) in plan.folds.iter().enumerate() {
            let train = plan.training_rows(fi);
            let rmse = fit_predict(cand, &train, valid)
                .ok()
                .and_then(|(a, p)| super::metrics(&a, &p).ok())
                .map(|m| m.rmse);
            total += rmse.unwrap_or(f64::INFINITY);
            table.push(CvRow { candidate: ci, fold: fi, rmse });
        }
        mean_scores.push(total / plan.k() as f64);
    }
    let key = |i: usize| serde_json::to_string(&space[i]).unwrap_or_default();
    let best_index = (0..space.len())
        .min_by(|&a, &b| {
            mean_scores[a]
                .total_cmp(&mean_scores[b])
                .then_with(|| capacity(&space[a]).cmp(&capacity(&space[b])))
                .then_with(|| key(a).cmp(&key(b)))
                .then(Ordering::Equal)
        })
        .expect("non-empty space");
    Ok(GridResult { best: space[best_index].clone(), best_index, mean_scores, table })
}
