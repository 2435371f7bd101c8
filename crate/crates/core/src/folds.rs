//! Deterministic stratified K-fold assignment and cross-fitted prediction.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbt::Regressor;
use crate::matrix::Matrix;
use crate::seed::{rng_for, rng_for_idx};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    folds: Vec<usize>,
    k: usize,
    seed: u64,
    strata: String,
}

impl FoldAssignment {
    pub fn fold_of(&self, row: usize) -> usize {
        self.folds[row]
    }

    pub fn folds(&self) -> &[usize] {
        &self.folds
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_rows(&self) -> usize {
        self.folds.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&r| self.folds[r] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&r| self.folds[r] != fold).collect()
    }
}

/// Shuffle rows within each stratum (streams keyed by the stratum label),
/// then deal them round-robin to folds through a single seeded cursor. Every
/// fold is non-empty and, within each stratum, fold sizes differ by at most 1.
pub fn stratified_kfold(strata: &[u64], k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = strata.len();
    if k < 2 {
        return Err(Error::config("k must be >= 2"));
    }
    if k > n {
        return Err(Error::config(format!("k = {k} exceeds {n} rows")));
    }
    let mut by_stratum: std::collections::BTreeMap<u64, Vec<usize>> = std::collections::BTreeMap::new();
    for (row, &s) in strata.iter().enumerate() {
        by_stratum.entry(s).or_default().push(row);
    }
    let mut folds = vec![0usize; n];
    let mut cursor = rng_for(seed, "kfold-offset").random_range(0..k);
    for (label, rows) in by_stratum {
        let mut rows = rows;
        rows.shuffle(&mut rng_for_idx(seed, "kfold-stratum", label));
        for row in rows {
            folds[row] = cursor;
            cursor = (cursor + 1) % k;
        }
    }
    Ok(FoldAssignment {
        folds,
        k,
        seed,
        strata: format!("{} strata", strata.iter().collect::<std::collections::BTreeSet<_>>().len()),
    })
}

/// Combined stratification key for arm-by-outcome stratified folds.
pub fn arm_outcome_strata(arms: &[u8], outcomes: &[u8]) -> Vec<u64> {
    arms.iter()
        .zip(outcomes)
        .map(|(&a, &y)| u64::from(a) * 2 + u64::from(y))
        .collect()
}

/// Outer folds plus the training-row lists they induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedFoldPlan {
    outer: FoldAssignment,
    training_rows: Vec<Vec<usize>>,
}

impl NestedFoldPlan {
    pub fn new(outer: FoldAssignment) -> Self {
        let training_rows = (0..outer.k()).map(|f| outer.train_rows(f)).collect();
        Self { outer, training_rows }
    }

    pub fn outer(&self) -> &FoldAssignment {
        &self.outer
    }

    pub fn training_rows(&self, fold: usize) -> &[usize] {
        &self.training_rows[fold]
    }
}

/// Out-of-fold predictions: row i is scored by the model trained with fold(i)
/// held out. Returns the predictions and the K fitted models.
pub fn cross_fit_predict<M, F>(
    x: &Matrix,
    y: &[f64],
    folds: &FoldAssignment,
    fit: F,
) -> Result<(Vec<f64>, Vec<M>)>
where
    M: Regressor,
    F: Fn(&Matrix, &[f64], usize) -> Result<M> + Sync,
{
    if folds.n_rows() != x.n_rows() || y.len() != x.n_rows() {
        return Err(Error::data("fold assignment does not cover the rows"));
    }
    let per_fold: Vec<Result<(M, Vec<usize>, Vec<f64>)>> = (0..folds.k())
        .into_par_iter()
        .map(|f| {
            let train = folds.train_rows(f);
            if train.is_empty() {
                return Err(Error::degenerate(format!("fold {f} has no training rows")));
            }
            let x_train = x.select_rows(&train);
            let y_train: Vec<f64> = train.iter().map(|&r| y[r]).collect();
            let model = fit(&x_train, &y_train, f)?;
            let test = folds.test_rows(f);
            let preds = model.predict_matrix(&x.select_rows(&test))?;
            Ok((model, test, preds))
        })
        .collect();

    let mut oof = vec![f64::NAN; x.n_rows()];
    let mut models = Vec::with_capacity(folds.k());
    for item in per_fold {
        let (model, test, preds) = item?;
        for (row, pred) in test.iter().zip(preds) {
            oof[*row] = pred;
        }
        models.push(model);
    }
    debug_assert!(oof.iter().all(|v| !v.is_nan()));
    Ok((oof, models))
}
