//! Three-stage X-learner for binary comparisons plus the multi-arm
//! outcome-model bank.
//!
//! Stage 1 fits one outcome model per arm and produces cross-fitted
//! predictions for every patient under every arm. Stage 2 regresses
//! pseudo-outcomes (imputed individual effects) on features, separately for
//! treated and control rows. Stage 3 blends the two effect models with the
//! constant randomization propensity:
//!
//! ```text
//! tau(x) = e * tau_control(x) + (1 - e) * tau_treated(x)
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::folds::FoldAssignment;
use crate::gbt::{GbtConfig, GbtModel};
use crate::matrix::Matrix;
use crate::seed::{derive_seed_idx, derive_seed_idx2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySource {
    Empirical,
    Specified,
}

/// Constant per-arm assignment probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propensities {
    probs: Vec<f64>,
    source: PropensitySource,
}

impl Propensities {
    pub fn specified(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::config("propensities must be non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("propensities sum to {total}, not 1")));
        }
        Ok(Self { probs, source: PropensitySource::Specified })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, arm: u8) -> f64 {
        self.probs[arm as usize]
    }

    pub fn source(&self) -> PropensitySource {
        self.source
    }
}

/// Empirical randomization probabilities: arm counts over n.
pub fn empirical_propensity(arms: &[u8], n_arms: usize) -> Propensities {
    let mut counts = vec![0usize; n_arms];
    for &a in arms {
        counts[a as usize] += 1;
    }
    let n = arms.len() as f64;
    Propensities {
        probs: counts.iter().map(|&c| c as f64 / n).collect(),
        source: PropensitySource::Empirical,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Out-of-fold predictions: arm models never score rows from their own
    /// training fold.
    CrossFitted,
    /// Full-data models score everything, mirroring in-sample reporting.
    InSample,
}

impl std::fmt::Display for FitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitMode::CrossFitted => write!(f, "cross_fitted"),
            FitMode::InSample => write!(f, "in_sample"),
        }
    }
}

/// Per-arm outcome models plus an n-by-k prediction matrix, clamped to [0, 1].
#[derive(Debug, Clone)]
pub struct OutcomeModelBank {
    models: Vec<GbtModel>,
    predictions: Matrix,
    fit_mode: FitMode,
    feature_tag: String,
}

impl OutcomeModelBank {
    /// Bank built directly from a prediction matrix (no fitted models).
    /// Useful for synthetic checks of the downstream estimators.
    pub fn from_predictions(predictions: Matrix, fit_mode: FitMode, feature_tag: &str) -> Self {
        Self {
            models: Vec::new(),
            predictions,
            fit_mode,
            feature_tag: feature_tag.to_string(),
        }
    }

    pub fn n_arms(&self) -> usize {
        if self.models.is_empty() {
            self.predictions.n_cols()
        } else {
            self.models.len()
        }
    }

    pub fn models(&self) -> &[GbtModel] {
        &self.models
    }

    /// Prediction for patient `row` under `arm`.
    pub fn prediction(&self, row: usize, arm: u8) -> f64 {
        self.predictions.get(row, arm as usize)
    }

    pub fn predictions(&self) -> &Matrix {
        &self.predictions
    }

    pub fn arm_predictions(&self, arm: u8) -> Vec<f64> {
        self.predictions.column(arm as usize)
    }

    pub fn fit_mode(&self) -> FitMode {
        self.fit_mode
    }

    pub fn feature_tag(&self) -> &str {
        &self.feature_tag
    }

    /// The same bank with predictions recomputed from the full-data models.
    pub fn to_in_sample(&self, x: &Matrix) -> Result<OutcomeModelBank> {
        let mut predictions = Matrix::zeros(x.n_rows(), self.models.len());
        for (t, model) in self.models.iter().enumerate() {
            let preds = model.predict(x)?;
            for (r, p) in preds.into_iter().enumerate() {
                predictions.set(r, t, p.clamp(0.0, 1.0));
            }
        }
        Ok(OutcomeModelBank {
            models: self.models.clone(),
            predictions,
            fit_mode: FitMode::InSample,
            feature_tag: self.feature_tag.clone(),
        })
    }
}

/// Stage 1: per-arm outcome regressions with cross-fitted predictions for
/// all patients under all arms.
///
/// Arm t's model bank entry is fit on arm-t rows only. Under
/// `FitMode::CrossFitted`, the prediction for any row in fold f comes from
/// the arm-t model trained without fold f; the retained full-data models
/// back in-sample reporting and the gap regression.
pub fn fit_outcome_models(
    x: &Matrix,
    arms: &[u8],
    outcomes: &[u8],
    n_arms: usize,
    config: &GbtConfig,
    folds: &FoldAssignment,
    fit_mode: FitMode,
    feature_tag: &str,
) -> Result<OutcomeModelBank> {
    let n = x.n_rows();
    if arms.len() != n || outcomes.len() != n || folds.n_rows() != n {
        return Err(Error::data("arms, outcomes, and folds must cover all rows"));
    }
    if x.n_cols() == 0 {
        return Err(Error::config("empty feature selection"));
    }
    let y: Vec<f64> = outcomes.iter().map(|&v| v as f64).collect();
    let mut arm_rows: Vec<Vec<usize>> = vec![Vec::new(); n_arms];
    for (row, &a) in arms.iter().enumerate() {
        arm_rows[a as usize].push(row);
    }
    for (t, rows) in arm_rows.iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::degenerate(format!("arm {t} absent from the data")));
        }
        if rows.len() < folds.k() {
            return Err(Error::degenerate(format!(
                "arm {t} has {} rows, fewer than {} folds",
                rows.len(),
                folds.k()
            )));
        }
    }

    // Full-data model per arm, kept for in-sample mode and gap analysis.
    let models: Vec<GbtModel> = (0..n_arms)
        .into_par_iter()
        .map(|t| {
            let rows = &arm_rows[t];
            let cfg = config.clone().with_seed(derive_seed_idx(config.seed, "arm-full", t as u64));
            let x_arm = x.select_rows(rows);
            let y_arm: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
            GbtModel::fit(&x_arm, &y_arm, &cfg)
        })
        .collect::<Result<_>>()?;

    let mut predictions = Matrix::zeros(n, n_arms);
    match fit_mode {
        FitMode::InSample => {
            for (t, model) in models.iter().enumerate() {
                let preds = model.predict(x)?;
                for (r, p) in preds.into_iter().enumerate() {
                    predictions.set(r, t, p.clamp(0.0, 1.0));
                }
            }
        }
        FitMode::CrossFitted => {
            let jobs: Vec<(usize, usize)> = (0..n_arms)
                .flat_map(|t| (0..folds.k()).map(move |f| (t, f)))
                .collect();
            let fold_preds: Vec<Result<(usize, Vec<usize>, Vec<f64>)>> = jobs
                .into_par_iter()
                .map(|(t, f)| {
                    let train: Vec<usize> = arm_rows[t]
                        .iter()
                        .copied()
                        .filter(|&r| folds.fold_of(r) != f)
                        .collect();
                    if train.is_empty() {
                        return Err(Error::degenerate(format!(
                            "fold {f} leaves no training rows for arm {t}"
                        )));
                    }
                    let cfg = config
                        .clone()
                        .with_seed(derive_seed_idx2(config.seed, "arm-fold", t as u64, f as u64));
                    let x_train = x.select_rows(&train);
                    let y_train: Vec<f64> = train.iter().map(|&r| y[r]).collect();
                    let model = GbtModel::fit(&x_train, &y_train, &cfg)?;
                    let test = folds.test_rows(f);
                    let preds = model.predict(&x.select_rows(&test))?;
                    Ok((t, test, preds))
                })
                .collect();
            for item in fold_preds {
                let (t, test, preds) = item?;
                for (row, p) in test.into_iter().zip(preds) {
                    predictions.set(row, t, p.clamp(0.0, 1.0));
                }
            }
        }
    }

    Ok(OutcomeModelBank {
        models,
        predictions,
        fit_mode,
        feature_tag: feature_tag.to_string(),
    })
}

/// Imputed individual treatment effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOutcomes {
    pub treated_rows: Vec<usize>,
    /// Y_i - mu_control(X_i) for each treated row.
    pub treated_values: Vec<f64>,
    pub control_rows: Vec<usize>,
    /// mu_treated(X_i) - Y_i for each control row.
    pub control_values: Vec<f64>,
}

pub fn pseudo_outcomes(
    outcomes: &[u8],
    arms: &[u8],
    bank: &OutcomeModelBank,
    treated_arm: u8,
    control_arm: u8,
) -> Result<PseudoOutcomes> {
    if treated_arm as usize >= bank.n_arms() || control_arm as usize >= bank.n_arms() {
        return Err(Error::config("bank does not cover the requested arms"));
    }
    let mut result = PseudoOutcomes {
        treated_rows: Vec::new(),
        treated_values: Vec::new(),
        control_rows: Vec::new(),
        control_values: Vec::new(),
    };
    for (row, (&arm, &y)) in arms.iter().zip(outcomes).enumerate() {
        let y = y as f64;
        if arm == treated_arm {
            result.treated_rows.push(row);
            result.treated_values.push(y - bank.prediction(row, control_arm));
        } else if arm == control_arm {
            result.control_rows.push(row);
            result.control_values.push(bank.prediction(row, treated_arm) - y);
        }
    }
    Ok(result)
}

/// Stage-2 effect regressions.
#[derive(Debug, Clone)]
pub struct CateModels {
    /// tau_treated: fit on treated rows against their pseudo-outcomes.
    pub treated: GbtModel,
    /// tau_control: fit on control rows against their pseudo-outcomes.
    pub control: GbtModel,
}

pub fn fit_cate_models(x: &Matrix, pseudo: &PseudoOutcomes, config: &GbtConfig) -> Result<CateModels> {
    if pseudo.treated_rows.len() < 2 || pseudo.control_rows.len() < 2 {
        return Err(Error::degenerate("pseudo-outcome sets need at least 2 rows each"));
    }
    let fit = |rows: &[usize], values: &[f64], label: &str| -> Result<GbtModel> {
        let cfg = config
            .clone()
            .with_seed(derive_seed_idx(config.seed, label, rows.len() as u64));
        GbtModel::fit(&x.select_rows(rows), values, &cfg)
    };
    let (treated, control) = rayon::join(
        || fit(&pseudo.treated_rows, &pseudo.treated_values, "cate-treated"),
        || fit(&pseudo.control_rows, &pseudo.control_values, "cate-control"),
    );
    Ok(CateModels { treated: treated?, control: control? })
}

/// Final per-patient CATE with its component estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateEstimate {
    pub tau: Vec<f64>,
    pub tau_control: Vec<f64>,
    pub tau_treated: Vec<f64>,
    /// Treated-arm propensity used in the blend.
    pub propensity: f64,
}

/// Blend the component estimates: tau = e * tau_control + (1-e) * tau_treated.
pub fn combine_cate(tau_control: &[f64], tau_treated: &[f64], e: f64) -> Result<CateEstimate> {
    if tau_control.len() != tau_treated.len() {
        return Err(Error::data("component estimate lengths differ"));
    }
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::config(format!("propensity {e} outside (0, 1)")));
    }
    let tau = tau_control
        .iter()
        .zip(tau_treated)
        .map(|(c, t)| e * c + (1.0 - e) * t)
        .collect();
    Ok(CateEstimate {
        tau,
        tau_control: tau_control.to_vec(),
        tau_treated: tau_treated.to_vec(),
        propensity: e,
    })
}

/// Per-patient optimality gap: best predicted outcome minus the predicted
/// outcome under the observed arm. Non-negative; zero iff the observed arm
/// attains the maximum.
pub fn optimality_gap(bank: &OutcomeModelBank, arms: &[u8]) -> Result<Vec<f64>> {
    if arms.len() != bank.predictions().n_rows() {
        return Err(Error::data("arm vector does not match bank predictions"));
    }
    Ok(arms
        .iter()
        .enumerate()
        .map(|(row, &arm)| {
            let best = (0..bank.n_arms())
                .map(|t| bank.prediction(row, t as u8))
                .fold(f64::NEG_INFINITY, f64::max);
            best - bank.prediction(row, arm)
        })
        .collect())
}

/// Everything the downstream analyses need from one binary X-learner run.
#[derive(Debug, Clone)]
pub struct XlearnerFit {
    pub bank: OutcomeModelBank,
    pub pseudo: PseudoOutcomes,
    pub models: CateModels,
    pub cate: CateEstimate,
    pub propensities: Propensities,
}

/// Run all three stages on a two-arm frame (arm 1 treated, arm 0 control).
pub fn run_xlearner(
    x: &Matrix,
    arms: &[u8],
    outcomes: &[u8],
    outcome_config: &GbtConfig,
    effect_config: &GbtConfig,
    folds: &FoldAssignment,
    fit_mode: FitMode,
    feature_tag: &str,
) -> Result<XlearnerFit> {
    let bank = fit_outcome_models(x, arms, outcomes, 2, outcome_config, folds, fit_mode, feature_tag)?;
    let pseudo = pseudo_outcomes(outcomes, arms, &bank, 1, 0)?;
    let models = fit_cate_models(x, &pseudo, effect_config)?;
    let propensities = empirical_propensity(arms, 2);
    let tau_control = models.control.predict(x)?;
    let tau_treated = models.treated.predict(x)?;
    let cate = combine_cate(&tau_control, &tau_treated, propensities.prob(1))?;
    Ok(XlearnerFit { bank, pseudo, models, cate, propensities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::folds::{arm_outcome_strata, stratified_kfold};
    use crate::seed::rng_for;
    use rand::Rng;

    #[test]
    fn empirical_propensity_matches_counts() {
        let mut arms = Vec::new();
        arms.extend(std::iter::repeat_n(0u8, 144));
        arms.extend(std::iter::repeat_n(1u8, 143));
        arms.extend(std::iter::repeat_n(2u8, 274));
        let e = empirical_propensity(&arms, 3);
        assert!((e.prob(0) - 144.0 / 561.0).abs() < 1e-15);
        assert!((e.prob(1) - 143.0 / 561.0).abs() < 1e-15);
        assert!((e.prob(2) - 274.0 / 561.0).abs() < 1e-15);
        // rounded to three decimals: 0.257, 0.255, 0.488
        assert_eq!((e.prob(0) * 1000.0).round(), 257.0);
        assert_eq!((e.prob(1) * 1000.0).round(), 255.0);
        assert_eq!((e.prob(2) * 1000.0).round(), 488.0);
        let total: f64 = e.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_arm_and_equal_arms() {
        let e = empirical_propensity(&[0, 0, 0], 1);
        assert_eq!(e.probs(), &[1.0]);
        let e = empirical_propensity(&[0, 1, 0, 1], 2);
        assert_eq!(e.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn specified_propensities_validated() {
        assert!(Propensities::specified(vec![0.3, 0.7]).is_ok());
        assert!(Propensities::specified(vec![0.3, 0.6]).is_err());
        assert!(Propensities::specified(vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn pseudo_outcome_formulas() {
        // Hand-built bank: skip fitting by constructing predictions directly.
        let x = Matrix::from_flat(2, 1, vec![0.0, 1.0]).unwrap();
        let mut predictions = Matrix::zeros(2, 2);
        predictions.set(0, 0, 0.3); // mu_0 for treated patient
        predictions.set(0, 1, 0.9);
        predictions.set(1, 0, 0.2);
        predictions.set(1, 1, 0.4); // mu_1 for control patient
        let bank = OutcomeModelBank::from_predictions(predictions, FitMode::CrossFitted, "test");
        let _ = &x;
        let pseudo = pseudo_outcomes(&[1, 0], &[1, 0], &bank, 1, 0).unwrap();
        assert_eq!(pseudo.treated_rows, vec![0]);
        assert!((pseudo.treated_values[0] - 0.7).abs() < 1e-15); // 1 - 0.3
        assert_eq!(pseudo.control_rows, vec![1]);
        assert!((pseudo.control_values[0] - 0.4).abs() < 1e-15); // 0.4 - 0
    }

    #[test]
    fn combine_is_exact_blend() {
        let est = combine_cate(&[0.2], &[0.4], 0.5).unwrap();
        assert!((est.tau[0] - 0.3).abs() < 1e-15);
        // identity when components agree, regardless of e
        let est = combine_cate(&[0.123, -0.4], &[0.123, -0.4], 417.0 / 561.0).unwrap();
        assert!((est.tau[0] - 0.123).abs() < 1e-15);
        assert!((est.tau[1] + 0.4).abs() < 1e-15);
        // e near 1 pulls toward the control-side estimate
        let est = combine_cate(&[1.0], &[0.0], 0.999999).unwrap();
        assert!((est.tau[0] - 0.999999).abs() < 1e-12);
        assert!(combine_cate(&[0.0], &[0.0], 1.0).is_err());
        assert!(combine_cate(&[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn combination_identity_holds_pointwise() {
        let mut rng = rng_for(31, "eq1");
        for _ in 0..200 {
            let n = rng.random_range(1..20);
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let e: f64 = rng.random_range(0.01..0.99);
            let est = combine_cate(&c, &t, e).unwrap();
            for i in 0..n {
                let expected = e * c[i] + (1.0 - e) * t[i];
                assert!((est.tau[i] - expected).abs() <= 1e-12);
            }
        }
    }

    fn bank_from_predictions(predictions: Matrix) -> OutcomeModelBank {
        OutcomeModelBank::from_predictions(predictions, FitMode::CrossFitted, "test")
    }

    #[test]
    fn gap_examples() {
        let mut predictions = Matrix::zeros(3, 3);
        for (r, mu) in [[0.2, 0.5, 0.4], [0.2, 0.5, 0.4], [0.3, 0.3, 0.3]].iter().enumerate() {
            for (t, &v) in mu.iter().enumerate() {
                predictions.set(r, t, v);
            }
        }
        let bank = bank_from_predictions(predictions);
        let gap = optimality_gap(&bank, &[1, 0, 2]).unwrap();
        assert_eq!(gap[0], 0.0); // observed arm is the argmax
        assert!((gap[1] - 0.3).abs() < 1e-15);
        assert_eq!(gap[2], 0.0); // all arms equal
    }

    #[test]
    fn gap_nonnegative_and_shift_invariant() {
        let mut rng = rng_for(37, "gap");
        for _ in 0..100 {
            let n = 5;
            let k = 3;
            let mut preds = Matrix::zeros(n, k);
            for r in 0..n {
                for t in 0..k {
                    preds.set(r, t, rng.random_range(0.0..1.0));
                }
            }
            let arms: Vec<u8> = (0..n).map(|_| rng.random_range(0..k) as u8).collect();
            let bank = bank_from_predictions(preds.clone());
            let gap = optimality_gap(&bank, &arms).unwrap();
            for (row, &g) in gap.iter().enumerate() {
                assert!(g >= 0.0);
                let best = (0..k).map(|t| preds.get(row, t)).fold(f64::NEG_INFINITY, f64::max);
                let is_argmax = preds.get(row, arms[row] as usize) == best;
                assert_eq!(g == 0.0, is_argmax);
            }
            // shifting every arm's prediction for one patient leaves its gap unchanged
            let mut shifted = preds.clone();
            for t in 0..k {
                shifted.set(2, t, shifted.get(2, t) + 0.17);
            }
            let gap2 = optimality_gap(&bank_from_predictions(shifted), &arms).unwrap();
            assert!((gap[2] - gap2[2]).abs() < 1e-12);
        }
    }

    /// Small but real end-to-end fit used by several tests.
    fn synthetic_binary(n: usize, seed: u64) -> (Matrix, Vec<u8>, Vec<u8>) {
        let mut rng = rng_for(seed, "xl-data");
        let p = 3;
        let mut data = Vec::with_capacity(n * p);
        for _ in 0..n * p {
            data.push(rng.random_range(-1.0..1.0f64));
        }
        let x = Matrix::from_flat(n, p, data).unwrap();
        let arms: Vec<u8> = (0..n).map(|_| u8::from(rng.random_range(0.0..1.0) < 0.5)).collect();
        let outcomes: Vec<u8> = (0..n)
            .map(|i| {
                let base = 0.4 + 0.15 * x.get(i, 0);
                let effect = if arms[i] == 1 { 0.1 } else { 0.0 };
                u8::from(rng.random_range(0.0..1.0) < (base + effect).clamp(0.01, 0.99))
            })
            .collect();
        (x, arms, outcomes)
    }

    fn small_cfg(seed: u64, n_trees: usize) -> GbtConfig {
        GbtConfig { n_trees, max_depth: 3, ..GbtConfig::outcome_model(seed) }
    }

    #[test]
    fn constant_arm_outcomes_predict_near_one() {
        let (x, arms, _) = synthetic_binary(160, 5);
        let outcomes = vec![1u8; 160];
        // constant outcomes break outcome stratification; stratify on arm only
        let strata: Vec<u64> = arms.iter().map(|&a| u64::from(a)).collect();
        let folds = stratified_kfold(&strata, 5, 2).unwrap();
        let bank = fit_outcome_models(
            &x, &arms, &outcomes, 2, &small_cfg(3, 60), &folds, FitMode::CrossFitted, "all",
        )
        .unwrap();
        for row in 0..x.n_rows() {
            for t in 0..2 {
                assert!((bank.prediction(row, t) - 1.0).abs() < 0.05);
            }
        }
    }

    #[test]
    fn identical_arms_agree_within_noise() {
        // Both arms share the same outcome law; the two arm models should
        // roughly agree pointwise.
        let n = 2000;
        let mut rng = rng_for(8, "sym");
        let mut data = Vec::with_capacity(n * 2);
        for _ in 0..n * 2 {
            data.push(rng.random_range(-1.0..1.0f64));
        }
        let x = Matrix::from_flat(n, 2, data).unwrap();
        let arms: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let outcomes: Vec<u8> = (0..n)
            .map(|i| u8::from(rng.random_range(0.0..1.0) < 0.35 + 0.2 * x.get(i, 0)))
            .collect();
        let folds = stratified_kfold(&arm_outcome_strata(&arms, &outcomes), 5, 11).unwrap();
        let bank = fit_outcome_models(
            &x, &arms, &outcomes, 2, &small_cfg(5, 150), &folds, FitMode::CrossFitted, "all",
        )
        .unwrap();
        let mu0 = bank.arm_predictions(0);
        let mu1 = bank.arm_predictions(1);
        let mean_abs_diff: f64 =
            mu0.iter().zip(&mu1).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
        assert!(mean_abs_diff < 0.05, "mean |mu0 - mu1| = {mean_abs_diff}");
    }

    #[test]
    fn predictions_clamped_to_unit_interval() {
        let (x, arms, outcomes) = synthetic_binary(200, 9);
        let folds = stratified_kfold(&arm_outcome_strata(&arms, &outcomes), 5, 3).unwrap();
        let bank = fit_outcome_models(
            &x, &arms, &outcomes, 2, &small_cfg(7, 80), &folds, FitMode::CrossFitted, "all",
        )
        .unwrap();
        for row in 0..x.n_rows() {
            for t in 0..2u8 {
                let p = bank.prediction(row, t);
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn missing_arm_is_an_error() {
        let (x, _, outcomes) = synthetic_binary(60, 4);
        let arms = vec![1u8; 60]; // arm 0 never observed
        let folds = stratified_kfold(&vec![0u64; 60], 5, 3).unwrap();
        let err =
            fit_outcome_models(&x, &arms, &outcomes, 2, &small_cfg(1, 10), &folds, FitMode::CrossFitted, "all");
        assert!(err.is_err());
    }

    #[test]
    fn constant_pseudo_outcomes_recovered() {
        let (x, arms, _) = synthetic_binary(120, 6);
        let pseudo = PseudoOutcomes {
            treated_rows: (0..60).collect(),
            treated_values: vec![0.37; 60],
            control_rows: (60..120).collect(),
            control_values: vec![0.37; 60],
        };
        let _ = arms;
        let cfg = GbtConfig {
            l2_lambda: 0.0,
            subsample: 1.0,
            colsample: 1.0,
            ..small_cfg(3, 100)
        };
        let models = fit_cate_models(&x, &pseudo, &cfg).unwrap();
        for p in models.treated.predict(&x).unwrap() {
            assert!((p - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn step_effect_recovered_and_stable_across_seeds() {
        let n = 2000;
        let mut rng = rng_for(14, "step");
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n * 3 {
            data.push(rng.random_range(-1.0..1.0f64));
        }
        let x = Matrix::from_flat(n, 3, data).unwrap();
        let truth: Vec<f64> = (0..n).map(|i| if x.get(i, 0) > 0.0 { 0.2 } else { 0.0 }).collect();
        let pseudo = PseudoOutcomes {
            treated_rows: (0..n).collect(),
            treated_values: truth.clone(),
            control_rows: (0..n).collect(),
            control_values: truth.clone(),
        };
        let mae = |cfg: &GbtConfig| -> f64 {
            let models = fit_cate_models(&x, &pseudo, cfg).unwrap();
            let preds = models.treated.predict(&x).unwrap();
            preds.iter().zip(&truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n as f64
        };
        let base = mae(&small_cfg(1, 120));
        assert!(base < 0.05, "MAE {base}");
        let other = mae(&small_cfg(2, 120));
        assert!(other <= 2.0 * base.max(1e-3), "seed change blew up MAE: {other} vs {base}");
    }
}
