//! Isotonic regression calibration via pool-adjacent-violators.
//!
//! Fits the monotone non-decreasing step function minimizing squared error
//! against binary labels in score order; applied as a left-constant step
//! function over the training scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicCalibrator {
    /// Distinct training scores, ascending.
    thresholds: Vec<f64>,
    /// Fitted probability level per threshold; non-decreasing, in [0, 1].
    levels: Vec<f64>,
}

impl IsotonicCalibrator {
    pub fn fit(scores: &[f64], labels: &[f64]) -> Result<IsotonicCalibrator> {
        if scores.len() != labels.len() {
            return Err(Error::data(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.len() < 2 {
            return Err(Error::data("need at least 2 points to calibrate"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::data("non-finite score"));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::data("labels must be binary 0/1"));
        }

        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

        // Pool exact score ties before fitting.
        struct Block {
            score: f64,
            weight: f64,
            sum: f64,
        }
        let mut pooled: Vec<Block> = Vec::new();
        for &i in &order {
            match pooled.last_mut() {
                Some(b) if b.score == scores[i] => {
                    b.weight += 1.0;
                    b.sum += labels[i];
                }
                _ => pooled.push(Block { score: scores[i], weight: 1.0, sum: labels[i] }),
            }
        }

        // PAVA over the pooled blocks. Each stack entry covers a run of
        // consecutive blocks with a common fitted level.
        struct Run {
            weight: f64,
            sum: f64,
            first_block: usize,
        }
        let mut stack: Vec<Run> = Vec::new();
        for (bi, block) in pooled.iter().enumerate() {
            let mut run = Run { weight: block.weight, sum: block.sum, first_block: bi };
            while let Some(prev) = stack.last() {
                if prev.sum / prev.weight >= run.sum / run.weight {
                    run.weight += prev.weight;
                    run.sum += prev.sum;
                    run.first_block = prev.first_block;
                    stack.pop();
                } else {
                    break;
                }
            }
            stack.push(run);
        }

        // Expand runs back onto the distinct scores: blocks merged into one
        // run all share its weighted-mean level.
        let thresholds: Vec<f64> = pooled.iter().map(|b| b.score).collect();
        let mut levels = vec![0.0; pooled.len()];
        for (ri, run) in stack.iter().enumerate() {
            let end = stack.get(ri + 1).map_or(pooled.len(), |next| next.first_block);
            let level = run.sum / run.weight;
            for slot in &mut levels[run.first_block..end] {
                *slot = level;
            }
        }

        Ok(IsotonicCalibrator { thresholds, levels })
    }

    /// Left-constant step lookup: the level of the largest threshold <= score;
    /// scores below the first threshold take the first level.
    pub fn apply_one(&self, score: f64) -> f64 {
        let pos = self.thresholds.partition_point(|&t| t <= score);
        if pos == 0 {
            self.levels[0]
        } else {
            self.levels[pos - 1]
        }
    }

    pub fn apply(&self, scores: &[f64]) -> Vec<f64> {
        scores.iter().map(|&s| self.apply_one(s)).collect()
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use rand::Rng;

    #[test]
    fn already_monotone_is_identity() {
        let cal = IsotonicCalibrator::fit(&[1.0, 2.0], &[0.0, 1.0]).unwrap();
        assert_eq!(cal.levels(), &[0.0, 1.0]);
        assert_eq!(cal.apply(&[1.0, 2.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn violation_pools_to_mean() {
        let cal = IsotonicCalibrator::fit(&[1.0, 2.0], &[1.0, 0.0]).unwrap();
        assert_eq!(cal.levels(), &[0.5, 0.5]);
    }

    #[test]
    fn score_ties_pool_before_fitting() {
        let cal = IsotonicCalibrator::fit(&[1.0, 1.0, 2.0], &[0.0, 1.0, 1.0]).unwrap();
        assert_eq!(cal.thresholds(), &[1.0, 2.0]);
        assert_eq!(cal.levels(), &[0.5, 1.0]);
    }

    #[test]
    fn boundary_rules() {
        let cal = IsotonicCalibrator::fit(&[0.0, 1.0, 2.0], &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(cal.apply_one(-5.0), cal.levels()[0]);
        assert_eq!(cal.apply_one(5.0), *cal.levels().last().unwrap());
        assert_eq!(cal.apply_one(1.5), cal.apply_one(1.0));
    }

    #[test]
    fn constant_labels_yield_constant_calibrator() {
        let cal = IsotonicCalibrator::fit(&[3.0, 1.0, 2.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!(cal.levels().iter().all(|&l| l == 1.0));
    }

    #[test]
    fn output_is_monotone_for_random_inputs() {
        let mut rng = rng_for(21, "mono");
        for _ in 0..50 {
            let n = rng.random_range(2..30);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let labels: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..2) == 1)).collect();
            let cal = IsotonicCalibrator::fit(&scores, &labels).unwrap();
            for w in cal.levels().windows(2) {
                assert!(w[0] <= w[1] + 1e-15, "levels must be non-decreasing");
            }
            for &l in cal.levels() {
                assert!((0.0..=1.0).contains(&l));
            }
            // monotone application
            let mut probe: Vec<f64> = (0..20).map(|_| rng.random_range(-4.0..4.0)).collect();
            probe.sort_unstable_by(f64::total_cmp);
            let applied = cal.apply(&probe);
            for w in applied.windows(2) {
                assert!(w[0] <= w[1] + 1e-15);
            }
        }
    }

    #[test]
    fn training_scores_map_to_fitted_levels() {
        let mut rng = rng_for(22, "fitlevels");
        let scores: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<f64> = (0..25).map(|_| f64::from(rng.random_range(0..2) == 1)).collect();
        let cal = IsotonicCalibrator::fit(&scores, &labels).unwrap();
        // each distinct training score maps exactly to its block level
        for (t, l) in cal.thresholds().iter().zip(cal.levels()) {
            assert_eq!(cal.apply_one(*t), *l);
        }
    }
}
