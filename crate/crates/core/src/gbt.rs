//! Gradient-boosted regression trees with second-order (Newton) boosting,
//! an L2 leaf penalty, and per-tree row/column subsampling.
//!
//! Trees are grown level-wise over pre-sorted feature lists: one pass per
//! feature per depth evaluates every candidate boundary for every open node.
//! Split gain and leaf weights follow the usual second-order formulas
//!
//! ```text
//! gain = 1/2 [ G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l) ]
//! leaf weight = -G/(H+l)
//! ```
//!
//! Fitting is bit-deterministic given the data and config (including seed);
//! subsampling for tree `t` draws from a stream keyed by `(seed, t)` so
//! results do not depend on execution order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::rng_for_idx;
use crate::stats::{mean, sample_without_replacement, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    SquaredError,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Row subsample rate per tree, in (0, 1].
    pub subsample: f64,
    /// Column subsample rate per tree, in (0, 1].
    pub colsample: f64,
    pub l2_lambda: f64,
    pub objective: Objective,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl GbtConfig {
    /// Per-arm outcome regression (first X-learner stage).
    pub fn outcome_model(seed: u64) -> Self {
        Self {
            n_trees: 800,
            max_depth: 4,
            learning_rate: 0.05,
            subsample: 0.8,
            colsample: 0.8,
            l2_lambda: 1.0,
            objective: Objective::SquaredError,
            min_samples_leaf: 1,
            seed,
        }
    }

    /// Pseudo-outcome regression (second X-learner stage).
    pub fn effect_model(seed: u64) -> Self {
        Self { n_trees: 400, ..Self::outcome_model(seed) }
    }

    /// Optimality-gap regression for multi-arm importance.
    pub fn gap_model(seed: u64) -> Self {
        Self::effect_model(seed)
    }

    /// Calibrated outcome classifier for prognostic evaluation.
    pub fn prognostic_model(seed: u64) -> Self {
        Self {
            n_trees: 600,
            subsample: 0.85,
            colsample: 0.85,
            objective: Objective::Logistic,
            ..Self::outcome_model(seed)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::config("n_trees must be >= 1"));
        }
        if self.max_depth < 1 {
            return Err(Error::config("max_depth must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::config("learning_rate must be in (0, 1]"));
        }
        for (name, v) in [("subsample", self.subsample), ("colsample", self.colsample)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(format!("{name} must be in (0, 1]")));
            }
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::config("l2_lambda must be finite and >= 0"));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::config("min_samples_leaf must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
}

impl RegressionTree {
    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split { feature, threshold, left, right } => {
                    idx = if row[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    fn uses_feature(&self, feature: usize) -> bool {
        self.nodes.iter().any(|n| matches!(n, TreeNode::Split { feature: f, .. } if *f == feature))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    base_score: f64,
    learning_rate: f64,
    objective: Objective,
    trees: Vec<RegressionTree>,
    feature_names: Vec<String>,
    /// Training loss after each boosting round (MSE or mean log-loss).
    round_losses: Vec<f64>,
}

/// Anything that can score a feature matrix; lets cross-fitting and the
/// fold plumbing run on stand-in models in tests.
pub trait Regressor: Send + Sync {
    fn predict_matrix(&self, x: &Matrix) -> Result<Vec<f64>>;
}

impl Regressor for GbtModel {
    fn predict_matrix(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.predict(x)
    }
}

struct FrontierNode {
    /// Slot in the tree's node vector this frontier entry will fill.
    slot: usize,
    grad: f64,
    hess: f64,
    count: usize,
}

#[derive(Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Clone, Copy)]
struct ScanState {
    grad: f64,
    hess: f64,
    count: usize,
    last_value: f64,
    seen: bool,
}

const NO_NODE: u32 = u32::MAX;

fn leaf_weight(grad: f64, hess: f64, lambda: f64) -> f64 {
    let denom = hess + lambda;
    if denom <= 0.0 {
        0.0
    } else {
        -grad / denom
    }
}

fn gain_term(grad: f64, hess: f64, lambda: f64) -> Option<f64> {
    let denom = hess + lambda;
    if denom <= 0.0 {
        None
    } else {
        Some(grad * grad / denom)
    }
}

fn build_tree(
    x: &Matrix,
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    features: &[usize],
    cfg: &GbtConfig,
) -> RegressionTree {
    let lambda = cfg.l2_lambda;
    let msl = cfg.min_samples_leaf;

    // Pre-sort the subsample once per feature; ties break by row index so the
    // scan order is canonical.
    let sorted: Vec<Vec<u32>> = features
        .iter()
        .map(|&f| {
            let mut idx: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
            idx.sort_unstable_by(|&a, &b| {
                x.get(a as usize, f)
                    .total_cmp(&x.get(b as usize, f))
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();

    let mut nodes: Vec<TreeNode> = vec![TreeNode::Leaf { weight: 0.0 }];
    let mut node_of = vec![NO_NODE; x.n_rows()];
    let root = {
        let mut g = 0.0;
        let mut h = 0.0;
        for &r in rows {
            g += grad[r];
            h += hess[r];
            node_of[r] = 0;
        }
        FrontierNode { slot: 0, grad: g, hess: h, count: rows.len() }
    };
    let mut frontier = vec![root];

    for _depth in 0..cfg.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut best: Vec<Option<SplitCandidate>> = vec![None; frontier.len()];
        for (fi, &feature) in features.iter().enumerate() {
            let mut scan = vec![
                ScanState { grad: 0.0, hess: 0.0, count: 0, last_value: 0.0, seen: false };
                frontier.len()
            ];
            for &row32 in &sorted[fi] {
                let row = row32 as usize;
                let fid = node_of[row];
                if fid == NO_NODE {
                    continue;
                }
                let fid = fid as usize;
                let value = x.get(row, feature);
                let state = &mut scan[fid];
                if state.seen && value > state.last_value {
                    let node = &frontier[fid];
                    let left_count = state.count;
                    let right_count = node.count - left_count;
                    if left_count >= msl && right_count >= msl {
                        let threshold = 0.5 * (state.last_value + value);
                        // Adjacent floats can collapse the midpoint onto an
                        // endpoint; such a boundary cannot separate the rows.
                        if state.last_value < threshold && threshold <= value {
                            let gl = state.grad;
                            let hl = state.hess;
                            let gr = node.grad - gl;
                            let hr = node.hess - hl;
                            if let (Some(tl), Some(tr), Some(tp)) = (
                                gain_term(gl, hl, lambda),
                                gain_term(gr, hr, lambda),
                                gain_term(node.grad, node.hess, lambda),
                            ) {
                                let gain = 0.5 * (tl + tr - tp);
                                let better = match best[fid] {
                                    None => gain > 0.0,
                                    Some(b) => gain > b.gain,
                                };
                                if better {
                                    best[fid] = Some(SplitCandidate { gain, feature, threshold });
                                }
                            }
                        }
                    }
                }
                state.grad += grad[row];
                state.hess += hess[row];
                state.count += 1;
                state.last_value = value;
                state.seen = true;
            }
        }

        // Materialize splits; everything without a positive-gain candidate
        // becomes a leaf now.
        let mut next = Vec::new();
        let mut actions: Vec<Option<(usize, f64, usize, usize)>> = Vec::with_capacity(frontier.len());
        for (fid, node) in frontier.iter().enumerate() {
            match best[fid] {
                Some(cand) => {
                    let left_slot = nodes.len();
                    nodes.push(TreeNode::Leaf { weight: 0.0 });
                    let right_slot = nodes.len();
                    nodes.push(TreeNode::Leaf { weight: 0.0 });
                    nodes[node.slot] = TreeNode::Split {
                        feature: cand.feature,
                        threshold: cand.threshold,
                        left: left_slot,
                        right: right_slot,
                    };
                    let left_fid = next.len();
                    next.push(FrontierNode { slot: left_slot, grad: 0.0, hess: 0.0, count: 0 });
                    next.push(FrontierNode { slot: right_slot, grad: 0.0, hess: 0.0, count: 0 });
                    actions.push(Some((cand.feature, cand.threshold, left_fid, left_fid + 1)));
                }
                None => {
                    nodes[node.slot] = TreeNode::Leaf {
                        weight: leaf_weight(node.grad, node.hess, lambda),
                    };
                    actions.push(None);
                }
            }
        }

        // Reassign rows in ascending row order so child sums accumulate
        // deterministically.
        for &row in rows {
            let fid = node_of[row];
            if fid == NO_NODE {
                continue;
            }
            match actions[fid as usize] {
                None => node_of[row] = NO_NODE,
                Some((feature, threshold, left_fid, right_fid)) => {
                    let child = if x.get(row, feature) < threshold { left_fid } else { right_fid };
                    node_of[row] = child as u32;
                    let c = &mut next[child];
                    c.grad += grad[row];
                    c.hess += hess[row];
                    c.count += 1;
                }
            }
        }
        frontier = next;
    }

    // Depth limit reached: finalize whatever is still open.
    for node in &frontier {
        nodes[node.slot] = TreeNode::Leaf { weight: leaf_weight(node.grad, node.hess, lambda) };
    }
    RegressionTree { nodes }
}

impl GbtModel {
    pub fn fit(x: &Matrix, y: &[f64], cfg: &GbtConfig) -> Result<GbtModel> {
        cfg.validate()?;
        let n = x.n_rows();
        if n != y.len() {
            return Err(Error::data(format!("{} rows but {} targets", n, y.len())));
        }
        if n < 2 {
            return Err(Error::data("need at least 2 rows to fit"));
        }
        if n < cfg.min_samples_leaf {
            return Err(Error::data("fewer rows than min_samples_leaf"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite target value"));
        }
        if !x.is_finite() {
            return Err(Error::data("feature matrix contains missing or non-finite values"));
        }

        let base_score = match cfg.objective {
            Objective::SquaredError => mean(y),
            Objective::Logistic => {
                let p = mean(y).clamp(1e-6, 1.0 - 1e-6);
                (p / (1.0 - p)).ln()
            }
        };

        let n_cols = x.n_cols();
        let row_count = ((cfg.subsample * n as f64).round() as usize).clamp(1, n);
        let col_count = ((cfg.colsample * n_cols as f64).round() as usize).clamp(1, n_cols);
        let all_rows: Vec<usize> = (0..n).collect();
        let all_cols: Vec<usize> = (0..n_cols).collect();

        let mut raw = vec![base_score; n];
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        let mut trees = Vec::with_capacity(cfg.n_trees);
        let mut round_losses = Vec::with_capacity(cfg.n_trees);

        for t in 0..cfg.n_trees {
            match cfg.objective {
                Objective::SquaredError => {
                    for i in 0..n {
                        grad[i] = raw[i] - y[i];
                        hess[i] = 1.0;
                    }
                }
                Objective::Logistic => {
                    for i in 0..n {
                        let p = sigmoid(raw[i]);
                        grad[i] = p - y[i];
                        hess[i] = p * (1.0 - p);
                    }
                }
            }

            let rows = if row_count == n {
                all_rows.clone()
            } else {
                sample_without_replacement(&mut rng_for_idx(cfg.seed, "gbt-rows", t as u64), n, row_count)
            };
            let cols = if col_count == n_cols {
                all_cols.clone()
            } else {
                sample_without_replacement(
                    &mut rng_for_idx(cfg.seed, "gbt-cols", t as u64),
                    n_cols,
                    col_count,
                )
            };

            let tree = build_tree(x, &grad, &hess, &rows, &cols, cfg);
            for i in 0..n {
                raw[i] += cfg.learning_rate * tree.predict_row(x.row(i));
            }
            trees.push(tree);
            round_losses.push(match cfg.objective {
                Objective::SquaredError => {
                    raw.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64
                }
                Objective::Logistic => {
                    raw.iter()
                        .zip(y)
                        .map(|(r, t)| {
                            let p = sigmoid(*r).clamp(1e-12, 1.0 - 1e-12);
                            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                        })
                        .sum::<f64>()
                        / n as f64
                }
            });
        }

        Ok(GbtModel {
            base_score,
            learning_rate: cfg.learning_rate,
            objective: cfg.objective,
            trees,
            feature_names: x.names().to_vec(),
            round_losses,
        })
    }

    fn check_columns(&self, x: &Matrix) -> Result<()> {
        if x.n_cols() != self.feature_names.len() {
            return Err(Error::data(format!(
                "model trained on {} columns, input has {}",
                self.feature_names.len(),
                x.n_cols()
            )));
        }
        Ok(())
    }

    /// Raw margin: base_score + lr * sum of tree outputs.
    pub fn predict_raw(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_columns(x)?;
        Ok((0..x.n_rows()).map(|r| self.predict_row_raw(x.row(r))).collect())
    }

    #[inline]
    pub fn predict_row_raw(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        self.base_score + self.learning_rate * sum
    }

    /// Predictions on the response scale; the logistic objective maps raw
    /// scores through the sigmoid.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let raw = self.predict_raw(x)?;
        Ok(match self.objective {
            Objective::SquaredError => raw,
            Objective::Logistic => raw.into_iter().map(sigmoid).collect(),
        })
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn round_losses(&self) -> &[f64] {
        &self.round_losses
    }

    /// Feature indices appearing in at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        (0..self.feature_names.len())
            .filter(|&f| self.trees.iter().any(|t| t.uses_feature(f)))
            .collect()
    }

    /// Debug dump: one line per node. Not a stability contract.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "base_score={} learning_rate={} trees={}",
            self.base_score,
            self.learning_rate,
            self.trees.len()
        );
        for (ti, tree) in self.trees.iter().enumerate() {
            let _ = writeln!(out, "tree {ti}:");
            for (ni, node) in tree.nodes().iter().enumerate() {
                match node {
                    TreeNode::Split { feature, threshold, left, right } => {
                        let _ = writeln!(
                            out,
                            "  {ni}: [{} < {threshold}] -> {left}, {right}",
                            self.feature_names[*feature]
                        );
                    }
                    TreeNode::Leaf { weight } => {
                        let _ = writeln!(out, "  {ni}: leaf {weight}");
                    }
                }
            }
        }
        out
    }

    /// Training-row indices routed to each leaf of one tree. Test support for
    /// leaf-level invariants.
    pub fn leaf_memberships(&self, tree_index: usize, x: &Matrix) -> Vec<(usize, Vec<usize>)> {
        let tree = &self.trees[tree_index];
        let mut members: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
        for r in 0..x.n_rows() {
            let mut idx = 0;
            loop {
                match &tree.nodes[idx] {
                    TreeNode::Leaf { .. } => break,
                    TreeNode::Split { feature, threshold, left, right } => {
                        idx = if x.get(r, *feature) < *threshold { *left } else { *right };
                    }
                }
            }
            members.entry(idx).or_default().push(r);
        }
        members.into_iter().collect()
    }
}
