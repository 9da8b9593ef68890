//! Least-squares gradient boosting with exact greedy splits over quantile
//! candidate thresholds. Fitting is fully deterministic: no subsampling, and
//! split-gain ties break toward the lowest feature index, then the lowest
//! threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats::mean;

pub const GBT_SCHEMA_VERSION: u32 = 1;

/// Hyperparameters for [`crate::predictors::fit_gbt_predictor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtHyperparams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub n_split_candidates: usize,
}

impl Default for GbtHyperparams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 20,
            n_split_candidates: 32,
        }
    }
}

impl GbtHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::Contract("n_trees must be >= 1".into()));
        }
        if self.max_depth < 1 {
            return Err(Error::Contract("max_depth must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Contract("learning_rate must be in (0, 1]".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::Contract("min_samples_leaf must be >= 1".into()));
        }
        if self.n_split_candidates < 1 {
            return Err(Error::Contract("n_split_candidates must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A single regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict_row(&self, x: &Matrix, row: usize) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x.value(row, *feature) <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// A fitted boosted-tree ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub schema_version: u32,
    pub n_features: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    /// In-sample MSE after each boosting round.
    pub training_mse: Vec<f64>,
}

impl GbtModel {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features {
            return Err(Error::Contract(format!(
                "model expects {} feature column(s), got {}",
                self.n_features,
                x.n_cols()
            )));
        }
        let mut out = vec![self.base_score; x.n_rows()];
        for tree in &self.trees {
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.learning_rate * tree.predict_row(x, i);
            }
        }
        Ok(out)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("tree models serialize infallibly")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let model: GbtModel = serde_json::from_str(s)
            .map_err(|e| Error::Domain(format!("invalid model json: {}", e)))?;
        if model.schema_version != GBT_SCHEMA_VERSION {
            return Err(Error::Domain(format!(
                "unsupported model schema_version {}",
                model.schema_version
            )));
        }
        Ok(model)
    }
}

pub fn fit_gbt(x: &Matrix, y: &[f64], params: &GbtHyperparams) -> Result<GbtModel> {
    params.validate()?;
    let n = x.n_rows();
    if y.len() != n {
        return Err(Error::Contract(format!(
            "response has {} rows, features have {}",
            y.len(),
            n
        )));
    }
    if n < 2 * params.min_samples_leaf {
        return Err(Error::Degenerate(format!(
            "boosting needs at least 2 * min_samples_leaf = {} rows, got {}",
            2 * params.min_samples_leaf,
            n
        )));
    }

    let base_score = mean(y);
    let mut residual: Vec<f64> = y.iter().map(|v| v - base_score).collect();
    let all_rows: Vec<usize> = (0..n).collect();
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut training_mse = Vec::with_capacity(params.n_trees);

    for _ in 0..params.n_trees {
        let mut builder = TreeBuilder {
            x,
            residual: &residual,
            params,
            nodes: Vec::new(),
        };
        builder.build(&all_rows, 0);
        let tree = RegressionTree {
            nodes: builder.nodes,
        };
        for (i, r) in residual.iter_mut().enumerate() {
            *r -= params.learning_rate * tree.predict_row(x, i);
        }
        training_mse.push(residual.iter().map(|r| r * r).sum::<f64>() / n as f64);
        trees.push(tree);
    }

    Ok(GbtModel {
        schema_version: GBT_SCHEMA_VERSION,
        n_features: x.n_cols(),
        base_score,
        learning_rate: params.learning_rate,
        trees,
        training_mse,
    })
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    residual: &'a [f64],
    params: &'a GbtHyperparams,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_> {
    /// Builds the subtree for `rows` and returns its root index.
    fn build(&mut self, rows: &[usize], depth: usize) -> usize {
        let sum: f64 = rows.iter().map(|&i| self.residual[i]).sum();
        let count = rows.len();
        let leaf_value = sum / count as f64;

        if depth >= self.params.max_depth || count < 2 * self.params.min_samples_leaf {
            return self.push_leaf(leaf_value);
        }
        let Some(best) = self.find_best_split(rows, sum) else {
            return self.push_leaf(leaf_value);
        };

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x.value(i, best.feature) <= best.threshold);

        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: 0.0 }); // placeholder
        let left = self.build(&left_rows, depth + 1);
        let right = self.build(&right_rows, depth + 1);
        self.nodes[idx] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        idx
    }

    fn push_leaf(&mut self, value: f64) -> usize {
        self.nodes.push(TreeNode::Leaf { value });
        self.nodes.len() - 1
    }

    fn find_best_split(&self, rows: &[usize], total_sum: f64) -> Option<BestSplit> {
        let count = rows.len();
        let parent_score = total_sum * total_sum / count as f64;
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<BestSplit> = None;

        for feature in 0..self.x.n_cols() {
            let col = self.x.column(feature);
            let mut pairs: Vec<(f64, f64)> =
                rows.iter().map(|&i| (col[i], self.residual[i])).collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
            let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let thresholds = candidate_thresholds(&values, self.params.n_split_candidates);
            if thresholds.is_empty() {
                continue;
            }

            let mut prefix = Vec::with_capacity(count + 1);
            prefix.push(0.0);
            let mut acc = 0.0;
            for p in &pairs {
                acc += p.1;
                prefix.push(acc);
            }

            for &threshold in &thresholds {
                let n_left = values.partition_point(|&v| v <= threshold);
                let n_right = count - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let sum_left = prefix[n_left];
                let sum_right = total_sum - sum_left;
                let gain = sum_left * sum_left / n_left as f64
                    + sum_right * sum_right / n_right as f64
                    - parent_score;
                if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                    best = Some(BestSplit {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best
    }
}

/// Up to `k` split thresholds between distinct values of the sorted sample,
/// placed at evenly spaced sample quantiles. Every returned threshold
/// separates at least one pair of distinct values.
fn candidate_thresholds(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    if n < 2 {
        return Vec::new();
    }
    // boundaries between runs of equal values: (threshold, rows to the left)
    let mut boundaries: Vec<(f64, usize)> = Vec::new();
    for i in 1..n {
        if sorted[i] > sorted[i - 1] {
            boundaries.push((sorted[i - 1] + (sorted[i] - sorted[i - 1]) / 2.0, i));
        }
    }
    if boundaries.len() <= k {
        return boundaries.into_iter().map(|(t, _)| t).collect();
    }
    // pick the boundary nearest each target quantile position, deduplicated
    let mut chosen = std::collections::BTreeSet::new();
    for q in 1..=k {
        let target = q * n / (k + 1);
        let idx = match boundaries.binary_search_by_key(&target, |&(_, c)| c) {
            Ok(i) => i,
            Err(i) => {
                // i is the insertion point; compare neighbors by distance
                if i == 0 {
                    0
                } else if i >= boundaries.len() {
                    boundaries.len() - 1
                } else {
                    let before = target - boundaries[i - 1].1;
                    let after = boundaries[i].1 - target;
                    if after < before {
                        i
                    } else {
                        i - 1
                    }
                }
            }
        };
        chosen.insert(idx);
    }
    chosen.into_iter().map(|i| boundaries[i].0).collect()
}
