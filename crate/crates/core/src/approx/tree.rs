//! Binary classification tree over state features.
//!
//! Targets are binarised (`reward > 0`) and each leaf predicts the fraction
//! of positive samples that reached it. Induction is greedy and top-down;
//! candidate thresholds are the midpoints between consecutive distinct
//! feature values, and ties go to the lowest feature index, then the lowest
//! threshold.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Experience;
use crate::error::{Error, Result};

/// Gains closer than this are treated as equal.
pub const GAIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitCriterion {
    Gini,
    Entropy,
}

impl SplitCriterion {
    pub fn impurity(self, labels: &[bool]) -> Result<f64> {
        match self {
            SplitCriterion::Gini => gini_impurity(labels),
            SplitCriterion::Entropy => entropy(labels),
        }
    }

    fn of_counts(self, positives: usize, total: usize) -> f64 {
        let p = positives as f64 / total as f64;
        let q = 1.0 - p;
        match self {
            SplitCriterion::Gini => 1.0 - (p * p + q * q),
            SplitCriterion::Entropy => {
                let h = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
                h(p) + h(q)
            }
        }
    }
}

impl fmt::Display for SplitCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitCriterion::Gini => "gini",
            SplitCriterion::Entropy => "entropy",
        })
    }
}

impl FromStr for SplitCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gini" => Ok(SplitCriterion::Gini),
            "entropy" => Ok(SplitCriterion::Entropy),
            other => Err(Error::Config(format!("unknown split criterion '{other}'"))),
        }
    }
}

fn positives(labels: &[bool]) -> usize {
    labels.iter().filter(|&&l| l).count()
}

/// `1 - sum_c p_c^2` over the two classes.
pub fn gini_impurity(labels: &[bool]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("label list"));
    }
    Ok(SplitCriterion::Gini.of_counts(positives(labels), labels.len()))
}

/// Shannon entropy in bits.
pub fn entropy(labels: &[bool]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("label list"));
    }
    Ok(SplitCriterion::Entropy.of_counts(positives(labels), labels.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub criterion: SplitCriterion,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            criterion: SplitCriterion::Gini,
            max_depth: Some(20),
            min_samples_split: 3,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == Some(0) {
            return Err(Error::Config("max_depth must be positive".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        positive_fraction: f64,
        samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        samples: usize,
        /// Samples with `x[feature] <= threshold`.
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }
}

/// Best axis-aligned split of a sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    params: TreeParams,
    input_dim: usize,
    root: Node,
}

impl TreeModel {
    pub fn from_parts(params: TreeParams, input_dim: usize, root: Node) -> Self {
        TreeModel {
            params,
            input_dim,
            root,
        }
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn predict(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.input_dim {
            return Err(Error::Config(format!(
                "state has {} features, tree expects {}",
                input.len(),
                self.input_dim
            )));
        }
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf {
                    positive_fraction, ..
                } => return Ok(*positive_fraction),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if input[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Fraction of samples whose binarised label matches `predict > 0.5`.
    pub fn accuracy(&self, batch: &[Experience]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("evaluation batch"));
        }
        let mut correct = 0usize;
        for e in batch {
            let predicted = self.predict(&e.state.to_input())? > 0.5;
            if predicted == e.label() {
                correct += 1;
            }
        }
        Ok(correct as f64 / batch.len() as f64)
    }
}

/// Scans every feature for the threshold with the largest impurity decrease.
/// Returns `None` when no feature takes two distinct values.
pub fn best_split(
    inputs: &[Vec<f64>],
    labels: &[bool],
    indices: &[usize],
    criterion: SplitCriterion,
) -> Option<SplitChoice> {
    let n = indices.len();
    if n < 2 {
        return None;
    }
    let dim = inputs[indices[0]].len();
    let total_pos = indices.iter().filter(|&&i| labels[i]).count();
    let parent = criterion.of_counts(total_pos, n);
    let mut best: Option<SplitChoice> = None;
    let mut order = indices.to_vec();
    #[allow(clippy::needless_range_loop)]
    for feature in 0..dim {
        order.sort_by(|&a, &b| inputs[a][feature].total_cmp(&inputs[b][feature]));
        let mut left_pos = 0usize;
        for k in 0..n - 1 {
            if labels[order[k]] {
                left_pos += 1;
            }
            let lo = inputs[order[k]][feature];
            let hi = inputs[order[k + 1]][feature];
            if lo == hi {
                continue;
            }
            let nl = k + 1;
            let nr = n - nl;
            let child = (nl as f64 * criterion.of_counts(left_pos, nl)
                + nr as f64 * criterion.of_counts(total_pos - left_pos, nr))
                / n as f64;
            let gain = parent - child;
            if best.is_none_or(|b| gain > b.gain + GAIN_TOLERANCE) {
                best = Some(SplitChoice {
                    feature,
                    threshold: (lo + hi) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

fn grow(
    inputs: &[Vec<f64>],
    labels: &[bool],
    indices: &[usize],
    depth: usize,
    params: &TreeParams,
) -> Node {
    let n = indices.len();
    let pos = indices.iter().filter(|&&i| labels[i]).count();
    let leaf = Node::Leaf {
        positive_fraction: pos as f64 / n as f64,
        samples: n,
    };
    let pure = pos == 0 || pos == n;
    let depth_reached = params.max_depth.is_some_and(|d| depth >= d);
    if pure || depth_reached || n < params.min_samples_split {
        return leaf;
    }
    let Some(split) = best_split(inputs, labels, indices, params.criterion) else {
        return leaf;
    };
    let (left, right): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| inputs[i][split.feature] <= split.threshold);
    Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        samples: n,
        left: Box::new(grow(inputs, labels, &left, depth + 1, params)),
        right: Box::new(grow(inputs, labels, &right, depth + 1, params)),
    }
}

pub fn fit_tree(batch: &[Experience], params: &TreeParams) -> Result<TreeModel> {
    params.validate()?;
    let first = batch.first().ok_or(Error::Empty("training batch"))?;
    let input_dim = first.state.dim();
    let inputs: Vec<Vec<f64>> = batch.iter().map(|e| e.state.to_input()).collect();
    if let Some(bad) = inputs.iter().find(|x| x.len() != input_dim) {
        return Err(Error::Config(format!(
            "mixed state dimensions {} and {}",
            input_dim,
            bad.len()
        )));
    }
    let labels: Vec<bool> = batch.iter().map(Experience::label).collect();
    let indices: Vec<usize> = (0..batch.len()).collect();
    let root = grow(&inputs, &labels, &indices, 0, params);
    Ok(TreeModel {
        params: *params,
        input_dim,
        root,
    })
}
