//! Value-function approximators and the experience they are trained on.

mod neural;
mod replay;
mod tree;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::FeatureVector;
use crate::error::{Error, Result};

pub use neural::{fit_neural, DenseLayer, NeuralModel, TrainParams};
pub use replay::ReplayBuffer;
pub use tree::{
    best_split, entropy, fit_tree, gini_impurity, Node, SplitChoice, SplitCriterion, TreeModel,
    TreeParams, GAIN_TOLERANCE,
};

/// A state together with the reward observed for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: FeatureVector,
    pub reward: f64,
}

impl Experience {
    pub fn new(state: FeatureVector, reward: f64) -> Result<Self> {
        if !reward.is_finite() {
            return Err(Error::Config(format!(
                "reward must be finite, got {reward}"
            )));
        }
        Ok(Experience { state, reward })
    }

    /// Binarised target used by the tree.
    pub fn label(&self) -> bool {
        self.reward > 0.0
    }
}

/// Either kind of fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Approximator {
    Network(NeuralModel),
    Tree(TreeModel),
}

impl Approximator {
    pub fn predict(&self, state: &FeatureVector) -> Result<f64> {
        let input = state.to_input();
        match self {
            Approximator::Network(m) => m.predict(&input),
            Approximator::Tree(t) => t.predict(&input),
        }
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: Approximator,
}

/// Writes a versioned JSON dump of the model. Floats round-trip exactly.
pub fn save_checkpoint(model: &Approximator, path: &Path) -> Result<()> {
    let text = checkpoint_to_string(model)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Approximator> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}

pub fn checkpoint_to_string(model: &Approximator) -> Result<String> {
    serde_json::to_string_pretty(&Checkpoint {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    })
    .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn checkpoint_from_str(text: &str) -> Result<Approximator> {
    let ckpt: Checkpoint =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    Ok(ckpt.model)
}
