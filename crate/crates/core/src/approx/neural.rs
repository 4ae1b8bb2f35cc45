//! Fully connected regressor: rectified-linear hidden layers, one linear output.
//!
//! Parameters are laid out layer by layer, weights (row-major, `out x in`)
//! followed by biases. [`NeuralModel::params`] and [`NeuralModel::gradient`]
//! share that layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Experience;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl DenseLayer {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if weights.len() != in_dim * out_dim || biases.len() != out_dim {
            return Err(Error::Config(format!(
                "layer {in_dim}->{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weights.len(),
                biases.len()
            )));
        }
        Ok(DenseLayer {
            in_dim,
            out_dim,
            weights,
            biases,
        })
    }

    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        }));
    }
}

/// Learning-rate, epoch count and mini-batch size for [`NeuralModel::fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 0.05,
            epochs: 1,
            minibatch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralModel {
    input_dim: usize,
    layers: Vec<DenseLayer>,
}

impl NeuralModel {
    /// Scaled-uniform initialisation: each layer draws from `[-r, r]` with
    /// `r = sqrt(6 / (fan_in + fan_out))`; biases start at zero.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut model = NeuralModel::zeros(input_dim, hidden)?;
        for layer in &mut model.layers {
            let r = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-r..=r);
            }
        }
        Ok(model)
    }

    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive (input {input_dim}, hidden {hidden:?})"
            )));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(DenseLayer::zeros(prev, h));
            prev = h;
        }
        layers.push(DenseLayer::zeros(prev, 1));
        Ok(NeuralModel { input_dim, layers })
    }

    /// Assembles a model from explicit layers. The last layer must have one output.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Config("a network needs at least one layer".into()))?;
        let input_dim = first.in_dim;
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Config(format!(
                    "layer output {} does not feed input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        if layers.last().map(|l| l.out_dim) != Some(1) {
            return Err(Error::Config(
                "the output layer must have exactly one unit".into(),
            ));
        }
        Ok(NeuralModel { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_layers(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.biases);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            let (b, tail) = tail.split_at(l.biases.len());
            l.weights.copy_from_slice(w);
            l.biases.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn check_dim(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::Config(format!(
                "state has {} features, network expects {}",
                input.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Activations of every layer; the last entry is the scalar output.
    /// Hidden entries are post-rectifier.
    fn activations(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.out_dim);
            layer.forward(acts.last().map_or(input, |a| a.as_slice()), &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    pub fn predict(&self, input: &[f64]) -> Result<f64> {
        self.check_dim(input)?;
        Ok(self.activations(input).last().expect("output layer")[0])
    }

    /// Mean squared error over `batch`.
    pub fn loss(&self, batch: &[Experience]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let mut total = 0.0;
        for e in batch {
            let err = self.predict(&e.state.to_input())? - e.reward;
            total += err * err;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean squared error and its gradient with respect to [`Self::params`].
    pub fn gradient(&self, batch: &[Experience]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let n = batch.len() as f64;
        let mut grads: Vec<DenseLayer> = self
            .layers
            .iter()
            .map(|l| DenseLayer::zeros(l.in_dim, l.out_dim))
            .collect();
        let mut loss = 0.0;
        for e in batch {
            let input = e.state.to_input();
            self.check_dim(&input)?;
            let acts = self.activations(&input);
            let err = acts.last().expect("output layer")[0] - e.reward;
            loss += err * err;

            // d(loss)/d(output pre-activation) for this sample
            let mut delta = vec![2.0 * err / n];
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let layer_in: &[f64] = if li == 0 { &input } else { &acts[li - 1] };
                let g = &mut grads[li];
                for (o, d) in delta.iter().enumerate() {
                    g.biases[o] += d;
                    let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gw, x) in row.iter_mut().zip(layer_in) {
                        *gw += d * x;
                    }
                }
                if li > 0 {
                    let mut prev = vec![0.0; layer.in_dim];
                    for (o, d) in delta.iter().enumerate() {
                        let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                    // rectifier derivative; zero at the kink
                    for (p, a) in prev.iter_mut().zip(&acts[li - 1]) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for g in &grads {
            flat.extend_from_slice(&g.weights);
            flat.extend_from_slice(&g.biases);
        }
        Ok((loss / n, flat))
    }

    /// Mini-batch gradient descent over `batch` in its given order.
    ///
    /// Returns the loss over the full batch after training. On a non-finite
    /// loss or parameter the model is left untouched.
    pub fn fit(&mut self, batch: &[Experience], params: &TrainParams) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        if !params.learning_rate.is_finite()
            || params.learning_rate <= 0.0
            || params.minibatch_size == 0
        {
            return Err(Error::Config(format!(
                "invalid training parameters {params:?}"
            )));
        }
        let mut trial = self.clone();
        let mut weights = trial.params();
        for _ in 0..params.epochs {
            for chunk in batch.chunks(params.minibatch_size) {
                let (loss, grad) = trial.gradient(chunk)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { loss });
                }
                for (w, g) in weights.iter_mut().zip(&grad) {
                    *w -= params.learning_rate * g;
                }
                trial.set_params(&weights)?;
            }
        }
        let loss = trial.loss(batch)?;
        if !loss.is_finite() || !trial.is_finite() {
            return Err(Error::Divergence { loss });
        }
        *self = trial;
        Ok(loss)
    }
}

/// Trains a copy of `model` for `epochs` passes at `learning_rate`, using
/// the default mini-batch size.
pub fn fit_neural(
    model: &NeuralModel,
    batch: &[Experience],
    learning_rate: f64,
    epochs: usize,
) -> Result<NeuralModel> {
    let mut updated = model.clone();
    updated.fit(
        batch,
        &TrainParams {
            learning_rate,
            epochs,
            ..TrainParams::default()
        },
    )?;
    Ok(updated)
}
