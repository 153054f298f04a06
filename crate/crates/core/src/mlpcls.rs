//! Membership classifier: a ReLU multilayer perceptron with inverted
//! dropout, trained on softmax cross-entropy with Adam.
//!
//! Class order is fixed: logit 0 is "nonmember", logit 1 is "member".

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Membership;
use crate::features::FEATURE_DIM;
use crate::seed::{keyed_rng, keyed_seed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlpError {
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error("input has {got} features, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("feature {index} is not finite")]
    NonFinite { index: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training set contains only {0:?} samples; both classes are required")]
    SingleClass(Membership),
    #[error("model file is inconsistent: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            input_dim: FEATURE_DIM,
            hidden_dims: vec![512, 512, 512],
            output_dim: 2,
            dropout_rate: 0.1,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            epochs: 25,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |m: &str| Err(MlpError::Config(m.to_string()));
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return bad("layer widths must be positive");
        }
        if self.output_dim != 2 {
            return bad("output_dim must be 2");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden_dims);
        w.push(self.output_dim);
        w
    }
}

/// Dense layer `y = W x + b` with `W` stored row-major as `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, weights: vec![0.0; rows * cols], biases: vec![0.0; rows] }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.biases)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    /// Input standardization fitted by [`train`]; absent on a fresh model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<Scaler>,
    pub layers: Vec<Layer>,
}

/// Per-feature affine map `(x - mean) / scale` applied before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    /// Population mean and standard deviation per column. Constant columns
    /// get scale 1 so they map to zero.
    pub fn fit(rows: &[&[f64]]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..dim)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (after dropout for hidden activations).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    /// Per-unit dropout scale (0 or 1/(1-rate)) of each hidden layer, when training.
    masks: Vec<Option<Vec<f64>>>,
}

/// Gradients with the same shapes as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self { layers: model.layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect() }
    }
}

pub fn init(config: MlpConfig) -> Result<MlpModel, MlpError> {
    config.validate()?;
    let widths = config.widths();
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let (cols, rows) = (w[0], w[1]);
            let bound = 1.0 / (cols as f64).sqrt();
            let mut rng = keyed_rng(config.seed, &[b"init", &(k as u64).to_le_bytes()]);
            let weights = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Layer { rows, cols, weights, biases: vec![0.0; rows] }
        })
        .collect();
    Ok(MlpModel { config, scaler: None, layers })
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.cols)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Checks layer shapes chain and parameters are finite.
    pub fn validate(&self) -> Result<(), MlpError> {
        self.config.validate()?;
        let widths = self.config.widths();
        if self.layers.len() + 1 != widths.len() {
            return Err(MlpError::Malformed(format!("{} layers for {} widths", self.layers.len(), widths.len())));
        }
        for (k, (l, w)) in self.layers.iter().zip(widths.windows(2)).enumerate() {
            if l.cols != w[0] || l.rows != w[1] || l.weights.len() != l.rows * l.cols || l.biases.len() != l.rows {
                return Err(MlpError::Malformed(format!("layer {k} has inconsistent shape")));
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(MlpError::Malformed(format!("layer {k} has non-finite parameters")));
            }
        }
        if let Some(sc) = &self.scaler {
            let dim = self.input_dim();
            if sc.mean.len() != dim || sc.scale.len() != dim {
                return Err(MlpError::Malformed(format!("scaler covers {} of {dim} inputs", sc.mean.len())));
            }
            if sc.mean.iter().any(|v| !v.is_finite()) || sc.scale.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(MlpError::Malformed("scaler has non-finite or non-positive entries".into()));
            }
        }
        Ok(())
    }
}

fn check_input(model: &MlpModel, x: &[f64]) -> Result<(), MlpError> {
    if x.len() != model.input_dim() {
        return Err(MlpError::Dimension { expected: model.input_dim(), got: x.len() });
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(MlpError::NonFinite { index });
    }
    Ok(())
}

/// Computes output logits. Dropout is applied to hidden activations only
/// when `training`, with masks drawn from `seed`.
pub fn forward(model: &MlpModel, x: &[f64], training: bool, seed: u64) -> Result<(Vec<f64>, ForwardCache), MlpError> {
    check_input(model, x)?;
    Ok(forward_unchecked(model, x, training, seed))
}

fn forward_unchecked(model: &MlpModel, x: &[f64], training: bool, seed: u64) -> (Vec<f64>, ForwardCache) {
    let rate = model.config.dropout_rate;
    let dropout = training && rate > 0.0;
    let mut rng = keyed_rng(seed, &[b"dropout"]);
    let hidden = model.layers.len() - 1;
    let mut cache = ForwardCache {
        inputs: Vec::with_capacity(model.layers.len()),
        pre: Vec::with_capacity(hidden),
        masks: Vec::with_capacity(hidden),
    };
    let mut a = match &model.scaler {
        Some(sc) => sc.apply(x),
        None => x.to_vec(),
    };
    for layer in &model.layers[..hidden] {
        let z = layer.apply(&a);
        let mut h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
        let mask = dropout.then(|| {
            let keep = 1.0 / (1.0 - rate);
            let m: Vec<f64> = (0..h.len()).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
            for (v, s) in h.iter_mut().zip(&m) {
                *v *= s;
            }
            m
        });
        cache.inputs.push(a);
        cache.pre.push(z);
        cache.masks.push(mask);
        a = h;
    }
    let logits = model.layers[hidden].apply(&a);
    cache.inputs.push(a);
    (logits, cache)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[target]`, computed stably.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

pub fn class_index(label: Membership) -> usize {
    match label {
        Membership::Nonmember => 0,
        Membership::Member => 1,
    }
}

/// Accumulates `scale * dLoss/dparams` for one sample into `grads`.
pub fn backward(model: &MlpModel, cache: &ForwardCache, logits: &[f64], target: usize, scale: f64, grads: &mut Gradients) {
    let mut delta = softmax(logits);
    delta[target] -= 1.0;
    for d in &mut delta {
        *d *= scale;
    }
    for k in (0..model.layers.len()).rev() {
        let layer = &model.layers[k];
        let input = &cache.inputs[k];
        let g = &mut grads.layers[k];
        for (r, d) in delta.iter().enumerate() {
            g.biases[r] += d;
            if *d != 0.0 {
                for (gw, x) in g.weights[r * layer.cols..(r + 1) * layer.cols].iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
        }
        if k == 0 {
            break;
        }
        let mut upstream = vec![0.0; layer.cols];
        for (row, d) in layer.weights.chunks_exact(layer.cols).zip(&delta) {
            if *d != 0.0 {
                for (u, w) in upstream.iter_mut().zip(row) {
                    *u += d * w;
                }
            }
        }
        let pre = &cache.pre[k - 1];
        for (i, u) in upstream.iter_mut().enumerate() {
            let relu = if pre[i] > 0.0 { 1.0 } else { 0.0 };
            let drop = cache.masks[k - 1].as_ref().map_or(1.0, |m| m[i]);
            *u *= relu * drop;
        }
        delta = upstream;
    }
}

/// Mean cross-entropy over `batch` and its gradient. `seeds[i]` drives the
/// dropout mask of sample `i` when `training`.
pub fn loss_and_gradients(model: &MlpModel, batch: &[(&[f64], usize)], training: bool, seeds: &[u64]) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(model);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (i, (x, target)) in batch.iter().enumerate() {
        let (logits, cache) = forward_unchecked(model, x, training, seeds.get(i).copied().unwrap_or(0));
        loss += cross_entropy(&logits, *target) * scale;
        backward(model, &cache, &logits, *target, scale, &mut grads);
    }
    (loss, grads)
}

/// Mean inference-mode cross-entropy over a labeled set.
pub fn mean_loss(model: &MlpModel, data: &[(Vec<f64>, Membership)]) -> f64 {
    data.iter()
        .map(|(x, y)| cross_entropy(&forward_unchecked(model, x, false, 0).0, class_index(*y)))
        .sum::<f64>()
        / data.len() as f64
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

impl Adam {
    fn new(model: &MlpModel) -> Self {
        let zeros = || model.layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.t += 1;
        let lr = model.config.learning_rate;
        let wd = model.config.weight_decay;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for k in 0..model.layers.len() {
            let layer = &mut model.layers[k];
            let g = &grads.layers[k];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    let gi = g[i] + wd * p[i];
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
                }
            };
            update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
            update(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Inference-mode loss over the training set before any update.
    pub initial_loss: f64,
    /// Inference-mode loss over the training set after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a copy of `model` and returns it with the loss curve. A model
/// without a scaler first gets one fitted to `dataset`.
pub fn train(model: &MlpModel, dataset: &[(Vec<f64>, Membership)]) -> Result<(MlpModel, TrainReport), MlpError> {
    model.validate()?;
    if dataset.is_empty() {
        return Err(MlpError::EmptyDataset);
    }
    for (x, _) in dataset {
        check_input(model, x)?;
    }
    let first = dataset[0].1;
    if dataset.iter().all(|(_, y)| *y == first) {
        return Err(MlpError::SingleClass(first));
    }

    let mut model = model.clone();
    if model.scaler.is_none() {
        let rows: Vec<&[f64]> = dataset.iter().map(|(x, _)| x.as_slice()).collect();
        model.scaler = Some(Scaler::fit(&rows));
    }
    let cfg = model.config.clone();
    let mut adam = Adam::new(&model);
    let initial_loss = mean_loss(&model, dataset);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        let epoch_bytes = (epoch as u64).to_le_bytes();
        order.shuffle(&mut keyed_rng(cfg.seed, &[b"shuffle", &epoch_bytes]));
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&[f64], usize)> = chunk.iter().map(|&i| (dataset[i].0.as_slice(), class_index(dataset[i].1))).collect();
            let seeds: Vec<u64> = (0..chunk.len())
                .map(|j| keyed_seed(cfg.seed, &[b"mask", &epoch_bytes, &(step as u64).to_le_bytes(), &(j as u64).to_le_bytes()]))
                .collect();
            let (_, grads) = loss_and_gradients(&model, &batch, true, &seeds);
            adam.step(&mut model, &grads);
        }
        let loss = mean_loss(&model, dataset);
        tracing::debug!(epoch, loss, "epoch finished");
        epoch_losses.push(loss);
    }
    Ok((model, TrainReport { initial_loss, epoch_losses }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbability {
    pub label: Membership,
    pub member_probability: f64,
}

/// Inference-mode class decision; equal probabilities resolve to nonmember.
pub fn predict(model: &MlpModel, x: &[f64]) -> Result<ClassProbability, MlpError> {
    let (logits, _) = forward(model, x, false, 0)?;
    Ok(decide(&logits))
}

pub fn decide(logits: &[f64]) -> ClassProbability {
    let p = softmax(logits);
    let label = if p[1] > p[0] { Membership::Member } else { Membership::Nonmember };
    ClassProbability { label, member_probability: p[1] }
}

pub fn to_json(model: &MlpModel) -> String {
    serde_json::to_string(model).expect("model serializes")
}

pub fn from_json(text: &str) -> Result<MlpModel, MlpError> {
    let model: MlpModel = serde_json::from_str(text).map_err(|e| MlpError::Malformed(e.to_string()))?;
    model.validate()?;
    Ok(model)
}
