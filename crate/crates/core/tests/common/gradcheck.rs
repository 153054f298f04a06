//! Central finite differences against the analytic MLP gradient, using a
//! forward pass written independently of the library's.

#![allow(clippy::needless_range_loop)]

use mia_core::mlpcls::{loss_and_gradients, MlpModel};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Differences below this are indistinguishable from rounding noise in the
/// finite-difference quotient (about 1e-11 for losses of order 1).
pub const ABS_FLOOR: f64 = 1e-9;

/// Mean cross-entropy without dropout, plus the ReLU on/off pattern.
pub fn oracle_loss(model: &MlpModel, batch: &[(Vec<f64>, usize)]) -> (f64, Vec<bool>) {
    let mut pattern = Vec::new();
    let mut total = 0.0;
    for (x, target) in batch {
        let mut a = x.clone();
        for (k, layer) in model.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.rows];
            for r in 0..layer.rows {
                let mut s = layer.biases[r];
                for c in 0..layer.cols {
                    s += layer.weights[r * layer.cols + c] * a[c];
                }
                z[r] = s;
            }
            if k + 1 < model.layers.len() {
                pattern.extend(z.iter().map(|v| *v > 0.0));
                a = z.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect();
            } else {
                let m = z[0].max(z[1]);
                let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
                total += lse - z[*target];
            }
        }
    }
    (total / batch.len() as f64, pattern)
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

fn param_mut(model: &mut MlpModel, layer: usize, idx: usize) -> &mut f64 {
    let l = &mut model.layers[layer];
    if idx < l.weights.len() {
        &mut l.weights[idx]
    } else {
        &mut l.biases[idx - l.weights.len()]
    }
}

/// Checks the listed (layer, flat index) parameters; flat indices cover
/// weights first, then biases.
pub fn check(model: &MlpModel, batch: &[(Vec<f64>, usize)], params: &[(usize, usize)]) -> Outcome {
    let refs: Vec<(&[f64], usize)> = batch.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
    let (_, grads) = loss_and_gradients(model, &refs, false, &[]);
    let (_, base_pattern) = oracle_loss(model, batch);
    let mut out = Outcome::default();
    let mut probe = model.clone();
    for &(layer, idx) in params {
        let g = &grads.layers[layer];
        let analytic = if idx < g.weights.len() { g.weights[idx] } else { g.biases[idx - g.weights.len()] };
        let original = *param_mut(&mut probe, layer, idx);
        *param_mut(&mut probe, layer, idx) = original + STEP;
        let (plus, p1) = oracle_loss(&probe, batch);
        *param_mut(&mut probe, layer, idx) = original - STEP;
        let (minus, p2) = oracle_loss(&probe, batch);
        *param_mut(&mut probe, layer, idx) = original;
        if p1 != base_pattern || p2 != base_pattern {
            out.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * STEP);
        let diff = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale > 0.0 { diff / scale } else { 0.0 };
        out.checked += 1;
        if scale > ABS_FLOOR {
            out.worst_rel = out.worst_rel.max(rel);
        }
        if rel > REL_TOL && diff > ABS_FLOOR {
            out.failures.push(format!("layer {layer} param {idx}: analytic {analytic:e} numeric {numeric:e}"));
        }
    }
    out
}

pub fn all_params(model: &MlpModel) -> Vec<(usize, usize)> {
    model
        .layers
        .iter()
        .enumerate()
        .flat_map(|(k, l)| (0..l.weights.len() + l.biases.len()).map(move |i| (k, i)))
        .collect()
}

/// Every parameter of the output layer plus `per_layer` seeded picks from
/// each hidden layer.
pub fn sampled_params(model: &MlpModel, per_layer: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = model.layers.len() - 1;
    let mut out = Vec::new();
    for (k, l) in model.layers.iter().enumerate() {
        let n = l.weights.len() + l.biases.len();
        if k == last {
            out.extend((0..n).map(|i| (k, i)));
        } else {
            let mut picks = sample(&mut rng, n, per_layer.min(n)).into_vec();
            // Always include some biases.
            picks.extend((0..8.min(l.biases.len())).map(|_| l.weights.len() + rng.gen_range(0..l.biases.len())));
            picks.sort_unstable();
            picks.dedup();
            out.extend(picks.into_iter().map(|i| (k, i)));
        }
    }
    out
}

/// Five feature-like inputs with both classes, and random nonzero biases so
/// bias gradients are exercised away from zero.
pub fn fixture(model: &mut MlpModel, seed: u64) -> Vec<(Vec<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in &mut model.layers {
        for b in &mut l.biases {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    let dim = model.layers[0].cols;
    (0..5).map(|i| ((0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect(), i % 2)).collect()
}
