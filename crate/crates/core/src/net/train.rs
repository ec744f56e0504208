//! InfoNCE training for energy-based coordinate regression.
//!
//! The model E(scene, v) is trained so the observed coordinate v⁺ has low
//! energy relative to M uniform negatives:
//!
//! ```text
//! L = −log[ exp(−E(s,v⁺)) / (exp(−E(s,v⁺)) + Σⱼ exp(−E(s,vⱼ))) ]
//! ```
//!
//! Optimization is full-batch gradient descent with a fixed step size, so a
//! fixed seed reproduces the run exactly.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{apply_gradients, EquivariantMlp, GradContext, Grads};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub n_negatives: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 200, learning_rate: 1e-2, n_negatives: 256, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean InfoNCE loss per epoch, evaluated before that epoch's step.
    pub loss_trace: Vec<f64>,
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Trains an EBM on (scene, target) pairs with targets in [−1, 1]².
pub fn train_ebm_infonce(
    net: &mut EquivariantMlp,
    dataset: &[(Array1<f64>, [f64; 2])],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset is empty".into()));
    }
    for (_, target) in dataset {
        if target.iter().any(|t| t.abs() > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target {target:?} outside the normalized square [-1, 1]^2"
            )));
        }
    }
    let scene_dim = dataset[0].0.len();
    if scene_dim + 2 != net.dim_in() {
        return Err(Error::DimensionMismatch { expected: net.dim_in(), got: scene_dim + 2 });
    }

    let m = cfg.n_negatives;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut ctx = GradContext::new();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut input = Array1::zeros(net.dim_in());

    for epoch in 0..cfg.epochs {
        let mut grads = Grads::zeros_like(net);
        let mut loss_sum = 0.0;
        for (scene, target) in dataset {
            input.slice_mut(ndarray::s![..scene_dim]).assign(scene);

            // candidate coordinates: positive first, then M uniform negatives
            let mut cands = Vec::with_capacity(m + 1);
            cands.push(*target);
            for _ in 0..m {
                cands.push([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            }

            let mut energies = Vec::with_capacity(m + 1);
            for c in &cands {
                input[scene_dim] = c[0];
                input[scene_dim + 1] = c[1];
                energies.push(net.forward(input.view())?[0]);
            }
            let logits: Vec<f64> = energies.iter().map(|e| -e).collect();
            let lse = log_sum_exp(&logits);
            loss_sum += lse - logits[0];

            // dL/dE_0 = 1 − p_0, dL/dE_j = −p_j
            for (k, c) in cands.iter().enumerate() {
                let p = (logits[k] - lse).exp();
                let w = if k == 0 { 1.0 - p } else { -p };
                if w == 0.0 {
                    continue;
                }
                input[scene_dim] = c[0];
                input[scene_dim + 1] = c[1];
                ctx.forward(net, input.view())?;
                let g = ctx.backward(net, Array1::ones(1).view())?;
                grads.add_scaled(&g, w / dataset.len() as f64);
            }
        }
        let loss = loss_sum / dataset.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        loss_trace.push(loss);
        apply_gradients(net, &grads, cfg.learning_rate);
    }

    Ok(TrainReport { loss_trace })
}
