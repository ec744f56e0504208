//! Equivariant multilayer perceptrons.
//!
//! Each layer's linear map lives in the intertwiner space between its input
//! and output representations, so end-to-end equivariance holds exactly (up
//! to float rounding) for *any* coefficient values — including untrained
//! random weights. Hidden layers use the regular representation.
//!
//! Nonlinearities are chosen per output block so they commute with the group
//! action: a pointwise leaky rectifier on permutation blocks (trivial and
//! regular), and a norm-gated sigmoid `v ↦ v·σ(‖v‖−1)/‖v‖` on rotation
//! blocks (standard and sign). The last layer is affine.
//!
//! Setting `equivariant = false` produces a plain dense MLP with the same
//! layer widths and leaky-rectifier activations, used as the baseline.

pub mod basis;
mod train;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

pub use basis::{build_intertwiner_basis, IntertwinerBasis};
pub use train::{train_ebm_infonce, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::group::{rep_direct_sum, rep_regular, rep_sign, rep_standard, rep_trivial, Block, GroupSpec, Rep, RepKind};

const LEAKY_SLOPE: f64 = 0.01;
const NORM_GATE_OFFSET: f64 = 1.0;

/// One affine layer. `basis` is `Some` for equivariant layers (the weight is
/// Σ coeffs·basis) and `None` for plain dense layers (coeffs are the weight
/// entries in row-major order).
#[derive(Debug, Clone)]
pub struct Layer {
    pub dim_in: usize,
    pub dim_out: usize,
    pub in_blocks: Vec<Block>,
    pub out_blocks: Vec<Block>,
    pub basis: Option<IntertwinerBasis>,
    pub coeffs: Array1<f64>,
    pub bias: Array1<f64>,
    /// True exactly on coordinates of trivial output blocks (all coordinates
    /// for dense layers). Bias stays zero elsewhere.
    pub bias_mask: Vec<bool>,
    weight: Array2<f64>,
}

impl Layer {
    fn equivariant(rep_in: &Rep, rep_out: &Rep) -> Result<Layer> {
        let basis = build_intertwiner_basis(rep_in, rep_out)?;
        let coeffs = Array1::zeros(basis.len());
        let weight = Array2::zeros((rep_out.dim, rep_in.dim));
        let mut bias_mask = Vec::with_capacity(rep_out.dim);
        for b in &rep_out.blocks {
            bias_mask.extend(std::iter::repeat(b.kind == RepKind::Trivial).take(b.dim));
        }
        Ok(Layer {
            dim_in: rep_in.dim,
            dim_out: rep_out.dim,
            in_blocks: rep_in.blocks.clone(),
            out_blocks: rep_out.blocks.clone(),
            basis: Some(basis),
            coeffs,
            bias: Array1::zeros(rep_out.dim),
            bias_mask,
            weight,
        })
    }

    fn dense(dim_in: usize, dim_out: usize) -> Layer {
        Layer {
            dim_in,
            dim_out,
            in_blocks: Vec::new(),
            out_blocks: Vec::new(),
            basis: None,
            coeffs: Array1::zeros(dim_out * dim_in),
            bias: Array1::zeros(dim_out),
            bias_mask: vec![true; dim_out],
            weight: Array2::zeros((dim_out, dim_in)),
        }
    }

    pub fn n_params(&self) -> usize {
        self.coeffs.len() + self.bias_mask.iter().filter(|m| **m).count()
    }

    /// Rebuilds the cached weight matrix from the coefficients.
    pub fn refresh_weight(&mut self) {
        self.weight = match &self.basis {
            Some(b) => b.materialize(&self.coeffs),
            None => Array1::from(self.coeffs.to_vec())
                .into_shape_with_order((self.dim_out, self.dim_in))
                .expect("coeff count matches layer shape"),
        };
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    fn affine(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }
}

/// A multilayer perceptron, equivariant or plain.
#[derive(Debug, Clone)]
pub struct EquivariantMlp {
    pub group: Arc<GroupSpec>,
    pub layers: Vec<Layer>,
    pub equivariant: bool,
}

/// Per-block activation of a pre-activation vector.
fn activate(layer: &Layer, z: &Array1<f64>, out: &mut Array1<f64>) {
    if layer.basis.is_none() {
        for (o, &v) in out.iter_mut().zip(z.iter()) {
            *o = if v > 0.0 { v } else { LEAKY_SLOPE * v };
        }
        return;
    }
    let mut off = 0;
    for b in &layer.out_blocks {
        match b.kind {
            RepKind::Trivial | RepKind::Regular => {
                for i in off..off + b.dim {
                    let v = z[i];
                    out[i] = if v > 0.0 { v } else { LEAKY_SLOPE * v };
                }
            }
            _ => {
                // norm gate: v ↦ v·σ(‖v‖−1)/‖v‖
                let n = z.slice(ndarray::s![off..off + b.dim]).iter().map(|v| v * v).sum::<f64>().sqrt();
                if n < 1e-12 {
                    for i in off..off + b.dim {
                        out[i] = 0.0;
                    }
                } else {
                    let gate = sigmoid(n - NORM_GATE_OFFSET) / n;
                    for i in off..off + b.dim {
                        out[i] = z[i] * gate;
                    }
                }
            }
        }
        off += b.dim;
    }
}

/// Multiplies the activation Jacobian (transposed; it is symmetric) into an
/// upstream gradient.
fn activate_backward(layer: &Layer, z: &Array1<f64>, grad_a: &Array1<f64>) -> Array1<f64> {
    let mut grad_z = Array1::zeros(z.len());
    if layer.basis.is_none() {
        for i in 0..z.len() {
            grad_z[i] = grad_a[i] * if z[i] > 0.0 { 1.0 } else { LEAKY_SLOPE };
        }
        return grad_z;
    }
    let mut off = 0;
    for b in &layer.out_blocks {
        match b.kind {
            RepKind::Trivial | RepKind::Regular => {
                for i in off..off + b.dim {
                    grad_z[i] = grad_a[i] * if z[i] > 0.0 { 1.0 } else { LEAKY_SLOPE };
                }
            }
            _ => {
                let v = z.slice(ndarray::s![off..off + b.dim]);
                let g = grad_a.slice(ndarray::s![off..off + b.dim]);
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n >= 1e-12 {
                    let s = sigmoid(n - NORM_GATE_OFFSET);
                    let q = s / n;
                    // q'(n) = (σ'·n − σ)/n²
                    let qp = (s * (1.0 - s) * n - s) / (n * n);
                    let vg: f64 = v.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                    for (k, i) in (off..off + b.dim).enumerate() {
                        grad_z[i] = q * g[k] + qp / n * v[k] * vg;
                    }
                }
            }
        }
        off += b.dim;
    }
    grad_z
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl EquivariantMlp {
    pub fn dim_in(&self) -> usize {
        self.layers.first().map(|l| l.dim_in).unwrap_or(0)
    }

    pub fn dim_out(&self) -> usize {
        self.layers.last().map(|l| l.dim_out).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// Pure forward evaluation.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.dim_in() {
            return Err(Error::DimensionMismatch { expected: self.dim_in(), got: x.len() });
        }
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&a.view());
            if i == last {
                a = z;
            } else {
                let mut act = Array1::zeros(z.len());
                activate(layer, &z, &mut act);
                a = act;
            }
        }
        Ok(a)
    }

    /// Scalar energy of a (scene, action) pair for EBM-style nets.
    pub fn energy(&self, scene: ArrayView1<f64>, action: ArrayView1<f64>) -> Result<f64> {
        let mut input = Array1::zeros(scene.len() + action.len());
        input.slice_mut(ndarray::s![..scene.len()]).assign(&scene);
        input.slice_mut(ndarray::s![scene.len()..]).assign(&action);
        Ok(self.forward(input.view())?[0])
    }
}

/// Gradients of a scalar-valued objective with respect to a network.
#[derive(Debug, Clone)]
pub struct Grads {
    pub coeffs: Vec<Array1<f64>>,
    pub bias: Vec<Array1<f64>>,
    pub input: Array1<f64>,
}

impl Grads {
    pub fn zeros_like(net: &EquivariantMlp) -> Grads {
        Grads {
            coeffs: net.layers.iter().map(|l| Array1::zeros(l.coeffs.len())).collect(),
            bias: net.layers.iter().map(|l| Array1::zeros(l.dim_out)).collect(),
            input: Array1::zeros(net.dim_in()),
        }
    }

    pub fn add_scaled(&mut self, other: &Grads, scale: f64) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            a.scaled_add(scale, b);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.scaled_add(scale, b);
        }
        self.input.scaled_add(scale, &other.input);
    }
}

struct Tape {
    inputs: Vec<Array1<f64>>,
    pre_activations: Vec<Array1<f64>>,
}

/// Holds the cached forward pass needed by `backward`. Forward evaluation on
/// a shared immutable model stays pure; each training thread owns a context.
#[derive(Default)]
pub struct GradContext {
    tape: Option<Tape>,
}

impl GradContext {
    pub fn new() -> GradContext {
        GradContext { tape: None }
    }

    /// Forward pass that records activations for `backward`.
    pub fn forward(&mut self, net: &EquivariantMlp, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != net.dim_in() {
            return Err(Error::DimensionMismatch { expected: net.dim_in(), got: x.len() });
        }
        let last = net.layers.len() - 1;
        let mut inputs = Vec::with_capacity(net.layers.len());
        let mut pre = Vec::with_capacity(net.layers.len());
        let mut a = x.to_owned();
        for (i, layer) in net.layers.iter().enumerate() {
            inputs.push(a.clone());
            let z = layer.affine(&a.view());
            pre.push(z.clone());
            if i == last {
                a = z;
            } else {
                let mut act = Array1::zeros(z.len());
                activate(layer, &z, &mut act);
                a = act;
            }
        }
        self.tape = Some(Tape { inputs, pre_activations: pre });
        Ok(a)
    }

    /// Exact reverse-mode gradients with respect to coefficients, biases, and
    /// the input, given the gradient of the objective in the output.
    pub fn backward(&self, net: &EquivariantMlp, grad_out: ArrayView1<f64>) -> Result<Grads> {
        let tape = self.tape.as_ref().ok_or(Error::NoCachedForward)?;
        if grad_out.len() != net.dim_out() {
            return Err(Error::DimensionMismatch { expected: net.dim_out(), got: grad_out.len() });
        }
        let last = net.layers.len() - 1;
        let mut grads = Grads::zeros_like(net);
        let mut grad_a = grad_out.to_owned();
        for (i, layer) in net.layers.iter().enumerate().rev() {
            let grad_z = if i == last {
                grad_a
            } else {
                activate_backward(layer, &tape.pre_activations[i], &grad_a)
            };
            // bias gradient, masked to the free components
            let mut gb = grad_z.clone();
            for (g, m) in gb.iter_mut().zip(&layer.bias_mask) {
                if !*m {
                    *g = 0.0;
                }
            }
            grads.bias[i] = gb;
            let x_in = &tape.inputs[i];
            match &layer.basis {
                Some(b) => {
                    // grad_W = grad_z ⊗ x, projected per basis element over
                    // its block support only
                    for (k, e) in b.elements.iter().enumerate() {
                        let mut acc = 0.0;
                        for (r, row) in e.local.rows().into_iter().enumerate() {
                            let gz = grad_z[e.row + r];
                            if gz != 0.0 {
                                for (c, w) in row.iter().enumerate() {
                                    acc += gz * w * x_in[e.col + c];
                                }
                            }
                        }
                        grads.coeffs[i][k] = acc;
                    }
                }
                None => {
                    let mut gc = grads.coeffs[i].view_mut();
                    for r in 0..layer.dim_out {
                        for c in 0..layer.dim_in {
                            gc[r * layer.dim_in + c] = grad_z[r] * x_in[c];
                        }
                    }
                }
            }
            grad_a = layer.weight.t().dot(&grad_z);
        }
        grads.input = grad_a;
        Ok(grads)
    }
}

/// One SGD step: θ ← θ − lr·grad.
pub fn apply_gradients(net: &mut EquivariantMlp, grads: &Grads, lr: f64) {
    for (layer, (gc, gb)) in net.layers.iter_mut().zip(grads.coeffs.iter().zip(&grads.bias)) {
        layer.coeffs.scaled_add(-lr, gc);
        layer.bias.scaled_add(-lr, gb);
        layer.refresh_weight();
    }
}

/// Regular-representation copies giving roughly the same free-parameter
/// count as a plain net of width `hidden_plain` (hidden width divided by
/// √|G|).
pub fn hidden_copies(group: &GroupSpec, hidden_plain: usize) -> usize {
    ((hidden_plain as f64 / (group.order as f64).sqrt()).round() as usize).max(1)
}

fn init_layer(layer: &mut Layer, rng: &mut impl Rng) {
    let a = (6.0 / (layer.dim_in + layer.dim_out) as f64).sqrt();
    for c in layer.coeffs.iter_mut() {
        *c = rng.gen_range(-a..a);
    }
    layer.refresh_weight();
}

/// Builds an equivariant MLP `rep_in → regular^copies → … → rep_out` with
/// `n_hidden` hidden layers.
pub fn build_equivariant_mlp(
    rep_in: &Rep,
    rep_out: &Rep,
    copies: usize,
    n_hidden: usize,
    rng: &mut impl Rng,
) -> Result<EquivariantMlp> {
    let group = rep_in.group.clone();
    let reg = rep_regular(&group);
    let hidden = rep_direct_sum(&vec![reg; copies])?;
    let mut layers = Vec::with_capacity(n_hidden + 1);
    let mut prev = rep_in;
    for _ in 0..n_hidden {
        layers.push(Layer::equivariant(prev, &hidden)?);
        prev = &hidden;
    }
    layers.push(Layer::equivariant(prev, rep_out)?);
    let mut net = EquivariantMlp { group, layers, equivariant: true };
    for layer in &mut net.layers {
        init_layer(layer, rng);
    }
    Ok(net)
}

/// Plain dense baseline with the given widths.
pub fn build_plain_mlp(
    group: &Arc<GroupSpec>,
    dim_in: usize,
    dim_out: usize,
    hidden: usize,
    n_hidden: usize,
    rng: &mut impl Rng,
) -> EquivariantMlp {
    let mut dims = vec![dim_in];
    dims.extend(std::iter::repeat(hidden).take(n_hidden));
    dims.push(dim_out);
    let layers = dims.windows(2).map(|w| Layer::dense(w[0], w[1])).collect();
    let mut net = EquivariantMlp { group: group.clone(), layers, equivariant: false };
    for layer in &mut net.layers {
        init_layer(layer, rng);
    }
    net
}

// ── checkpoint serialization ────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct LayerCheckpoint {
    dim_in: usize,
    dim_out: usize,
    in_blocks: Vec<Block>,
    out_blocks: Vec<Block>,
    basis_hash: Option<String>,
    coeffs: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    group: String,
    equivariant: bool,
    layers: Vec<LayerCheckpoint>,
}

fn basis_hash(basis: &IntertwinerBasis) -> String {
    let mut hasher = Sha256::new();
    for e in &basis.elements {
        hasher.update((e.row as u64).to_le_bytes());
        hasher.update((e.col as u64).to_le_bytes());
        hasher.update((e.local.nrows() as u64).to_le_bytes());
        hasher.update((e.local.ncols() as u64).to_le_bytes());
        for v in e.local.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn rep_from_blocks(group: &Arc<GroupSpec>, blocks: &[Block]) -> Result<Rep> {
    let parts: Vec<Rep> = blocks
        .iter()
        .map(|b| match b.kind {
            RepKind::Trivial => rep_trivial(group, b.dim),
            RepKind::Sign => rep_sign(group),
            RepKind::Standard2d | RepKind::Standard3d => rep_standard(group),
            RepKind::Regular => Ok(rep_regular(group)),
            RepKind::DirectSum => Err(Error::InvalidConfig("nested direct sum in checkpoint".into())),
        })
        .collect::<Result<_>>()?;
    rep_direct_sum(&parts)
}

/// Serializes a model to JSON: group name, per-layer rep structure, basis
/// hashes, and coefficients.
pub fn save_checkpoint(net: &EquivariantMlp) -> Result<String> {
    let layers = net
        .layers
        .iter()
        .map(|l| LayerCheckpoint {
            dim_in: l.dim_in,
            dim_out: l.dim_out,
            in_blocks: l.in_blocks.clone(),
            out_blocks: l.out_blocks.clone(),
            basis_hash: l.basis.as_ref().map(basis_hash),
            coeffs: l.coeffs.to_vec(),
            bias: l.bias.to_vec(),
        })
        .collect();
    let ckpt = Checkpoint { group: net.group.name.clone(), equivariant: net.equivariant, layers };
    serde_json::to_string_pretty(&ckpt).map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Rebuilds a model from a checkpoint, recomputing intertwiner bases and
/// verifying their hashes.
pub fn load_checkpoint(json: &str, group: &Arc<GroupSpec>) -> Result<EquivariantMlp> {
    let ckpt: Checkpoint = serde_json::from_str(json).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    if ckpt.group != group.name {
        return Err(Error::GroupMismatch(ckpt.group, group.name.clone()));
    }
    let mut layers = Vec::with_capacity(ckpt.layers.len());
    for lc in &ckpt.layers {
        let mut layer = if ckpt.equivariant {
            let rep_in = rep_from_blocks(group, &lc.in_blocks)?;
            let rep_out = rep_from_blocks(group, &lc.out_blocks)?;
            let layer = Layer::equivariant(&rep_in, &rep_out)?;
            let expect = lc.basis_hash.as_deref().unwrap_or_default();
            let got = basis_hash(layer.basis.as_ref().unwrap());
            if expect != got {
                return Err(Error::InvalidConfig(format!(
                    "basis hash mismatch: checkpoint {expect}, rebuilt {got}"
                )));
            }
            layer
        } else {
            Layer::dense(lc.dim_in, lc.dim_out)
        };
        if layer.coeffs.len() != lc.coeffs.len() {
            return Err(Error::DimensionMismatch { expected: layer.coeffs.len(), got: lc.coeffs.len() });
        }
        layer.coeffs = Array1::from(lc.coeffs.clone());
        layer.bias = Array1::from(lc.bias.clone());
        layer.refresh_weight();
        layers.push(layer);
    }
    Ok(EquivariantMlp { group: group.clone(), layers, equivariant: ckpt.equivariant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{make_cyclic, make_dihedral, make_icosahedral, make_octahedral};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn scene_rep(group: &Arc<GroupSpec>, copies: usize) -> Rep {
        let std = rep_standard(group).unwrap();
        rep_direct_sum(&vec![std; copies]).unwrap()
    }

    #[test]
    fn zero_weight_net_outputs_bias() {
        let d4 = make_dihedral(4).unwrap();
        let rep_in = scene_rep(&d4, 2);
        let rep_out = rep_trivial(&d4, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut net = build_equivariant_mlp(&rep_in, &rep_out, 2, 1, &mut rng).unwrap();
        for layer in &mut net.layers {
            layer.coeffs.fill(0.0);
            layer.refresh_weight();
        }
        net.layers.last_mut().unwrap().bias[0] = 0.25;
        let x = Array1::from(vec![0.3, -0.7, 0.1, 0.9]);
        let y = net.forward(x.view()).unwrap();
        assert_eq!(y[0], 0.25);
    }

    #[test]
    fn one_layer_regular_identity_permutes() {
        // a single regular→regular layer with the identity coefficient on the
        // right-multiplication-by-e basis element acts as a scaled identity
        let c4 = make_cyclic(4).unwrap();
        let reg = rep_regular(&c4);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut net = build_equivariant_mlp(&reg, &reg, 1, 0, &mut rng).unwrap();
        let layer = &mut net.layers[0];
        layer.coeffs.fill(0.0);
        // element 0 of the regular-regular basis is right multiplication by
        // the identity, i.e. I/√|G|
        layer.coeffs[0] = 2.0;
        layer.refresh_weight();
        let x = Array1::from(vec![1.0, 2.0, 3.0, 4.0]);
        let y = net.forward(x.view()).unwrap();
        let scale = 2.0 / (4.0f64).sqrt();
        for i in 0..4 {
            assert!((y[i] - scale * x[i]).abs() < 1e-12);
        }
    }

    fn check_forward_equivariance(group: &Arc<GroupSpec>, copies: usize, n_hidden: usize, seed: u64) {
        let rep_in = scene_rep(group, 2);
        let rep_out = rep_trivial(group, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let net = build_equivariant_mlp(&rep_in, &rep_out, copies, n_hidden, &mut rng).unwrap();
        for trial in 0..20 {
            let x = Array1::from_shape_fn(rep_in.dim, |_| rng.gen_range(-1.5..1.5));
            let y = net.forward(x.view()).unwrap();
            for g in 0..group.order {
                let gx = rep_in.act(g, x.view()).unwrap();
                let ygx = net.forward(gx.view()).unwrap();
                let gy = rep_out.act(g, y.view()).unwrap();
                let err = (&ygx - &gy).iter().map(|v| v.abs()).fold(0.0, f64::max);
                let scale = 1.0 + y.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(err <= 1e-8 * scale, "{} g={g} trial={trial}: err={err}", group.name);
            }
        }
    }

    #[test]
    fn forward_equivariance_2d_groups() {
        for group in [make_cyclic(4).unwrap(), make_cyclic(8).unwrap(), make_dihedral(4).unwrap(), make_dihedral(8).unwrap()] {
            check_forward_equivariance(&group, 3, 2, 42);
        }
    }

    #[test]
    fn forward_equivariance_3d_groups() {
        fn scene3(group: &Arc<GroupSpec>) -> Rep {
            let std = rep_standard(group).unwrap();
            rep_direct_sum(&[std.clone(), std]).unwrap()
        }
        for group in [make_octahedral().unwrap(), make_icosahedral().unwrap()] {
            let rep_in = scene3(&group);
            let rep_out = rep_trivial(&group, 1).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(5);
            let net = build_equivariant_mlp(&rep_in, &rep_out, 1, 1, &mut rng).unwrap();
            for _ in 0..5 {
                let x = Array1::from_shape_fn(rep_in.dim, |_| rng.gen_range(-1.0..1.0));
                let y = net.forward(x.view()).unwrap();
                for g in 0..group.order {
                    let gx = rep_in.act(g, x.view()).unwrap();
                    let ygx = net.forward(gx.view()).unwrap();
                    let err = (ygx[0] - y[0]).abs();
                    assert!(err <= 1e-8 * (1.0 + y[0].abs()), "{} g={g}: {err}", group.name);
                }
            }
        }
    }

    #[test]
    fn forward_equivariance_with_std_hidden_block() {
        // exercise the norm gate: hidden layer carrying standard blocks
        let d8 = make_dihedral(8).unwrap();
        let std = rep_standard(&d8).unwrap();
        let rep_in = scene_rep(&d8, 2);
        let hidden = rep_direct_sum(&[std.clone(), std.clone(), rep_trivial(&d8, 2).unwrap()]).unwrap();
        let rep_out = rep_trivial(&d8, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let l1 = Layer::equivariant(&rep_in, &hidden).unwrap();
        let l2 = Layer::equivariant(&hidden, &rep_out).unwrap();
        let mut net = EquivariantMlp { group: d8.clone(), layers: vec![l1, l2], equivariant: true };
        for layer in &mut net.layers {
            init_layer(layer, &mut rng);
        }
        for _ in 0..20 {
            let x = Array1::from_shape_fn(rep_in.dim, |_| rng.gen_range(-2.0..2.0));
            let y = net.forward(x.view()).unwrap();
            for g in 0..d8.order {
                let gx = rep_in.act(g, x.view()).unwrap();
                let ygx = net.forward(gx.view()).unwrap();
                assert!((ygx[0] - y[0]).abs() <= 1e-8 * (1.0 + y[0].abs()));
            }
        }
    }

    #[test]
    fn backward_requires_cached_forward() {
        let d4 = make_dihedral(4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let net = build_plain_mlp(&d4, 4, 1, 8, 1, &mut rng);
        let ctx = GradContext::new();
        let g = Array1::from(vec![1.0]);
        assert!(matches!(ctx.backward(&net, g.view()), Err(Error::NoCachedForward)));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let d4 = make_dihedral(4).unwrap();
        let rep_in = scene_rep(&d4, 2);
        let rep_out = rep_trivial(&d4, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let net = build_equivariant_mlp(&rep_in, &rep_out, 2, 1, &mut rng).unwrap();
        let mut ctx = GradContext::new();
        let x = Array1::from_shape_fn(rep_in.dim, |_| rng.gen_range(-1.0..1.0));
        ctx.forward(&net, x.view()).unwrap();
        let grads = ctx.backward(&net, Array1::zeros(1).view()).unwrap();
        for gc in &grads.coeffs {
            assert!(gc.iter().all(|v| *v == 0.0));
        }
        assert!(grads.input.iter().all(|v| *v == 0.0));
    }

    /// Central finite differences against analytic gradients.
    fn finite_difference_check(net: &mut EquivariantMlp, x: &Array1<f64>) {
        let h = 1e-5;
        let mut ctx = GradContext::new();
        let y = ctx.forward(net, x.view()).unwrap();
        assert_eq!(y.len(), 1);
        let grads = ctx.backward(net, Array1::ones(1).view()).unwrap();

        // avoid finite-difference error across rectifier kinks
        for (i, layer) in net.layers.iter().enumerate() {
            if i < net.layers.len() - 1 && layer.basis.is_none() {
                // plain layers: all coordinates pointwise
            }
        }

        for li in 0..net.layers.len() {
            for k in 0..net.layers[li].coeffs.len() {
                let orig = net.layers[li].coeffs[k];
                net.layers[li].coeffs[k] = orig + h;
                net.layers[li].refresh_weight();
                let up = net.forward(x.view()).unwrap()[0];
                net.layers[li].coeffs[k] = orig - h;
                net.layers[li].refresh_weight();
                let down = net.forward(x.view()).unwrap()[0];
                net.layers[li].coeffs[k] = orig;
                net.layers[li].refresh_weight();
                let fd = (up - down) / (2.0 * h);
                let analytic = grads.coeffs[li][k];
                let rel = (analytic - fd).abs() / (1.0 + analytic.abs());
                assert!(rel < 1e-5, "layer {li} coeff {k}: analytic {analytic}, fd {fd}");
            }
            for k in 0..net.layers[li].bias.len() {
                if !net.layers[li].bias_mask[k] {
                    continue;
                }
                let orig = net.layers[li].bias[k];
                net.layers[li].bias[k] = orig + h;
                let up = net.forward(x.view()).unwrap()[0];
                net.layers[li].bias[k] = orig - h;
                let down = net.forward(x.view()).unwrap()[0];
                net.layers[li].bias[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let analytic = grads.bias[li][k];
                let rel = (analytic - fd).abs() / (1.0 + analytic.abs());
                assert!(rel < 1e-5, "layer {li} bias {k}: analytic {analytic}, fd {fd}");
            }
        }

        // input gradient
        let mut xp = x.clone();
        for k in 0..x.len() {
            xp[k] = x[k] + h;
            let up = net.forward(xp.view()).unwrap()[0];
            xp[k] = x[k] - h;
            let down = net.forward(xp.view()).unwrap()[0];
            xp[k] = x[k];
            let fd = (up - down) / (2.0 * h);
            let analytic = grads.input[k];
            let rel = (analytic - fd).abs() / (1.0 + analytic.abs());
            assert!(rel < 1e-5, "input {k}: analytic {analytic}, fd {fd}");
        }
    }

    /// Picks a seed whose pre-activations stay clear of rectifier kinks so
    /// the central difference is trustworthy.
    fn well_conditioned_input(net: &EquivariantMlp, rng: &mut ChaCha20Rng) -> Array1<f64> {
        loop {
            let x = Array1::from_shape_fn(net.dim_in(), |_| rng.gen_range(-1.5..1.5));
            let mut ok = true;
            let mut a = x.clone();
            let last = net.layers.len() - 1;
            for (i, layer) in net.layers.iter().enumerate() {
                let z = layer.affine(&a.view());
                if i < last && z.iter().any(|v| v.abs() < 1e-3) {
                    ok = false;
                    break;
                }
                if i == last {
                    a = z;
                } else {
                    let mut act = Array1::zeros(z.len());
                    activate(layer, &z, &mut act);
                    a = act;
                }
            }
            if ok {
                return x;
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_equivariant() {
        let d4 = make_dihedral(4).unwrap();
        let rep_in = scene_rep(&d4, 2);
        let rep_out = rep_trivial(&d4, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut net = build_equivariant_mlp(&rep_in, &rep_out, 2, 2, &mut rng).unwrap();
        let x = well_conditioned_input(&net, &mut rng);
        finite_difference_check(&mut net, &x);
    }

    #[test]
    fn gradients_match_finite_differences_norm_gate() {
        let c8 = make_cyclic(8).unwrap();
        let std = rep_standard(&c8).unwrap();
        let rep_in = scene_rep(&c8, 2);
        let hidden = rep_direct_sum(&[std.clone(), std, rep_trivial(&c8, 2).unwrap()]).unwrap();
        let rep_out = rep_trivial(&c8, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let l1 = Layer::equivariant(&rep_in, &hidden).unwrap();
        let l2 = Layer::equivariant(&hidden, &rep_out).unwrap();
        let mut net = EquivariantMlp { group: c8, layers: vec![l1, l2], equivariant: true };
        for layer in &mut net.layers {
            init_layer(layer, &mut rng);
        }
        let x = well_conditioned_input(&net, &mut rng);
        finite_difference_check(&mut net, &x);
    }

    #[test]
    fn gradients_match_finite_differences_plain() {
        let d4 = make_dihedral(4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let mut net = build_plain_mlp(&d4, 6, 1, 12, 2, &mut rng);
        let x = well_conditioned_input(&net, &mut rng);
        finite_difference_check(&mut net, &x);
    }

    #[test]
    fn invariant_scalar_gradient_is_equivariant() {
        // ∇_x E(g·x) = ρ(g)·∇_x E(x) for invariant E
        let d4 = make_dihedral(4).unwrap();
        let rep_in = scene_rep(&d4, 2);
        let rep_out = rep_trivial(&d4, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        let net = build_equivariant_mlp(&rep_in, &rep_out, 2, 1, &mut rng).unwrap();
        let mut ctx = GradContext::new();
        for _ in 0..10 {
            let x = Array1::from_shape_fn(rep_in.dim, |_| rng.gen_range(-1.0..1.0));
            ctx.forward(&net, x.view()).unwrap();
            let gx_grad = ctx.backward(&net, Array1::ones(1).view()).unwrap().input;
            for g in 0..d4.order {
                let xg = rep_in.act(g, x.view()).unwrap();
                ctx.forward(&net, xg.view()).unwrap();
                let grad_at_gx = ctx.backward(&net, Array1::ones(1).view()).unwrap().input;
                let expect = rep_in.act(g, gx_grad.view()).unwrap();
                let err = (&grad_at_gx - &expect).iter().map(|v| v.abs()).fold(0.0, f64::max);
                assert!(err < 1e-7, "g={g}: {err}");
            }
        }
    }

    #[test]
    fn sqrt_width_rule_parameter_parity() {
        // equivariant and plain nets agree in free-parameter count within 10%
        // at experiment scale: two hidden layers, scene ⊕ action input,
        // scalar output
        for (group, hiddens) in [
            (make_dihedral(4).unwrap(), vec![64usize, 96, 128]),
            (make_dihedral(8).unwrap(), vec![96, 128]),
        ] {
            let std = rep_standard(&group).unwrap();
            let rep_in = rep_direct_sum(&vec![std; 5]).unwrap();
            let rep_out = rep_trivial(&group, 1).unwrap();
            for h in hiddens {
                let copies = hidden_copies(&group, h);
                let mut rng = ChaCha20Rng::seed_from_u64(0);
                let eq = build_equivariant_mlp(&rep_in, &rep_out, copies, 2, &mut rng).unwrap();
                let plain = build_plain_mlp(&group, rep_in.dim, 1, h, 2, &mut rng);
                let ratio = eq.n_params() as f64 / plain.n_params() as f64;
                assert!(
                    (ratio - 1.0).abs() <= 0.10,
                    "{} h={h}: equivariant {} vs plain {} (ratio {ratio:.3})",
                    group.name,
                    eq.n_params(),
                    plain.n_params()
                );
            }
        }
    }

    #[test]
    fn bias_only_on_trivial_blocks() {
        let d4 = make_dihedral(4).unwrap();
        let std = rep_standard(&d4).unwrap();
        let out = rep_direct_sum(&[std, rep_trivial(&d4, 2).unwrap(), rep_sign(&d4).unwrap()]).unwrap();
        let rep_in = scene_rep(&d4, 1);
        let layer = Layer::equivariant(&rep_in, &out).unwrap();
        assert_eq!(layer.bias_mask, vec![false, false, true, true, false]);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let d4 = make_dihedral(4).unwrap();
        let rep_in = scene_rep(&d4, 2);
        let rep_out = rep_trivial(&d4, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let net = build_equivariant_mlp(&rep_in, &rep_out, 2, 1, &mut rng).unwrap();
        let json = save_checkpoint(&net).unwrap();
        let restored = load_checkpoint(&json, &d4).unwrap();
        let x = Array1::from_shape_fn(rep_in.dim, |_| rng.gen_range(-1.0..1.0));
        let y0 = net.forward(x.view()).unwrap();
        let y1 = restored.forward(x.view()).unwrap();
        assert_eq!(y0, y1);

        // plain nets round-trip too
        let plain = build_plain_mlp(&d4, 4, 2, 8, 1, &mut rng);
        let pjson = save_checkpoint(&plain).unwrap();
        let prestored = load_checkpoint(&pjson, &d4).unwrap();
        let px = Array1::from(vec![0.1, -0.2, 0.3, 0.4]);
        assert_eq!(plain.forward(px.view()).unwrap(), prestored.forward(px.view()).unwrap());
    }
}
