//! Value iteration on the rotation-symmetric gridworld.
//!
//! Executable witness that the Bellman optimality operator commutes with the
//! C₄ action on the grid: rotating a value field and applying the operator
//! equals applying the operator first and rotating the result. Since the
//! fixed point is unique, it follows that V* is rotation invariant.

use ndarray::Array2;

use crate::envs::GridMdp;
use crate::error::{Error, Result};

/// Scalar field over the grid.
pub type ValueField = Array2<f64>;

/// One Bellman optimality sweep: T[V](s) = max_a [R(s,a) + γ·V(next(s,a))].
pub fn bellman_apply(mdp: &GridMdp, v: &ValueField) -> ValueField {
    let n = mdp.n;
    let mut out = Array2::zeros((n, n));
    for r in 0..n {
        for c in 0..n {
            let reward = mdp.reward((r, c));
            let mut best = f64::NEG_INFINITY;
            for a in 0..4 {
                let (nr, nc) = mdp.transition((r, c), a);
                let q = reward + mdp.gamma * v[[nr, nc]];
                if q > best {
                    best = q;
                }
            }
            out[[r, c]] = best;
        }
    }
    out
}

/// Rotates a value field by 90°·k clockwise about the grid center,
/// i.e. (g·V)(s) = V(g⁻¹·s).
pub fn rotate_field(v: &ValueField, quarter_turns: usize) -> ValueField {
    let n = v.nrows();
    let mut out = v.clone();
    for _ in 0..quarter_turns % 4 {
        let prev = out.clone();
        for r in 0..n {
            for c in 0..n {
                // cell (r,c) was (n-1-c, r) before a clockwise turn
                out[[r, c]] = prev[[n - 1 - c, r]];
            }
        }
    }
    out
}

/// Iterates the Bellman operator from V = 0 until ‖ΔV‖∞ < tol.
pub fn value_iterate(mdp: &GridMdp, tol: f64, max_iters: usize) -> Result<(ValueField, usize)> {
    let mut v: ValueField = Array2::zeros((mdp.n, mdp.n));
    for iter in 1..=max_iters {
        let next = bellman_apply(mdp, &v);
        let delta = (&next - &v).iter().map(|x| x.abs()).fold(0.0, f64::max);
        v = next;
        if delta < tol {
            return Ok((v, iter));
        }
    }
    Err(Error::NonConvergence(max_iters))
}
