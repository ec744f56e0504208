//! Intertwiner bases for equivariant linear layers.
//!
//! A linear map W is an intertwiner between reps ρ_in and ρ_out when
//! ρ_out(g)·W = W·ρ_in(g) for all g. The space of such maps is computed by
//! group averaging: the projector
//!
//! ```text
//! P(W) = (1/|G|) Σ_g ρ_out(g)⁻¹ · W · ρ_in(g)
//! ```
//!
//! maps any W onto Hom_G(ρ_in, ρ_out). Candidate matrices are projected and
//! orthonormalized under the Frobenius inner product; residuals below 1e-8
//! are discarded.
//!
//! Direct sums factor the problem: Hom(⊕ᵢVᵢ, ⊕ⱼWⱼ) = ⊕ᵢⱼ Hom(Vᵢ, Wⱼ), so the
//! basis is computed per block pair and stored with its placement instead of
//! as full dense matrices. For a pair of regular blocks the commutant is
//! spanned by the right-multiplication permutations, so those are used as
//! candidates directly rather than all |G|² canonical matrices.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::Result;
use crate::group::{Block, Rep, RepKind};

/// Residual threshold below which a projected candidate is dropped.
const RANK_TOL: f64 = 1e-8;

/// One basis matrix, stored as its nonzero block plus placement offsets.
#[derive(Debug, Clone)]
pub struct BasisElement {
    pub row: usize,
    pub col: usize,
    pub local: Array2<f64>,
}

/// Orthonormal basis of Hom_G(ρ_in, ρ_out).
#[derive(Debug, Clone)]
pub struct IntertwinerBasis {
    pub dim_out: usize,
    pub dim_in: usize,
    pub elements: Vec<BasisElement>,
}

impl IntertwinerBasis {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Embeds basis element `k` as a dense dim_out × dim_in matrix.
    pub fn dense(&self, k: usize) -> Array2<f64> {
        let e = &self.elements[k];
        let mut m = Array2::zeros((self.dim_out, self.dim_in));
        m.slice_mut(ndarray::s![e.row..e.row + e.local.nrows(), e.col..e.col + e.local.ncols()])
            .assign(&e.local);
        m
    }

    /// Materializes W = Σ coeffs[k] · B_k.
    pub fn materialize(&self, coeffs: &Array1<f64>) -> Array2<f64> {
        let mut w = Array2::zeros((self.dim_out, self.dim_in));
        for (c, e) in coeffs.iter().zip(&self.elements) {
            let mut view = w.slice_mut(ndarray::s![
                e.row..e.row + e.local.nrows(),
                e.col..e.col + e.local.ncols()
            ]);
            view.scaled_add(*c, &e.local);
        }
        w
    }

    /// Projects a dense weight gradient onto the basis coefficients:
    /// grad_c[k] = ⟨grad_W, B_k⟩_F.
    pub fn project_gradient(&self, grad_w: &Array2<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.elements.len());
        for (k, e) in self.elements.iter().enumerate() {
            let view = grad_w.slice(ndarray::s![
                e.row..e.row + e.local.nrows(),
                e.col..e.col + e.local.ncols()
            ]);
            out[k] = view.iter().zip(e.local.iter()).map(|(a, b)| a * b).sum();
        }
        out
    }
}

/// Extracts the diagonal sub-matrices of one block of a representation.
fn block_matrices(rep: &Rep, offset: usize, dim: usize) -> Vec<Array2<f64>> {
    rep.matrices
        .iter()
        .map(|m| m.slice(ndarray::s![offset..offset + dim, offset..offset + dim]).to_owned())
        .collect()
}

/// Group-averaging projector restricted to one block pair.
fn project(
    w: &ArrayView2<f64>,
    out_mats: &[Array2<f64>],
    in_mats: &[Array2<f64>],
    inverse: &[usize],
) -> Array2<f64> {
    let order = out_mats.len();
    let mut acc = Array2::zeros(w.dim());
    for g in 0..order {
        acc += &out_mats[inverse[g]].dot(w).dot(&in_mats[g]);
    }
    acc / order as f64
}

fn frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Candidate matrices for one block pair.
///
/// Regular×regular pairs get the right-multiplication permutations (which
/// already span the commutant); everything else the canonical matrix units.
fn candidates(out_block: Block, in_block: Block, rep: &Rep) -> Vec<Array2<f64>> {
    if out_block.kind == RepKind::Regular && in_block.kind == RepKind::Regular {
        let group = &rep.group;
        let n = group.order;
        (0..n)
            .map(|k| {
                let mut m = Array2::zeros((n, n));
                for h in 0..n {
                    m[[group.mul(h, k), h]] = 1.0;
                }
                m
            })
            .collect()
    } else {
        let (r, c) = (out_block.dim, in_block.dim);
        (0..r * c)
            .map(|idx| {
                let mut m = Array2::zeros((r, c));
                m[[idx / c, idx % c]] = 1.0;
                m
            })
            .collect()
    }
}

/// Computes an orthonormal basis of Hom_G(rep_in, rep_out).
///
/// An empty basis is legal: the intertwiner space may be zero.
pub fn build_intertwiner_basis(rep_in: &Rep, rep_out: &Rep) -> Result<IntertwinerBasis> {
    if !std::sync::Arc::ptr_eq(&rep_in.group, &rep_out.group) && rep_in.group.name != rep_out.group.name {
        return Err(crate::error::Error::GroupMismatch(
            rep_in.group.name.clone(),
            rep_out.group.name.clone(),
        ));
    }
    let inverse = &rep_in.group.inverse;
    let mut elements = Vec::new();

    let mut row = 0usize;
    for out_block in &rep_out.blocks {
        let mut col = 0usize;
        let out_mats = block_matrices(rep_out, row, out_block.dim);
        for in_block in &rep_in.blocks {
            let in_mats = block_matrices(rep_in, col, in_block.dim);
            let mut accepted: Vec<Array2<f64>> = Vec::new();
            for cand in candidates(*out_block, *in_block, rep_in) {
                let mut p = project(&cand.view(), &out_mats, &in_mats, inverse);
                for b in &accepted {
                    let dot = frobenius(&p, b);
                    p.scaled_add(-dot, b);
                }
                let norm = frobenius(&p, &p).sqrt();
                if norm >= RANK_TOL {
                    elements.extend(std::iter::once(BasisElement { row, col, local: &p / norm }));
                    accepted.push(p / norm);
                }
            }
            col += in_block.dim;
        }
        row += out_block.dim;
    }

    Ok(IntertwinerBasis { dim_out: rep_out.dim, dim_in: rep_in.dim, elements })
}
