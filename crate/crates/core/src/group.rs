//! Finite symmetry groups and their orthogonal representations.
//!
//! Groups are stored as explicit multiplication tables; every other module
//! keys group elements by their index into the table, never by matrix.
//! Element 0 is always the identity.
//!
//! Representations map element indices to dense orthogonal matrices. The 2D
//! rotation convention follows
//!
//! ```text
//! R(θ) = [  cos θ   sin θ ]
//!        [ −sin θ   cos θ ]
//! ```
//!
//! and is used consistently everywhere (it is the transpose of the more
//! common convention).

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matching tolerance when closing 3D generator sets and resolving products.
const CLOSURE_TOL: f64 = 1e-9;

/// A finite group given by its multiplication table.
///
/// `cayley[a][b]` is the index of the product `a · b`; `inverse[k]` the index
/// of `k⁻¹`. The identity always sits at index 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub order: usize,
    pub cayley: Vec<Vec<usize>>,
    pub inverse: Vec<usize>,
    pub identity_index: usize,
    /// Defining 2D/3D matrices, kept so `rep_standard` can return them.
    #[serde(skip)]
    std_mats: Option<Vec<Array2<f64>>>,
}

impl GroupSpec {
    /// Product of two elements by index.
    #[inline]
    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.cayley[a][b]
    }

    /// Inverse of an element by index.
    #[inline]
    pub fn inv(&self, a: usize) -> usize {
        self.inverse[a]
    }

    /// Checks the group axioms on the stored tables.
    ///
    /// Identity row/column, inverses, and associativity over the full table.
    pub fn validate(&self) -> Result<()> {
        let n = self.order;
        let e = self.identity_index;
        if e != 0 {
            return Err(Error::Construction("identity must be element 0".into()));
        }
        if self.cayley.len() != n || self.inverse.len() != n {
            return Err(Error::Construction("table size mismatch".into()));
        }
        for k in 0..n {
            if self.cayley[e][k] != k || self.cayley[k][e] != k {
                return Err(Error::Construction(format!("identity law fails at {k}")));
            }
            if self.cayley[k][self.inverse[k]] != e {
                return Err(Error::Construction(format!("inverse law fails at {k}")));
            }
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if self.cayley[self.cayley[a][b]][c] != self.cayley[a][self.cayley[b][c]] {
                        return Err(Error::Construction(format!(
                            "associativity fails at ({a},{b},{c})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn same_group(&self, other: &GroupSpec) -> bool {
        self.name == other.name && self.order == other.order && self.cayley == other.cayley
    }
}

/// Cyclic group C_n: rotations by multiples of 2π/n.
pub fn make_cyclic(n: usize) -> Result<Arc<GroupSpec>> {
    if n == 0 {
        return Err(Error::InvalidOrder("cyclic group needs n >= 1".into()));
    }
    let cayley: Vec<Vec<usize>> = (0..n).map(|a| (0..n).map(|b| (a + b) % n).collect()).collect();
    let inverse: Vec<usize> = (0..n).map(|a| (n - a) % n).collect();
    Ok(Arc::new(GroupSpec {
        name: format!("c{n}"),
        order: n,
        cayley,
        inverse,
        identity_index: 0,
        std_mats: None,
    }))
}

/// Dihedral group D_n of order 2n.
///
/// Elements 0..n are the rotations r^k, elements n..2n the reflections s·r^k,
/// with composition following s·r = r⁻¹·s.
pub fn make_dihedral(n: usize) -> Result<Arc<GroupSpec>> {
    if n == 0 {
        return Err(Error::InvalidOrder("dihedral group needs n >= 1".into()));
    }
    let order = 2 * n;
    let mut cayley = vec![vec![0usize; order]; order];
    for a in 0..n {
        for b in 0..n {
            cayley[a][b] = (a + b) % n; // r^a r^b
            cayley[a][n + b] = n + (b + n - a) % n; // r^a (s r^b) = s r^{b-a}
            cayley[n + a][b] = n + (a + b) % n; // (s r^a) r^b = s r^{a+b}
            cayley[n + a][n + b] = (b + n - a) % n; // (s r^a)(s r^b) = r^{b-a}
        }
    }
    let mut inverse = vec![0usize; order];
    for a in 0..n {
        inverse[a] = (n - a) % n;
        inverse[n + a] = n + a; // reflections are involutions
    }
    Ok(Arc::new(GroupSpec {
        name: format!("d{n}"),
        order,
        cayley,
        inverse,
        identity_index: 0,
        std_mats: None,
    }))
}

/// Rotation by `angle` about a (normalized) 3D axis, via the Rodrigues formula.
fn rotation_about(axis: [f64; 3], angle: f64) -> Array2<f64> {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (kx, ky, kz) = (axis[0] / norm, axis[1] / norm, axis[2] / norm);
    let (s, c) = angle.sin_cos();
    let ic = 1.0 - c;
    ndarray::arr2(&[
        [c + kx * kx * ic, kx * ky * ic - kz * s, kx * kz * ic + ky * s],
        [ky * kx * ic + kz * s, c + ky * ky * ic, ky * kz * ic - kx * s],
        [kz * kx * ic - ky * s, kz * ky * ic + kx * s, c + kz * kz * ic],
    ])
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Closes a 3D rotation generator set under multiplication.
///
/// BFS from the identity; new products are matched against known elements
/// within `CLOSURE_TOL`. Bails out once `cap` elements are exceeded.
fn close_generators(name: &str, generators: &[Array2<f64>], expected: usize) -> Result<Arc<GroupSpec>> {
    let cap = expected + 1;
    let mut mats: Vec<Array2<f64>> = vec![Array2::eye(3)];
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(idx) = queue.pop_front() {
        for gen in generators {
            let prod = mats[idx].dot(gen);
            if !mats.iter().any(|m| max_abs_diff(m, &prod) < CLOSURE_TOL) {
                mats.push(prod);
                queue.push_back(mats.len() - 1);
                if mats.len() > cap {
                    return Err(Error::Construction(format!(
                        "{name}: closure exceeded expected order {expected}"
                    )));
                }
            }
        }
    }
    if mats.len() != expected {
        return Err(Error::Construction(format!(
            "{name}: closure produced {} elements, expected {expected}",
            mats.len()
        )));
    }

    let find = |m: &Array2<f64>| -> Result<usize> {
        mats.iter()
            .position(|k| max_abs_diff(k, m) < CLOSURE_TOL)
            .ok_or_else(|| Error::Construction(format!("{name}: product escaped the closure")))
    };
    let mut cayley = vec![vec![0usize; expected]; expected];
    for a in 0..expected {
        for b in 0..expected {
            cayley[a][b] = find(&mats[a].dot(&mats[b]))?;
        }
    }
    let mut inverse = vec![0usize; expected];
    for a in 0..expected {
        inverse[a] = find(&mats[a].t().to_owned())?;
    }
    Ok(Arc::new(GroupSpec {
        name: name.into(),
        order: expected,
        cayley,
        inverse,
        identity_index: 0,
        std_mats: Some(mats),
    }))
}

/// Rotation group of the octahedron (order 24).
pub fn make_octahedral() -> Result<Arc<GroupSpec>> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let gens = [rotation_about([0.0, 0.0, 1.0], half_pi), rotation_about([1.0, 0.0, 0.0], half_pi)];
    close_generators("octahedral", &gens, 24)
}

/// Rotation group of the icosahedron (order 60).
pub fn make_icosahedral() -> Result<Arc<GroupSpec>> {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let gens = [
        // 5-fold rotation about a vertex axis of the icosahedron with
        // vertices at cyclic permutations of (0, ±1, ±φ).
        rotation_about([0.0, 1.0, phi], 2.0 * std::f64::consts::PI / 5.0),
        // 2-fold rotation about an edge-midpoint axis.
        rotation_about([0.0, 0.0, 1.0], std::f64::consts::PI),
    ];
    close_generators("icosahedral", &gens, 60)
}

/// Tag for what a representation (or one block of a direct sum) is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepKind {
    Trivial,
    /// ±1 on dihedral elements: +1 on rotations, −1 on reflections.
    Sign,
    Standard2d,
    Standard3d,
    Regular,
    DirectSum,
}

/// One irreducible-style block of a representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: RepKind,
    pub dim: usize,
}

/// A representation: one orthogonal matrix per group element.
#[derive(Debug, Clone, Serialize)]
pub struct Rep {
    #[serde(serialize_with = "serialize_group_name")]
    pub group: Arc<GroupSpec>,
    pub dim: usize,
    pub kind: RepKind,
    /// Flattened block structure; direct sums concatenate their parts.
    pub blocks: Vec<Block>,
    pub matrices: Vec<Array2<f64>>,
}

fn serialize_group_name<S: serde::Serializer>(g: &Arc<GroupSpec>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&g.name)
}

impl Rep {
    /// Applies element `g` to a vector: `matrices[g] · v`.
    pub fn act(&self, g: usize, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: v.len() });
        }
        Ok(self.matrices[g].dot(&v))
    }

    /// Checks identity, homomorphism, and orthogonality invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.group.order;
        let eye = Array2::eye(self.dim);
        if max_abs_diff(&self.matrices[self.group.identity_index], &eye) > 1e-12 {
            return Err(Error::SymmetryViolation(format!(
                "identity matrix of rep on {} is not I", self.group.name
            )));
        }
        for (g, m) in self.matrices.iter().enumerate() {
            if max_abs_diff(&m.t().dot(m), &eye) > 1e-10 {
                return Err(Error::SymmetryViolation(format!(
                    "matrix {g} of rep on {} is not orthogonal", self.group.name
                )));
            }
        }
        for a in 0..n {
            for b in 0..n {
                let prod = self.matrices[a].dot(&self.matrices[b]);
                if max_abs_diff(&prod, &self.matrices[self.group.mul(a, b)]) > 1e-10 {
                    return Err(Error::SymmetryViolation(format!(
                        "homomorphism fails at ({a},{b}) for rep on {}", self.group.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when every matrix is a signed permutation (each row and column
    /// holding exactly one ±1). Such reps map the unit box onto itself, which
    /// decides box-vs-ball action clipping.
    pub fn is_signed_permutation(&self) -> bool {
        self.matrices.iter().all(|m| {
            let d = m.nrows();
            let mut col_used = vec![false; d];
            for r in 0..d {
                let mut hits = 0usize;
                for c in 0..d {
                    let v = m[[r, c]];
                    if v.abs() > 1e-12 {
                        if (v.abs() - 1.0).abs() > 1e-12 || col_used[c] {
                            return false;
                        }
                        col_used[c] = true;
                        hits += 1;
                    }
                }
                if hits != 1 {
                    return false;
                }
            }
            true
        })
    }
}

/// The trivial representation: `copies` coordinates fixed by every element.
pub fn rep_trivial(group: &Arc<GroupSpec>, copies: usize) -> Result<Rep> {
    if copies == 0 {
        return Err(Error::EmptyInput("trivial rep needs copies >= 1".into()));
    }
    let eye = Array2::eye(copies);
    Ok(Rep {
        group: group.clone(),
        dim: copies,
        kind: RepKind::Trivial,
        blocks: vec![Block { kind: RepKind::Trivial, dim: 1 }; copies],
        matrices: vec![eye; group.order],
    })
}

/// The sign representation of a dihedral group: +1 on rotations, −1 on
/// reflections. Carries pseudo-scalar features such as angular velocities.
pub fn rep_sign(group: &Arc<GroupSpec>) -> Result<Rep> {
    if !group.name.starts_with('d') {
        return Err(Error::NoStandardRep(format!("{} has no reflection sign rep", group.name)));
    }
    let n = group.order / 2;
    let matrices = (0..group.order)
        .map(|k| ndarray::arr2(&[[if k < n { 1.0 } else { -1.0 }]]))
        .collect();
    Ok(Rep {
        group: group.clone(),
        dim: 1,
        kind: RepKind::Sign,
        blocks: vec![Block { kind: RepKind::Sign, dim: 1 }],
        matrices,
    })
}

/// The standard (defining) representation.
///
/// For C_n element k this is the 2D rotation by θ = 2πk/n in the convention
/// above; dihedral reflections compose it with diag(1, −1); the 3D groups
/// return their defining rotation matrices.
pub fn rep_standard(group: &Arc<GroupSpec>) -> Result<Rep> {
    fn rot2(theta: f64) -> Array2<f64> {
        let (s, c) = theta.sin_cos();
        ndarray::arr2(&[[c, s], [-s, c]])
    }
    let reflect = ndarray::arr2(&[[1.0, 0.0], [0.0, -1.0]]);

    if let Some(mats) = &group.std_mats {
        return Ok(Rep {
            group: group.clone(),
            dim: 3,
            kind: RepKind::Standard2d, // overwritten below
            blocks: vec![Block { kind: RepKind::Standard3d, dim: 3 }],
            matrices: mats.clone(),
        }
        .with_kind(RepKind::Standard3d));
    }

    let name = group.name.clone();
    let matrices: Vec<Array2<f64>> = if let Some(n) = name.strip_prefix('c').and_then(|s| s.parse::<usize>().ok()) {
        (0..n).map(|k| rot2(2.0 * std::f64::consts::PI * k as f64 / n as f64)).collect()
    } else if let Some(n) = name.strip_prefix('d').and_then(|s| s.parse::<usize>().ok()) {
        let mut m: Vec<Array2<f64>> =
            (0..n).map(|k| rot2(2.0 * std::f64::consts::PI * k as f64 / n as f64)).collect();
        for k in 0..n {
            m.push(reflect.dot(&m[k]));
        }
        m
    } else {
        return Err(Error::NoStandardRep(name));
    };
    Ok(Rep {
        group: group.clone(),
        dim: 2,
        kind: RepKind::Standard2d,
        blocks: vec![Block { kind: RepKind::Standard2d, dim: 2 }],
        matrices,
    })
}

impl Rep {
    fn with_kind(mut self, kind: RepKind) -> Rep {
        self.kind = kind;
        self
    }
}

/// The regular representation: permutation matrices of left multiplication,
/// `P_g e_h = e_{g·h}`.
pub fn rep_regular(group: &Arc<GroupSpec>) -> Rep {
    let n = group.order;
    let matrices = (0..n)
        .map(|g| {
            let mut m = Array2::zeros((n, n));
            for h in 0..n {
                m[[group.mul(g, h), h]] = 1.0;
            }
            m
        })
        .collect();
    Rep {
        group: group.clone(),
        dim: n,
        kind: RepKind::Regular,
        blocks: vec![Block { kind: RepKind::Regular, dim: n }],
        matrices,
    }
}

/// Block-diagonal direct sum of representations of one group.
pub fn rep_direct_sum(parts: &[Rep]) -> Result<Rep> {
    let first = parts.first().ok_or_else(|| Error::EmptyInput("direct sum of zero reps".into()))?;
    for p in parts.iter().skip(1) {
        if !p.group.same_group(&first.group) {
            return Err(Error::GroupMismatch(first.group.name.clone(), p.group.name.clone()));
        }
    }
    let dim: usize = parts.iter().map(|p| p.dim).sum();
    let order = first.group.order;
    let mut matrices = Vec::with_capacity(order);
    for g in 0..order {
        let mut m = Array2::zeros((dim, dim));
        let mut off = 0;
        for p in parts {
            m.slice_mut(ndarray::s![off..off + p.dim, off..off + p.dim]).assign(&p.matrices[g]);
            off += p.dim;
        }
        matrices.push(m);
    }
    Ok(Rep {
        group: first.group.clone(),
        dim,
        kind: RepKind::DirectSum,
        blocks: parts.iter().flat_map(|p| p.blocks.iter().copied()).collect(),
        matrices,
    })
}
