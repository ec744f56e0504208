//! Finite symmetry groups, equivariant networks, analytic geometric MDPs, and
//! group-augmented sampling-based action selection.
//!
//! The crate is organized around a small algebra core ([`group`]) that every
//! other module consumes:
//!
//! * [`group`] — finite groups (cyclic, dihedral, octahedral, icosahedral),
//!   their orthogonal representations, and group actions on vectors.
//! * [`net`] — equivariant multilayer perceptrons built from intertwiner
//!   bases, with exact reverse-mode gradients and an InfoNCE energy trainer.
//! * [`envs`] — analytic environments whose dynamics and rewards verifiably
//!   commute with a finite group action, plus a rotation-symmetric gridworld.
//! * [`samplers`] — CEM and MPPI planners with group-augmented candidate
//!   sampling and exact selection equivariance.
//! * [`estimators`] — toy invariant-energy estimators, group-averaged
//!   symmetrization, and the error-domination checks.
//! * [`value_iteration`] — Bellman sweeps on the gridworld and their
//!   commutation with quarter-turn rotations.

pub mod envs;
pub mod error;
pub mod estimators;
pub mod group;
pub mod net;
pub mod samplers;
pub mod value_iteration;

pub use error::{Error, Result};
