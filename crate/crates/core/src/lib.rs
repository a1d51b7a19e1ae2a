//! Constrained optimization on the manifold of symmetric positive definite
//! matrices.
//!
//! The crate is organised around four layers:
//!
//! - [`spd`]: the SPD point type, LogDet divergence, tangent projection and
//!   the eigenvalue-clipping retraction.
//! - [`solver`]: a generic proximal primal-dual loop over an augmented
//!   Lagrangian, with the step-size schedule and convergence-bound
//!   calculators.
//! - [`rpdml`]: metric learning with pairwise distance constraints, solved
//!   by plugging a Riemannian gradient-descent inner solver into [`solver`].
//! - [`eval`]: k-NN prediction, Spearman information coefficient and a
//!   rolling-window top-N portfolio backtest.
//!
//! [`data`] holds feature normalization and the seeded synthetic dataset
//! generators used by the examples, tests and the command-line runner.
//!
//! Data-parallel loops (per-constraint evaluation, batched k-NN queries,
//! per-period backtest windows) run on rayon when the `parallel` feature is
//! enabled and fall back to sequential iteration otherwise. Reductions use a
//! fixed chunking so both modes produce bit-identical results.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod par;
pub mod rng;
pub mod rpdml;
pub mod solver;
pub mod spd;

pub use error::{Error, Result};
pub use par::Execution;
pub use spd::{EigenDecomposition, SpdMatrix, EPS_PD};
