//! Line search for averaged iterations of nonexpansive operators.
//!
//! Many first-order splitting methods (forward-backward, Douglas-Rachford,
//! ADMM, consensus, alternating projections) iterate
//! `x⁺ = x + α̃ (Sx − x)` for a nonexpansive `S`. This crate implements a
//! line search along the fixed-point residual `r = Sx − x` that keeps the
//! convergence guarantees of the nominal iteration, together with a cached
//! evaluation path that makes candidate step lengths nearly free whenever
//! `S = S₂ ∘ S₁` with `S₁` affine.
//!
//! * [`operators`]: proximal operators, projections, reflections and the
//!   affine-map machinery (including cached KKT factorizations).
//! * [`engine`]: the line-search iteration, traces and stopping rules.
//! * [`splitting`]: builders for the five supported algorithms.
//! * [`problems`]: instance generators and the JSON problem / CSV trace formats.

pub mod engine;
pub mod error;
pub mod operators;
pub mod problems;
pub mod splitting;

pub use engine::{
    Activation, IterationTrace, LineSearchConfig, Schedule, Selection, SolveResult, SolveStatus,
    Solver, StepRecord,
};
pub use error::{Error, Result};
pub use operators::{AffineOperator, Operator, Stage};
pub use engine::{Form, SplitOperator};

/// Dense real coordinate vector.
pub type Vector = nalgebra::DVector<f64>;
/// Dense real matrix.
pub type Matrix = nalgebra::DMatrix<f64>;
