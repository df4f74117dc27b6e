//! Proximal operators, projections, reflections and affine maps.
//!
//! Everything here is immutable after construction. An operator is applied
//! through [`Operator::apply`]; operators that are affine, `x ↦ Fx + h`, also
//! expose the linear part `d ↦ Fd` through [`AffineOperator::linear`] so the
//! engine can evaluate `S₁(x + αd) = S₁(x) + α·Fd` with vector operations only.

mod kkt;
mod prox;
mod sets;

use std::fmt;
use std::sync::Arc;

use crate::{Error, Matrix, Result, Vector};

pub use kkt::{prox_quadratic_affine, KktProx, KktSystem, QuadraticTerm};
pub use prox::{ProxFn, SoftThreshold};
pub use sets::{
    consensus_reflect, project, AffineSetProjection, BallProjection, ConsensusProjection,
    HalfspaceProjection, HyperplaneProjection, OrthantProjection, SetDescriptor,
};

/// A map `ℝⁿ → ℝⁿ`.
pub trait Operator: fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &Vector) -> Vector;
}

/// An operator of the form `x ↦ Fx + h`.
///
/// Implementations must satisfy `apply(x + αd) = apply(x) + α·linear(d)`.
pub trait AffineOperator: Operator {
    /// Applies the linear part: `d ↦ Fd`.
    fn linear(&self, d: &Vector) -> Vector;

    /// The constant part `h = apply(0)`.
    fn offset(&self) -> Vector {
        self.apply(&Vector::zeros(self.dim()))
    }
}

impl<T: Operator + ?Sized> Operator for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, x: &Vector) -> Vector {
        (**self).apply(x)
    }
}

impl<T: AffineOperator + ?Sized> AffineOperator for Arc<T> {
    fn linear(&self, d: &Vector) -> Vector {
        (**self).linear(d)
    }

    fn offset(&self) -> Vector {
        (**self).offset()
    }
}

/// A shareable operator that remembers whether it is affine.
#[derive(Clone, Debug)]
pub enum Stage {
    Affine(Arc<dyn AffineOperator>),
    General(Arc<dyn Operator>),
}

impl Stage {
    pub fn affine(op: impl AffineOperator + 'static) -> Self {
        Stage::Affine(Arc::new(op))
    }

    pub fn general(op: impl Operator + 'static) -> Self {
        Stage::General(Arc::new(op))
    }

    pub fn identity(dim: usize) -> Self {
        Stage::affine(Identity::new(dim))
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, Stage::Affine(_))
    }

    pub fn as_affine(&self) -> Option<&Arc<dyn AffineOperator>> {
        match self {
            Stage::Affine(op) => Some(op),
            Stage::General(_) => None,
        }
    }

    /// `2·self − id`. Reflecting an affine stage yields an affine stage.
    pub fn reflect(&self) -> Stage {
        match self {
            Stage::Affine(op) => Stage::affine(Reflection(op.clone())),
            Stage::General(op) => Stage::general(Reflection(op.clone())),
        }
    }
}

impl Operator for Stage {
    fn dim(&self) -> usize {
        match self {
            Stage::Affine(op) => op.dim(),
            Stage::General(op) => op.dim(),
        }
    }

    fn apply(&self, x: &Vector) -> Vector {
        match self {
            Stage::Affine(op) => op.apply(x),
            Stage::General(op) => op.apply(x),
        }
    }
}

/// Reflection of an operator: `z ↦ 2·T(z) − z`.
pub fn reflect(op: &Stage) -> Stage {
    op.reflect()
}

#[derive(Clone, Debug)]
pub struct Identity {
    dim: usize,
}

impl Identity {
    pub fn new(dim: usize) -> Self {
        Identity { dim }
    }
}

impl Operator for Identity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Vector) -> Vector {
        x.clone()
    }
}

impl AffineOperator for Identity {
    fn linear(&self, d: &Vector) -> Vector {
        d.clone()
    }
}

/// `x ↦ Fx + h` with an explicitly stored square `F`.
#[derive(Clone, Debug)]
pub struct DenseAffine {
    f: Matrix,
    h: Vector,
}

impl DenseAffine {
    pub fn new(f: Matrix, h: Vector) -> Result<Self> {
        if !f.is_square() || f.nrows() != h.len() {
            return Err(Error::dim(format!(
                "affine map needs square F matching h, got {}x{} and {}",
                f.nrows(),
                f.ncols(),
                h.len()
            )));
        }
        Ok(DenseAffine { f, h })
    }

    pub fn linear_map(f: Matrix) -> Result<Self> {
        let h = Vector::zeros(f.nrows());
        Self::new(f, h)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.f
    }
}

impl Operator for DenseAffine {
    fn dim(&self) -> usize {
        self.h.len()
    }

    fn apply(&self, x: &Vector) -> Vector {
        &self.f * x + &self.h
    }
}

impl AffineOperator for DenseAffine {
    fn linear(&self, d: &Vector) -> Vector {
        &self.f * d
    }

    fn offset(&self) -> Vector {
        self.h.clone()
    }
}

#[derive(Clone, Debug)]
pub struct Reflection<T>(pub T);

impl<T: Operator> Operator for Reflection<T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &Vector) -> Vector {
        self.0.apply(x) * 2.0 - x
    }
}

impl<T: AffineOperator> AffineOperator for Reflection<T> {
    fn linear(&self, d: &Vector) -> Vector {
        self.0.linear(d) * 2.0 - d
    }
}

/// `outer ∘ inner` of two affine maps.
#[derive(Clone, Debug)]
pub struct Composition {
    outer: Arc<dyn AffineOperator>,
    inner: Arc<dyn AffineOperator>,
}

impl Composition {
    pub fn new(outer: Arc<dyn AffineOperator>, inner: Arc<dyn AffineOperator>) -> Result<Self> {
        if outer.dim() != inner.dim() {
            return Err(Error::dim(format!(
                "cannot compose maps of dimension {} and {}",
                outer.dim(),
                inner.dim()
            )));
        }
        Ok(Composition { outer, inner })
    }
}

impl Operator for Composition {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &Vector) -> Vector {
        self.outer.apply(&self.inner.apply(x))
    }
}

impl AffineOperator for Composition {
    fn linear(&self, d: &Vector) -> Vector {
        self.outer.linear(&self.inner.linear(d))
    }
}

/// Gradient step on `½xᵀPx + qᵀx`: `x ↦ (I − γP)x − γq`.
#[derive(Clone, Debug)]
pub struct GradientStep {
    p: Matrix,
    q: Vector,
    gamma: f64,
}

impl GradientStep {
    pub fn new(p: Matrix, q: Vector, gamma: f64) -> Result<Self> {
        if !p.is_square() || p.nrows() != q.len() {
            return Err(Error::dim(format!(
                "P is {}x{} but q has length {}",
                p.nrows(),
                p.ncols(),
                q.len()
            )));
        }
        Ok(GradientStep { p, q, gamma })
    }
}

impl Operator for GradientStep {
    fn dim(&self) -> usize {
        self.q.len()
    }

    fn apply(&self, x: &Vector) -> Vector {
        x - (&self.p * x + &self.q) * self.gamma
    }
}

impl AffineOperator for GradientStep {
    fn linear(&self, d: &Vector) -> Vector {
        d - &self.p * d * self.gamma
    }

    fn offset(&self) -> Vector {
        &self.q * -self.gamma
    }
}

/// Applies one stage per contiguous block of a stacked vector.
#[derive(Clone, Debug)]
pub struct BlockDiagonal {
    blocks: Vec<Stage>,
    dim: usize,
}

impl BlockDiagonal {
    pub fn new(blocks: Vec<Stage>) -> Self {
        let dim = blocks.iter().map(Operator::dim).sum();
        BlockDiagonal { blocks, dim }
    }

    pub fn blocks(&self) -> &[Stage] {
        &self.blocks
    }

    /// Wraps as an affine stage when every block is affine.
    pub fn into_stage(self) -> Stage {
        if self.blocks.iter().all(Stage::is_affine) {
            Stage::affine(AffineBlocks(self))
        } else {
            Stage::general(self)
        }
    }
}

impl Operator for BlockDiagonal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim);
        let mut start = 0;
        for block in &self.blocks {
            let n = block.dim();
            let part = block.apply(&x.rows(start, n).into_owned());
            out.rows_mut(start, n).copy_from(&part);
            start += n;
        }
        out
    }
}

#[derive(Clone, Debug)]
struct AffineBlocks(BlockDiagonal);

impl Operator for AffineBlocks {
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn apply(&self, x: &Vector) -> Vector {
        self.0.apply(x)
    }
}

impl AffineOperator for AffineBlocks {
    fn linear(&self, d: &Vector) -> Vector {
        let mut out = Vector::zeros(self.0.dim);
        let mut start = 0;
        for block in &self.0.blocks {
            let n = block.dim();
            let op = block.as_affine().expect("all blocks are affine");
            let part = op.linear(&d.rows(start, n).into_owned());
            out.rows_mut(start, n).copy_from(&part);
            start += n;
        }
        out
    }
}
