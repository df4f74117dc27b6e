use super::kkt::QuadraticTerm;
use super::sets::SetDescriptor;
use super::{Identity, Operator, Stage};
use crate::{Error, Result, Vector};

/// A function with a cheap (or cached) proximal operator.
#[derive(Clone, Debug, PartialEq)]
pub enum ProxFn {
    Zero { dim: usize },
    /// `weight·‖x‖₁`
    L1 { dim: usize, weight: f64 },
    /// Indicator of a closed convex set.
    Indicator(SetDescriptor),
    Quadratic(QuadraticTerm),
}

impl ProxFn {
    pub fn dim(&self) -> usize {
        match self {
            ProxFn::Zero { dim } | ProxFn::L1 { dim, .. } => *dim,
            ProxFn::Indicator(set) => set.dim(),
            ProxFn::Quadratic(term) => term.dim(),
        }
    }

    /// `prox_{γf}`. Affine whenever the function is quadratic over an affine set.
    pub fn prox(&self, gamma: f64) -> Result<Stage> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::config(format!("prox step γ must be positive, got {gamma}")));
        }
        match self {
            ProxFn::Zero { dim } => Ok(Stage::affine(Identity::new(*dim))),
            ProxFn::L1 { dim, weight } => {
                if *weight < 0.0 {
                    return Err(Error::config("l1 weight must be nonnegative"));
                }
                Ok(Stage::general(SoftThreshold {
                    dim: *dim,
                    threshold: weight * gamma,
                }))
            }
            ProxFn::Indicator(set) => set.projector(),
            ProxFn::Quadratic(term) => Ok(Stage::affine(term.prox(gamma)?)),
        }
    }

    /// `R_{γf} = 2·prox_{γf} − id`.
    pub fn reflection(&self, gamma: f64) -> Result<Stage> {
        Ok(self.prox(gamma)?.reflect())
    }

    /// Function value, `+∞` outside the domain (membership tolerance `tol`).
    pub fn value(&self, x: &Vector, tol: f64) -> f64 {
        match self {
            ProxFn::Zero { .. } => 0.0,
            ProxFn::L1 { weight, .. } => weight * x.lp_norm(1),
            ProxFn::Indicator(set) => {
                if set.contains(x, tol) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFn::Quadratic(term) => {
                let feasible = match (&term.aeq, &term.beq) {
                    (Some(a), Some(b)) => (a * x - b).amax() <= tol,
                    _ => true,
                };
                if feasible {
                    term.value(x)
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// Componentwise soft thresholding, the prox of `t·‖x‖₁` with `t = weight·γ`.
#[derive(Clone, Debug)]
pub struct SoftThreshold {
    pub dim: usize,
    pub threshold: f64,
}

impl Operator for SoftThreshold {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Vector) -> Vector {
        let t = self.threshold;
        x.map(|v| v.signum() * (v.abs() - t).max(0.0))
    }
}
