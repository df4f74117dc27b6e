use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How candidate step lengths are generated along the residual ray.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Schedule {
    /// `alpha_max, alpha_max·factor, alpha_max·factor², …` while above the nominal step.
    GeometricBacktrack { factor: f64 },
    /// `start + i·spacing` for `i < count`, keeping values in `(nominal, alpha_max]`.
    LinearForward { start: f64, spacing: f64, count: usize },
}

/// Which passing candidate becomes the next iterate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// First candidate in schedule order that passes; stops evaluating there.
    FirstPassing,
    /// Passing candidate with the smallest residual norm.
    BestOfSchedule,
    /// Passing candidate with the largest step length.
    FarthestPassing,
}

/// When the line search runs at all.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Activation {
    AlwaysSearch,
    /// Search only when the new step direction is almost aligned with the
    /// previous iterate difference (cosine above `1 − eps_hat`).
    CosineAligned { eps_hat: f64 },
    Never,
}

/// Parameters of the infeasibility detector (see [`super::detect_infeasibility`]).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityCheck {
    pub window: usize,
    pub delta_tol: f64,
}

impl Default for InfeasibilityCheck {
    fn default() -> Self {
        InfeasibilityCheck {
            window: 50,
            delta_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    /// Required relative decrease over the nominal residual, in `(0, 1)`.
    pub epsilon: f64,
    pub alpha_max: f64,
    pub schedule: Schedule,
    pub selection: Selection,
    pub activation: Activation,
    /// Stop when `‖r‖ ≤ tol·max(1, ‖r⁰‖)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations between exact re-evaluations of the cached `S₁(x)`.
    pub refresh_period: usize,
    pub infeasibility: Option<InfeasibilityCheck>,
}

pub const DEFAULT_EPS_HAT: f64 = 0.01;

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            epsilon: 0.03,
            alpha_max: 50.0,
            schedule: Schedule::GeometricBacktrack { factor: 1.0 / 1.4 },
            selection: Selection::FirstPassing,
            activation: Activation::AlwaysSearch,
            tol: 1e-6,
            max_iter: 100_000,
            refresh_period: 50,
            infeasibility: Some(InfeasibilityCheck::default()),
        }
    }
}

impl LineSearchConfig {
    /// The plain averaged iteration: no candidates are ever evaluated.
    pub fn without_search(mut self) -> Self {
        self.activation = Activation::Never;
        self
    }

    pub fn validate(&self, nominal: f64) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.epsilon) {
            return Err(Error::config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.alpha_max.is_finite() && self.alpha_max >= nominal) {
            return Err(Error::config(format!(
                "alpha_max ({}) must be finite and at least the nominal step {nominal}",
                self.alpha_max
            )));
        }
        match self.schedule {
            Schedule::GeometricBacktrack { factor } if !in_unit(factor) => {
                return Err(Error::config(format!("backtracking factor must lie in (0, 1), got {factor}")));
            }
            Schedule::LinearForward { start, spacing, .. }
                if !(start.is_finite() && spacing.is_finite() && spacing > 0.0) =>
            {
                return Err(Error::config("linear schedule needs finite start and positive spacing"));
            }
            _ => {}
        }
        if let Activation::CosineAligned { eps_hat } = self.activation {
            if !in_unit(eps_hat) {
                return Err(Error::config(format!("eps_hat must lie in (0, 1), got {eps_hat}")));
            }
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::config("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter must be positive"));
        }
        if self.refresh_period == 0 {
            return Err(Error::config("refresh_period must be positive"));
        }
        if let Some(check) = self.infeasibility {
            if check.window == 0 || !(check.delta_tol > 0.0) {
                return Err(Error::config("infeasibility window and delta_tol must be positive"));
            }
        }
        Ok(())
    }

    /// Candidate step lengths in evaluation order, all in `(nominal, alpha_max]`.
    pub fn candidates(&self, nominal: f64) -> Vec<f64> {
        match self.schedule {
            Schedule::GeometricBacktrack { factor } => {
                let mut out = Vec::new();
                let mut alpha = self.alpha_max;
                while alpha > nominal {
                    out.push(alpha);
                    alpha *= factor;
                }
                out
            }
            Schedule::LinearForward { start, spacing, count } => (0..count)
                .map(|i| start + i as f64 * spacing)
                .filter(|&a| a > nominal && a <= self.alpha_max)
                .collect(),
        }
    }
}
