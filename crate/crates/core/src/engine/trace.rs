use serde::{Deserialize, Serialize};

use crate::Vector;

/// One iteration of the line-search method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    /// `‖r^k‖₂`
    pub res_norm: f64,
    /// `‖r̄^k‖₂`, residual at the nominal point.
    pub nominal_res_norm: f64,
    /// Accepted step length `α_k`.
    pub alpha_k: f64,
    /// Number of candidate step lengths evaluated.
    pub candidates: usize,
    /// Whether the activation rule allowed a search.
    pub activated: bool,
    /// `‖r̄^k − r^k‖₂`
    pub gap_norm: f64,
    /// `‖r^{k+1} − r^k‖₂`
    pub change_norm: f64,
    /// Applications of `S₁` (or of its linear part) during this iteration.
    pub s1_evals: usize,
    pub s2_evals: usize,
    /// Candidates were evaluated by direct composition instead of the affine cache.
    pub slow_path: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    InfeasibilitySuspected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    /// `‖r⁰‖₂`
    pub initial_res_norm: f64,
    /// Residual norm at the returned iterate.
    pub final_res_norm: f64,
    /// Absolute stopping threshold `tol·max(1, ‖r⁰‖₂)`.
    pub threshold: f64,
    /// Averaging parameter `α̃` of the operator that produced the trace.
    pub averaging: f64,
    pub nominal_step: f64,
    /// Evaluations spent computing `r⁰`.
    pub init_s1_evals: usize,
    pub init_s2_evals: usize,
    pub records: Vec<StepRecord>,
    pub status: Option<SolveStatus>,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn total_s1_evals(&self) -> usize {
        self.init_s1_evals + self.records.iter().map(|r| r.s1_evals).sum::<usize>()
    }

    pub fn total_s2_evals(&self) -> usize {
        self.init_s2_evals + self.records.iter().map(|r| r.s2_evals).sum::<usize>()
    }

    /// Iterations whose accepted step exceeded the nominal one.
    pub fn accepted_searches(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.alpha_k > self.nominal_step)
            .count()
    }

    /// Residual norms `‖r⁰‖, …, ‖r^K‖` including the final one.
    pub fn residual_norms(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.records.iter().map(|r| r.res_norm).collect();
        out.push(self.final_res_norm);
        out
    }

    /// First `k` with `‖r^{k+1}‖ > ‖r^k‖·(1 + slack)`, if any.
    pub fn monotonicity_violation(&self, slack: f64) -> Option<usize> {
        let norms = self.residual_norms();
        norms
            .windows(2)
            .position(|w| w[1] > w[0] * (1.0 + slack))
    }

    /// First `k` where a step longer than nominal was taken without
    /// `‖r^{k+1}‖ ≤ (1 − ε)‖r̄^k‖` (up to a relative `slack`).
    pub fn acceptance_violation(&self, epsilon: f64, slack: f64) -> Option<usize> {
        let norms = self.residual_norms();
        self.records.iter().position(|rec| {
            rec.alpha_k > self.nominal_step
                && norms[rec.k + 1] > (1.0 - epsilon) * rec.nominal_res_norm * (1.0 + slack)
        })
    }

    /// `Σ_k ‖r̄^k − r^k‖²`
    pub fn telescoped_sum(&self) -> f64 {
        self.records.iter().map(|r| r.gap_norm * r.gap_norm).sum()
    }

    /// `α̃/(1 − α̃)·‖r⁰‖²`, the bound on [`Self::telescoped_sum`].
    pub fn telescoped_bound(&self) -> f64 {
        self.averaging / (1.0 - self.averaging) * self.initial_res_norm * self.initial_res_norm
    }

    /// `min_{k ≤ n} ‖r̄^k − r^k‖²` and its bound `α̃‖r⁰‖²/((n+1)(1 − α̃))`.
    pub fn best_gap_and_bound(&self) -> Option<(f64, f64)> {
        let n = self.records.len();
        let best = self
            .records
            .iter()
            .map(|r| r.gap_norm * r.gap_norm)
            .min_by(f64::total_cmp)?;
        Some((best, self.telescoped_bound() / n as f64))
    }
}

/// Outcome of a solve.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vector,
    /// Estimate of the infimal displacement vector when infeasibility is suspected.
    pub displacement: Option<Vector>,
    pub trace: IterationTrace,
}
