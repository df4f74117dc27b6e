//! The line-search averaged iteration.
//!
//! Each iteration computes the nominal point `x̄ = x + α̃r` and its residual
//! `r̄`, then (if the activation rule allows) tries candidate step lengths
//! `α ∈ (α̃, α_max]` along the same ray. A candidate is accepted only if its
//! residual satisfies `‖r(x + αr)‖ ≤ (1 − ε)‖r̄‖`; otherwise the nominal step is
//! taken. The accepted candidate's residual is kept and reused as the next
//! iteration's `r`, so no evaluation is wasted.
//!
//! When `S₁` is affine the iteration keeps `S₁(x)` cached and computes
//! `F·r` once per iteration; every candidate then costs one `S₂` application
//! and a few vector operations.

mod config;
mod trace;

use std::mem;

use serde::{Deserialize, Serialize};

use crate::operators::{AffineOperator, Operator, Stage};
use crate::{Error, Result, Vector};

pub use config::{
    Activation, InfeasibilityCheck, LineSearchConfig, Schedule, Selection, DEFAULT_EPS_HAT,
};
pub use trace::{IterationTrace, SolveResult, SolveStatus, StepRecord};

/// Whether the operator is exposed as the nonexpansive `S` (with nominal step
/// `α̃`) or as a pre-averaged composition `T₂T₁` (nominal step 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    SForm,
    TForm,
}

/// `S = S₂ ∘ S₁` (or `T₂ ∘ T₁`) together with its averaging parameter.
#[derive(Clone, Debug)]
pub struct SplitOperator {
    s1: Stage,
    s2: Stage,
    form: Form,
    averaging: f64,
}

impl SplitOperator {
    /// `averaging` is `α̃ ∈ (0, 1)`. For the T-form it is only recorded (the
    /// nominal step is 1) and used when checking convergence bounds.
    pub fn new(s1: Stage, s2: Stage, form: Form, averaging: f64) -> Result<Self> {
        if s1.dim() != s2.dim() {
            return Err(Error::dim(format!(
                "S₁ has dimension {} but S₂ has dimension {}",
                s1.dim(),
                s2.dim()
            )));
        }
        if !(averaging > 0.0 && averaging < 1.0) {
            return Err(Error::config(format!(
                "averaging parameter must lie in (0, 1), got {averaging}"
            )));
        }
        Ok(SplitOperator {
            s1,
            s2,
            form,
            averaging,
        })
    }

    /// An S-form operator with `S₂ = id`.
    pub fn from_operator(s: Stage, averaging: f64) -> Result<Self> {
        let id = Stage::identity(s.dim());
        Self::new(s, id, Form::SForm, averaging)
    }

    pub fn s1(&self) -> &Stage {
        &self.s1
    }

    pub fn s2(&self) -> &Stage {
        &self.s2
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn averaging(&self) -> f64 {
        self.averaging
    }

    pub fn nominal_step(&self) -> f64 {
        match self.form {
            Form::SForm => self.averaging,
            Form::TForm => 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.s1.dim()
    }

    /// `S₂(S₁(x))` by direct composition.
    pub fn apply(&self, x: &Vector) -> Vector {
        self.s2.apply(&self.s1.apply(x))
    }

    pub fn residual(&self, x: &Vector) -> Vector {
        self.apply(x) - x
    }
}

/// Cached `S₁(x^k) = Fx^k + h` for the current iterate.
#[derive(Clone, Debug)]
pub struct AffineCache {
    s1x: Vector,
    since_anchor: usize,
}

impl AffineCache {
    pub fn anchor(s1: &dyn AffineOperator, x: &Vector) -> Self {
        AffineCache {
            s1x: s1.apply(x),
            since_anchor: 0,
        }
    }

    pub fn value(&self) -> &Vector {
        &self.s1x
    }

    pub fn since_anchor(&self) -> usize {
        self.since_anchor
    }
}

/// Moves the cache from `x^k` to `x^{k+1} = x^k + α_k r^k` using
/// `S₁(x^{k+1}) = S₁(x^k) + α_k·Fr^k`, and re-anchors with an exact `S₁`
/// application every `refresh_period` updates. Returns whether it re-anchored.
pub fn refresh_cache(
    s1: &dyn AffineOperator,
    cache: &mut AffineCache,
    x_next: &Vector,
    alpha: f64,
    f_r: &Vector,
    refresh_period: usize,
) -> bool {
    cache.s1x.axpy(alpha, f_r, 1.0);
    cache.since_anchor += 1;
    if cache.since_anchor >= refresh_period {
        cache.s1x = s1.apply(x_next);
        cache.since_anchor = 0;
        true
    } else {
        false
    }
}

/// `S₁(x^k)` and `F r^k` for the current ray.
#[derive(Clone, Copy, Debug)]
pub struct RayCache<'a> {
    pub s1x: &'a Vector,
    pub f_r: &'a Vector,
}

#[derive(Clone, Debug)]
pub struct CandidateEval {
    pub x: Vector,
    pub residual: Vector,
    /// Evaluated by direct composition (no affine cache was usable).
    pub slow_path: bool,
}

/// Candidate point `x + α·r` and its residual. With a ray cache and an affine
/// `S₁` this is `S₂(S₁(x) + α·Fr) − (x + αr)`, which needs no `S₁` application;
/// otherwise it falls back to direct evaluation.
pub fn evaluate_candidate_residual(
    op: &SplitOperator,
    cache: Option<RayCache<'_>>,
    x: &Vector,
    r: &Vector,
    alpha: f64,
) -> CandidateEval {
    let point = x + r * alpha;
    match cache {
        Some(ray) if op.s1.is_affine() => {
            let arg = ray.s1x + ray.f_r * alpha;
            let residual = op.s2.apply(&arg) - &point;
            CandidateEval {
                x: point,
                residual,
                slow_path: false,
            }
        }
        _ => {
            let residual = op.residual(&point);
            CandidateEval {
                x: point,
                residual,
                slow_path: true,
            }
        }
    }
}

/// Cosine rule: true iff `cos∠(v_next, v_prev) > 1 − eps_hat`. Zero vectors never pass.
pub fn activation_check(v_next: &Vector, v_prev: &Vector, eps_hat: f64) -> bool {
    let denom = v_next.norm() * v_prev.norm();
    if denom == 0.0 || !denom.is_finite() {
        return false;
    }
    v_next.dot(v_prev) / denom > 1.0 - eps_hat
}

/// Acceptance test for an arbitrary candidate point:
/// `‖S(x̂) − x̂‖ ≤ (1 − ε)‖r̄‖`.
pub fn generalized_accept(
    op: &SplitOperator,
    candidate: &Vector,
    nominal_res_norm: f64,
    epsilon: f64,
) -> bool {
    op.residual(candidate).norm() <= (1.0 - epsilon) * nominal_res_norm
}

/// True when, over the last `window` iterations, the residual norm has
/// stagnated (relative change below `delta_tol`) above the stopping threshold
/// while consecutive residual vectors agree to `delta_tol` relative. The
/// residual then estimates the infimal displacement vector.
pub fn detect_infeasibility(trace: &IterationTrace, window: usize, delta_tol: f64) -> bool {
    let n = trace.records.len();
    if window == 0 || n < window {
        return false;
    }
    let last = trace.final_res_norm;
    if !(last > trace.threshold) || last == 0.0 {
        return false;
    }
    let recent = &trace.records[n - window..];
    let settled = recent
        .iter()
        .all(|rec| rec.change_norm < delta_tol * rec.res_norm);
    settled && (last - recent[0].res_norm).abs() < delta_tol * last
}

/// Picks a passing candidate. `items` are `(alpha, residual_norm)` in schedule order.
fn choose(selection: Selection, items: &[(f64, f64)], bound: f64) -> Option<usize> {
    let passing = items
        .iter()
        .enumerate()
        .filter(|(_, &(_, norm))| norm <= bound);
    match selection {
        Selection::FirstPassing => passing.map(|(i, _)| i).next(),
        Selection::BestOfSchedule => passing
            .fold(None, |best: Option<(usize, f64)>, (i, &(_, norm))| match best {
                Some((_, b)) if b <= norm => best,
                _ => Some((i, norm)),
            })
            .map(|(i, _)| i),
        Selection::FarthestPassing => passing
            .fold(None, |best: Option<(usize, f64)>, (i, &(alpha, _))| match best {
                Some((_, a)) if a >= alpha => best,
                _ => Some((i, alpha)),
            })
            .map(|(i, _)| i),
    }
}

#[derive(Clone, Debug)]
pub struct CandidateProbe {
    pub alpha: f64,
    pub point: Vector,
    pub residual_norm: f64,
    pub passes: bool,
}

/// Every scheduled candidate of one line search, evaluated without moving.
#[derive(Clone, Debug)]
pub struct LineSearchProbe {
    pub nominal_alpha: f64,
    pub nominal_point: Vector,
    pub nominal_res_norm: f64,
    /// Residual norm a candidate must not exceed, `(1 − ε)‖r̄‖`.
    pub bound: f64,
    pub candidates: Vec<CandidateProbe>,
}

impl LineSearchProbe {
    /// The candidate a selection rule would accept; `None` means the nominal step.
    pub fn select(&self, selection: Selection) -> Option<&CandidateProbe> {
        let items: Vec<(f64, f64)> = self
            .candidates
            .iter()
            .map(|c| (c.alpha, c.residual_norm))
            .collect();
        choose(selection, &items, self.bound).map(|i| &self.candidates[i])
    }
}

/// Stateful driver of the iteration. Holds `x^k`, the cached `r^k` and, for
/// affine `S₁`, the cached `S₁(x^k)`.
#[derive(Clone, Debug)]
pub struct Solver {
    op: SplitOperator,
    cfg: LineSearchConfig,
    x: Vector,
    r: Vector,
    cache: Option<AffineCache>,
    prev_x: Option<Vector>,
    trace: IterationTrace,
}

impl Solver {
    pub fn new(op: SplitOperator, x0: Vector, cfg: LineSearchConfig) -> Result<Self> {
        if x0.len() != op.dim() {
            return Err(Error::dim(format!(
                "starting point has dimension {}, operator has dimension {}",
                x0.len(),
                op.dim()
            )));
        }
        cfg.validate(op.nominal_step())?;

        let cache = op.s1.as_affine().map(|s1| AffineCache::anchor(s1.as_ref(), &x0));
        let r = match &cache {
            Some(c) => op.s2.apply(c.value()) - &x0,
            None => op.residual(&x0),
        };
        let r0 = r.norm();
        if !r0.is_finite() {
            return Err(Error::NumericalFailure { iteration: 0 });
        }
        let trace = IterationTrace {
            initial_res_norm: r0,
            final_res_norm: r0,
            threshold: cfg.tol * r0.max(1.0),
            averaging: op.averaging,
            nominal_step: op.nominal_step(),
            init_s1_evals: 1,
            init_s2_evals: 1,
            records: Vec::new(),
            status: None,
        };
        Ok(Solver {
            op,
            cfg,
            x: x0,
            r,
            cache,
            prev_x: None,
            trace,
        })
    }

    pub fn operator(&self) -> &SplitOperator {
        &self.op
    }

    pub fn config(&self) -> &LineSearchConfig {
        &self.cfg
    }

    pub fn iterate(&self) -> &Vector {
        &self.x
    }

    pub fn residual(&self) -> &Vector {
        &self.r
    }

    pub fn cache(&self) -> Option<&AffineCache> {
        self.cache.as_ref()
    }

    pub fn trace(&self) -> &IterationTrace {
        &self.trace
    }

    pub fn converged(&self) -> bool {
        self.trace.final_res_norm <= self.trace.threshold
    }

    fn activated(&self) -> bool {
        match self.cfg.activation {
            Activation::AlwaysSearch => true,
            Activation::Never => false,
            Activation::CosineAligned { eps_hat } => match &self.prev_x {
                Some(prev) => activation_check(&self.r, &(&self.x - prev), eps_hat),
                None => false,
            },
        }
    }

    fn ray_linear(&self) -> Option<Vector> {
        match (&self.cache, self.op.s1.as_affine()) {
            (Some(_), Some(s1)) => Some(s1.linear(&self.r)),
            _ => None,
        }
    }

    /// Performs one iteration and returns its record.
    pub fn step(&mut self) -> Result<StepRecord> {
        let k = self.trace.records.len();
        let nominal = self.op.nominal_step();
        let res_norm = self.r.norm();
        if !res_norm.is_finite() {
            return Err(Error::NumericalFailure { iteration: k });
        }
        let activated = self.activated();

        let f_r = self.ray_linear();
        let mut s1_evals = usize::from(f_r.is_some());
        let mut s2_evals = 0;
        let mut candidates = 0;

        let (alpha_k, mut next, nominal_res_norm, gap_norm, slow_path) = {
            let ray = f_r.as_ref().zip(self.cache.as_ref()).map(|(f_r, c)| RayCache {
                s1x: c.value(),
                f_r,
            });
            let mut eval = |alpha: f64| {
                let e = evaluate_candidate_residual(&self.op, ray, &self.x, &self.r, alpha);
                s2_evals += 1;
                if e.slow_path {
                    s1_evals += 1;
                }
                e
            };

            let nominal_eval = eval(nominal);
            let nominal_res_norm = nominal_eval.residual.norm();
            if !nominal_res_norm.is_finite() {
                return Err(Error::NumericalFailure { iteration: k });
            }
            let gap_norm = (&nominal_eval.residual - &self.r).norm();
            let slow_path = nominal_eval.slow_path;

            let mut chosen = (nominal, nominal_eval);
            if activated && nominal_res_norm > 0.0 {
                let schedule = self.cfg.candidates(nominal);
                if schedule.is_empty() {
                    return Err(Error::config(format!(
                        "candidate schedule is empty for nominal step {nominal} and alpha_max {}",
                        self.cfg.alpha_max
                    )));
                }
                let bound = (1.0 - self.cfg.epsilon) * nominal_res_norm;
                match self.cfg.selection {
                    Selection::FirstPassing => {
                        for &alpha in &schedule {
                            candidates += 1;
                            let e = eval(alpha);
                            if e.residual.norm() <= bound {
                                chosen = (alpha, e);
                                break;
                            }
                        }
                    }
                    selection => {
                        let evals: Vec<CandidateEval> = schedule.iter().map(|&a| eval(a)).collect();
                        candidates = evals.len();
                        let items: Vec<(f64, f64)> = schedule
                            .iter()
                            .zip(&evals)
                            .map(|(&a, e)| (a, e.residual.norm()))
                            .collect();
                        if let Some(i) = choose(selection, &items, bound) {
                            let alpha = schedule[i];
                            chosen = (alpha, evals.into_iter().nth(i).expect("index in range"));
                        }
                    }
                }
            }
            (chosen.0, chosen.1, nominal_res_norm, gap_norm, slow_path)
        };

        if let (Some(cache), Some(f_r), Some(s1)) =
            (self.cache.as_mut(), f_r.as_ref(), self.op.s1.as_affine())
        {
            let reanchored = refresh_cache(
                s1.as_ref(),
                cache,
                &next.x,
                alpha_k,
                f_r,
                self.cfg.refresh_period,
            );
            if reanchored {
                s1_evals += 1;
                s2_evals += 1;
                next.residual = self.op.s2.apply(cache.value()) - &next.x;
            }
        }

        let change_norm = (&next.residual - &self.r).norm();
        let record = StepRecord {
            k,
            res_norm,
            nominal_res_norm,
            alpha_k,
            candidates,
            activated,
            gap_norm,
            change_norm,
            s1_evals,
            s2_evals,
            slow_path,
        };

        self.prev_x = Some(mem::replace(&mut self.x, next.x));
        self.r = next.residual;
        self.trace.final_res_norm = self.r.norm();
        self.trace.records.push(record.clone());
        Ok(record)
    }

    /// Evaluates every scheduled candidate at the current iterate without
    /// advancing. Used for reporting and for comparing selection rules.
    pub fn probe(&self) -> Result<LineSearchProbe> {
        let nominal = self.op.nominal_step();
        let f_r = self.ray_linear();
        let ray = f_r.as_ref().zip(self.cache.as_ref()).map(|(f_r, c)| RayCache {
            s1x: c.value(),
            f_r,
        });
        let eval = |alpha| evaluate_candidate_residual(&self.op, ray, &self.x, &self.r, alpha);
        let nominal_eval = eval(nominal);
        let nominal_res_norm = nominal_eval.residual.norm();
        let bound = (1.0 - self.cfg.epsilon) * nominal_res_norm;
        let candidates = if nominal_res_norm > 0.0 {
            self.cfg
                .candidates(nominal)
                .into_iter()
                .map(|alpha| {
                    let e = eval(alpha);
                    let residual_norm = e.residual.norm();
                    CandidateProbe {
                        alpha,
                        point: e.x,
                        residual_norm,
                        passes: residual_norm <= bound,
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(LineSearchProbe {
            nominal_alpha: nominal,
            nominal_point: nominal_eval.x,
            nominal_res_norm,
            bound,
            candidates,
        })
    }

    /// Iterates until convergence, the iteration cap, or suspected infeasibility.
    pub fn run(mut self) -> Result<SolveResult> {
        let (status, displacement) = loop {
            if self.converged() {
                break (SolveStatus::Converged, None);
            }
            if self.trace.records.len() >= self.cfg.max_iter {
                break (SolveStatus::MaxIterations, None);
            }
            self.step()?;
            if let Some(check) = self.cfg.infeasibility {
                if detect_infeasibility(&self.trace, check.window, check.delta_tol) {
                    break (SolveStatus::InfeasibilitySuspected, Some(self.r.clone()));
                }
            }
        };
        log::debug!(
            "solve finished: {:?} after {} iterations, ‖r‖ = {:e}",
            status,
            self.trace.records.len(),
            self.trace.final_res_norm
        );
        self.trace.status = Some(status);
        Ok(SolveResult {
            status,
            x: self.x,
            displacement,
            trace: self.trace,
        })
    }
}

/// Runs the line-search iteration from `x0`.
pub fn run(op: &SplitOperator, x0: &Vector, cfg: &LineSearchConfig) -> Result<SolveResult> {
    Solver::new(op.clone(), x0.clone(), cfg.clone())?.run()
}
