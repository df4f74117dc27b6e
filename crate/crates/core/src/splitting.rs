//! Builders that turn a problem description into a [`SplitOperator`].
//!
//! | method | form | `S₁` / `T₁` | `S₂` / `T₂` | `α̃` |
//! |---|---|---|---|---|
//! | forward-backward | T | `I − γ∇f` (affine) | `prox_{γg}` | `2/(4 − γL)` |
//! | Douglas-Rachford | S | `R_{γf}` (affine) | `R_{γg}` | `α` |
//! | ADMM | S | `R₂` (affine, in `v`) | `R₁` | `α` |
//! | consensus | S | consensus reflection | blockwise `R_{γfᵢ}` | `½` |
//! | alternating projections | T | `Π_D` | `Π_C` | `2/3` |

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{Form, SplitOperator};
use crate::operators::{
    AffineOperator, BlockDiagonal, ConsensusProjection, GradientStep, KktProx, KktSystem, Operator,
    ProxFn, QuadraticTerm, SetDescriptor, Stage,
};
use crate::{Error, Matrix, Result, Vector};

const POWER_ITER_CAP: usize = 100_000;
const POWER_ITER_SEED: u64 = 0x5eed;

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from a fixed pseudo-random start.
pub fn estimate_lipschitz(p: &Matrix) -> Result<f64> {
    if !p.is_square() {
        return Err(Error::dim(format!("P must be square, got {}x{}", p.nrows(), p.ncols())));
    }
    let n = p.nrows();
    if n == 0 || p.amax() == 0.0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITER_SEED);
    let mut v = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    v.normalize_mut();
    for _ in 0..POWER_ITER_CAP {
        let pv = p * &v;
        let lambda = v.dot(&pv);
        let resid = (&pv - &v * lambda).norm();
        if resid <= 1e-10 * lambda.abs().max(f64::MIN_POSITIVE) {
            return Ok(lambda);
        }
        let norm = pv.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = pv / norm;
    }
    Err(Error::NoConvergence(POWER_ITER_CAP))
}

/// `minimize ½xᵀPx + qᵀx + g(x)` by forward-backward splitting.
#[derive(Clone, Debug)]
pub struct ProblemFbs {
    pub f: QuadraticTerm,
    pub g: ProxFn,
    pub gamma: f64,
    /// Lipschitz constant of `∇f`; estimated from `P` when absent.
    pub lipschitz: Option<f64>,
}

/// T-form operator `T₂T₁` with `T₁ = I − γ∇f`, `T₂ = prox_{γg}`.
pub fn build_fbs(prob: &ProblemFbs) -> Result<SplitOperator> {
    prob.f.validate()?;
    if prob.f.aeq.is_some() {
        return Err(Error::config("forward-backward needs an unconstrained smooth term"));
    }
    if prob.g.dim() != prob.f.dim() {
        return Err(Error::dim(format!(
            "f has dimension {} but g has dimension {}",
            prob.f.dim(),
            prob.g.dim()
        )));
    }
    let l = match prob.lipschitz {
        Some(l) if l >= 0.0 && l.is_finite() => l,
        Some(l) => return Err(Error::config(format!("invalid Lipschitz constant {l}"))),
        None => estimate_lipschitz(&prob.f.p)?,
    };
    let gamma = prob.gamma;
    if !(gamma > 0.0 && gamma * l < 2.0 && gamma.is_finite()) {
        return Err(Error::config(format!("step size γ = {gamma} must lie in (0, 2/L) with L = {l}")));
    }
    let t1 = GradientStep::new(prob.f.p.clone(), prob.f.q.clone(), gamma)?;
    let t2 = prob.g.prox(gamma)?;
    SplitOperator::new(Stage::affine(t1), t2, Form::TForm, 2.0 / (4.0 - gamma * l))
}

/// `minimize f(x) + g(x)` by Douglas-Rachford, `f` quadratic over an affine set.
#[derive(Clone, Debug)]
pub struct ProblemDr {
    pub f: QuadraticTerm,
    pub g: ProxFn,
    pub gamma: f64,
    /// Relaxation, used as the averaging parameter.
    pub alpha: f64,
}

/// Douglas-Rachford operator `R_{γg}R_{γf}` acting on `z`.
#[derive(Clone, Debug)]
pub struct DrSplit {
    pub op: SplitOperator,
    prox_f: Arc<KktProx>,
    prox_g: Stage,
}

/// `x = prox_{γf}(z)`, `y = prox_{γg}(2x − z)` and the residual `r = 2(y − x)`.
#[derive(Clone, Debug)]
pub struct DrVariables {
    pub x: Vector,
    pub y: Vector,
    pub r: Vector,
}

impl DrSplit {
    /// Primal estimate `prox_{γf}(z)`.
    pub fn primal(&self, z: &Vector) -> Vector {
        self.prox_f.apply(z)
    }

    pub fn variables(&self, z: &Vector) -> DrVariables {
        let x = self.prox_f.apply(z);
        let y = self.prox_g.apply(&(&x * 2.0 - z));
        let r = (&y - &x) * 2.0;
        DrVariables { x, y, r }
    }
}

pub fn build_dr(prob: &ProblemDr) -> Result<DrSplit> {
    if prob.g.dim() != prob.f.dim() {
        return Err(Error::dim(format!(
            "f has dimension {} but g has dimension {}",
            prob.f.dim(),
            prob.g.dim()
        )));
    }
    let prox_f = Arc::new(prob.f.prox(prob.gamma)?);
    let prox_g = prob.g.prox(prob.gamma)?;
    let s1 = Stage::Affine(prox_f.clone() as Arc<dyn AffineOperator>).reflect();
    let op = SplitOperator::new(s1, prox_g.reflect(), Form::SForm, prob.alpha)?;
    Ok(DrSplit { op, prox_f, prox_g })
}

/// The `x`-objective of an ADMM problem.
#[derive(Clone, Debug)]
pub enum AdmmObjective {
    /// Quadratic over an affine set; any `A` of full column rank.
    Quadratic(QuadraticTerm),
    /// Any prox-friendly function; needs `A = a·I` with `a ≠ 0`.
    Prox(ProxFn),
}

impl AdmmObjective {
    fn dim(&self) -> usize {
        match self {
            AdmmObjective::Quadratic(t) => t.dim(),
            AdmmObjective::Prox(f) => f.dim(),
        }
    }
}

/// `minimize f(x) + g(z)` subject to `Ax + Bz = c`, with `g` quadratic over an
/// affine set `{z : Lz = b}` so that the `z`-reflection is affine.
#[derive(Clone, Debug)]
pub struct ProblemAdmm {
    pub f: AdmmObjective,
    pub g: QuadraticTerm,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Vector,
    pub rho: f64,
    pub alpha: f64,
}

impl ProblemAdmm {
    fn validate(&self) -> Result<()> {
        self.g.validate()?;
        if let AdmmObjective::Quadratic(t) = &self.f {
            t.validate()?;
        }
        let (n, m, p) = (self.f.dim(), self.g.dim(), self.c.len());
        if self.a.shape() != (p, n) || self.b.shape() != (p, m) {
            return Err(Error::dim(format!(
                "expected A {p}x{n} and B {p}x{m}, got A {:?} and B {:?}",
                self.a.shape(),
                self.b.shape()
            )));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::config(format!("penalty ρ must be positive, got {}", self.rho)));
        }
        Ok(())
    }

    /// `a` when `A = a·I`.
    fn scalar_a(&self) -> Option<f64> {
        if !self.a.is_square() || self.a.nrows() == 0 {
            return None;
        }
        let a = self.a[(0, 0)];
        let n = self.a.nrows();
        let same = (0..n).all(|i| (0..n).all(|j| self.a[(i, j)] == if i == j { a } else { 0.0 }));
        (same && a != 0.0).then_some(a)
    }
}

/// `w ↦ argmin_x f(x) + ρ/2‖Ax − w‖²`.
#[derive(Debug)]
enum XSolver {
    Quadratic {
        kkt: KktSystem,
        at: Matrix,
        q: Vector,
        beq: Option<Vector>,
        rho: f64,
    },
    Scaled {
        prox: Stage,
        a: f64,
    },
}

impl XSolver {
    fn new(prob: &ProblemAdmm) -> Result<Self> {
        match &prob.f {
            AdmmObjective::Quadratic(t) => {
                let at = prob.a.transpose();
                let top_left = &t.p + &at * &prob.a * prob.rho;
                let kkt = KktSystem::factor(&top_left, t.aeq.as_ref())?;
                Ok(XSolver::Quadratic {
                    kkt,
                    at,
                    q: t.q.clone(),
                    beq: t.beq.clone(),
                    rho: prob.rho,
                })
            }
            AdmmObjective::Prox(f) => {
                let a = prob.scalar_a().ok_or_else(|| {
                    Error::config("a general x-objective needs A = a·I with a nonzero")
                })?;
                Ok(XSolver::Scaled {
                    prox: f.prox(1.0 / (prob.rho * a * a))?,
                    a,
                })
            }
        }
    }

    fn solve(&self, w: &Vector) -> Vector {
        match self {
            XSolver::Quadratic { kkt, at, q, beq, rho } => {
                kkt.solve(&(at * w * *rho - q), beq.as_ref())
            }
            XSolver::Scaled { prox, a } => prox.apply(&(w / *a)),
        }
    }
}

/// `R₁(v) = 2A·x*(v + c) − 2c − v`.
#[derive(Debug)]
struct AdmmR1 {
    x: XSolver,
    a: Matrix,
    c: Vector,
}

impl AdmmR1 {
    fn argmin(&self, v: &Vector) -> Vector {
        self.x.solve(&(v + &self.c))
    }
}

impl Operator for AdmmR1 {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn apply(&self, v: &Vector) -> Vector {
        &self.a * self.argmin(v) * 2.0 - &self.c * 2.0 - v
    }
}

/// `R₂(v) = −2B·z*(v) − v` with `z*(v) = argmin_z g(z) + ρ/2‖Bz + v‖²`.
#[derive(Debug)]
struct AdmmR2 {
    kkt: KktSystem,
    b: Matrix,
    bt: Matrix,
    q: Vector,
    beq: Option<Vector>,
    rho: f64,
}

impl AdmmR2 {
    fn new(prob: &ProblemAdmm) -> Result<Self> {
        let bt = prob.b.transpose();
        let top_left = &prob.g.p + &bt * &prob.b * prob.rho;
        let kkt = KktSystem::factor(&top_left, prob.g.aeq.as_ref())?;
        Ok(AdmmR2 {
            kkt,
            b: prob.b.clone(),
            bt,
            q: prob.g.q.clone(),
            beq: prob.g.beq.clone(),
            rho: prob.rho,
        })
    }

    fn argmin(&self, v: &Vector) -> Vector {
        let top = -(&self.q + &self.bt * v * self.rho);
        self.kkt.solve(&top, self.beq.as_ref())
    }
}

impl Operator for AdmmR2 {
    fn dim(&self) -> usize {
        self.b.nrows()
    }

    fn apply(&self, v: &Vector) -> Vector {
        &self.b * self.argmin(v) * -2.0 - v
    }
}

impl AffineOperator for AdmmR2 {
    fn linear(&self, d: &Vector) -> Vector {
        let z = self.kkt.solve(&(&self.bt * d * -self.rho), None);
        &self.b * z * -2.0 - d
    }
}

/// ADMM as the averaged iteration `v ↦ (1 − α)v + αR₁R₂v` on `v ∈ ℝᵖ`.
#[derive(Clone, Debug)]
pub struct AdmmSplit {
    pub op: SplitOperator,
    r1: Arc<AdmmR1>,
    r2: Arc<AdmmR2>,
}

impl AdmmSplit {
    /// `(x, z)` belonging to `v`: `z = z*(v)` and `x = x*(R₂v)`.
    pub fn recover(&self, v: &Vector) -> (Vector, Vector) {
        let z = self.r2.argmin(v);
        let r2v = &self.r2.b * &z * -2.0 - v;
        (self.r1.argmin(&r2v), z)
    }
}

pub fn build_admm(prob: &ProblemAdmm) -> Result<AdmmSplit> {
    prob.validate()?;
    let r2 = Arc::new(AdmmR2::new(prob)?);
    let r1 = Arc::new(AdmmR1 {
        x: XSolver::new(prob)?,
        a: prob.a.clone(),
        c: prob.c.clone(),
    });
    let op = SplitOperator::new(
        Stage::Affine(r2.clone() as Arc<dyn AffineOperator>),
        Stage::General(r1.clone() as Arc<dyn Operator>),
        Form::SForm,
        prob.alpha,
    )?;
    Ok(AdmmSplit { op, r1, r2 })
}

/// Variables of the standard scaled-dual ADMM iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub x: Vector,
    pub x_a: Vector,
    pub z: Vector,
    pub u: Vector,
}

impl AdmmState {
    pub fn zeros(prob: &ProblemAdmm) -> Self {
        AdmmState {
            x: Vector::zeros(prob.f.dim()),
            x_a: Vector::zeros(prob.c.len()),
            z: Vector::zeros(prob.g.dim()),
            u: Vector::zeros(prob.c.len()),
        }
    }
}

/// Solves `min ½xᵀPx + qᵀx + ρ/2‖Mx − w‖²` over `{Lx = b}` from scratch.
fn dense_argmin(t: &QuadraticTerm, m: &Matrix, w: &Vector, rho: f64) -> Result<Vector> {
    let n = t.dim();
    let k = t.aeq.as_ref().map_or(0, |a| a.nrows());
    let mut lhs = Matrix::zeros(n + k, n + k);
    lhs.view_mut((0, 0), (n, n)).copy_from(&(&t.p + m.transpose() * m * rho));
    let mut rhs = Vector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(m.transpose() * w * rho - &t.q));
    if let (Some(a), Some(b)) = (&t.aeq, &t.beq) {
        lhs.view_mut((n, 0), (k, n)).copy_from(a);
        lhs.view_mut((0, n), (n, k)).copy_from(&a.transpose());
        rhs.rows_mut(n, k).copy_from(b);
    }
    let sol = lhs
        .full_piv_lu()
        .solve(&rhs)
        .ok_or(Error::SingularKkt { size: n + k, defect: 1 })?;
    Ok(sol.rows(0, n).into_owned())
}

/// One iteration of standard-form relaxed ADMM with scaled dual `u`:
///
/// ```text
/// x⁺  = argmin f(x) + ρ/2‖Ax + Bz − c + u‖²
/// x_A = 2αAx⁺ − (1 − 2α)(Bz − c)
/// z⁺  = argmin g(z) + ρ/2‖x_A + Bz⁺ − c + u‖²
/// u⁺  = u + x_A + Bz⁺ − c
/// ```
///
/// Subproblems are solved directly, with no cached factorizations. No line search.
pub fn admm_standard_iterate(prob: &ProblemAdmm, state: &AdmmState) -> Result<AdmmState> {
    prob.validate()?;
    let (rho, alpha) = (prob.rho, prob.alpha);
    let bz_c = &prob.b * &state.z - &prob.c;
    let w = -(&bz_c + &state.u);
    let x = match &prob.f {
        AdmmObjective::Quadratic(t) => dense_argmin(t, &prob.a, &w, rho)?,
        AdmmObjective::Prox(f) => {
            let a = prob
                .scalar_a()
                .ok_or_else(|| Error::config("a general x-objective needs A = a·I with a nonzero"))?;
            f.prox(1.0 / (rho * a * a))?.apply(&(w / a))
        }
    };
    let x_a = &prob.a * &x * (2.0 * alpha) - &bz_c * (1.0 - 2.0 * alpha);
    let wz = -(&x_a - &prob.c + &state.u);
    let z = dense_argmin(&prob.g, &prob.b, &wz, rho)?;
    let u = &state.u + &x_a + &prob.b * &z - &prob.c;
    Ok(AdmmState { x, x_a, z, u })
}

/// Consensus form of `minimize Σᵢ fᵢ(x)` on the stacked variable `(z₁, …, z_N)`.
#[derive(Clone, Debug)]
pub struct ConsensusSplit {
    pub op: SplitOperator,
    pub blocks: usize,
    pub block_dim: usize,
}

impl ConsensusSplit {
    /// `z_av`, the consensus estimate of the minimizer.
    pub fn average(&self, z: &Vector) -> Vector {
        let n = self.block_dim;
        let mut avg = Vector::zeros(n);
        for i in 0..self.blocks {
            avg += z.rows(i * n, n);
        }
        avg / self.blocks as f64
    }
}

pub fn build_consensus(fs: &[ProxFn], gamma: f64) -> Result<ConsensusSplit> {
    let first = fs
        .first()
        .ok_or_else(|| Error::config("consensus needs at least one function"))?;
    let n = first.dim();
    if let Some(bad) = fs.iter().find(|f| f.dim() != n) {
        return Err(Error::dim(format!(
            "consensus functions must share dimension {n}, found {}",
            bad.dim()
        )));
    }
    let reflections = fs
        .iter()
        .map(|f| f.reflection(gamma))
        .collect::<Result<Vec<_>>>()?;
    let s1 = Stage::affine(ConsensusProjection::new(fs.len(), n)?).reflect();
    let s2 = BlockDiagonal::new(reflections).into_stage();
    let op = SplitOperator::new(s1, s2, Form::SForm, 0.5)?;
    Ok(ConsensusSplit {
        op,
        blocks: fs.len(),
        block_dim: n,
    })
}

/// Alternating projections `x ↦ Π_C(Π_D(x))` for the feasibility problem
/// `find x ∈ C ∩ D`.
pub fn build_ap(c: &SetDescriptor, d: &SetDescriptor) -> Result<SplitOperator> {
    if c.dim() != d.dim() {
        return Err(Error::dim(format!(
            "sets have dimensions {} and {}",
            c.dim(),
            d.dim()
        )));
    }
    SplitOperator::new(d.projector()?, c.projector()?, Form::TForm, 2.0 / 3.0)
}

#[cfg(test)]
mod tests;
