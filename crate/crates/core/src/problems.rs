//! Problem files, instance generators and trace persistence.
//!
//! A problem file is JSON:
//!
//! ```json
//! {
//!   "kind": "nnls",
//!   "dims": { "A": [200, 200], "b": [200] },
//!   "arrays": { "A": [...], "b": [...] },
//!   "params": { "gamma": 3.0, "alpha": 0.5, "epsilon": 0.03 },
//!   "seed": 0
//! }
//! ```
//!
//! Matrices are stored dense and row-major. Every key in `arrays` has a shape
//! in `dims`. Feasibility problems describe their two sets under `sets`.
//!
//! Random generators use ChaCha8 seeded with `seed_from_u64`. Draws happen
//! in a fixed order, documented per generator, so files are reproducible
//! across platforms.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::{
    Activation, IterationTrace, LineSearchConfig, Schedule, Selection, SplitOperator, StepRecord,
};
use crate::operators::{ProxFn, QuadraticTerm, SetDescriptor};
use crate::splitting::{
    build_admm, build_ap, build_consensus, build_dr, build_fbs, AdmmObjective, AdmmSplit,
    ConsensusSplit, DrSplit, ProblemAdmm, ProblemDr, ProblemFbs,
};
use crate::{Error, Matrix, Result, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// `minimize ‖Ax − b‖² subject to x ≥ 0`; arrays `A`, `b`.
    Nnls,
    /// `find x ∈ C ∩ D`; sets under `sets`, optional start `x0`.
    Feasibility,
    /// `minimize ½xᵀPx + qᵀx + g(x)` subject to `Aeq·x = beq`; arrays `P`, `q`,
    /// optionally `Aeq`, `beq`.
    Qp,
    /// `minimize Σᵢ ½xᵀPᵢx + qᵢᵀx`; arrays `P0`, `q0`, `P1`, `q1`, ….
    Consensus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dr,
    Fbs,
    Admm,
    Ap,
    Consensus,
}

/// The nonsmooth term `g` of a `qp` problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Regularizer {
    Nonnegative,
    Zero,
    L1 { weight: f64 },
}

impl Regularizer {
    fn prox_fn(self, dim: usize) -> ProxFn {
        match self {
            Regularizer::Nonnegative => {
                ProxFn::Indicator(SetDescriptor::NonnegativeOrthant { dim })
            }
            Regularizer::Zero => ProxFn::Zero { dim },
            Regularizer::L1 { weight } => ProxFn::L1 { dim, weight },
        }
    }
}

/// Serializable form of a [`SetDescriptor`]; matrices row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SetSpec {
    NonnegativeOrthant { dim: usize },
    Ball { center: Vec<f64>, radius: f64 },
    AffineSet { rows: usize, cols: usize, a: Vec<f64>, b: Vec<f64> },
    Consensus { blocks: usize, dim: usize },
    Halfspace { normal: Vec<f64>, offset: f64 },
    Hyperplane { normal: Vec<f64>, offset: f64 },
}

impl SetSpec {
    pub fn to_descriptor(&self) -> Result<SetDescriptor> {
        Ok(match self {
            SetSpec::NonnegativeOrthant { dim } => SetDescriptor::NonnegativeOrthant { dim: *dim },
            SetSpec::Ball { center, radius } => SetDescriptor::Ball {
                center: Vector::from_vec(center.clone()),
                radius: *radius,
            },
            SetSpec::AffineSet { rows, cols, a, b } => {
                if a.len() != rows * cols || b.len() != *rows {
                    return Err(Error::Validation(format!(
                        "affine set declares {rows}x{cols} but has {} matrix and {} vector entries",
                        a.len(),
                        b.len()
                    )));
                }
                SetDescriptor::AffineSet {
                    a: Matrix::from_row_slice(*rows, *cols, a),
                    b: Vector::from_vec(b.clone()),
                }
            }
            SetSpec::Consensus { blocks, dim } => SetDescriptor::Consensus {
                blocks: *blocks,
                dim: *dim,
            },
            SetSpec::Halfspace { normal, offset } => SetDescriptor::Halfspace {
                normal: Vector::from_vec(normal.clone()),
                offset: *offset,
            },
            SetSpec::Hyperplane { normal, offset } => SetDescriptor::Hyperplane {
                normal: Vector::from_vec(normal.clone()),
                offset: *offset,
            },
        })
    }
}

/// `find x ∈ C ∩ D`. Alternating projections apply `Π_D` first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetPair {
    pub c: SetSpec,
    pub d: SetSpec,
}

/// Solver parameters. Anything absent falls back to the library default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Regularizer>,
}

impl Params {
    /// The line-search configuration these parameters describe.
    pub fn line_search(&self) -> LineSearchConfig {
        let d = LineSearchConfig::default();
        LineSearchConfig {
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            alpha_max: self.alpha_max.unwrap_or(d.alpha_max),
            schedule: self.schedule.clone().unwrap_or(d.schedule),
            selection: self.selection.unwrap_or(d.selection),
            activation: self.activation.unwrap_or(d.activation),
            tol: self.tol.unwrap_or(d.tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            refresh_period: self.refresh_period.unwrap_or(d.refresh_period),
            infeasibility: d.infeasibility,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub kind: ProblemKind,
    pub dims: BTreeMap<String, Vec<usize>>,
    pub arrays: BTreeMap<String, Vec<f64>>,
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sets: Option<SetPair>,
    /// Seed the random arrays were drawn with; absent for deterministic problems.
    pub seed: Option<u64>,
}

impl ProblemFile {
    fn new(kind: ProblemKind, params: Params, seed: Option<u64>) -> Self {
        ProblemFile {
            kind,
            dims: BTreeMap::new(),
            arrays: BTreeMap::new(),
            params,
            sets: None,
            seed,
        }
    }

    fn put_matrix(&mut self, name: &str, m: &Matrix) {
        let data = m.transpose().as_slice().to_vec();
        self.dims.insert(name.into(), vec![m.nrows(), m.ncols()]);
        self.arrays.insert(name.into(), data);
    }

    fn put_vector(&mut self, name: &str, v: &Vector) {
        self.dims.insert(name.into(), vec![v.len()]);
        self.arrays.insert(name.into(), v.as_slice().to_vec());
    }

    pub fn has(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    fn array(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match (self.dims.get(name), self.arrays.get(name)) {
            (Some(d), Some(a)) => Ok((d, a)),
            _ => Err(Error::Validation(format!("missing array `{name}`"))),
        }
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        match self.array(name)? {
            (&[r, c], data) => Ok(Matrix::from_row_slice(r, c, data)),
            (d, _) => Err(Error::Validation(format!("`{name}` must be a matrix, has shape {d:?}"))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Vector> {
        match self.array(name)? {
            (&[_], data) => Ok(Vector::from_row_slice(data)),
            (d, _) => Err(Error::Validation(format!("`{name}` must be a vector, has shape {d:?}"))),
        }
    }

    fn shape(&self, name: &str) -> Result<&[usize]> {
        Ok(self.array(name)?.0)
    }

    fn expect_shape(&self, name: &str, shape: &[usize]) -> Result<()> {
        let got = self.shape(name)?;
        if got != shape {
            return Err(Error::Validation(format!(
                "`{name}` has shape {got:?}, expected {shape:?}"
            )));
        }
        Ok(())
    }

    fn consensus_blocks(&self) -> usize {
        (0..).take_while(|i| self.has(&format!("P{i}"))).count()
    }

    /// Checks that declared shapes match array lengths and that the arrays
    /// this kind needs are present and mutually consistent.
    pub fn validate(&self) -> Result<()> {
        for (name, shape) in &self.dims {
            let data = self
                .arrays
                .get(name)
                .ok_or_else(|| Error::Validation(format!("`dims` names `{name}` but `arrays` has no such entry")))?;
            let expected: usize = shape.iter().product();
            if shape.is_empty() || shape.len() > 2 || expected != data.len() {
                return Err(Error::Validation(format!(
                    "`{name}` declares shape {shape:?} but holds {} values",
                    data.len()
                )));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("`{name}` contains non-finite values")));
            }
        }
        if let Some(name) = self.arrays.keys().find(|k| !self.dims.contains_key(*k)) {
            return Err(Error::Validation(format!("array `{name}` has no entry in `dims`")));
        }

        let n = match self.kind {
            ProblemKind::Nnls => {
                let (m, n) = match self.shape("A")? {
                    &[m, n] => (m, n),
                    d => return Err(Error::Validation(format!("`A` must be a matrix, has shape {d:?}"))),
                };
                self.expect_shape("b", &[m])?;
                n
            }
            ProblemKind::Qp => {
                let n = self.shape("q")?[0];
                self.expect_shape("P", &[n, n])?;
                match (self.has("Aeq"), self.has("beq")) {
                    (false, false) => {}
                    (true, true) => {
                        let k = self.shape("beq")?[0];
                        self.expect_shape("Aeq", &[k, n])?;
                    }
                    _ => return Err(Error::Validation("`Aeq` and `beq` must be given together".into())),
                }
                n
            }
            ProblemKind::Consensus => {
                let blocks = self.consensus_blocks();
                if blocks == 0 {
                    return Err(Error::Validation("consensus problem needs `P0` and `q0`".into()));
                }
                let n = self.shape("q0")?[0];
                for i in 0..blocks {
                    self.expect_shape(&format!("P{i}"), &[n, n])?;
                    self.expect_shape(&format!("q{i}"), &[n])?;
                }
                n * blocks
            }
            ProblemKind::Feasibility => {
                let sets = self
                    .sets
                    .as_ref()
                    .ok_or_else(|| Error::Validation("feasibility problem needs `sets`".into()))?;
                let (c, d) = (sets.c.to_descriptor()?, sets.d.to_descriptor()?);
                if c.dim() != d.dim() {
                    return Err(Error::Validation(format!(
                        "sets have dimensions {} and {}",
                        c.dim(),
                        d.dim()
                    )));
                }
                c.dim()
            }
        };
        if self.has("x0") {
            self.expect_shape("x0", &[n])?;
        }
        Ok(())
    }

    pub fn algorithm(&self) -> Algorithm {
        self.params.algorithm.unwrap_or(match self.kind {
            ProblemKind::Nnls | ProblemKind::Qp => Algorithm::Dr,
            ProblemKind::Feasibility => Algorithm::Ap,
            ProblemKind::Consensus => Algorithm::Consensus,
        })
    }

    /// Builds the operator, start point and configuration.
    pub fn instantiate(&self) -> Result<Instance> {
        self.validate()?;
        let p = &self.params;
        let gamma = p.gamma.unwrap_or(1.0);
        let alpha = p.alpha.unwrap_or(0.5);
        let rho = p.rho.unwrap_or(1.0);
        let algorithm = self.algorithm();
        let unsupported = || {
            Error::config(format!(
                "algorithm {algorithm:?} is not available for {:?} problems",
                self.kind
            ))
        };

        // (smooth quadratic f, prox-friendly g) for the kinds that have one.
        let split_pair = |f: QuadraticTerm, g: ProxFn| -> Result<(SplitOperator, Recovery)> {
            Ok(match algorithm {
                Algorithm::Dr => {
                    let dr = build_dr(&ProblemDr { f, g, gamma, alpha })?;
                    (dr.op.clone(), Recovery::Dr(dr))
                }
                Algorithm::Fbs => {
                    let op = build_fbs(&ProblemFbs { f, g, gamma, lipschitz: None })?;
                    (op, Recovery::Iterate)
                }
                Algorithm::Admm => {
                    let n = f.dim();
                    let admm = build_admm(&ProblemAdmm {
                        f: AdmmObjective::Prox(g),
                        g: f,
                        a: Matrix::identity(n, n),
                        b: -Matrix::identity(n, n),
                        c: Vector::zeros(n),
                        rho,
                        alpha,
                    })?;
                    (admm.op.clone(), Recovery::Admm(admm))
                }
                _ => return Err(unsupported()),
            })
        };

        let (op, recovery) = match self.kind {
            ProblemKind::Nnls => {
                let a = self.matrix("A")?;
                let b = self.vector("b")?;
                let at = a.transpose();
                let f = QuadraticTerm::new(&at * &a * 2.0, &at * &b * -2.0);
                let n = a.ncols();
                split_pair(f, ProxFn::Indicator(SetDescriptor::NonnegativeOrthant { dim: n }))?
            }
            ProblemKind::Qp => {
                let mut f = QuadraticTerm::new(self.matrix("P")?, self.vector("q")?);
                if self.has("Aeq") {
                    f = f.with_equality(self.matrix("Aeq")?, self.vector("beq")?);
                }
                let n = f.dim();
                let g = p.g.unwrap_or(Regularizer::Nonnegative).prox_fn(n);
                split_pair(f, g)?
            }
            ProblemKind::Consensus => {
                if algorithm != Algorithm::Consensus {
                    return Err(unsupported());
                }
                let fs = (0..self.consensus_blocks())
                    .map(|i| {
                        Ok(ProxFn::Quadratic(QuadraticTerm::new(
                            self.matrix(&format!("P{i}"))?,
                            self.vector(&format!("q{i}"))?,
                        )))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let split = build_consensus(&fs, gamma)?;
                (split.op.clone(), Recovery::Consensus(split))
            }
            ProblemKind::Feasibility => {
                let sets = self.sets.as_ref().expect("validated");
                let (c, d) = (sets.c.to_descriptor()?, sets.d.to_descriptor()?);
                match algorithm {
                    Algorithm::Ap => (build_ap(&c, &d)?, Recovery::Iterate),
                    Algorithm::Dr => {
                        let f = affine_indicator(&d).ok_or_else(|| {
                            Error::config("Douglas-Rachford needs the set `d` to be affine")
                        })?;
                        let dr = build_dr(&ProblemDr {
                            f,
                            g: ProxFn::Indicator(c),
                            gamma,
                            alpha,
                        })?;
                        (dr.op.clone(), Recovery::Dr(dr))
                    }
                    _ => return Err(unsupported()),
                }
            }
        };

        let x0 = if self.has("x0") {
            self.vector("x0")?
        } else {
            Vector::zeros(op.dim())
        };
        if x0.len() != op.dim() {
            return Err(Error::Validation(format!(
                "`x0` has length {}, the iteration runs in dimension {}",
                x0.len(),
                op.dim()
            )));
        }
        Ok(Instance {
            op,
            x0,
            config: p.line_search(),
            recovery,
        })
    }
}

/// `ι_D` written as a quadratic term with an equality constraint.
fn affine_indicator(d: &SetDescriptor) -> Option<QuadraticTerm> {
    let (a, b) = match d {
        SetDescriptor::AffineSet { a, b } => (a.clone(), b.clone()),
        SetDescriptor::Hyperplane { normal, offset } => {
            (Matrix::from_row_slice(1, normal.len(), normal.as_slice()), Vector::from_element(1, *offset))
        }
        _ => return None,
    };
    Some(QuadraticTerm::zero(a.ncols()).with_equality(a, b))
}

#[derive(Clone, Debug)]
enum Recovery {
    Iterate,
    Dr(DrSplit),
    Admm(AdmmSplit),
    Consensus(ConsensusSplit),
}

/// A ready-to-run problem.
#[derive(Clone, Debug)]
pub struct Instance {
    pub op: SplitOperator,
    pub x0: Vector,
    pub config: LineSearchConfig,
    recovery: Recovery,
}

impl Instance {
    /// The problem's primal estimate at iterate `x` (for Douglas-Rachford the
    /// point `prox_{γg}(2prox_{γf}(z) − z)`, for ADMM the `x` block).
    pub fn solution(&self, x: &Vector) -> Vector {
        match &self.recovery {
            Recovery::Iterate => x.clone(),
            Recovery::Dr(dr) => dr.variables(x).y,
            Recovery::Admm(admm) => admm.recover(x).0,
            Recovery::Consensus(c) => c.average(x),
        }
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Row-major standard normal matrix.
fn randn_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_row_iterator(r, c, (0..r * c).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Nonnegative least squares with a badly scaled dense `A ∈ ℝ^{m×n}`.
///
/// Draw order: the `m·n` entries of `A` row by row (standard normal), then
/// `m` row scales from `U(0.1, 1.1)`, then the `m` entries of `b` (standard
/// normal). The row scales are stored as `row_scales` for reference.
/// Parameters: Douglas-Rachford with `γ = 3`, `α = ½`, `ε = 0.03`,
/// backtracking from 50 by a factor 1/1.4.
pub fn gen_nnls(n: usize, m: usize, seed: u64) -> Result<ProblemFile> {
    if n == 0 || m == 0 {
        return Err(Error::config("nnls dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = randn_mat(&mut rng, m, n);
    let scales = Vector::from_fn(m, |_, _| rng.random_range(0.1..1.1));
    for (i, s) in scales.iter().enumerate() {
        a.row_mut(i).scale_mut(*s);
    }
    let b = randn(&mut rng, m);

    let params = Params {
        algorithm: Some(Algorithm::Dr),
        gamma: Some(3.0),
        alpha: Some(0.5),
        epsilon: Some(0.03),
        alpha_max: Some(50.0),
        schedule: Some(Schedule::GeometricBacktrack { factor: 1.0 / 1.4 }),
        selection: Some(Selection::FirstPassing),
        ..Params::default()
    };
    let mut file = ProblemFile::new(ProblemKind::Nnls, params, Some(seed));
    file.put_matrix("A", &a);
    file.put_vector("b", &b);
    file.put_vector("row_scales", &scales);
    Ok(file)
}

/// Unit disk `C` and the tangent line `D = {x₁ = 1}`, starting on the unit
/// circle at `angle_deg` degrees. Solved by alternating projections.
pub fn gen_circle_line(angle_deg: f64) -> ProblemFile {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let mut file = ProblemFile::new(
        ProblemKind::Feasibility,
        Params {
            algorithm: Some(Algorithm::Ap),
            ..Params::default()
        },
        None,
    );
    file.sets = Some(SetPair {
        c: SetSpec::Ball { center: vec![0.0, 0.0], radius: 1.0 },
        d: SetSpec::Hyperplane { normal: vec![1.0, 0.0], offset: 1.0 },
    });
    file.put_vector("x0", &Vector::from_vec(vec![c, s]));
    file
}

/// Unit disk and the line `x₁ = 1 + gap`, which are `gap` apart. Solved by
/// Douglas-Rachford with `γ = 1`, `α = ½` from the origin.
pub fn gen_disjoint(gap: f64) -> Result<ProblemFile> {
    if !(gap > 0.0 && gap.is_finite()) {
        return Err(Error::config(format!("gap must be positive, got {gap}")));
    }
    let mut file = ProblemFile::new(
        ProblemKind::Feasibility,
        Params {
            algorithm: Some(Algorithm::Dr),
            gamma: Some(1.0),
            alpha: Some(0.5),
            ..Params::default()
        },
        None,
    );
    file.sets = Some(SetPair {
        c: SetSpec::Ball { center: vec![0.0, 0.0], radius: 1.0 },
        d: SetSpec::Hyperplane { normal: vec![1.0, 0.0], offset: 1.0 + gap },
    });
    Ok(file)
}

/// Strongly convex QP over `{x ≥ 0, Aeq·x = beq}` with `eq` equality rows.
///
/// Draw order: `M ∈ ℝ^{n×n}` row by row, `q`, `Aeq` row by row, then a point
/// `w` whose absolute value defines `beq = Aeq·|w|` so the problem is feasible.
/// `P = MᵀM/n + 0.1·I`.
pub fn gen_qp(n: usize, eq: usize, seed: u64) -> Result<ProblemFile> {
    if n == 0 || eq >= n {
        return Err(Error::config("qp needs n ≥ 1 and fewer equality rows than variables"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = randn_mat(&mut rng, n, n);
    let p = m.transpose() * &m / n as f64 + Matrix::identity(n, n) * 0.1;
    let q = randn(&mut rng, n);
    let mut file = ProblemFile::new(
        ProblemKind::Qp,
        Params {
            algorithm: Some(Algorithm::Dr),
            gamma: Some(1.0),
            alpha: Some(0.5),
            g: Some(Regularizer::Nonnegative),
            ..Params::default()
        },
        Some(seed),
    );
    file.put_matrix("P", &p);
    file.put_vector("q", &q);
    if eq > 0 {
        let aeq = randn_mat(&mut rng, eq, n);
        let w = randn(&mut rng, n).abs();
        file.put_vector("beq", &(&aeq * w));
        file.put_matrix("Aeq", &aeq);
    }
    Ok(file)
}

/// `blocks` strongly convex quadratics in ℝⁿ for consensus.
///
/// Draw order per block `i`: `Mᵢ ∈ ℝ^{n×n}` row by row, then `qᵢ`.
/// `Pᵢ = MᵢᵀMᵢ/n + 0.5·I`.
pub fn gen_consensus(blocks: usize, n: usize, seed: u64) -> Result<ProblemFile> {
    if blocks == 0 || n == 0 {
        return Err(Error::config("consensus needs at least one block of positive dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut file = ProblemFile::new(
        ProblemKind::Consensus,
        Params {
            algorithm: Some(Algorithm::Consensus),
            gamma: Some(1.0),
            ..Params::default()
        },
        Some(seed),
    );
    for i in 0..blocks {
        let m = randn_mat(&mut rng, n, n);
        let p = m.transpose() * &m / n as f64 + Matrix::identity(n, n) * 0.5;
        file.put_matrix(&format!("P{i}"), &p);
        file.put_vector(&format!("q{i}"), &randn(&mut rng, n));
    }
    Ok(file)
}

/// A `qp` with zero objective and no regularizer, so the Douglas-Rachford
/// operator is the identity and every point is a solution.
pub fn gen_identity(n: usize) -> ProblemFile {
    let mut file = ProblemFile::new(
        ProblemKind::Qp,
        Params {
            algorithm: Some(Algorithm::Dr),
            g: Some(Regularizer::Zero),
            ..Params::default()
        },
        None,
    );
    file.put_matrix("P", &Matrix::zeros(n, n));
    file.put_vector("q", &Vector::zeros(n));
    file.put_vector("x0", &Vector::from_element(n, 1.0));
    file
}

pub fn save_problem(file: &ProblemFile, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(file).map_err(|e| Error::Parse {
        path: path.as_ref().display().to_string(),
        message: e.to_string(),
    })?;
    write_atomic(path.as_ref(), json.as_bytes())
}

/// Parses a problem file. Schema errors name the offending field path.
pub fn parse_problem(text: &str) -> Result<ProblemFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ProblemFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    file.validate()?;
    Ok(file)
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<ProblemFile> {
    parse_problem(&fs::read_to_string(path)?)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub const TRACE_HEADER: [&str; 11] = [
    "k",
    "res_norm",
    "nominal_res_norm",
    "alpha_k",
    "candidates",
    "activated",
    "gap_norm",
    "change_norm",
    "s1_evals",
    "s2_evals",
    "slow_path",
];

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes trace records as CSV, one row per iteration.
pub fn trace_csv(trace: &IterationTrace) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        w.write_record([
            r.k.to_string(),
            fmt_f64(r.res_norm),
            fmt_f64(r.nominal_res_norm),
            fmt_f64(r.alpha_k),
            r.candidates.to_string(),
            r.activated.to_string(),
            fmt_f64(r.gap_norm),
            fmt_f64(r.change_norm),
            r.s1_evals.to_string(),
            r.s2_evals.to_string(),
            r.slow_path.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn save_trace(trace: &IterationTrace, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &trace_csv(trace)?)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != TRACE_HEADER {
        return Err(Error::Parse {
            path: "header".into(),
            message: format!("unexpected trace columns {header:?}"),
        });
    }
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
