//! Python bindings: problem generators, the line-search solver and a few
//! building blocks (projections and proximal maps). Vectors cross the
//! boundary as lists of floats.

use avgls_core::operators::{project as project_onto, ProxFn};
use avgls_core::problems::{self, ProblemFile, SetSpec};
use avgls_core::{
    Activation, Error, LineSearchConfig, Operator, Schedule, Selection, SolveResult, SolveStatus,
    Solver, Vector,
};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::Config(_)
        | Error::Dimension(_)
        | Error::Parse { .. }
        | Error::Validation(_)
        | Error::SingularKkt { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Converged => "converged",
        SolveStatus::MaxIterations => "max_iterations",
        SolveStatus::InfeasibilitySuspected => "infeasibility_suspected",
    }
}

/// A problem file: data plus solver parameters.
#[pyclass(module = "avgls", skip_from_py_object)]
#[derive(Clone)]
struct Problem {
    file: ProblemFile,
}

#[pymethods]
impl Problem {
    /// Nonnegative least squares with `n` variables and `m` rows (default `n`).
    #[staticmethod]
    #[pyo3(signature = (n, m=None, seed=0))]
    fn nnls(n: usize, m: Option<usize>, seed: u64) -> PyResult<Self> {
        let file = problems::gen_nnls(n, m.unwrap_or(n), seed).map_err(py_err)?;
        Ok(Problem { file })
    }

    #[staticmethod]
    #[pyo3(signature = (angle_deg=350.0))]
    fn circle_line(angle_deg: f64) -> Self {
        Problem { file: problems::gen_circle_line(angle_deg) }
    }

    #[staticmethod]
    #[pyo3(signature = (gap=1.0))]
    fn disjoint(gap: f64) -> PyResult<Self> {
        Ok(Problem { file: problems::gen_disjoint(gap).map_err(py_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (n, eq=0, seed=0))]
    fn qp(n: usize, eq: usize, seed: u64) -> PyResult<Self> {
        Ok(Problem { file: problems::gen_qp(n, eq, seed).map_err(py_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (blocks, n, seed=0))]
    fn consensus(blocks: usize, n: usize, seed: u64) -> PyResult<Self> {
        Ok(Problem { file: problems::gen_consensus(blocks, n, seed).map_err(py_err)? })
    }

    #[staticmethod]
    fn identity(n: usize) -> Self {
        Problem { file: problems::gen_identity(n) }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Problem { file: problems::load_problem(path).map_err(py_err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Problem { file: problems::parse_problem(text).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        problems::save_problem(&self.file, path).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.file).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn kind(&self) -> PyResult<String> {
        let v = serde_json::to_value(self.file.kind).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(v.as_str().unwrap_or_default().to_owned())
    }

    #[getter]
    fn algorithm(&self) -> PyResult<String> {
        let v = serde_json::to_value(self.file.algorithm())
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(v.as_str().unwrap_or_default().to_owned())
    }

    /// Dimension of the iteration variable.
    #[getter]
    fn dim(&self) -> PyResult<usize> {
        Ok(self.file.instantiate().map_err(py_err)?.op.dim())
    }

    /// The line-search configuration stored in the file.
    fn config(&self) -> Config {
        Config { cfg: self.file.params.line_search() }
    }

    fn __repr__(&self) -> String {
        format!("Problem(kind={:?}, dims={:?})", self.file.kind, self.file.dims)
    }
}

/// Line-search parameters.
#[pyclass(module = "avgls", skip_from_py_object)]
#[derive(Clone)]
struct Config {
    cfg: LineSearchConfig,
}

#[pymethods]
impl Config {
    /// `schedule` is `"geometric"` (uses `factor`) or `"linear"` (uses
    /// `start`, `spacing`, `count`). `selection` is one of `first_passing`,
    /// `best_of_schedule`, `farthest_passing`; `activation` one of
    /// `always`, `cosine`, `never`.
    #[new]
    #[pyo3(signature = (
        epsilon=0.03, alpha_max=50.0, schedule="geometric", factor=1.0/1.4,
        start=1.0, spacing=1.0, count=10, selection="first_passing",
        activation="always", eps_hat=avgls_core::engine::DEFAULT_EPS_HAT,
        tol=1e-6, max_iter=100_000, refresh_period=50, infeasibility=true,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        epsilon: f64,
        alpha_max: f64,
        schedule: &str,
        factor: f64,
        start: f64,
        spacing: f64,
        count: usize,
        selection: &str,
        activation: &str,
        eps_hat: f64,
        tol: f64,
        max_iter: usize,
        refresh_period: usize,
        infeasibility: bool,
    ) -> PyResult<Self> {
        let schedule = match schedule {
            "geometric" => Schedule::GeometricBacktrack { factor },
            "linear" => Schedule::LinearForward { start, spacing, count },
            other => return Err(PyValueError::new_err(format!("unknown schedule {other:?}"))),
        };
        let selection = match selection {
            "first_passing" => Selection::FirstPassing,
            "best_of_schedule" => Selection::BestOfSchedule,
            "farthest_passing" => Selection::FarthestPassing,
            other => return Err(PyValueError::new_err(format!("unknown selection {other:?}"))),
        };
        let activation = match activation {
            "always" => Activation::AlwaysSearch,
            "cosine" => Activation::CosineAligned { eps_hat },
            "never" => Activation::Never,
            other => return Err(PyValueError::new_err(format!("unknown activation {other:?}"))),
        };
        let d = LineSearchConfig::default();
        let cfg = LineSearchConfig {
            epsilon,
            alpha_max,
            schedule,
            selection,
            activation,
            tol,
            max_iter,
            refresh_period,
            infeasibility: if infeasibility { d.infeasibility } else { None },
        };
        // Operator-independent checks; the nominal step is checked at solve time.
        cfg.validate(0.0).map_err(py_err)?;
        Ok(Config { cfg })
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.cfg.epsilon
    }

    #[getter]
    fn alpha_max(&self) -> f64 {
        self.cfg.alpha_max
    }

    #[getter]
    fn tol(&self) -> f64 {
        self.cfg.tol
    }

    #[getter]
    fn max_iter(&self) -> usize {
        self.cfg.max_iter
    }

    /// Candidate step lengths for a given nominal step.
    fn candidates(&self, nominal: f64) -> Vec<f64> {
        self.cfg.candidates(nominal)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.cfg)
    }
}

/// Outcome of a solve, with its trace.
#[pyclass(module = "avgls")]
struct Result {
    res: SolveResult,
    solution: Vector,
    wall_time_seconds: f64,
}

#[pymethods]
impl Result {
    #[getter]
    fn status(&self) -> &'static str {
        status_name(self.res.status)
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.res.trace.iterations()
    }

    /// The final iterate of the fixed-point iteration.
    #[getter]
    fn x(&self) -> Vec<f64> {
        self.res.x.as_slice().to_vec()
    }

    /// The problem's primal solution recovered from the iterate.
    #[getter]
    fn solution(&self) -> Vec<f64> {
        self.solution.as_slice().to_vec()
    }

    #[getter]
    fn final_res_norm(&self) -> f64 {
        self.res.trace.final_res_norm
    }

    #[getter]
    fn displacement_norm(&self) -> Option<f64> {
        self.res.displacement.as_ref().map(|d| d.norm())
    }

    #[getter]
    fn residual_norms(&self) -> Vec<f64> {
        self.res.trace.residual_norms()
    }

    #[getter]
    fn alphas(&self) -> Vec<f64> {
        self.res.trace.records.iter().map(|r| r.alpha_k).collect()
    }

    #[getter]
    fn candidates(&self) -> Vec<usize> {
        self.res.trace.records.iter().map(|r| r.candidates).collect()
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let t = &self.res.trace;
        let d = PyDict::new(py);
        d.set_item("iterations", t.iterations())?;
        d.set_item("wall_time_seconds", self.wall_time_seconds)?;
        d.set_item("final_res_norm", t.final_res_norm)?;
        d.set_item("ls_accept_count", t.accepted_searches())?;
        d.set_item(
            "ls_accept_alpha_gt5_count",
            t.records.iter().filter(|r| r.alpha_k > t.nominal_step && r.alpha_k > 5.0).count(),
        )?;
        d.set_item("total_s2_evals", t.total_s2_evals())?;
        d.set_item("total_s1_evals", t.total_s1_evals())?;
        d.set_item("status", self.status())?;
        Ok(d)
    }

    fn save_trace(&self, path: &str) -> PyResult<()> {
        problems::save_trace(&self.res.trace, path).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Result(status={:?}, iterations={}, final_res_norm={:e})",
            self.status(),
            self.iterations(),
            self.final_res_norm()
        )
    }
}

/// Solves `problem` with its stored parameters, or with `config`.
/// `linesearch=False` runs the plain averaged iteration.
#[pyfunction]
#[pyo3(signature = (problem, config=None, linesearch=true))]
fn solve(py: Python<'_>, problem: &Problem, config: Option<&Config>, linesearch: bool) -> PyResult<Result> {
    let file = problem.file.clone();
    let cfg = config.map(|c| c.cfg.clone());
    py.detach(move || {
        let inst = file.instantiate()?;
        let mut cfg = cfg.unwrap_or_else(|| inst.config.clone());
        if !linesearch {
            cfg = cfg.without_search();
        }
        cfg.validate(inst.op.nominal_step())?;
        let start = std::time::Instant::now();
        let res = Solver::new(inst.op.clone(), inst.x0.clone(), cfg)?.run()?;
        let wall_time_seconds = start.elapsed().as_secs_f64();
        let solution = inst.solution(&res.x);
        Ok(Result { res, solution, wall_time_seconds })
    })
    .map_err(py_err)
}

/// One line-search step of alternating projections between the unit disk
/// and the line `x₁ = 1`, starting on the circle at `angle_deg`.
#[pyfunction]
#[pyo3(signature = (angle_deg=350.0, start=1.0, spacing=6.25, count=6, alpha_max=50.0, epsilon=0.03))]
fn demo_ap<'py>(
    py: Python<'py>,
    angle_deg: f64,
    start: f64,
    spacing: f64,
    count: usize,
    alpha_max: f64,
    epsilon: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let inst = problems::gen_circle_line(angle_deg).instantiate().map_err(py_err)?;
    let cfg = LineSearchConfig {
        epsilon,
        alpha_max,
        schedule: Schedule::LinearForward { start, spacing, count },
        ..Default::default()
    };
    cfg.validate(inst.op.nominal_step()).map_err(py_err)?;
    let probe = Solver::new(inst.op.clone(), inst.x0.clone(), cfg)
        .and_then(|s| s.probe())
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("start", inst.x0.as_slice().to_vec())?;
    out.set_item("nominal_alpha", probe.nominal_alpha)?;
    out.set_item("nominal_point", probe.nominal_point.as_slice().to_vec())?;
    out.set_item("nominal_res_norm", probe.nominal_res_norm)?;
    out.set_item("bound", probe.bound)?;
    let cands = probe
        .candidates
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("alpha", c.alpha)?;
            d.set_item("point", c.point.as_slice().to_vec())?;
            d.set_item("residual_norm", c.residual_norm)?;
            d.set_item("passes", c.passes)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    out.set_item("candidates", cands)?;
    out.set_item("best_of_schedule", probe.select(Selection::BestOfSchedule).map(|c| c.alpha))?;
    out.set_item("farthest_passing", probe.select(Selection::FarthestPassing).map(|c| c.alpha))?;
    Ok(out)
}

/// Euclidean projection of `x` onto a set given as a dict, for example
/// `{"type": "ball", "center": [0, 0], "radius": 1}`.
#[pyfunction]
fn project(py: Python<'_>, set: &Bound<'_, PyAny>, x: Vec<f64>) -> PyResult<Vec<f64>> {
    let text: String = py.import("json")?.call_method1("dumps", (set,))?.extract()?;
    let spec: SetSpec =
        serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("bad set: {e}")))?;
    let desc = spec.to_descriptor().map_err(py_err)?;
    let p = project_onto(&desc, &Vector::from_vec(x)).map_err(py_err)?;
    Ok(p.as_slice().to_vec())
}

/// `prox_{γg}(x)` for `g` one of `"zero"`, `"l1"` (scaled by `weight`) or
/// `"nonnegative"` (indicator of the orthant).
#[pyfunction]
#[pyo3(signature = (g, x, gamma, weight=1.0))]
fn prox(g: &str, x: Vec<f64>, gamma: f64, weight: f64) -> PyResult<Vec<f64>> {
    let dim = x.len();
    let f = match g {
        "zero" => ProxFn::Zero { dim },
        "l1" => ProxFn::L1 { dim, weight },
        "nonnegative" => ProxFn::Indicator(avgls_core::operators::SetDescriptor::NonnegativeOrthant { dim }),
        other => return Err(PyValueError::new_err(format!("unknown function {other:?}"))),
    };
    let stage = f.prox(gamma).map_err(py_err)?;
    Ok(stage.apply(&Vector::from_vec(x)).as_slice().to_vec())
}

#[pymodule]
fn avgls(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<Config>()?;
    m.add_class::<Result>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(demo_ap, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(prox, m)?)?;
    Ok(())
}
