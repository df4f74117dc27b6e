//! `avgls`: generate problems, run solvers and export traces.
//!
//! Exit codes: 0 converged, 3 iteration cap, 4 infeasibility suspected,
//! 2 usage or configuration error, 1 anything else.

mod summary;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use avgls_core::problems::{
    gen_circle_line, gen_consensus, gen_disjoint, gen_identity, gen_nnls, gen_qp,
    load_problem, parse_problem, save_problem, save_trace, write_atomic, ProblemFile,
};
use avgls_core::{
    Activation, Error, LineSearchConfig, Schedule, Selection, SolveResult, SolveStatus, Solver,
    Vector,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

use summary::{num, JsonObject, RunSummary};

#[derive(Parser)]
#[command(name = "avgls", version, about = "Line search for averaged operator iterations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated problem file.
    Gen {
        #[command(subcommand)]
        problem: GenProblem,
        /// Output file; defaults to `<out-dir>/<kind>.json`.
        #[arg(short, long, global = true)]
        out: Option<PathBuf>,
        #[arg(long, global = true, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Solve a problem file, writing `trace.csv` and `summary.json`.
    Solve {
        problem: PathBuf,
        #[command(flatten)]
        overrides: ConfigArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Solve with and without line search and write comparison data.
    Bench {
        problem: PathBuf,
        #[command(flatten)]
        overrides: ConfigArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// One line-search step of alternating projections between the unit disk
    /// and the line x₁ = 1, listing every candidate.
    DemoAp {
        /// Start angle on the unit circle, in degrees.
        #[arg(allow_negative_numbers = true, default_value_t = 350.0)]
        angle_deg: f64,
        #[arg(long, default_value_t = 1.0)]
        start: f64,
        #[arg(long, default_value_t = 6.25)]
        spacing: f64,
        #[arg(long, default_value_t = 6)]
        count: usize,
        #[arg(long, default_value_t = 50.0)]
        alpha_max: f64,
        #[arg(long, default_value_t = 0.03)]
        epsilon: f64,
        /// Plain iterations to compare the search step against.
        #[arg(long, default_value_t = 50)]
        plain_steps: usize,
    },
}

#[derive(Subcommand)]
enum GenProblem {
    /// Nonnegative least squares with n variables and m rows.
    Nnls {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Unit disk and the tangent line x₁ = 1.
    CircleLine {
        #[arg(long, allow_negative_numbers = true, default_value_t = 350.0)]
        angle_deg: f64,
    },
    /// Unit disk and the line x₁ = 1 + gap.
    Disjoint {
        #[arg(long, default_value_t = 1.0)]
        gap: f64,
    },
    /// Convex QP with `eq` equality constraints.
    Qp {
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        eq: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Consensus averaging over `blocks` quadratic terms.
    Consensus {
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// A problem whose iteration operator is the identity.
    Identity {
        #[arg(long, default_value_t = 5)]
        n: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectionArg {
    FirstPassing,
    BestOfSchedule,
    FarthestPassing,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Always,
    Cosine,
    Never,
}

/// Overrides applied on top of the parameters stored in the problem file.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha_max: Option<f64>,
    /// Geometric backtracking factor.
    #[arg(long, conflicts_with = "spacing")]
    factor: Option<f64>,
    /// Linear forward schedule: first candidate.
    #[arg(long, requires = "spacing")]
    start: Option<f64>,
    /// Linear forward schedule: spacing between candidates.
    #[arg(long, requires_all = ["start", "count"])]
    spacing: Option<f64>,
    #[arg(long, requires = "spacing")]
    count: Option<usize>,
    #[arg(long, value_enum)]
    selection: Option<SelectionArg>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    #[arg(long)]
    eps_hat: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    refresh_period: Option<usize>,
    #[arg(long)]
    infeasibility_window: Option<usize>,
    #[arg(long)]
    infeasibility_tol: Option<f64>,
    #[arg(long)]
    no_infeasibility_check: bool,
    /// Run the plain averaged iteration.
    #[arg(long)]
    no_linesearch: bool,
}

impl ConfigArgs {
    fn apply(&self, mut cfg: LineSearchConfig) -> LineSearchConfig {
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.alpha_max {
            cfg.alpha_max = v;
        }
        if let Some(factor) = self.factor {
            cfg.schedule = Schedule::GeometricBacktrack { factor };
        }
        if let (Some(start), Some(spacing), Some(count)) = (self.start, self.spacing, self.count) {
            cfg.schedule = Schedule::LinearForward { start, spacing, count };
        }
        if let Some(s) = self.selection {
            cfg.selection = match s {
                SelectionArg::FirstPassing => Selection::FirstPassing,
                SelectionArg::BestOfSchedule => Selection::BestOfSchedule,
                SelectionArg::FarthestPassing => Selection::FarthestPassing,
            };
        }
        let eps_hat = self.eps_hat.unwrap_or(match cfg.activation {
            Activation::CosineAligned { eps_hat } => eps_hat,
            _ => avgls_core::engine::DEFAULT_EPS_HAT,
        });
        match self.activation {
            Some(ActivationArg::Always) => cfg.activation = Activation::AlwaysSearch,
            Some(ActivationArg::Cosine) => cfg.activation = Activation::CosineAligned { eps_hat },
            Some(ActivationArg::Never) => cfg.activation = Activation::Never,
            None => {
                if let Activation::CosineAligned { .. } = cfg.activation {
                    cfg.activation = Activation::CosineAligned { eps_hat };
                }
            }
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.refresh_period {
            cfg.refresh_period = v;
        }
        if let Some(check) = cfg.infeasibility.as_mut() {
            if let Some(w) = self.infeasibility_window {
                check.window = w;
            }
            if let Some(t) = self.infeasibility_tol {
                check.delta_tol = t;
            }
        }
        if self.no_infeasibility_check {
            cfg.infeasibility = None;
        }
        if self.no_linesearch {
            cfg = cfg.without_search();
        }
        cfg
    }
}

/// Exit code for a finished solve.
fn status_code(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Converged => 0,
        SolveStatus::MaxIterations => 3,
        SolveStatus::InfeasibilitySuspected => 4,
    }
}

fn error_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Validation(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AVGLS_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> avgls_core::Result<u8> {
    match cmd {
        Command::Gen { problem, out, out_dir } => cmd_gen(problem, out, &out_dir),
        Command::Solve { problem, overrides, out_dir } => cmd_solve(&problem, &overrides, &out_dir),
        Command::Bench { problem, overrides, out_dir } => cmd_bench(&problem, &overrides, &out_dir),
        Command::DemoAp {
            angle_deg,
            start,
            spacing,
            count,
            alpha_max,
            epsilon,
            plain_steps,
        } => {
            let cfg = LineSearchConfig {
                epsilon,
                alpha_max,
                schedule: Schedule::LinearForward { start, spacing, count },
                ..Default::default()
            };
            cmd_demo_ap(angle_deg, cfg, plain_steps)
        }
    }
}

fn cmd_gen(problem: GenProblem, out: Option<PathBuf>, out_dir: &Path) -> avgls_core::Result<u8> {
    let (name, file) = match problem {
        GenProblem::Nnls { n, m, seed } => ("nnls", gen_nnls(n, m.unwrap_or(n), seed)?),
        GenProblem::CircleLine { angle_deg } => ("circle_line", gen_circle_line(angle_deg)),
        GenProblem::Disjoint { gap } => ("disjoint", gen_disjoint(gap)?),
        GenProblem::Qp { n, eq, seed } => ("qp", gen_qp(n, eq, seed)?),
        GenProblem::Consensus { blocks, n, seed } => ("consensus", gen_consensus(blocks, n, seed)?),
        GenProblem::Identity { n } => ("identity", gen_identity(n)),
    };
    let path = out.unwrap_or_else(|| out_dir.join(format!("{name}.json")));
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_problem(&file, &path)?;
    println!("{}", path.display());
    Ok(0)
}

/// A solve with its wall time.
struct Timed {
    result: SolveResult,
    seconds: f64,
}

fn solve(file: &ProblemFile, overrides: &ConfigArgs) -> avgls_core::Result<(Timed, Vector)> {
    let inst = file.instantiate()?;
    let cfg = overrides.apply(inst.config.clone());
    cfg.validate(inst.op.nominal_step())?;
    let start = Instant::now();
    let result = Solver::new(inst.op.clone(), inst.x0.clone(), cfg)?.run()?;
    let seconds = start.elapsed().as_secs_f64();
    let solution = inst.solution(&result.x);
    Ok((Timed { result, seconds }, solution))
}

fn cmd_solve(path: &Path, overrides: &ConfigArgs, out_dir: &Path) -> avgls_core::Result<u8> {
    let file = load_problem(path)?;
    std::fs::create_dir_all(out_dir)?;
    let (run, solution) = solve(&file, overrides)?;
    let res = &run.result;
    save_trace(&res.trace, out_dir.join("trace.csv"))?;
    let mut json = RunSummary::from_trace(&res.trace, run.seconds).to_json();
    json.str("status", status_name(res.status));
    json.usize("max_candidates", res.trace.records.iter().map(|r| r.candidates).max().unwrap_or(0));
    if let Some(d) = &res.displacement {
        json.f64("displacement_norm", d.norm());
    }
    json.f64s("solution", solution.as_slice());
    let text = json.render();
    write_atomic(&out_dir.join("summary.json"), text.as_bytes())?;
    println!("{text}");
    Ok(status_code(res.status))
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Converged => "converged",
        SolveStatus::MaxIterations => "max_iterations",
        SolveStatus::InfeasibilitySuspected => "infeasibility_suspected",
    }
}

/// Two-column `k ‖r^k‖` data, including the final residual.
fn residual_curve(res: &SolveResult) -> String {
    res.trace
        .residual_norms()
        .iter()
        .enumerate()
        .map(|(k, r)| format!("{k} {}\n", num(*r)))
        .collect()
}

/// `k α_k candidates` for every iteration.
fn alpha_scatter(res: &SolveResult) -> String {
    res.trace
        .records
        .iter()
        .map(|r| format!("{} {} {}\n", r.k, num(r.alpha_k), r.candidates))
        .collect()
}

fn cmd_bench(path: &Path, overrides: &ConfigArgs, out_dir: &Path) -> avgls_core::Result<u8> {
    // Both runs parse the same bytes.
    let text = std::fs::read_to_string(path)?;
    let file = parse_problem(&text)?;
    std::fs::create_dir_all(out_dir)?;
    let searching = ConfigArgs { no_linesearch: false, ..overrides.clone() };
    let plain = ConfigArgs { no_linesearch: true, ..overrides.clone() };
    let (ls, pl) = std::thread::scope(|s| {
        let a = s.spawn(|| solve(&file, &searching));
        let b = s.spawn(|| solve(&file, &plain));
        (a.join().expect("solver thread panicked"), b.join().expect("solver thread panicked"))
    });
    let ((ls, _), (pl, _)) = (ls?, pl?);

    write_atomic(&out_dir.join("residual_ls.dat"), residual_curve(&ls.result).as_bytes())?;
    write_atomic(&out_dir.join("residual_plain.dat"), residual_curve(&pl.result).as_bytes())?;
    write_atomic(&out_dir.join("alpha_ls.dat"), alpha_scatter(&ls.result).as_bytes())?;
    save_trace(&ls.result.trace, out_dir.join("trace_ls.csv"))?;
    save_trace(&pl.result.trace, out_dir.join("trace_plain.csv"))?;

    let ls_iters = ls.result.trace.iterations();
    let pl_iters = pl.result.trace.iterations();
    let mut json = JsonObject::default();
    json.raw("linesearch", RunSummary::from_trace(&ls.result.trace, ls.seconds).to_json().render());
    json.raw("plain", RunSummary::from_trace(&pl.result.trace, pl.seconds).to_json().render());
    json.str("linesearch_status", status_name(ls.result.status));
    json.str("plain_status", status_name(pl.result.status));
    json.f64("iteration_ratio", pl_iters as f64 / ls_iters.max(1) as f64);
    json.f64("wall_time_ratio", pl.seconds / ls.seconds.max(f64::MIN_POSITIVE));
    let text = json.render();
    write_atomic(&out_dir.join("bench.json"), text.as_bytes())?;
    println!("{text}");
    Ok(status_code(ls.result.status).max(status_code(pl.result.status)))
}

fn cmd_demo_ap(angle_deg: f64, cfg: LineSearchConfig, plain_steps: usize) -> avgls_core::Result<u8> {
    let inst = gen_circle_line(angle_deg).instantiate()?;
    cfg.validate(inst.op.nominal_step())?;
    let solver = Solver::new(inst.op.clone(), inst.x0.clone(), cfg)?;
    let probe = solver.probe()?;
    let pt = |v: &Vector| format!("({}, {})", num(v[0]), num(v[1]));

    println!("start {} at {angle_deg} degrees", pt(&inst.x0));
    println!(
        "nominal alpha {} point {} residual {}",
        num(probe.nominal_alpha),
        pt(&probe.nominal_point),
        num(probe.nominal_res_norm)
    );
    if probe.candidates.is_empty() {
        println!("fixed point: no candidates evaluated");
        return Ok(0);
    }
    println!("acceptance bound {}", num(probe.bound));
    for (i, c) in probe.candidates.iter().enumerate() {
        println!(
            "candidate {} alpha {} point {} residual {} {}",
            i + 1,
            num(c.alpha),
            pt(&c.point),
            num(c.residual_norm),
            if c.passes { "pass" } else { "fail" }
        );
    }
    let target = Vector::from_vec(vec![1.0, 0.0]);
    for (name, rule) in [
        ("best_of_schedule", Selection::BestOfSchedule),
        ("farthest_passing", Selection::FarthestPassing),
    ] {
        match probe.select(rule) {
            Some(c) => println!(
                "{name} alpha {} point {} distance {}",
                num(c.alpha),
                pt(&c.point),
                num((&c.point - &target).norm())
            ),
            None => println!("{name} none (nominal step)"),
        }
    }
    let mut x = inst.x0.clone();
    for _ in 0..plain_steps {
        x = inst.op.apply(&x);
    }
    println!(
        "plain {plain_steps} steps point {} distance {}",
        pt(&x),
        num((&x - &target).norm())
    );
    Ok(0)
}
