use super::*;
use crate::engine::{run, LineSearchConfig, SolveStatus, Solver};
use crate::operators::testutil::*;
use rand::Rng;

fn v(xs: &[f64]) -> Vector {
    Vector::from_vec(xs.to_vec())
}

fn half_sq_dist(a: &Vector) -> QuadraticTerm {
    let n = a.len();
    QuadraticTerm::new(Matrix::identity(n, n), -a)
}

fn tight(max_iter: usize) -> LineSearchConfig {
    LineSearchConfig {
        tol: 1e-12,
        max_iter,
        infeasibility: None,
        ..Default::default()
    }
}

/// Plain averaged iteration of a split operator, computed naively.
fn averaged(op: &SplitOperator, x: &Vector) -> Vector {
    let a = op.nominal_step();
    x * (1.0 - a) + op.apply(x) * a
}

#[test]
fn lipschitz_of_simple_matrices() {
    assert_eq!(estimate_lipschitz(&Matrix::identity(3, 3)).unwrap(), 1.0);
    let d = Matrix::from_diagonal(&v(&[1.0, 3.0, 5.0]));
    assert!((estimate_lipschitz(&d).unwrap() - 5.0).abs() < 1e-6 * 5.0);
    assert_eq!(estimate_lipschitz(&Matrix::zeros(2, 2)).unwrap(), 0.0);
    assert!(estimate_lipschitz(&Matrix::zeros(2, 3)).is_err());
}

#[test]
fn lipschitz_matches_eigendecomposition() {
    let mut rng = rng(31);
    for _ in 0..5 {
        let p = random_psd(&mut rng, 20);
        let oracle = p.clone().symmetric_eigen().eigenvalues.max();
        let est = estimate_lipschitz(&p).unwrap();
        assert!((est - oracle).abs() <= 1e-6 * oracle, "{est} vs {oracle}");
    }
}

#[test]
fn fbs_with_identity_hessian() {
    let q = v(&[1.0, -2.0]);
    let prob = ProblemFbs {
        f: QuadraticTerm::new(Matrix::identity(2, 2), q.clone()),
        g: ProxFn::Zero { dim: 2 },
        gamma: 1.0,
        lipschitz: None,
    };
    let op = build_fbs(&prob).unwrap();
    assert_eq!(op.form(), Form::TForm);
    assert_eq!(op.nominal_step(), 1.0);
    assert!((op.averaging() - 2.0 / 3.0).abs() < 1e-15);
    let t1 = op.s1().as_affine().unwrap();
    assert_eq!(t1.apply(&v(&[5.0, 7.0])), -&q);
    assert_eq!(t1.linear(&v(&[5.0, 7.0])), Vector::zeros(2));
}

#[test]
fn fbs_step_size_range_is_open() {
    let mut prob = ProblemFbs {
        f: QuadraticTerm::new(Matrix::identity(2, 2) * 4.0, Vector::zeros(2)),
        g: ProxFn::Zero { dim: 2 },
        gamma: 0.5,
        lipschitz: None,
    };
    assert!(matches!(build_fbs(&prob), Err(Error::Config(_))));
    prob.gamma = 0.0;
    assert!(build_fbs(&prob).is_err());
    prob.gamma = 0.499;
    assert!(build_fbs(&prob).is_ok());
}

#[test]
fn fbs_without_g_solves_the_linear_system() {
    let mut rng = rng(32);
    let n = 6;
    let p = random_psd(&mut rng, n) + Matrix::identity(n, n);
    let q = randn(&mut rng, n);
    let l = estimate_lipschitz(&p).unwrap();
    let prob = ProblemFbs {
        f: QuadraticTerm::new(p.clone(), q.clone()),
        g: ProxFn::Zero { dim: n },
        gamma: 1.0 / l,
        lipschitz: None,
    };
    let op = build_fbs(&prob).unwrap();
    let res = run(&op, &Vector::zeros(n), &tight(200_000)).unwrap();
    assert_eq!(res.status, SolveStatus::Converged);
    let direct = p.lu().solve(&-q).unwrap();
    assert!((res.x - &direct).norm() <= 1e-8 * direct.norm().max(1.0));
}

#[test]
fn fbs_plain_step_is_gradient_descent() {
    let mut rng = rng(33);
    let p = random_psd(&mut rng, 4);
    let q = randn(&mut rng, 4);
    let gamma = 1.0 / estimate_lipschitz(&p).unwrap();
    let prob = ProblemFbs {
        f: QuadraticTerm::new(p.clone(), q.clone()),
        g: ProxFn::Zero { dim: 4 },
        gamma,
        lipschitz: None,
    };
    let op = build_fbs(&prob).unwrap();
    let x = randn(&mut rng, 4);
    let expected = &x - (&p * &x + &q) * gamma;
    assert!((averaged(&op, &x) - expected).norm() < 1e-12);
}

/// The nonexpansive part `S = id + (T − id)/α̃` of a T-form operator.
fn extracted(op: &SplitOperator, x: &Vector) -> Vector {
    x + (op.apply(x) - x) / op.averaging()
}

#[test]
fn tform_operators_have_nonexpansive_parts() {
    let mut rng = rng(34);
    let n = 5;
    let p = random_psd(&mut rng, n);
    let l = estimate_lipschitz(&p).unwrap();
    let fbs = build_fbs(&ProblemFbs {
        f: QuadraticTerm::new(p, randn(&mut rng, n)),
        g: ProxFn::L1 { dim: n, weight: 0.3 },
        gamma: 1.9 / l,
        lipschitz: None,
    })
    .unwrap();
    let ap = build_ap(
        &SetDescriptor::Ball { center: randn(&mut rng, n), radius: 1.0 },
        &SetDescriptor::AffineSet { a: randn_mat(&mut rng, 2, n), b: randn(&mut rng, 2) },
    )
    .unwrap();
    for op in [fbs, ap] {
        for _ in 0..100 {
            let x = randn(&mut rng, n) * 3.0;
            let y = randn(&mut rng, n) * 3.0;
            let sx = extracted(&op, &x);
            let sy = extracted(&op, &y);
            assert!((sx - sy).norm() <= (1.0 + 1e-10) * (&x - &y).norm());
            let a = op.averaging();
            let recomposed = &x * (1.0 - a) + extracted(&op, &x) * a;
            assert!((recomposed - op.apply(&x)).norm() <= 1e-10 * x.norm().max(1.0));
        }
    }
}

#[test]
fn fbs_fixed_point_is_optimal() {
    let mut rng = rng(35);
    let n = 4;
    let p = random_psd(&mut rng, n) + Matrix::identity(n, n);
    let q = randn(&mut rng, n);
    let xstar = p.clone().lu().solve(&-&q).unwrap();
    let op = build_fbs(&ProblemFbs {
        f: QuadraticTerm::new(p, q),
        g: ProxFn::Zero { dim: n },
        gamma: 0.1,
        lipschitz: None,
    })
    .unwrap();
    assert!(op.residual(&xstar).norm() <= 1e-8);
}

#[test]
fn dr_with_zero_functions_is_the_identity() {
    let dr = build_dr(&ProblemDr {
        f: QuadraticTerm::zero(3),
        g: ProxFn::Zero { dim: 3 },
        gamma: 1.0,
        alpha: 0.5,
    })
    .unwrap();
    let z = v(&[1.0, -2.0, 0.5]);
    assert!((dr.op.apply(&z) - &z).norm() < 1e-14);
}

#[test]
fn dr_recovers_the_closed_form_minimizer() {
    let a = v(&[1.5, -0.5, 2.0]);
    let dr = build_dr(&ProblemDr {
        f: half_sq_dist(&a),
        g: ProxFn::Zero { dim: 3 },
        gamma: 1.0,
        alpha: 0.5,
    })
    .unwrap();
    assert!(dr.op.residual(&a).norm() <= 1e-8);
    let res = run(&dr.op, &Vector::zeros(3), &tight(10_000)).unwrap();
    assert_eq!(res.status, SolveStatus::Converged);
    assert!((dr.primal(&res.x) - &a).norm() < 1e-9);
}

#[test]
fn dr_variable_identities() {
    let mut rng = rng(36);
    let n = 5;
    let dr = build_dr(&ProblemDr {
        f: QuadraticTerm::new(random_psd(&mut rng, n), randn(&mut rng, n)),
        g: ProxFn::Indicator(SetDescriptor::NonnegativeOrthant { dim: n }),
        gamma: 0.7,
        alpha: 0.5,
    })
    .unwrap();
    for _ in 0..20 {
        let z = randn(&mut rng, n);
        let vars = dr.variables(&z);
        let rz = dr.op.s1().apply(&z);
        assert!((rz - (&vars.x * 2.0 - &z)).norm() < 1e-12 * z.norm().max(1.0));
        assert!((dr.op.residual(&z) - &vars.r).norm() < 1e-12 * z.norm().max(1.0));
    }
}

/// `max(‖x − max(x − ∇f(x), 0)‖∞)`, zero exactly at NNLS optima.
fn projected_gradient_residual(a: &Matrix, b: &Vector, x: &Vector) -> f64 {
    let grad = a.transpose() * (a * x - b) * 2.0;
    (x - (x - &grad).map(|t| t.max(0.0))).amax()
}

#[test]
fn dr_solves_nonnegative_least_squares() {
    let mut rng = rng(37);
    let (m, n) = (30, 12);
    let a = randn_mat(&mut rng, m, n);
    let b = randn(&mut rng, m);
    let at = a.transpose();
    let dr = build_dr(&ProblemDr {
        f: QuadraticTerm::new(&at * &a * 2.0, &at * &b * -2.0),
        g: ProxFn::Indicator(SetDescriptor::NonnegativeOrthant { dim: n }),
        gamma: 0.1,
        alpha: 0.5,
    })
    .unwrap();
    let res = run(&dr.op, &Vector::zeros(n), &tight(100_000)).unwrap();
    assert_eq!(res.status, SolveStatus::Converged);
    let x = dr.variables(&res.x).y;
    assert!(x.iter().all(|&t| t >= 0.0));
    assert!(projected_gradient_residual(&a, &b, &x) <= 1e-6);
}

fn random_admm(seed: u64, alpha: f64) -> ProblemAdmm {
    let mut rng = rng(seed);
    let n = rng.random_range(2..=8);
    let m = rng.random_range(2..=8);
    let p = rng.random_range(n.max(m)..=15);
    let f = QuadraticTerm::new(random_psd(&mut rng, n), randn(&mut rng, n));
    let k = rng.random_range(0..m);
    let g = QuadraticTerm::new(random_psd(&mut rng, m), randn(&mut rng, m));
    let g = if k > 0 {
        g.with_equality(randn_mat(&mut rng, k, m), randn(&mut rng, k))
    } else {
        g
    };
    ProblemAdmm {
        f: AdmmObjective::Quadratic(f),
        g,
        a: randn_mat(&mut rng, p, n),
        b: randn_mat(&mut rng, p, m),
        c: randn(&mut rng, p),
        rho: rng.random_range(0.5..2.0),
        alpha,
    }
}

fn close(a: &Vector, b: &Vector, tol: f64) -> bool {
    (a - b).norm() <= tol * b.norm().max(1.0)
}

#[test]
fn admm_dr_form_reproduces_standard_iterates() {
    for seed in 0..6 {
        let alpha = if seed % 2 == 0 { 0.5 } else { 0.3 + 0.1 * seed as f64 };
        let prob = random_admm(100 + seed, alpha);
        let split = build_admm(&prob).unwrap();
        let mut g = rng(200 + seed);
        let mut state = AdmmState {
            x: Vector::zeros(prob.a.ncols()),
            x_a: Vector::zeros(prob.c.len()),
            z: randn(&mut g, prob.b.ncols()),
            u: randn(&mut g, prob.c.len()),
        };
        state = admm_standard_iterate(&prob, &state).unwrap();
        let mut vk = &state.u - &prob.b * &state.z;
        for _ in 0..60 {
            let next = admm_standard_iterate(&prob, &state).unwrap();
            let (x, z) = split.recover(&vk);
            assert!(close(&z, &state.z, 1e-10), "z mismatch");
            assert!(close(&x, &next.x, 1e-10), "x mismatch");
            state = next;
            vk = averaged(&split.op, &vk);
        }
    }
}

#[test]
fn admm_without_relaxation_has_x_a_equal_to_ax() {
    let prob = random_admm(41, 0.5);
    let mut g = rng(42);
    let mut state = AdmmState::zeros(&prob);
    state.z = randn(&mut g, prob.b.ncols());
    for _ in 0..5 {
        state = admm_standard_iterate(&prob, &state).unwrap();
        assert!(close(&state.x_a, &(&prob.a * &state.x), 1e-14));
    }
}

#[test]
fn standard_admm_with_zero_objectives() {
    let n = 3;
    let prob = ProblemAdmm {
        f: AdmmObjective::Quadratic(QuadraticTerm::zero(n)),
        g: QuadraticTerm::zero(n),
        a: Matrix::identity(n, n),
        b: Matrix::identity(n, n),
        c: Vector::zeros(n),
        rho: 1.3,
        alpha: 0.5,
    };
    let mut g = rng(43);
    let state = AdmmState {
        x: Vector::zeros(n),
        x_a: Vector::zeros(n),
        z: randn(&mut g, n),
        u: randn(&mut g, n),
    };
    let next = admm_standard_iterate(&prob, &state).unwrap();
    // x = −(z + u), x_A = x, z⁺ = −(x_A + u) = z, u⁺ = u + x_A + z⁺ = 0.
    let x = -(&state.z + &state.u);
    assert!(close(&next.x, &x, 1e-14));
    assert!(close(&next.x_a, &x, 1e-14));
    assert!(close(&next.z, &state.z, 1e-14));
    assert!(next.u.norm() < 1e-14);
}

#[test]
fn admm_with_identity_coupling_matches_dr() {
    let mut rng = rng(44);
    let n = 6;
    let gamma = 0.8;
    let fq = QuadraticTerm::new(random_psd(&mut rng, n), randn(&mut rng, n));
    let gq = QuadraticTerm::new(random_psd(&mut rng, n), randn(&mut rng, n));
    let admm = build_admm(&ProblemAdmm {
        f: AdmmObjective::Quadratic(fq.clone()),
        g: gq.clone(),
        a: Matrix::identity(n, n),
        b: -Matrix::identity(n, n),
        c: Vector::zeros(n),
        rho: 1.0 / gamma,
        alpha: 0.5,
    })
    .unwrap();
    let dr = build_dr(&ProblemDr {
        f: gq,
        g: ProxFn::Quadratic(fq),
        gamma,
        alpha: 0.5,
    })
    .unwrap();
    let mut a = randn(&mut rng, n);
    let mut b = a.clone();
    for _ in 0..100 {
        a = averaged(&admm.op, &a);
        b = averaged(&dr.op, &b);
        assert!(close(&a, &b, 1e-10));
    }
}

#[test]
fn admm_prox_objective_needs_scalar_coupling() {
    let n = 3;
    let mut prob = ProblemAdmm {
        f: AdmmObjective::Prox(ProxFn::L1 { dim: n, weight: 0.5 }),
        g: QuadraticTerm::new(Matrix::identity(n, n), Vector::zeros(n)),
        a: Matrix::identity(n, n) * 2.0,
        b: -Matrix::identity(n, n),
        c: v(&[1.0, 0.0, -1.0]),
        rho: 1.0,
        alpha: 0.5,
    };
    let split = build_admm(&prob).unwrap();
    let mut state = AdmmState::zeros(&prob);
    state = admm_standard_iterate(&prob, &state).unwrap();
    let mut vk = &state.u - &prob.b * &state.z;
    for _ in 0..30 {
        let next = admm_standard_iterate(&prob, &state).unwrap();
        let (x, z) = split.recover(&vk);
        assert!(close(&z, &state.z, 1e-10));
        assert!(close(&x, &next.x, 1e-10));
        state = next;
        vk = averaged(&split.op, &vk);
    }
    prob.a[(0, 1)] = 0.1;
    assert!(matches!(build_admm(&prob), Err(Error::Config(_))));
}

#[test]
fn admm_rejects_inconsistent_shapes() {
    let mut prob = random_admm(45, 0.5);
    prob.c = Vector::zeros(prob.c.len() + 1);
    assert!(matches!(build_admm(&prob), Err(Error::Dimension(_))));
}

#[test]
fn admm_residual_is_twice_the_constraint_violation() {
    let prob = random_admm(46, 0.5);
    let split = build_admm(&prob).unwrap();
    let vk = randn(&mut rng(47), prob.c.len());
    let (x, z) = split.recover(&vk);
    let expected = (&prob.a * x + &prob.b * z - &prob.c) * 2.0;
    assert!(close(&split.op.residual(&vk), &expected, 1e-10));
}

#[test]
fn admm_iteration_uses_one_linear_application() {
    let prob = random_admm(48, 0.5);
    let split = build_admm(&prob).unwrap();
    let mut s = Solver::new(split.op, Vector::zeros(prob.c.len()), LineSearchConfig::default()).unwrap();
    for _ in 0..10 {
        let rec = s.step().unwrap();
        assert!(!rec.slow_path);
        assert_eq!(rec.s1_evals, 1);
    }
}

#[test]
fn single_block_consensus_is_dr_without_g() {
    let mut rng = rng(51);
    let n = 4;
    let f = QuadraticTerm::new(random_psd(&mut rng, n), randn(&mut rng, n));
    let cons = build_consensus(&[ProxFn::Quadratic(f.clone())], 0.9).unwrap();
    let dr = build_dr(&ProblemDr {
        f,
        g: ProxFn::Zero { dim: n },
        gamma: 0.9,
        alpha: 0.5,
    })
    .unwrap();
    for _ in 0..10 {
        let z = randn(&mut rng, n);
        assert!(close(&cons.op.apply(&z), &dr.op.apply(&z), 1e-12));
    }
}

#[test]
fn consensus_of_distances_is_the_mean() {
    let points = [v(&[1.0, 0.0]), v(&[3.0, 2.0]), v(&[-1.0, 4.0])];
    let fs: Vec<ProxFn> = points.iter().map(|a| ProxFn::Quadratic(half_sq_dist(a))).collect();
    let cons = build_consensus(&fs, 1.0).unwrap();
    let mean = v(&[1.0, 2.0]);
    // The fixed point stacks the aᵢ themselves; their average is the minimizer.
    let stacked = Vector::from_iterator(6, points.iter().flat_map(|a| a.iter().copied()));
    assert!(cons.op.residual(&stacked).norm() <= 1e-8);
    assert!((cons.average(&stacked) - &mean).norm() < 1e-15);
    let res = run(&cons.op, &Vector::zeros(6), &tight(10_000)).unwrap();
    assert_eq!(res.status, SolveStatus::Converged);
    assert!((cons.average(&res.x) - mean).norm() < 1e-9);
}

#[test]
fn consensus_of_quadratics_matches_the_stacked_solve() {
    let mut rng = rng(52);
    let n = 4;
    let mut psum = Matrix::zeros(n, n);
    let mut qsum = Vector::zeros(n);
    let mut fs = Vec::new();
    for _ in 0..3 {
        let p = random_psd(&mut rng, n) + Matrix::identity(n, n) * 0.5;
        let q = randn(&mut rng, n);
        psum += &p;
        qsum += &q;
        fs.push(ProxFn::Quadratic(QuadraticTerm::new(p, q)));
    }
    let oracle = psum.lu().solve(&-qsum).unwrap();
    let cons = build_consensus(&fs, 0.5).unwrap();
    assert!(cons.op.s1().is_affine());
    let res = run(&cons.op, &Vector::zeros(3 * n), &tight(100_000)).unwrap();
    assert_eq!(res.status, SolveStatus::Converged);
    assert!((cons.average(&res.x) - &oracle).norm() <= 1e-6 * oracle.norm().max(1.0));
}

#[test]
fn consensus_rejects_mixed_dimensions() {
    assert!(build_consensus(&[ProxFn::Zero { dim: 2 }, ProxFn::Zero { dim: 3 }], 1.0).is_err());
    assert!(build_consensus(&[], 1.0).is_err());
}

fn circle_and_line() -> (SetDescriptor, SetDescriptor) {
    (
        SetDescriptor::Ball { center: Vector::zeros(2), radius: 1.0 },
        SetDescriptor::Hyperplane { normal: v(&[1.0, 0.0]), offset: 1.0 },
    )
}

#[test]
fn ap_at_the_intersection_has_zero_residual() {
    let (c, d) = circle_and_line();
    let op = build_ap(&c, &d).unwrap();
    assert_eq!(op.form(), Form::TForm);
    assert!((op.averaging() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(op.residual(&v(&[1.0, 0.0])).norm(), 0.0);
}

#[test]
fn ap_moves_toward_the_tangent_point() {
    let (c, d) = circle_and_line();
    let op = build_ap(&c, &d).unwrap();
    let target = v(&[1.0, 0.0]);
    let theta = 350f64.to_radians();
    let mut x = v(&[theta.cos(), theta.sin()]);
    let mut dist = (&x - &target).norm();
    for _ in 0..200 {
        x = op.apply(&x);
        let next = (&x - &target).norm();
        assert!(next < dist);
        dist = next;
    }
    let cfg = LineSearchConfig { tol: 1e-5, ..Default::default() };
    let res = run(&op, &v(&[theta.cos(), theta.sin()]), &cfg).unwrap();
    assert_eq!(res.status, SolveStatus::Converged);
    assert!((res.x - target).norm() < dist);
}

#[test]
fn ap_on_one_hyperplane_stops_after_one_step() {
    let h = SetDescriptor::Hyperplane { normal: v(&[1.0, 2.0, -1.0]), offset: 0.5 };
    let op = build_ap(&h, &h).unwrap();
    let x1 = op.apply(&v(&[3.0, -1.0, 2.0]));
    assert!(op.residual(&x1).norm() < 1e-14);
}
