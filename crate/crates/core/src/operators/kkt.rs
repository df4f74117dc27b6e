use nalgebra::linalg::LU;
use nalgebra::Dyn;

use super::{AffineOperator, Operator};
use crate::{Error, Matrix, Result, Vector};

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

/// A factorized KKT matrix `[[H, Aᵀ], [A, 0]]`.
///
/// The factorization is computed once; every solve afterwards is a pair of
/// triangular solves.
#[derive(Debug)]
pub struct KktSystem {
    n: usize,
    m: usize,
    lu: LU<f64, Dyn, Dyn>,
}

impl KktSystem {
    /// Factors `[[top_left, Aᵀ], [A, 0]]`, or just `top_left` when there is no
    /// constraint block. Fails with [`Error::SingularKkt`] if the matrix is
    /// numerically rank deficient.
    pub fn factor(top_left: &Matrix, constraint: Option<&Matrix>) -> Result<Self> {
        let n = top_left.nrows();
        if !top_left.is_square() {
            return Err(Error::dim(format!(
                "KKT top-left block must be square, got {}x{}",
                n,
                top_left.ncols()
            )));
        }
        let m = constraint.map_or(0, |a| a.nrows());
        if let Some(a) = constraint {
            if a.ncols() != n {
                return Err(Error::dim(format!(
                    "constraint matrix has {} columns, expected {}",
                    a.ncols(),
                    n
                )));
            }
        }

        let size = n + m;
        let mut kkt = Matrix::zeros(size, size);
        kkt.view_mut((0, 0), (n, n)).copy_from(top_left);
        if let Some(a) = constraint {
            kkt.view_mut((n, 0), (m, n)).copy_from(a);
            kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        }

        let sv = kkt.clone().singular_values();
        let smax = sv.max();
        let defect = if smax > 0.0 {
            sv.iter().filter(|&&s| s <= RANK_TOL * smax).count()
        } else {
            size
        };
        if defect > 0 {
            return Err(Error::SingularKkt { size, defect });
        }

        Ok(KktSystem { n, m, lu: kkt.lu() })
    }

    pub fn primal_dim(&self) -> usize {
        self.n
    }

    pub fn constraint_dim(&self) -> usize {
        self.m
    }

    /// Solves the system and returns the primal block of the solution.
    /// A missing `bottom` right-hand side means zeros.
    pub fn solve(&self, top: &Vector, bottom: Option<&Vector>) -> Vector {
        let mut rhs = Vector::zeros(self.n + self.m);
        rhs.rows_mut(0, self.n).copy_from(top);
        if let Some(b) = bottom {
            rhs.rows_mut(self.n, self.m).copy_from(b);
        }
        let sol = self
            .lu
            .solve(&rhs)
            .expect("KKT matrix was checked to be nonsingular");
        sol.rows(0, self.n).into_owned()
    }
}

/// `f(x) = ½xᵀPx + qᵀx` restricted to `{x : Aeq·x = beq}` (constraint optional).
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTerm {
    pub p: Matrix,
    pub q: Vector,
    pub aeq: Option<Matrix>,
    pub beq: Option<Vector>,
}

impl QuadraticTerm {
    pub fn new(p: Matrix, q: Vector) -> Self {
        QuadraticTerm {
            p,
            q,
            aeq: None,
            beq: None,
        }
    }

    pub fn zero(n: usize) -> Self {
        Self::new(Matrix::zeros(n, n), Vector::zeros(n))
    }

    pub fn with_equality(mut self, aeq: Matrix, beq: Vector) -> Self {
        self.aeq = Some(aeq);
        self.beq = Some(beq);
        self
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(Error::dim(format!(
                "P is {}x{} but q has length {}",
                self.p.nrows(),
                self.p.ncols(),
                n
            )));
        }
        let asym = (&self.p - self.p.transpose()).amax();
        if asym > 1e-10 * self.p.amax().max(1.0) {
            return Err(Error::config("P must be symmetric"));
        }
        match (&self.aeq, &self.beq) {
            (None, None) => Ok(()),
            (Some(a), Some(b)) if a.ncols() == n && a.nrows() == b.len() => Ok(()),
            (Some(a), Some(b)) => Err(Error::dim(format!(
                "Aeq is {}x{} and beq has length {}, expected {} columns",
                a.nrows(),
                a.ncols(),
                b.len(),
                n
            ))),
            _ => Err(Error::config("Aeq and beq must be given together")),
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        &self.p * x + &self.q
    }
}

/// `prox_{γf}` for a [`QuadraticTerm`], realized by one cached KKT factorization.
///
/// `prox(z)` is the primal block of
/// `[[P + γ⁻¹I, Aᵀ], [A, 0]]⁻¹ [γ⁻¹z − q; b]`.
#[derive(Debug)]
pub struct KktProx {
    kkt: KktSystem,
    q: Vector,
    beq: Option<Vector>,
    gamma: f64,
}

impl KktProx {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Builds the affine map `z ↦ prox_{γf}(z)` for `f` quadratic over an affine set.
pub fn prox_quadratic_affine(
    p: &Matrix,
    q: &Vector,
    aeq: Option<&Matrix>,
    beq: Option<&Vector>,
    gamma: f64,
) -> Result<KktProx> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::config(format!("prox step γ must be positive, got {gamma}")));
    }
    let term = QuadraticTerm {
        p: p.clone(),
        q: q.clone(),
        aeq: aeq.cloned(),
        beq: beq.cloned(),
    };
    term.validate()?;
    let n = q.len();
    let top_left = p + Matrix::identity(n, n) / gamma;
    let kkt = KktSystem::factor(&top_left, aeq)?;
    Ok(KktProx {
        kkt,
        q: q.clone(),
        beq: beq.cloned(),
        gamma,
    })
}

impl QuadraticTerm {
    pub fn prox(&self, gamma: f64) -> Result<KktProx> {
        prox_quadratic_affine(
            &self.p,
            &self.q,
            self.aeq.as_ref(),
            self.beq.as_ref(),
            gamma,
        )
    }
}

impl Operator for KktProx {
    fn dim(&self) -> usize {
        self.kkt.primal_dim()
    }

    fn apply(&self, z: &Vector) -> Vector {
        let top = z / self.gamma - &self.q;
        self.kkt.solve(&top, self.beq.as_ref())
    }
}

impl AffineOperator for KktProx {
    fn linear(&self, d: &Vector) -> Vector {
        self.kkt.solve(&(d / self.gamma), None)
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::operators::Stage;

    /// Minimizes ½xᵀPx + qᵀx + ‖x − z‖²/(2γ) over {Ax = b} by gradient descent in
    /// an SVD null-space parametrization. Independent of the KKT route.
    fn prox_by_descent(
        p: &Matrix,
        q: &Vector,
        a: Option<(&Matrix, &Vector)>,
        gamma: f64,
        z: &Vector,
    ) -> Vector {
        let n = q.len();
        let (x0, basis) = match a {
            None => (Vector::zeros(n), Matrix::identity(n, n)),
            Some((a, b)) => {
                let x0 = a.clone().svd(true, true).solve(b, 1e-12).unwrap();
                // null space of A: eigenvectors of AᵀA with zero eigenvalue
                let eig = (a.transpose() * a).symmetric_eigen();
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
                let cols: Vec<Vector> = idx[..n - a.nrows()]
                    .iter()
                    .map(|&i| eig.eigenvectors.column(i).into_owned())
                    .collect();
                (x0, Matrix::from_columns(&cols))
            }
        };
        let h = p + Matrix::identity(n, n) / gamma;
        let reduced = basis.transpose() * &h * &basis;
        let lmax = reduced.symmetric_eigen().eigenvalues.max();
        let mut y = Vector::zeros(basis.ncols());
        for _ in 0..200_000 {
            let x = &x0 + &basis * &y;
            let grad = basis.transpose() * (&h * &x + q - z / gamma);
            if grad.norm() < 1e-13 {
                break;
            }
            y -= grad / lmax;
        }
        &x0 + &basis * y
    }

    #[test]
    fn prox_of_half_squared_norm() {
        let prox = prox_quadratic_affine(
            &Matrix::identity(2, 2),
            &Vector::zeros(2),
            None,
            None,
            1.0,
        )
        .unwrap();
        let out = prox.apply(&Vector::from_vec(vec![2.0, -4.0]));
        assert!((out - Vector::from_vec(vec![1.0, -2.0])).norm() < 1e-15);
    }

    #[test]
    fn prox_of_point_indicator_is_the_point() {
        let b = Vector::from_vec(vec![0.3, -1.2, 4.0]);
        for gamma in [0.1, 1.0, 25.0] {
            let prox = prox_quadratic_affine(
                &Matrix::zeros(3, 3),
                &Vector::zeros(3),
                Some(&Matrix::identity(3, 3)),
                Some(&b),
                gamma,
            )
            .unwrap();
            let mut rng = rng(5);
            for _ in 0..5 {
                let z = randn(&mut rng, 3) * 10.0;
                assert!((prox.apply(&z) - &b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn random_prox_satisfies_optimality_and_matches_descent() {
        let mut rng = rng(11);
        let gamma = 2.0;
        let p = random_psd(&mut rng, 5);
        let q = randn(&mut rng, 5);

        let prox = prox_quadratic_affine(&p, &q, None, None, gamma).unwrap();
        let z = randn(&mut rng, 5);
        let x = prox.apply(&z);
        let kkt_res = (&p * &x + &q + (&x - &z) / gamma).norm();
        assert!(kkt_res <= 1e-10, "stationarity residual {kkt_res}");
        let oracle = prox_by_descent(&p, &q, None, gamma, &z);
        assert!((&x - oracle).norm() < 1e-6);

        let a = randn_mat(&mut rng, 2, 5);
        let b = randn(&mut rng, 2);
        let prox = prox_quadratic_affine(&p, &q, Some(&a), Some(&b), gamma).unwrap();
        let x = prox.apply(&z);
        let cons = (&a * &x - &b).norm();
        assert!(cons <= 1e-10, "constraint residual {cons}");
        // stationarity up to a multiple of the constraint normals
        let g = &p * &x + &q + (&x - &z) / gamma;
        let lambda = (&a * a.transpose()).lu().solve(&(&a * &g)).unwrap();
        let stat = (g - a.transpose() * lambda).norm();
        assert!(stat <= 1e-10, "projected stationarity residual {stat}");
        let oracle = prox_by_descent(&p, &q, Some((&a, &b)), gamma, &z);
        assert!((x - oracle).norm() < 1e-6);
    }

    #[test]
    fn rank_deficient_constraint_is_rejected() {
        let a = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let err = prox_quadratic_affine(
            &Matrix::zeros(3, 3),
            &Vector::zeros(3),
            Some(&a),
            Some(&Vector::from_vec(vec![1.0, 2.0])),
            1.0,
        )
        .unwrap_err();
        match err {
            Error::SingularKkt { defect, size } => {
                assert_eq!(defect, 1);
                assert_eq!(size, 5);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let err = prox_quadratic_affine(
            &Matrix::zeros(3, 3),
            &Vector::zeros(2),
            None,
            None,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        let err = prox_quadratic_affine(
            &Matrix::zeros(2, 2),
            &Vector::zeros(2),
            Some(&Matrix::zeros(1, 3)),
            Some(&Vector::zeros(1)),
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        assert!(matches!(
            prox_quadratic_affine(&Matrix::zeros(2, 2), &Vector::zeros(2), None, None, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reflected_affine_prox_matches_direct_formula() {
        let mut rng = rng(21);
        let p = random_psd(&mut rng, 6);
        let q = randn(&mut rng, 6);
        let a = randn_mat(&mut rng, 2, 6);
        let b = randn(&mut rng, 2);
        let prox = Stage::affine(prox_quadratic_affine(&p, &q, Some(&a), Some(&b), 0.7).unwrap());
        let refl = prox.reflect();
        assert!(refl.is_affine());
        for _ in 0..50 {
            let z = randn(&mut rng, 6);
            let direct = prox.apply(&z) * 2.0 - &z;
            assert!((refl.apply(&z) - &direct).norm() <= 1e-12 * direct.norm().max(1.0));
        }
    }

    #[test]
    fn kkt_prox_is_affine_and_nonexpansive() {
        let mut rng = rng(31);
        let p = random_psd(&mut rng, 5);
        let q = randn(&mut rng, 5);
        let a = randn_mat(&mut rng, 1, 5);
        let b = randn(&mut rng, 1);
        let prox = prox_quadratic_affine(&p, &q, Some(&a), Some(&b), 1.5).unwrap();
        assert!((prox.linear(&Vector::zeros(5))).norm() == 0.0);
        for _ in 0..100 {
            let u = randn(&mut rng, 5) * 3.0;
            let v = randn(&mut rng, 5) * 3.0;
            let lhs = (prox.apply(&u) - prox.apply(&v)).norm();
            assert!(lhs <= (1.0 + 1e-10) * (&u - &v).norm());
            let alpha = rng.random_range(-5.0..5.0);
            let gap = prox.apply(&(&u + &v * alpha)) - (prox.apply(&u) + prox.linear(&v) * alpha);
            assert!(gap.norm() <= 1e-10 * prox.apply(&u).norm().max(1.0));
        }
    }

    use rand::Rng;
}
