use super::kkt::{prox_quadratic_affine, KktProx};
use super::{AffineOperator, Operator, Stage};
use crate::{Error, Matrix, Result, Vector};

/// A closed convex set with a cheap or cached Euclidean projection.
#[derive(Clone, Debug, PartialEq)]
pub enum SetDescriptor {
    NonnegativeOrthant { dim: usize },
    /// `{x : ‖x − center‖₂ ≤ radius}`; radius 0 is the single point `center`.
    Ball { center: Vector, radius: f64 },
    /// `{x : a·x = b}` with `a` of full row rank.
    AffineSet { a: Matrix, b: Vector },
    /// `{(x₁, …, x_N) : x₁ = … = x_N}` with each block in `ℝ^dim`.
    Consensus { blocks: usize, dim: usize },
    /// `{x : normalᵀx ≤ offset}`.
    Halfspace { normal: Vector, offset: f64 },
    /// `{x : normalᵀx = offset}`.
    Hyperplane { normal: Vector, offset: f64 },
}

impl SetDescriptor {
    pub fn dim(&self) -> usize {
        match self {
            SetDescriptor::NonnegativeOrthant { dim } => *dim,
            SetDescriptor::Ball { center, .. } => center.len(),
            SetDescriptor::AffineSet { a, .. } => a.ncols(),
            SetDescriptor::Consensus { blocks, dim } => blocks * dim,
            SetDescriptor::Halfspace { normal, .. } | SetDescriptor::Hyperplane { normal, .. } => {
                normal.len()
            }
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(
            self,
            SetDescriptor::AffineSet { .. }
                | SetDescriptor::Consensus { .. }
                | SetDescriptor::Hyperplane { .. }
        )
    }

    /// Builds `Π` for this set. Affine sets produce affine stages.
    pub fn projector(&self) -> Result<Stage> {
        Ok(match self {
            SetDescriptor::NonnegativeOrthant { dim } => Stage::general(OrthantProjection { dim: *dim }),
            SetDescriptor::Ball { center, radius } => {
                Stage::general(BallProjection::new(center.clone(), *radius)?)
            }
            SetDescriptor::AffineSet { a, b } => {
                Stage::affine(AffineSetProjection::new(a, b)?)
            }
            SetDescriptor::Consensus { blocks, dim } => {
                Stage::affine(ConsensusProjection::new(*blocks, *dim)?)
            }
            SetDescriptor::Halfspace { normal, offset } => {
                Stage::general(HalfspaceProjection::new(normal.clone(), *offset)?)
            }
            SetDescriptor::Hyperplane { normal, offset } => {
                Stage::affine(HyperplaneProjection::new(normal.clone(), *offset)?)
            }
        })
    }

    /// Builds `R = 2Π − id`.
    pub fn reflector(&self) -> Result<Stage> {
        Ok(self.projector()?.reflect())
    }

    /// Membership up to an absolute tolerance.
    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self {
            SetDescriptor::NonnegativeOrthant { .. } => x.iter().all(|&v| v >= -tol),
            SetDescriptor::Ball { center, radius } => (x - center).norm() <= radius + tol,
            SetDescriptor::AffineSet { a, b } => (a * x - b).amax() <= tol,
            SetDescriptor::Consensus { blocks, dim } => {
                let avg = block_average(x, *blocks, *dim);
                (0..*blocks).all(|i| (x.rows(i * dim, *dim) - &avg).amax() <= tol)
            }
            SetDescriptor::Halfspace { normal, offset } => normal.dot(x) <= offset + tol,
            SetDescriptor::Hyperplane { normal, offset } => (normal.dot(x) - offset).abs() <= tol,
        }
    }
}

/// Euclidean projection of `z` onto `set`.
pub fn project(set: &SetDescriptor, z: &Vector) -> Result<Vector> {
    if z.len() != set.dim() {
        return Err(Error::dim(format!(
            "point has dimension {}, set has dimension {}",
            z.len(),
            set.dim()
        )));
    }
    Ok(set.projector()?.apply(z))
}

#[derive(Clone, Debug)]
pub struct OrthantProjection {
    pub dim: usize,
}

impl Operator for OrthantProjection {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Vector) -> Vector {
        x.map(|v| v.max(0.0))
    }
}

#[derive(Clone, Debug)]
pub struct BallProjection {
    center: Vector,
    radius: f64,
}

impl BallProjection {
    pub fn new(center: Vector, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::config(format!("ball radius must be nonnegative, got {radius}")));
        }
        Ok(BallProjection { center, radius })
    }
}

impl Operator for BallProjection {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn apply(&self, x: &Vector) -> Vector {
        let d = x - &self.center;
        let dist = d.norm();
        if dist <= self.radius {
            x.clone()
        } else {
            &self.center + d * (self.radius / dist)
        }
    }
}

#[derive(Clone, Debug)]
pub struct HalfspaceProjection {
    normal: Vector,
    offset: f64,
    norm_sq: f64,
}

impl HalfspaceProjection {
    pub fn new(normal: Vector, offset: f64) -> Result<Self> {
        let norm_sq = normal.norm_squared();
        if norm_sq == 0.0 {
            return Err(Error::config("halfspace normal must be nonzero"));
        }
        Ok(HalfspaceProjection {
            normal,
            offset,
            norm_sq,
        })
    }
}

impl Operator for HalfspaceProjection {
    fn dim(&self) -> usize {
        self.normal.len()
    }

    fn apply(&self, x: &Vector) -> Vector {
        let excess = self.normal.dot(x) - self.offset;
        if excess <= 0.0 {
            x.clone()
        } else {
            x - &self.normal * (excess / self.norm_sq)
        }
    }
}

#[derive(Clone, Debug)]
pub struct HyperplaneProjection {
    normal: Vector,
    offset: f64,
    norm_sq: f64,
}

impl HyperplaneProjection {
    pub fn new(normal: Vector, offset: f64) -> Result<Self> {
        let norm_sq = normal.norm_squared();
        if norm_sq == 0.0 {
            return Err(Error::config("hyperplane normal must be nonzero"));
        }
        Ok(HyperplaneProjection {
            normal,
            offset,
            norm_sq,
        })
    }
}

impl Operator for HyperplaneProjection {
    fn dim(&self) -> usize {
        self.normal.len()
    }

    fn apply(&self, x: &Vector) -> Vector {
        let excess = self.normal.dot(x) - self.offset;
        x - &self.normal * (excess / self.norm_sq)
    }
}

impl AffineOperator for HyperplaneProjection {
    fn linear(&self, d: &Vector) -> Vector {
        d - &self.normal * (self.normal.dot(d) / self.norm_sq)
    }
}

/// Projection onto `{x : Ax = b}` through the cached KKT system `[[I, Aᵀ], [A, 0]]`.
#[derive(Debug)]
pub struct AffineSetProjection {
    inner: KktProx,
}

impl AffineSetProjection {
    pub fn new(a: &Matrix, b: &Vector) -> Result<Self> {
        let n = a.ncols();
        // prox of the indicator with γ = 1 is the projection
        let inner = prox_quadratic_affine(&Matrix::zeros(n, n), &Vector::zeros(n), Some(a), Some(b), 1.0)?;
        Ok(AffineSetProjection { inner })
    }
}

impl Operator for AffineSetProjection {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &Vector) -> Vector {
        self.inner.apply(x)
    }
}

impl AffineOperator for AffineSetProjection {
    fn linear(&self, d: &Vector) -> Vector {
        self.inner.linear(d)
    }
}

/// Replaces every block by the block average.
#[derive(Clone, Debug)]
pub struct ConsensusProjection {
    blocks: usize,
    dim: usize,
}

impl ConsensusProjection {
    pub fn new(blocks: usize, dim: usize) -> Result<Self> {
        if blocks == 0 || dim == 0 {
            return Err(Error::config("consensus set needs at least one nonempty block"));
        }
        Ok(ConsensusProjection { blocks, dim })
    }
}

fn block_average(z: &Vector, blocks: usize, dim: usize) -> Vector {
    let mut avg = Vector::zeros(dim);
    for i in 0..blocks {
        avg += z.rows(i * dim, dim);
    }
    avg / blocks as f64
}

fn replicate(v: &Vector, blocks: usize) -> Vector {
    let dim = v.len();
    Vector::from_fn(blocks * dim, |i, _| v[i % dim])
}

impl Operator for ConsensusProjection {
    fn dim(&self) -> usize {
        self.blocks * self.dim
    }

    fn apply(&self, z: &Vector) -> Vector {
        replicate(&block_average(z, self.blocks, self.dim), self.blocks)
    }
}

impl AffineOperator for ConsensusProjection {
    fn linear(&self, d: &Vector) -> Vector {
        self.apply(d)
    }
}

/// Reflection through the consensus set: block `i` becomes `2·z_av − z_i`.
pub fn consensus_reflect(zs: &Vector, blocks: usize) -> Result<Vector> {
    if blocks == 0 || zs.len() % blocks != 0 || zs.is_empty() {
        return Err(Error::dim(format!(
            "stacked vector of length {} does not split into {} blocks",
            zs.len(),
            blocks
        )));
    }
    let dim = zs.len() / blocks;
    let avg = block_average(zs, blocks, dim);
    Ok(Vector::from_fn(zs.len(), |i, _| 2.0 * avg[i % dim] - zs[i]))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn all_sets(rng: &mut rand_chacha::ChaCha8Rng) -> Vec<SetDescriptor> {
        vec![
            SetDescriptor::NonnegativeOrthant { dim: 4 },
            SetDescriptor::Ball {
                center: randn(rng, 4),
                radius: 1.3,
            },
            SetDescriptor::Ball {
                center: randn(rng, 4),
                radius: 0.0,
            },
            SetDescriptor::AffineSet {
                a: randn_mat(rng, 2, 4),
                b: randn(rng, 2),
            },
            SetDescriptor::Consensus { blocks: 2, dim: 2 },
            SetDescriptor::Halfspace {
                normal: randn(rng, 4),
                offset: 0.4,
            },
            SetDescriptor::Hyperplane {
                normal: randn(rng, 4),
                offset: -0.7,
            },
        ]
    }

    #[test]
    fn orthant_projection() {
        let set = SetDescriptor::NonnegativeOrthant { dim: 3 };
        assert_eq!(project(&set, &v(&[-1.0, 3.0, 0.0])).unwrap(), v(&[0.0, 3.0, 0.0]));
    }

    #[test]
    fn ball_projection() {
        let set = SetDescriptor::Ball {
            center: v(&[0.0, 0.0]),
            radius: 1.0,
        };
        assert_eq!(project(&set, &v(&[0.0, 2.0])).unwrap(), v(&[0.0, 1.0]));
        // at the center the center itself is returned
        assert_eq!(project(&set, &v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));
        let point = SetDescriptor::Ball {
            center: v(&[1.0, 2.0]),
            radius: 0.0,
        };
        assert_eq!(project(&point, &v(&[1.0, 2.0])).unwrap(), v(&[1.0, 2.0]));
        assert_eq!(project(&point, &v(&[5.0, -2.0])).unwrap(), v(&[1.0, 2.0]));
    }

    #[test]
    fn affine_line_projection_is_horizontal() {
        let theta = 350f64.to_radians();
        let set = SetDescriptor::AffineSet {
            a: Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            b: v(&[1.0]),
        };
        let out = project(&set, &v(&[theta.cos(), theta.sin()])).unwrap();
        assert!((out - v(&[1.0, theta.sin()])).norm() < 1e-14);
        assert!(set.projector().unwrap().is_affine());
    }

    #[test]
    fn project_checks_dimension() {
        let set = SetDescriptor::NonnegativeOrthant { dim: 3 };
        assert!(matches!(project(&set, &v(&[1.0])), Err(Error::Dimension(_))));
    }

    #[test]
    fn rank_deficient_affine_set_is_rejected() {
        let set = SetDescriptor::AffineSet {
            a: Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            b: v(&[1.0, 2.0]),
        };
        assert!(matches!(set.projector(), Err(Error::SingularKkt { .. })));
    }

    #[test]
    fn projections_are_idempotent() {
        let mut rng = rng(7);
        for set in all_sets(&mut rng) {
            let proj = set.projector().unwrap();
            for _ in 0..20 {
                let z = randn(&mut rng, set.dim()) * 4.0;
                let once = proj.apply(&z);
                let twice = proj.apply(&once);
                assert!(
                    (&twice - &once).amax() <= 1e-12 * once.amax().max(1.0),
                    "{set:?}"
                );
                assert!(set.contains(&once, 1e-10), "{set:?}");
            }
        }
    }

    #[test]
    fn projections_and_reflections_are_nonexpansive() {
        let mut rng = rng(8);
        for set in all_sets(&mut rng) {
            let proj = set.projector().unwrap();
            let refl = set.reflector().unwrap();
            for _ in 0..100 {
                let u = randn(&mut rng, set.dim()) * 3.0;
                let w = randn(&mut rng, set.dim()) * 3.0;
                let dist = (&u - &w).norm();
                assert!((proj.apply(&u) - proj.apply(&w)).norm() <= (1.0 + 1e-10) * dist);
                assert!((refl.apply(&u) - refl.apply(&w)).norm() <= (1.0 + 1e-10) * dist);
            }
        }
    }

    #[test]
    fn reflection_through_orthant() {
        let refl = SetDescriptor::NonnegativeOrthant { dim: 2 }.reflector().unwrap();
        assert_eq!(refl.apply(&v(&[-1.0, 2.0])), v(&[1.0, 2.0]));
    }

    #[test]
    fn consensus_reflect_examples() {
        let same = v(&[0.5, -1.5, 0.5, -1.5]);
        assert_eq!(consensus_reflect(&same, 2).unwrap(), same);
        let out = consensus_reflect(&v(&[1.0, 0.0, -1.0, 0.0]), 2).unwrap();
        assert_eq!(out, v(&[-1.0, 0.0, 1.0, 0.0]));
        assert!(matches!(consensus_reflect(&v(&[1.0, 2.0, 3.0]), 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn consensus_reflect_matches_twice_projection_minus_identity() {
        let mut rng = rng(9);
        let n = 4;
        for _ in 0..20 {
            let z = randn(&mut rng, 3 * n);
            // oracle: average the blocks by hand and replicate
            let mut avg = vec![0.0; n];
            for i in 0..3 {
                for j in 0..n {
                    avg[j] += z[i * n + j] / 3.0;
                }
            }
            let proj = Vector::from_fn(3 * n, |i, _| avg[i % n]);
            let expect = proj * 2.0 - &z;
            let out = consensus_reflect(&z, 3).unwrap();
            assert!((out - &expect).norm() <= 1e-12 * expect.norm().max(1.0));
            let stage = SetDescriptor::Consensus { blocks: 3, dim: n }.reflector().unwrap();
            assert!((stage.apply(&z) - &expect).norm() <= 1e-12 * expect.norm().max(1.0));
        }
    }
}
