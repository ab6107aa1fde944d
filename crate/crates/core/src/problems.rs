//! Benchmark instances with known solution sets and error-bound constants.

use nalgebra::linalg::QR;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::operator::{Matrix, OperatorSpec, Vector};

const SKEW_SEED: u64 = 0x5eed_0001;
const AFFINE_BOX_SEED: u64 = 0x5eed_0002;

#[derive(Debug, Clone, PartialEq)]
pub enum SolutionSet {
    Singleton(Vector),
    /// `point + span(basis columns)`.
    Affine { point: Vector, basis: Matrix },
    Unknown,
}

/// `dist(0, Ax) ≤ δ ⇒ dist(x, A⁻¹(0)) ≤ κ·dist(0, Ax)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBound {
    pub kappa: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub name: String,
    pub operator: OperatorSpec,
    pub domain_bounded: bool,
    pub solution_set: SolutionSet,
    pub error_bound: Option<ErrorBound>,
    pub lipschitz: f64,
    pub order: usize,
}

impl ProblemInstance {
    pub fn new(
        name: impl Into<String>,
        operator: OperatorSpec,
        solution_set: SolutionSet,
        error_bound: Option<ErrorBound>,
    ) -> Result<Self> {
        if let Some(eb) = error_bound {
            if !(eb.kappa > 0.0 && eb.delta > 0.0) {
                return Err(Error::InvalidParameter("error bound needs kappa, delta > 0".into()));
            }
        }
        let solution_set = match solution_set {
            SolutionSet::Affine { point, basis } => {
                operator.check_dim(&point)?;
                if basis.nrows() != operator.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: operator.dim(),
                        got: basis.nrows(),
                    });
                }
                // orthonormal columns make the distance a single projection
                let q = if basis.ncols() == 0 { basis } else { QR::new(basis).q() };
                SolutionSet::Affine { point, basis: q }
            }
            SolutionSet::Singleton(z) => {
                operator.check_dim(&z)?;
                SolutionSet::Singleton(z)
            }
            SolutionSet::Unknown => SolutionSet::Unknown,
        };
        let smooth = operator.smoothness();
        Ok(ProblemInstance {
            name: name.into(),
            domain_bounded: operator.domain_bounded(),
            lipschitz: smooth.lipschitz,
            order: smooth.order,
            operator,
            solution_set,
            error_bound,
        })
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    /// A representative solution: the singleton, or the projection of `near`
    /// onto the affine solution set.
    pub fn nearest_solution(&self, near: &Vector) -> Result<Vector> {
        match &self.solution_set {
            SolutionSet::Singleton(z) => Ok(z.clone()),
            SolutionSet::Affine { point, basis } => {
                let diff = near - point;
                Ok(point + basis * (basis.transpose() * diff))
            }
            SolutionSet::Unknown => Err(Error::UnknownSolution),
        }
    }

    /// Checks the declared solution set and error bound on `samples` random
    /// points; returns the worst violation found (≤ 0 means consistent).
    pub fn validate(&self, samples: usize, seed: u64) -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        let op = &self.operator;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.solution_set {
            SolutionSet::Singleton(z) | SolutionSet::Affine { point: z, .. } => {
                let res = op.residue(z)?.unwrap_or(f64::INFINITY);
                worst = worst.max(res - 1e-8);
            }
            SolutionSet::Unknown => {}
        }
        let center = Vector::zeros(op.dim());
        for _ in 0..samples {
            let x1 = op.sample_domain(&mut rng, &center, 2.0);
            let x2 = op.sample_domain(&mut rng, &center, 2.0);
            let f1 = op.eval_single_valued(&x1)?;
            let f2 = op.eval_single_valued(&x2)?;
            worst = worst.max(-(f1 - f2).dot(&(&x1 - &x2)) - 1e-12);
        }
        if let Some(eb) = self.error_bound {
            let z = self.nearest_solution(&center)?;
            for _ in 0..samples {
                // points at geometrically spread distances from the solution set
                let dir = Vector::from_fn(op.dim(), |_, _| rng.gen_range(-1.0..=1.0));
                let radius = 10f64.powf(rng.gen_range(-6.0..0.0));
                let x = op.project_domain(&(&z + dir * radius))?;
                let Some(res) = op.residue(&x)? else { continue };
                if res > eb.delta {
                    continue;
                }
                let dist = (&x - self.nearest_solution(&x)?).norm();
                worst = worst.max(dist - eb.kappa * res * (1.0 + 1e-6) - 1e-15);
            }
        }
        Ok(worst)
    }
}

/// Bilinear saddle point `min_u max_w ⟨u, Bw⟩` on `[−1, 1]^d` with
/// `B = scale·I`: `F(u, w) = (Bw, −Bᵀu)` plus the box normal cone.
pub fn make_bilinear_saddle(d: usize, scale: f64) -> Result<ProblemInstance> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("bilinear saddle needs even d, got {d}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter("bilinear scale must be positive".into()));
    }
    let half = d / 2;
    let mut m = Matrix::zeros(d, d);
    for i in 0..half {
        m[(i, half + i)] = scale;
        m[(half + i, i)] = -scale;
    }
    let op = OperatorSpec::builder(d)
        .affine(m, Vector::zeros(d))
        .box_domain(Vector::from_element(d, -1.0), Vector::from_element(d, 1.0))
        .smoothness(2, 0.0)
        .build()?;
    // Every boundary point has residue ≥ scale, so below that level the
    // iterate is interior where ‖F(x)‖ = scale·‖x‖.
    let eb = ErrorBound { kappa: 1.0 / scale, delta: 0.5 * scale };
    ProblemInstance::new(
        format!("bilinear_saddle(d={d}, scale={scale})"),
        op,
        SolutionSet::Singleton(Vector::zeros(d)),
        Some(eb),
    )
}

/// `F(x) = (μI + S)x` with a seeded random skew `S` on `R^d`.
pub fn make_strongly_monotone_affine(d: usize, mu: f64) -> Result<ProblemInstance> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter("mu must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SKEW_SEED);
    let g = Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..=1.0));
    let skew = (&g - g.transpose()) * 0.5;
    let m = Matrix::identity(d, d) * mu + skew;
    let op = OperatorSpec::builder(d).affine(m, Vector::zeros(d)).smoothness(2, 0.0).build()?;
    ProblemInstance::new(
        format!("strongly_monotone_affine(d={d}, mu={mu})"),
        op,
        SolutionSet::Singleton(Vector::zeros(d)),
        Some(ErrorBound { kappa: 1.0 / mu, delta: f64::INFINITY }),
    )
}

/// `F(x) = x³` on `R`: `D²F = 6x`, so `F ∈ G_6^3`.
pub fn make_cubic_1d() -> Result<ProblemInstance> {
    let op = OperatorSpec::builder(1).poly1d(vec![0.0, 0.0, 0.0, 1.0]).smoothness(3, 6.0).build()?;
    ProblemInstance::new("cubic_1d", op, SolutionSet::Singleton(Vector::zeros(1)), None)
}

/// `F = ∇Φ` for `Φ(x) = ¼‖x‖⁴`, i.e. `F(x) = ‖x‖²x`; `D²F` is 6-Lipschitz.
pub fn make_convex_gradient(d: usize) -> Result<ProblemInstance> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let op = OperatorSpec::builder(d).radial_cubic(1.0).smoothness(3, 6.0).build()?;
    ProblemInstance::new(
        format!("convex_gradient(d={d})"),
        op,
        SolutionSet::Singleton(Vector::zeros(d)),
        None,
    )
}

/// Seeded monotone affine VI on `[−1, 1]^d` with a nonzero symmetric part;
/// the solution is not tracked. Exercises the concave-quadratic gap path.
pub fn make_affine_box(d: usize) -> Result<ProblemInstance> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(AFFINE_BOX_SEED);
    let g = Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..=1.0));
    let h = Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..=1.0));
    let q = Vector::from_fn(d, |_, _| rng.gen_range(-1.0..=1.0));
    let m = g.transpose() * &g * (0.5 / d as f64) + (&h - h.transpose()) * 0.5;
    let op = OperatorSpec::builder(d)
        .affine(m, q)
        .box_domain(Vector::from_element(d, -1.0), Vector::from_element(d, 1.0))
        .smoothness(2, 0.0)
        .build()?;
    ProblemInstance::new(format!("affine_box(d={d})"), op, SolutionSet::Unknown, None)
}

/// Every shipped instance at the sizes used by the check suites.
pub fn zoo() -> Result<Vec<ProblemInstance>> {
    Ok(vec![
        make_bilinear_saddle(2, 1.0)?,
        make_bilinear_saddle(4, 0.5)?,
        make_strongly_monotone_affine(3, 1.0)?,
        make_strongly_monotone_affine(2, 0.2)?,
        make_cubic_1d()?,
        make_convex_gradient(2)?,
        make_convex_gradient(3)?,
        make_affine_box(2)?,
        make_affine_box(3)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn bilinear_saddle_2d() {
        let p = make_bilinear_saddle(2, 1.0).unwrap();
        let f = p.operator.eval_single_valued(&v(&[1.0, 0.0])).unwrap();
        assert_eq!(f, v(&[0.0, -1.0]));
        let res = p.operator.residue(&v(&[0.1, 0.1])).unwrap().unwrap();
        assert!((res - 2f64.sqrt() * 0.1).abs() < 1e-15);
        assert!(p.domain_bounded);
        assert!(matches!(make_bilinear_saddle(3, 1.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn strongly_monotone_scalar() {
        let p = make_strongly_monotone_affine(1, 1.0).unwrap();
        let x = v(&[1.0]);
        let res = p.operator.residue(&x).unwrap().unwrap();
        let dist = (&x - p.nearest_solution(&x).unwrap()).norm();
        assert_eq!(dist, p.error_bound.unwrap().kappa * res);
        let p2 = make_strongly_monotone_affine(1, 2.0).unwrap();
        assert_eq!(p2.operator.residue(&v(&[-3.0])).unwrap(), Some(6.0));
    }

    #[test]
    fn strongly_monotone_quadratic_form() {
        let p = make_strongly_monotone_affine(5, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = Vector::from_fn(5, |_, _| rng.gen_range(-3.0..3.0));
            let fx = p.operator.eval_single_valued(&x).unwrap();
            assert!(fx.dot(&x) >= 0.7 * x.norm_squared() - 1e-12);
        }
    }

    #[test]
    fn constructors_are_reproducible() {
        assert_eq!(make_strongly_monotone_affine(4, 1.0), make_strongly_monotone_affine(4, 1.0));
        assert_eq!(make_affine_box(3), make_affine_box(3));
    }

    #[test]
    fn cubic_and_convex_gradient() {
        let c = make_cubic_1d().unwrap();
        assert_eq!(c.operator.residue(&v(&[-2.0])).unwrap(), Some(8.0));
        assert_eq!((c.order, c.lipschitz), (3, 6.0));
        assert!(!c.domain_bounded);
        let g = make_convex_gradient(2).unwrap();
        assert_eq!(g.operator.eval_single_valued(&v(&[1.0, 0.0])).unwrap(), v(&[1.0, 0.0]));
        assert_eq!(g.operator.eval_single_valued(&v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));
    }

    #[test]
    fn convex_gradient_is_monotone() {
        let g = make_convex_gradient(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x = Vector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let y = Vector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let fx = g.operator.eval_single_valued(&x).unwrap();
            let fy = g.operator.eval_single_valued(&y).unwrap();
            assert!((fx - fy).dot(&(x - y)) >= 0.0);
        }
    }

    #[test]
    fn every_instance_validates() {
        let zoo = [
            make_bilinear_saddle(2, 1.0).unwrap(),
            make_bilinear_saddle(6, 0.3).unwrap(),
            make_strongly_monotone_affine(3, 1.0).unwrap(),
            make_cubic_1d().unwrap(),
            make_convex_gradient(4).unwrap(),
            make_affine_box(3).unwrap(),
        ];
        for p in &zoo {
            let worst = p.validate(300, 17).unwrap();
            assert!(worst <= 0.0, "{}: {worst:e}", p.name);
        }
    }

    #[test]
    fn affine_solution_set_distance() {
        let op = OperatorSpec::builder(2)
            .affine(Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]), Vector::zeros(2))
            .build()
            .unwrap();
        let basis = Matrix::from_column_slice(2, 1, &[2.0, 0.0]);
        let p = ProblemInstance::new(
            "x-axis",
            op,
            SolutionSet::Affine { point: Vector::zeros(2), basis },
            None,
        )
        .unwrap();
        let x = v(&[5.0, 3.0]);
        assert!((p.nearest_solution(&x).unwrap() - v(&[5.0, 0.0])).norm() < 1e-15);
    }
}
