//! Independent oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use monoflow::operator::NormalCone;
use monoflow::problems::SolutionSet;
use monoflow::{Matrix, OperatorSpec, ProblemInstance, Vector};

pub fn identity_problem(d: usize) -> ProblemInstance {
    scaled_identity_problem(d, 1.0)
}

/// `F = μI` on `R^d`.
pub fn scaled_identity_problem(d: usize, mu: f64) -> ProblemInstance {
    let op = OperatorSpec::builder(d)
        .affine(Matrix::identity(d, d) * mu, Vector::zeros(d))
        .build()
        .unwrap();
    ProblemInstance::new("scaled_identity", op, SolutionSet::Singleton(Vector::zeros(d)), None).unwrap()
}

/// `p = 1` flow on `F = I`: `λ ≡ θ`, `J_θx = x/(1+θ)`, so `x(t) = e^{−θt/(1+θ)}x₀`.
pub fn identity_flow(theta: f64, t: f64, x0: &Vector) -> Vector {
    x0 * (-theta * t / (1.0 + theta)).exp()
}

/// Exact proximal step on `F = μI` with index `λ`: `x ↦ x/(1+λμ)`.
pub fn ppa_factor(lambda: f64, mu: f64) -> f64 {
    1.0 / (1.0 + lambda * mu)
}

/// Brute-force `max_{z ∈ X} ⟨Mz + q, x − z⟩` for a 2-d affine problem on a box:
/// a 101×101 grid, then repeated 101×101 grids zoomed around the incumbent.
pub fn grid_gap_2d(problem: &ProblemInstance, x: &Vector) -> f64 {
    let op = &problem.operator;
    assert_eq!(op.dim(), 2, "grid oracle is two-dimensional");
    let aff = op.affine().expect("affine part");
    let (lower, upper) = match op.normal_cone() {
        Some(NormalCone::Box { lower, upper }) => (lower.clone(), upper.clone()),
        _ => panic!("grid oracle needs a box domain"),
    };
    let value = |z: &Vector| (&aff.matrix * z + &aff.offset).dot(&(x - z));
    let n = 101;
    let (mut lo, mut hi) = (lower.clone(), upper.clone());
    let mut best = (f64::NEG_INFINITY, lower.clone());
    for _ in 0..12 {
        for i in 0..n {
            for j in 0..n {
                let s = i as f64 / (n - 1) as f64;
                let r = j as f64 / (n - 1) as f64;
                let z = Vector::from_column_slice(&[lo[0] + s * (hi[0] - lo[0]), lo[1] + r * (hi[1] - lo[1])]);
                let v = value(&z);
                if v > best.0 {
                    best = (v, z);
                }
            }
        }
        let z = &best.1;
        for k in 0..2 {
            let h = 2.0 * (hi[k] - lo[k]) / (n - 1) as f64;
            lo[k] = (z[k] - h).max(lower[k]);
            hi[k] = (z[k] + h).min(upper[k]);
        }
    }
    best.0.max(0.0)
}

/// `dist(x, A⁻¹(0))` from the problem's solution description, recomputed here.
pub fn dist_oracle(problem: &ProblemInstance, x: &Vector) -> Option<f64> {
    match &problem.solution_set {
        SolutionSet::Singleton(z) => Some((x - z).norm()),
        SolutionSet::Affine { point, basis } => {
            let r = x - point;
            Some((&r - basis * (basis.transpose() * &r)).norm())
        }
        SolutionSet::Unknown => None,
    }
}
