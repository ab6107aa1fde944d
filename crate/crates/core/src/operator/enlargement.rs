//! Sampled falsifier for `v ∈ A^ε(x)`.
//!
//! Membership in the ε-enlargement is quantified over the whole graph of `A`,
//! which no finite computation can certify. The check below draws witnesses
//! `(x̃, ṽ)` from the graph and reports the worst value of
//! `⟨x − x̃, v − ṽ⟩ + ε`; a negative value disproves membership, a
//! nonnegative one only fails to disprove it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{OperatorSpec, Vector};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnlargementVerdict {
    /// No sampled witness violated the enlargement inequality.
    pub admitted: bool,
    /// `min ⟨x − x̃, v − ṽ⟩` over the witnesses.
    pub min_inner: f64,
    /// `min_inner + ε`; membership is refuted when this is below the
    /// membership tolerance.
    pub worst_margin: f64,
    pub witnesses: usize,
}

/// Graph samples `(x̃, ṽ ∈ Ax̃)` around `center`, deterministic in `seed`.
pub fn sample_graph_points(
    op: &OperatorSpec,
    center: &Vector,
    count: usize,
    seed: u64,
) -> Vec<(Vector, Vector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = 2.0 * center.amax().max(1.0);
    (0..count).map(|_| op.sample_graph_point(&mut rng, center, spread)).collect()
}

pub fn eps_enlargement_check(
    op: &OperatorSpec,
    x: &Vector,
    v: &Vector,
    eps: f64,
    witness_count: usize,
    seed: u64,
) -> Result<EnlargementVerdict> {
    op.check_dim(x)?;
    op.check_dim(v)?;
    let witnesses = sample_graph_points(op, x, witness_count, seed);
    Ok(eps_enlargement_check_with(x, v, eps, &witnesses))
}

/// Same check against an explicit witness list.
pub fn eps_enlargement_check_with(
    x: &Vector,
    v: &Vector,
    eps: f64,
    witnesses: &[(Vector, Vector)],
) -> EnlargementVerdict {
    let mut min_inner = f64::INFINITY;
    let mut admitted = true;
    for (xt, vt) in witnesses {
        let dx = x - xt;
        let dv = v - vt;
        let inner = dx.dot(&dv);
        let tol = 1e-10 * 1f64.max(dx.norm() * dv.norm());
        if inner < -eps - tol {
            admitted = false;
        }
        min_inner = min_inner.min(inner);
    }
    EnlargementVerdict {
        admitted,
        min_inner,
        worst_margin: min_inner + eps,
        witnesses: witnesses.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::Matrix;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn identity1() -> OperatorSpec {
        OperatorSpec::builder(1)
            .affine(Matrix::identity(1, 1), Vector::zeros(1))
            .build()
            .unwrap()
    }

    #[test]
    fn exact_graph_point_is_admitted() {
        let m = Matrix::from_row_slice(2, 2, &[0.5, 1.0, -1.0, 0.0]);
        let op = OperatorSpec::builder(2)
            .affine(m, v(&[0.1, 0.0]))
            .box_domain(v(&[-1.0, -1.0]), v(&[1.0, 1.0]))
            .build()
            .unwrap();
        // boundary point with a normal-cone component
        let x = v(&[1.0, 0.2]);
        let vx = op.eval_single_valued(&x).unwrap() + v(&[2.0, 0.0]);
        let verdict = eps_enlargement_check(&op, &x, &vx, 0.0, 500, 3).unwrap();
        assert!(verdict.admitted, "margin {}", verdict.worst_margin);
    }

    #[test]
    fn wrong_value_is_refuted_by_grid_witness() {
        let op = identity1();
        // brute-force grid over [-1, 1]: the witness 0.5 gives ⟨−0.5, 0.5⟩
        let grid: Vec<_> = (0..=20)
            .map(|i| {
                let t = v(&[-1.0 + 0.1 * i as f64]);
                let ft = op.eval_single_valued(&t).unwrap();
                (t, ft)
            })
            .collect();
        let verdict = eps_enlargement_check_with(&v(&[0.0]), &v(&[1.0]), 0.0, &grid);
        assert!(!verdict.admitted);
        assert!((verdict.min_inner + 0.25).abs() < 1e-12);
        let single = eps_enlargement_check_with(&v(&[0.0]), &v(&[1.0]), 0.0, &[(v(&[0.5]), v(&[0.5]))]);
        assert!((single.min_inner + 0.25).abs() < 1e-15);
    }

    #[test]
    fn large_eps_admits_everything() {
        let op = identity1();
        let verdict = eps_enlargement_check(&op, &v(&[0.0]), &v(&[1.0]), 1e6, 200, 11).unwrap();
        assert!(verdict.admitted);
    }

    #[test]
    fn sampling_is_deterministic() {
        let op = identity1();
        let a = sample_graph_points(&op, &v(&[0.3]), 10, 42);
        let b = sample_graph_points(&op, &v(&[0.3]), 10, 42);
        assert_eq!(a, b);
    }
}
