//! The closed-loop law `λ‖x − J_λx‖^{p−1} = θ` and the maps built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{resolvent, OperatorSpec, ResolventResult, Vector};

/// Residue below which a point is treated as a zero of the operator.
pub const STATIONARITY_TOL: f64 = 1e-12;
/// Relative tolerance on the algebraic equation.
pub const AE_TOL: f64 = 1e-10;
/// Maximum number of doublings (or halvings) while bracketing.
pub const MAX_BRACKET: usize = 200;

const MAX_REFINE: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackParams {
    pub theta: f64,
    pub p: usize,
}

impl FeedbackParams {
    /// `θ ∈ (0, 1)`, `p ≥ 1`.
    pub fn new(theta: f64, p: usize) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidParameter(format!("theta must lie in (0, 1), got {theta}")));
        }
        Self::relaxed(theta, p)
    }

    /// Any `θ > 0`; enough for the large-step condition alone.
    pub fn relaxed(theta: f64, p: usize) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta must be positive, got {theta}")));
        }
        if p == 0 {
            return Err(Error::InvalidParameter("order p must be at least 1".into()));
        }
        Ok(FeedbackParams { theta, p })
    }
}

/// `φ(λ, x) = λ^{1/(p−1)}‖x − J_λx‖`, with `φ(0, x) = 0`.
pub fn phi(op: &OperatorSpec, lambda: f64, x: &Vector, p: usize) -> Result<f64> {
    if p < 2 {
        return Err(Error::InvalidParameter("phi needs p ≥ 2".into()));
    }
    op.check_dim(x)?;
    if lambda == 0.0 {
        return Ok(0.0);
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    let r = resolvent(op, lambda, x)?;
    Ok(lambda.powf(1.0 / (p - 1) as f64) * (x - &r.y).norm())
}

/// Solution of the feedback law together with the resolvent evaluated there.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackSolution {
    pub lambda: f64,
    pub resolvent: ResolventResult,
    /// `|λ‖x − y‖^{p−1}/θ − 1|`.
    pub relative_residual: f64,
}

/// Errors with `Stationary` when `res(x) ≤ STATIONARITY_TOL`.
pub fn ensure_nonstationary(op: &OperatorSpec, x: &Vector) -> Result<()> {
    if let Some(res) = op.residue(x)? {
        if res <= STATIONARITY_TOL {
            return Err(Error::Stationary { residue: res });
        }
    }
    Ok(())
}

/// `Λ_θ(x)`: the unique `λ` with `λ‖x − J_λx‖^{p−1} = θ` (`λ = θ` for `p = 1`).
pub fn solve_lambda(op: &OperatorSpec, x: &Vector, params: FeedbackParams, hint: Option<f64>) -> Result<f64> {
    solve_lambda_full(op, x, params, hint).map(|s| s.lambda)
}

/// As [`solve_lambda`], also returning the resolvent at the solution.
///
/// `λ ↦ λ‖x − J_λx‖^{p−1}` is strictly increasing off the zero set, so the
/// root is bracketed geometrically from `hint` and then refined by
/// Illinois false position on `ln λ`, falling back to bisection.
pub fn solve_lambda_full(
    op: &OperatorSpec,
    x: &Vector,
    params: FeedbackParams,
    hint: Option<f64>,
) -> Result<FeedbackSolution> {
    op.check_dim(x)?;
    ensure_nonstationary(op, x)?;
    let FeedbackParams { theta, p } = params;
    if p == 1 {
        let r = resolvent(op, theta, x)?;
        return Ok(FeedbackSolution { lambda: theta, resolvent: r, relative_residual: 0.0 });
    }
    let exponent = (p - 1) as i32;
    // ln(λ‖x − J_λx‖^{p−1}/θ)
    let eval = |lambda: f64| -> Result<(f64, ResolventResult)> {
        let r = resolvent(op, lambda, x)?;
        let disp = (x - &r.y).norm();
        Ok(((lambda * disp.powi(exponent) / theta).ln(), r))
    };

    let start = match hint {
        Some(h) if h > 0.0 && h.is_finite() => h,
        _ => 1.0,
    };
    let mut s0 = start.ln();
    let (mut h0, mut r0) = eval(start)?;
    if h0 == 0.0 {
        return Ok(FeedbackSolution { lambda: start, resolvent: r0, relative_residual: 0.0 });
    }
    // bracket [lo, hi] in log λ with h(lo) < 0 < h(hi)
    let step = if h0 < 0.0 { std::f64::consts::LN_2 } else { -std::f64::consts::LN_2 };
    let mut found = None;
    for _ in 0..MAX_BRACKET {
        let s1 = s0 + step;
        let (h1, r1) = eval(s1.exp())?;
        if h1 == 0.0 {
            return Ok(FeedbackSolution { lambda: s1.exp(), resolvent: r1, relative_residual: 0.0 });
        }
        if (h1 > 0.0) != (h0 > 0.0) {
            found = Some((s1, h1, r1));
            break;
        }
        s0 = s1;
        h0 = h1;
        r0 = r1;
    }
    let Some((s1, h1, r1)) = found else {
        return Err(Error::BracketOverflow(MAX_BRACKET));
    };
    let ((mut lo, mut hlo, mut rlo), (mut hi, mut hhi, mut rhi)) =
        if h0 < 0.0 { ((s0, h0, r0), (s1, h1, r1)) } else { ((s1, h1, r1), (s0, h0, r0)) };

    let mut side = 0i8;
    for _ in 0..MAX_REFINE {
        let (best_s, best_h, best_r) = if hlo.abs() < hhi.abs() { (lo, hlo, &rlo) } else { (hi, hhi, &rhi) };
        let rel = best_h.exp_m1().abs();
        if rel <= AE_TOL || hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
            return finish(best_s, rel, best_r.clone());
        }
        let mut s = (lo * hhi - hi * hlo) / (hhi - hlo);
        if !(s > lo && s < hi) {
            s = 0.5 * (lo + hi);
        }
        let (h, r) = eval(s.exp())?;
        if h == 0.0 {
            return finish(s, 0.0, r);
        }
        if h < 0.0 {
            lo = s;
            hlo = h;
            rlo = r;
            if side == -1 {
                hhi *= 0.5;
            }
            side = -1;
        } else {
            hi = s;
            hhi = h;
            rhi = r;
            if side == 1 {
                hlo *= 0.5;
            }
            side = 1;
        }
    }
    let (best_s, best_h, best_r) = if hlo.abs() < hhi.abs() { (lo, hlo, rlo) } else { (hi, hhi, rhi) };
    finish(best_s, best_h.exp_m1().abs(), best_r)
}

fn finish(s: f64, rel: f64, r: ResolventResult) -> Result<FeedbackSolution> {
    if rel > AE_TOL {
        return Err(Error::NotConverged { iterations: MAX_REFINE, residual: rel });
    }
    Ok(FeedbackSolution { lambda: s.exp(), resolvent: r, relative_residual: rel })
}

/// `Γ_θ(x) = Λ_θ(x)^{−1/(p−1)}` off the zero set and `0` on it.
pub fn gamma(op: &OperatorSpec, x: &Vector, params: FeedbackParams) -> Result<f64> {
    if params.p < 2 {
        return Err(Error::InvalidParameter("gamma needs p ≥ 2".into()));
    }
    match solve_lambda(op, x, params, None) {
        Ok(lambda) => Ok(lambda.powf(-1.0 / (params.p - 1) as f64)),
        Err(Error::Stationary { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::Matrix;

    fn identity(d: usize) -> OperatorSpec {
        OperatorSpec::builder(d).affine(Matrix::identity(d, d), Vector::zeros(d)).build().unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn params_validation() {
        assert!(FeedbackParams::new(0.5, 2).is_ok());
        assert!(FeedbackParams::new(1.0, 2).is_err());
        assert!(FeedbackParams::new(0.0, 2).is_err());
        assert!(FeedbackParams::relaxed(3.0, 2).is_ok());
        assert!(FeedbackParams::relaxed(0.5, 0).is_err());
    }

    #[test]
    fn phi_identity_examples() {
        let op = identity(1);
        assert!((phi(&op, 1.0, &v(&[1.0]), 2).unwrap() - 0.5).abs() < 1e-15);
        assert!((phi(&op, 4.0, &v(&[1.0]), 3).unwrap() - 1.6).abs() < 1e-15);
        assert_eq!(phi(&op, 0.0, &v(&[1.0]), 2).unwrap(), 0.0);
        assert_eq!(phi(&op, 3.0, &v(&[0.0]), 2).unwrap(), 0.0);
        assert!(phi(&op, 1.0, &v(&[1.0]), 1).is_err());
    }

    #[test]
    fn first_order_law_is_constant() {
        let op = identity(2);
        let params = FeedbackParams::new(0.3, 1).unwrap();
        assert_eq!(solve_lambda(&op, &v(&[5.0, -1.0]), params, Some(17.0)).unwrap(), 0.3);
    }

    #[test]
    fn identity_quadratic_roots() {
        let op = identity(1);
        let params = FeedbackParams::new(0.25, 2).unwrap();
        // λ² − θλ − θ = 0 and 2λ² − θλ − θ = 0
        let want1 = (0.25 + (0.0625f64 + 1.0).sqrt()) / 2.0;
        let want2 = (0.25 + (0.0625f64 + 2.0).sqrt()) / 4.0;
        let l1 = solve_lambda(&op, &v(&[1.0]), params, None).unwrap();
        let l2 = solve_lambda(&op, &v(&[2.0]), params, None).unwrap();
        assert!((l1 - want1).abs() < 1e-9 * want1, "{l1}");
        assert!((l2 - want2).abs() < 1e-9 * want2, "{l2}");
        assert!((l1 - 0.6403882).abs() < 1e-7);
        assert!((l2 - 0.4215352).abs() < 1e-7);
    }

    #[test]
    fn law_residual_within_tolerance() {
        let op = identity(3);
        for p in 2..=4 {
            let params = FeedbackParams::new(0.4, p).unwrap();
            let x = v(&[0.3, -2.0, 1.1]);
            let sol = solve_lambda_full(&op, &x, params, Some(1e-3)).unwrap();
            let disp = (&x - &sol.resolvent.y).norm();
            let lhs = sol.lambda * disp.powi(p as i32 - 1);
            assert!((lhs - 0.4).abs() <= AE_TOL * 0.4, "p={p}: {lhs}");
        }
    }

    #[test]
    fn stationary_point_is_rejected() {
        let op = identity(2);
        let params = FeedbackParams::new(0.5, 2).unwrap();
        assert!(matches!(
            solve_lambda(&op, &v(&[0.0, 0.0]), params, None),
            Err(Error::Stationary { .. })
        ));
        assert_eq!(gamma(&op, &v(&[0.0, 0.0]), params).unwrap(), 0.0);
    }

    #[test]
    fn gamma_identity_example() {
        let op = identity(1);
        let params = FeedbackParams::new(0.25, 2).unwrap();
        let g = gamma(&op, &v(&[1.0]), params).unwrap();
        assert!((g - 1.5615528).abs() < 1e-7, "{g}");
    }

    #[test]
    fn bracket_overflow_from_absurd_hint() {
        let op = identity(1);
        let params = FeedbackParams::new(0.25, 2).unwrap();
        assert_eq!(
            solve_lambda(&op, &v(&[1.0]), params, Some(1e-300)),
            Err(Error::BracketOverflow(MAX_BRACKET))
        );
    }
}
