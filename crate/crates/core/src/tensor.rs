//! Higher-order oracle for the large-step framework.
//!
//! At `x` the single-valued part is replaced by its `(p−1)`th-order Taylor
//! model `F_{x'}` around `x' = P_dom(x)`. The surrogate resolvent
//! `(I + λ(F_{x'} + H))⁻¹x` is solved to relative accuracy `σ̂`, and `λ` is
//! searched until `λ‖y − x‖^{p−1}` lands in `[σ_l p!/L, σ_u p!/L]`. The
//! returned `v = F(y) + u − F_{x'}(y)` lies in `Ay`, so the step is an exact
//! (`ε = 0`) framework step with `σ = σ̂ + σ_u` and `θ = σ_l p!/L`.

use std::cell::Cell;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::MAX_BRACKET;
use crate::hpe::{verify_step, HpeConfig, Oracle, OracleStep, CERT_TOL};
use crate::operator::{solve_inclusion, Matrix, TaylorSurrogate, Vector};
use crate::problems::ProblemInstance;
use crate::report::{InvariantEntry, InvariantReport};

/// Floor added to `σ̂` in the a-posteriori check so that `σ̂ = 0` is usable
/// in floating point.
pub const INNER_SLACK: f64 = 1e-10;
const MAX_BISECTIONS: usize = 200;
/// Multiplier on `d·eps` in the rounding level of `λu + y − x`.
const ROUNDING_FACTOR: f64 = 4.0;
const INNER_MAX_ITER: usize = 100;
/// Largest dimension accepted for `p ≥ 3`.
pub const MAX_HIGH_ORDER_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorConfig {
    pub sigma_hat: f64,
    pub sigma_l: f64,
    pub sigma_u: f64,
    /// Lipschitz constant of `D^{(p−1)}F`. Any positive value is valid for
    /// affine `F` with `p ≥ 2`, where the Taylor error vanishes.
    pub lipschitz: f64,
    pub p: usize,
}

fn factorial(p: usize) -> f64 {
    (1..=p).map(|i| i as f64).product()
}

impl TensorConfig {
    pub fn new(sigma_hat: f64, sigma_l: f64, sigma_u: f64, lipschitz: f64, p: usize) -> Result<Self> {
        let cfg = TensorConfig { sigma_hat, sigma_l, sigma_u, lipschitz, p };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_hat >= 0.0 && self.sigma_hat < 1.0) {
            return Err(Error::InvalidParameter(format!("sigma_hat must lie in [0, 1), got {}", self.sigma_hat)));
        }
        if !(self.sigma_l > 0.0 && self.sigma_l < self.sigma_u && self.sigma_u < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < sigma_l < sigma_u < 1, got sigma_l = {}, sigma_u = {}",
                self.sigma_l, self.sigma_u
            )));
        }
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::InvalidParameter(format!("L must be positive, got {}", self.lipschitz)));
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("order p must be at least 1".into()));
        }
        let e = self.p as i32 - 1;
        let lo = self.sigma_l * (1.0 + self.sigma_hat).powi(e);
        let hi = self.sigma_u * (1.0 - self.sigma_hat).powi(e);
        if !(lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "window empty under inexactness: sigma_l(1+sigma_hat)^(p-1) = {lo} must be below sigma_u(1-sigma_hat)^(p-1) = {hi}"
            )));
        }
        if !(self.sigma() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma = sigma_hat + sigma_u must be below 1, got {}",
                self.sigma()
            )));
        }
        Ok(())
    }

    /// Relative-error parameter of the induced framework step.
    pub fn sigma(&self) -> f64 {
        self.sigma_hat + self.sigma_u
    }

    /// Large-step constant of the induced framework step.
    pub fn theta(&self) -> f64 {
        self.sigma_l * factorial(self.p) / self.lipschitz
    }

    /// Target interval for `λ‖y − x‖^{p−1}`.
    pub fn window(&self) -> (f64, f64) {
        let f = factorial(self.p) / self.lipschitz;
        (self.sigma_l * f, self.sigma_u * f)
    }

    pub fn hpe_config(&self, max_iters: usize) -> Result<HpeConfig> {
        HpeConfig::new(self.sigma(), self.theta(), self.p, max_iters)
    }
}

/// A valid `L` for running order `p` on `problem`, or `None` when the
/// problem's smoothness class does not cover `p`.
///
/// For affine `F` the frozen model (`p = 1`) errs by `M(y − x')`, so `L`
/// is the Frobenius norm of `M`; higher orders are exact and any `L` works.
pub fn admissible_lipschitz(problem: &ProblemInstance, p: usize) -> Option<f64> {
    let op = &problem.operator;
    if op.poly1d().is_none() && op.radial_cubic().is_none() {
        return match (p, op.affine()) {
            (1, Some(aff)) => Some(aff.matrix.norm().max(f64::MIN_POSITIVE)),
            _ => Some(1.0),
        };
    }
    (p == problem.order && problem.lipschitz > 0.0).then_some(problem.lipschitz)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSolve {
    pub y: Vector,
    /// `u ∈ (F_{x'} + H)(y)`.
    pub u: Vector,
    /// `‖λu + y − x‖`.
    pub residual: f64,
}

fn min_sym_eigenvalue(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// `(I + λ(F_{x'} + H))⁻¹x` with `x' = anchor_proj`, accepted only when
/// `‖λu + y − x‖ ≤ (σ̂ + INNER_SLACK)‖y − x‖`.
pub fn surrogate_resolvent(
    problem: &ProblemInstance,
    anchor_proj: &Vector,
    x: &Vector,
    lambda: f64,
    cfg: &TensorConfig,
) -> Result<SurrogateSolve> {
    cfg.validate()?;
    let op = &problem.operator;
    op.check_dim(x)?;
    op.check_dim(anchor_proj)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("surrogate index must be positive, got {lambda}")));
    }
    let d = op.dim();
    if cfg.p >= 3 && d > MAX_HIGH_ORDER_DIM {
        return Err(Error::SurrogateNonmonotone(format!(
            "order {} surrogates are supported up to dimension {MAX_HIGH_ORDER_DIM}, got {d}",
            cfg.p
        )));
    }
    let model = TaylorSurrogate::new(op, anchor_proj.clone(), cfg.p)?;
    let cone = op.normal_cone();
    let solve = solve_inclusion(&model, cone, lambda, x, x, INNER_MAX_ITER).map_err(|s| {
        Error::SurrogateNonmonotone(format!("singular Newton system after {} iterations", s.iterations))
    })?;
    if cfg.p >= 3 {
        // DF_{x'} is affine in the displacement for the supported models, so
        // its symmetric part is monotone on [x', y] iff it is at both ends.
        for (at, point) in [("anchor", anchor_proj), ("solution", &solve.y)] {
            let jac = model.jacobian(point);
            let lo = min_sym_eigenvalue(&jac);
            if lo < -1e-10 * (1.0 + jac.norm()) {
                return Err(Error::SurrogateNonmonotone(format!(
                    "surrogate Jacobian at the {at} has eigenvalue {lo:e}"
                )));
            }
        }
    }
    let step = (&solve.y - x).norm();
    let needed = (cfg.sigma_hat + INNER_SLACK) * step;
    if !(solve.residual <= needed) {
        let rounding = ROUNDING_FACTOR
            * d as f64
            * f64::EPSILON
            * (x.norm() + solve.y.norm() + lambda * model.eval_magnitude(&solve.y));
        if needed <= rounding {
            return Err(Error::PrecisionFloor { needed, rounding });
        }
        return Err(Error::NotConverged { iterations: solve.iterations, residual: solve.residual });
    }
    Ok(SurrogateSolve { y: solve.y, u: solve.u, residual: solve.residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowStep {
    pub lambda: f64,
    pub y: Vector,
    pub u: Vector,
    /// `λ‖y − x‖^{p−1}`.
    pub window_value: f64,
    pub inner_residual: f64,
    pub evaluations: usize,
}

enum Probe {
    Below,
    Inside(WindowStep),
    Above,
}

/// Finds `λ` with `λ‖y_λ − x‖^{p−1}` in the window, where `y_λ` is the
/// surrogate resolvent. For `p = 1` the window constrains `λ` alone and its
/// midpoint is returned.
///
/// Otherwise the map is increasing in `λ`: the bracket is doubled or halved
/// from `hint`, then bisected in `log λ`. An inner failure above a working
/// index is read as overshoot, since the surrogate subproblem loses its
/// monotone root only for large `λ`.
pub fn lambda_window_search(
    problem: &ProblemInstance,
    x: &Vector,
    cfg: &TensorConfig,
    hint: f64,
) -> Result<WindowStep> {
    cfg.validate()?;
    if !(hint > 0.0 && hint.is_finite()) {
        return Err(Error::InvalidParameter(format!("hint must be positive, got {hint}")));
    }
    let anchor = problem.operator.project_domain(x)?;
    let (lo, hi) = cfg.window();
    let evaluations = Cell::new(0);
    let probe = |lambda: f64| -> Result<Probe> {
        evaluations.set(evaluations.get() + 1);
        let s = surrogate_resolvent(problem, &anchor, x, lambda, cfg)?;
        let psi = if cfg.p == 1 { lambda } else { lambda * (&s.y - x).norm().powi(cfg.p as i32 - 1) };
        Ok(if psi < lo {
            Probe::Below
        } else if psi > hi {
            Probe::Above
        } else {
            Probe::Inside(WindowStep {
                lambda,
                y: s.y,
                u: s.u,
                window_value: psi,
                inner_residual: s.residual,
                evaluations: 0,
            })
        })
    };
    let finish = |mut step: WindowStep| {
        step.evaluations = evaluations.get();
        step
    };

    if cfg.p == 1 {
        return match probe(0.5 * (lo + hi))? {
            Probe::Inside(s) => Ok(finish(s)),
            _ => unreachable!("midpoint of the index window"),
        };
    }

    let mut below: Option<f64> = None;
    let mut above: Option<f64> = None;
    let mut lambda = hint;
    // inner failure at the current upper end, if that is what set it
    let mut last_err = None;
    for _ in 0..MAX_BRACKET {
        match probe(lambda) {
            Ok(Probe::Inside(s)) => return Ok(finish(s)),
            Ok(Probe::Below) => below = Some(lambda),
            Ok(Probe::Above) => {
                above = Some(lambda);
                last_err = None;
            }
            Err(e @ (Error::NotConverged { .. } | Error::SurrogateNonmonotone(_) | Error::PrecisionFloor { .. })) => {
                above = Some(lambda);
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
        match (below, above) {
            (Some(_), Some(_)) => break,
            (Some(b), None) => lambda = 2.0 * b,
            (None, Some(a)) => lambda = 0.5 * a,
            (None, None) => unreachable!(),
        }
    }
    let (mut b, mut a) = match (below, above) {
        (Some(b), Some(a)) => (b, a),
        (None, Some(_)) if last_err.is_some() => return Err(last_err.unwrap()),
        (b, a) => {
            return Err(Error::WindowUnreachable { lo: b.unwrap_or(0.0), hi: a.unwrap_or(f64::INFINITY) })
        }
    };
    for _ in 0..MAX_BISECTIONS {
        if a / b - 1.0 < 4.0 * f64::EPSILON {
            break;
        }
        let mid = (b * a).sqrt();
        match probe(mid) {
            Ok(Probe::Inside(s)) => return Ok(finish(s)),
            Ok(Probe::Below) => b = mid,
            Ok(Probe::Above) => {
                a = mid;
                last_err = None;
            }
            Err(e @ (Error::NotConverged { .. } | Error::SurrogateNonmonotone(_) | Error::PrecisionFloor { .. })) => {
                a = mid;
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    // A collapsed bracket whose upper end is an inner failure means the
    // surrogate solve hit its rounding floor before reaching the window.
    Err(last_err.filter(|_| a / b - 1.0 < 4.0 * f64::EPSILON).unwrap_or(Error::WindowUnreachable { lo: b, hi: a }))
}

/// Per-step diagnostics kept by [`TensorOracle`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorStepInfo {
    pub lambda: f64,
    /// `‖y − x‖`.
    pub step: f64,
    pub window_value: f64,
    /// `‖λu + y − x‖`.
    pub inner_residual: f64,
    /// `λ‖F(y) − F_{x'}(y)‖`.
    pub taylor_error: f64,
    /// `λ‖F(y)‖`, the scale of rounding in `taylor_error`.
    pub taylor_scale: f64,
    /// `‖λv + y − x‖`.
    pub composite_residual: f64,
    pub evaluations: usize,
}

/// One oracle step at `x` with `λ` search started from `hint`.
pub fn tensor_step(
    problem: &ProblemInstance,
    x: &Vector,
    cfg: &TensorConfig,
    hint: f64,
) -> Result<(OracleStep, TensorStepInfo)> {
    let op = &problem.operator;
    let anchor = op.project_domain(x)?;
    let w = lambda_window_search(problem, x, cfg, hint)?;
    let model = TaylorSurrogate::new(op, anchor, cfg.p)?;
    let fy = op.eval_single_valued(&w.y)?;
    let remainder = model.remainder(&w.y);
    let v = &w.u + &remainder;
    let info = TensorStepInfo {
        lambda: w.lambda,
        step: (&w.y - x).norm(),
        window_value: w.window_value,
        inner_residual: w.inner_residual,
        taylor_error: w.lambda * remainder.norm(),
        taylor_scale: w.lambda * fy.norm(),
        composite_residual: (&v * w.lambda + &w.y - x).norm(),
        evaluations: w.evaluations,
    };
    Ok((OracleStep { lambda: w.lambda, y: w.y, v, eps: 0.0 }, info))
}

/// One oracle step at `x` from a unit hint.
pub fn tensor_oracle(problem: &ProblemInstance, x: &Vector, cfg: &TensorConfig) -> Result<OracleStep> {
    cfg.validate()?;
    Ok(tensor_step(problem, x, cfg, 1.0)?.0)
}

/// Stateful oracle: warm-starts `λ` from the previous step and logs
/// diagnostics for [`check_tensor_steps`].
#[derive(Debug, Clone)]
pub struct TensorOracle {
    cfg: TensorConfig,
    hint: f64,
    pub log: Vec<TensorStepInfo>,
}

impl TensorOracle {
    pub fn new(cfg: TensorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(TensorOracle { cfg, hint: 1.0, log: Vec::new() })
    }

    pub fn config(&self) -> &TensorConfig {
        &self.cfg
    }
}

impl Oracle for TensorOracle {
    fn step(&mut self, problem: &ProblemInstance, x: &Vector) -> Result<OracleStep> {
        let (step, info) = tensor_step(problem, x, &self.cfg, self.hint)?;
        self.hint = step.lambda;
        self.log.push(info);
        Ok(step)
    }
}

/// Per-step invariants of the oracle, plus the framework certificate
/// recomputed from scratch on the given steps.
pub fn check_tensor_steps(
    steps: &[(Vector, OracleStep)],
    log: &[TensorStepInfo],
    cfg: &TensorConfig,
) -> Result<InvariantReport> {
    let hcfg = cfg.hpe_config(1)?;
    let (lo, hi) = cfg.window();
    let fact = factorial(cfg.p);
    let mut inexact = InvariantEntry::new("tensor: a-posteriori surrogate inexactness");
    let mut taylor = InvariantEntry::new("tensor: Taylor error bound");
    let mut composite = InvariantEntry::new("tensor: composite relative error");
    let mut window = InvariantEntry::new("tensor: large-step window");
    let mut cert = InvariantEntry::new("tensor: framework certificate");
    for info in log {
        inexact.observe((cfg.sigma_hat + INNER_SLACK) * info.step - info.inner_residual);
        let bound = info.lambda * cfg.lipschitz / fact * info.step.powi(cfg.p as i32);
        taylor.observe(bound + 1e-12 * (1.0 + info.taylor_scale) - info.taylor_error);
        composite.observe((cfg.sigma() + INNER_SLACK) * info.step * (1.0 + CERT_TOL) - info.composite_residual);
        window.observe((info.window_value - lo).min(hi - info.window_value) / hi);
    }
    for (x, s) in steps {
        let c = verify_step(&hcfg, x, s.lambda, &s.y, &s.v, s.eps);
        cert.observe(c.relative_error_margin.min(c.large_step_margin));
    }
    let mut report = InvariantReport::default();
    for e in [inexact, taylor, composite, window, cert] {
        report.push(e);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpe::{run, HpeStatus};
    use crate::operator::OperatorSpec;
    use crate::problems::{make_bilinear_saddle, make_convex_gradient, make_cubic_1d};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn identity_problem(d: usize) -> ProblemInstance {
        let op = OperatorSpec::builder(d).affine(Matrix::identity(d, d), Vector::zeros(d)).build().unwrap();
        ProblemInstance::new("identity", op, crate::problems::SolutionSet::Singleton(Vector::zeros(d)), None)
            .unwrap()
    }

    #[test]
    fn config_invariants() {
        assert!(TensorConfig::new(0.1, 0.2, 0.5, 1.0, 2).is_ok());
        assert!(TensorConfig::new(0.1, 0.5, 0.2, 1.0, 2).is_err());
        assert!(TensorConfig::new(0.5, 0.2, 0.6, 1.0, 1).is_err());
        // 0.3·1.4² = 0.588 ≥ 0.5·0.6² = 0.18
        assert!(TensorConfig::new(0.4, 0.3, 0.5, 1.0, 3).is_err());
        assert!(TensorConfig::new(0.1, 0.2, 0.5, 0.0, 2).is_err());
        let c = TensorConfig::new(0.1, 0.2, 0.5, 6.0, 3).unwrap();
        assert!((c.theta() - 0.2).abs() < 1e-15);
        assert_eq!(c.window(), (0.2, 0.5));
        assert!((c.sigma() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn affine_surrogate_is_exact_resolvent() {
        let p = make_bilinear_saddle(2, 1.0).unwrap();
        let cfg = TensorConfig::new(0.0, 0.1, 0.5, 1.0, 2).unwrap();
        let x = v(&[0.3, -0.2]);
        let s = surrogate_resolvent(&p, &x, &x, 0.7, &cfg).unwrap();
        let exact = crate::operator::resolvent(&p.operator, 0.7, &x).unwrap();
        assert!((&s.y - &exact.y).norm() < 1e-14);
        assert!(s.residual < 1e-15);
    }

    #[test]
    fn cubic_surrogate_at_origin_is_zero() {
        let p = make_cubic_1d().unwrap();
        let cfg = TensorConfig::new(0.0, 0.1, 0.5, 6.0, 3).unwrap();
        let s = surrogate_resolvent(&p, &v(&[0.0]), &v(&[2.0]), 1.0, &cfg).unwrap();
        assert_eq!(s.y, v(&[2.0]));
        assert_eq!(s.u, v(&[0.0]));
    }

    #[test]
    fn high_order_rejects_large_dimension() {
        let p = make_convex_gradient(5).unwrap();
        let cfg = TensorConfig::new(0.0, 0.1, 0.5, 6.0, 3).unwrap();
        let x = Vector::from_element(5, 0.3);
        assert!(matches!(
            surrogate_resolvent(&p, &x, &x, 1.0, &cfg),
            Err(Error::SurrogateNonmonotone(_))
        ));
    }

    #[test]
    fn first_order_window_is_midpoint() {
        let p = make_bilinear_saddle(2, 1.0).unwrap();
        let cfg = TensorConfig::new(0.0, 0.2, 0.6, 2.0, 1).unwrap();
        let w = lambda_window_search(&p, &v(&[0.5, 0.5]), &cfg, 123.0).unwrap();
        assert!((w.lambda - 0.2).abs() < 1e-15);
    }

    #[test]
    fn identity_window_hint_inside_is_kept() {
        let p = identity_problem(2);
        let cfg = TensorConfig::new(0.0, 0.1, 0.5, 1.0, 2).unwrap();
        let x = v(&[0.6, 0.8]);
        let w = lambda_window_search(&p, &x, &cfg, 1.0).unwrap();
        assert_eq!(w.lambda, 1.0);
        assert!((w.window_value - 0.5).abs() < 1e-14);
    }

    #[test]
    fn identity_window_from_far_hints() {
        let p = identity_problem(2);
        let cfg = TensorConfig::new(0.0, 0.1, 0.5, 1.0, 2).unwrap();
        let x = v(&[0.6, 0.8]);
        for hint in [1e-6, 1e-2, 1e3, 1e8] {
            let w = lambda_window_search(&p, &x, &cfg, hint).unwrap();
            // closed form: ψ(λ) = λ²/(1 + λ) for ‖x‖ = 1
            let psi = w.lambda * w.lambda / (1.0 + w.lambda);
            assert!((psi - w.window_value).abs() < 1e-12);
            assert!((0.2..=1.0).contains(&psi), "hint {hint}: ψ = {psi}");
        }
    }

    #[test]
    fn first_order_matches_extragradient() {
        let p = make_bilinear_saddle(4, 1.5).unwrap();
        let cfg = TensorConfig::new(0.0, 0.1, 0.4, 1.5, 1).unwrap();
        let op = &p.operator;
        // walk the extragradient trajectory and compare the trial points
        let mut x = v(&[0.8, -0.3, 0.5, 0.9]);
        for _ in 0..20 {
            let (step, _) = tensor_step(&p, &x, &cfg, 1.0).unwrap();
            let fx = op.eval_single_valued(&x).unwrap();
            let y_eg = op.project_domain(&(&x - fx * step.lambda)).unwrap();
            assert!((&step.y - &y_eg).norm() < 1e-14, "{} vs {}", step.y, y_eg);
            let fy = op.eval_single_valued(&y_eg).unwrap();
            x = op.project_domain(&(&x - fy * step.lambda)).unwrap();
        }
    }

    #[test]
    fn oracle_steps_pass_framework_certificate() {
        let cases = [
            (make_bilinear_saddle(2, 1.0).unwrap(), TensorConfig::new(0.1, 0.1, 0.5, 1.0, 2).unwrap(), v(&[0.9, -0.4])),
            (make_cubic_1d().unwrap(), TensorConfig::new(0.05, 0.1, 0.5, 6.0, 3).unwrap(), v(&[1.5])),
            (make_convex_gradient(3).unwrap(), TensorConfig::new(0.05, 0.1, 0.5, 6.0, 3).unwrap(), v(&[0.5, -1.0, 0.7])),
        ];
        for (p, cfg, x0) in cases {
            let hcfg = cfg.hpe_config(60).unwrap();
            let mut oracle = TensorOracle::new(cfg).unwrap();
            let run = run(&p, &mut oracle, &hcfg, &x0).unwrap();
            assert!(!run.records.is_empty());
            let steps: Vec<_> = run
                .records
                .iter()
                .map(|r| (r.x_prev.clone(), OracleStep { lambda: r.lambda, y: r.y.clone(), v: r.v.clone(), eps: r.eps }))
                .collect();
            let report = check_tensor_steps(&steps, &oracle.log, &cfg).unwrap();
            assert!(report.all_passed(), "{}\n{report}", p.name);
            for r in &run.records {
                assert!(r.cert.enlargement_margin.unwrap() >= -1e-8);
            }
            if p.name.starts_with("bilinear") {
                assert_eq!(run.status, HpeStatus::Solved);
            }
        }
    }
}
