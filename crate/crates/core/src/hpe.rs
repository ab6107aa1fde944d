//! Large-step hybrid proximal extragradient framework.
//!
//! Each iteration asks an [`Oracle`] for `(λ, y, v, ε)` at the current
//! point, verifies
//!
//! * relative error: `‖λv + y − x‖² + 2λε ≤ σ²‖y − x‖²`,
//! * large step: `λ‖y − x‖^{p−1} ≥ θ`,
//!
//! and moves to `x − λv`. The framework never chooses `λ` itself.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{solve_lambda_full, FeedbackParams};
use crate::flow::{fmt_float, fmt_opt, optional_gap};
use crate::metrics;
use crate::operator::{eps_enlargement_check, Vector};
use crate::problems::ProblemInstance;
use crate::report::{InvariantEntry, InvariantReport};

/// Relative slack on both step conditions.
pub const CERT_TOL: f64 = 1e-8;
pub const DEFAULT_STOP_RES: f64 = 1e-9;
const ENLARGEMENT_WITNESSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpeConfig {
    pub sigma: f64,
    pub theta: f64,
    pub p: usize,
    pub max_iters: usize,
    #[serde(default = "default_stop_res")]
    pub stop_res: f64,
}

fn default_stop_res() -> f64 {
    DEFAULT_STOP_RES
}

impl HpeConfig {
    pub fn new(sigma: f64, theta: f64, p: usize, max_iters: usize) -> Result<Self> {
        let cfg = HpeConfig { sigma, theta, p, max_iters, stop_res: DEFAULT_STOP_RES };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidParameter(format!("sigma must lie in [0, 1), got {}", self.sigma)));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta must be positive, got {}", self.theta)));
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("order p must be at least 1".into()));
        }
        if !(self.stop_res >= 0.0) {
            return Err(Error::InvalidParameter(format!("stop_res must be nonnegative, got {}", self.stop_res)));
        }
        Ok(())
    }
}

/// Outcome of checking one step against the framework conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificate {
    pub relative_error_ok: bool,
    pub large_step_ok: bool,
    /// `(σ² + CERT_TOL)‖y − x‖² − ‖λv + y − x‖² − 2λε`.
    pub relative_error_margin: f64,
    /// `λ‖y − x‖^{p−1} − θ(1 − CERT_TOL)`.
    pub large_step_margin: f64,
    /// Worst sampled `⟨y − ỹ, v − ṽ⟩ + ε` over graph witnesses (`≥ 0` up to
    /// rounding when `v ∈ A^ε y`); filled in by [`run`].
    pub enlargement_margin: Option<f64>,
    /// `dist(v, Ay)`; filled in by [`run`].
    pub membership_defect: Option<f64>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.relative_error_ok && self.large_step_ok
    }
}

pub fn verify_step(cfg: &HpeConfig, x_prev: &Vector, lambda: f64, y: &Vector, v: &Vector, eps: f64) -> Certificate {
    let step = (y - x_prev).norm();
    let mismatch = (v * lambda + y - x_prev).norm_squared();
    let relative_error_margin = (cfg.sigma * cfg.sigma + CERT_TOL) * step * step - mismatch - 2.0 * lambda * eps;
    let large = if cfg.p == 1 { lambda } else { lambda * step.powi(cfg.p as i32 - 1) };
    let large_step_margin = large - cfg.theta * (1.0 - CERT_TOL);
    Certificate {
        relative_error_ok: relative_error_margin >= 0.0 && lambda > 0.0 && eps >= 0.0,
        large_step_ok: large_step_margin >= 0.0,
        relative_error_margin,
        large_step_margin,
        enlargement_margin: None,
        membership_defect: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleStep {
    pub lambda: f64,
    pub y: Vector,
    /// Element of the `ε`-enlargement `A^ε y`.
    pub v: Vector,
    pub eps: f64,
}

/// Subroutine producing the next step from the current point.
pub trait Oracle {
    fn step(&mut self, problem: &ProblemInstance, x: &Vector) -> Result<OracleStep>;
}

/// Exact implicit step: `λ` solves `λ‖J_λx − x‖^{p−1} = θ`, `y = J_λx`,
/// `v ∈ Ay` with `λv + y = x` up to the resolvent tolerance.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    params: FeedbackParams,
    hint: Option<f64>,
}

impl ExactOracle {
    pub fn new(cfg: &HpeConfig) -> Result<Self> {
        Ok(ExactOracle { params: FeedbackParams::relaxed(cfg.theta, cfg.p)?, hint: None })
    }
}

impl Oracle for ExactOracle {
    fn step(&mut self, problem: &ProblemInstance, x: &Vector) -> Result<OracleStep> {
        let sol = solve_lambda_full(&problem.operator, x, self.params, self.hint)?;
        self.hint = Some(sol.lambda);
        Ok(OracleStep { lambda: sol.lambda, y: sol.resolvent.y, v: sol.resolvent.v, eps: 0.0 })
    }
}

/// One exact step at `x` without warm start.
pub fn exact_oracle(problem: &ProblemInstance, x: &Vector, cfg: &HpeConfig) -> Result<OracleStep> {
    ExactOracle::new(cfg)?.step(problem, x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    pub x_prev: Vector,
    pub lambda: f64,
    pub y: Vector,
    pub v: Vector,
    pub eps: f64,
    pub x_next: Vector,
    pub cert: Certificate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HpeStatus {
    /// `res(x_k) ≤ stop_res` was reached.
    Solved,
    MaxIters,
    /// The oracle could not certify a step because the required accuracy is
    /// below the rounding level of double precision.
    PrecisionFloor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpeRun {
    pub x0: Vector,
    pub records: Vec<IterateRecord>,
    pub status: HpeStatus,
}

impl HpeRun {
    pub fn x_final(&self) -> &Vector {
        self.records.last().map_or(&self.x0, |r| &r.x_next)
    }
}

fn is_solved(problem: &ProblemInstance, x: &Vector, stop_res: f64) -> Result<bool> {
    Ok(matches!(problem.operator.residue(x)?, Some(r) if r <= stop_res))
}

pub fn run<O: Oracle + ?Sized>(problem: &ProblemInstance, oracle: &mut O, cfg: &HpeConfig, x0: &Vector) -> Result<HpeRun> {
    cfg.validate()?;
    let op = &problem.operator;
    op.check_dim(x0)?;
    let mut x = x0.clone();
    let mut records = Vec::new();
    let mut status = HpeStatus::MaxIters;
    for k in 1..=cfg.max_iters {
        if is_solved(problem, &x, cfg.stop_res)? {
            status = HpeStatus::Solved;
            break;
        }
        let step = match oracle.step(problem, &x) {
            Ok(s) => s,
            Err(Error::PrecisionFloor { .. }) => {
                status = HpeStatus::PrecisionFloor;
                break;
            }
            Err(e) => return Err(Error::OracleFailed { k, reason: Box::new(e) }),
        };
        let mut cert = verify_step(cfg, &x, step.lambda, &step.y, &step.v, step.eps);
        if !cert.passed() {
            return Err(Error::CertViolated { k });
        }
        let verdict = eps_enlargement_check(op, &step.y, &step.v, step.eps, ENLARGEMENT_WITNESSES, k as u64)?;
        cert.enlargement_margin = Some(verdict.worst_margin);
        cert.membership_defect = Some(op.membership_defect(&step.y, &step.v)?);
        let x_next = &x - &step.v * step.lambda;
        records.push(IterateRecord {
            k,
            x_prev: x,
            lambda: step.lambda,
            y: step.y,
            v: step.v,
            eps: step.eps,
            x_next: x_next.clone(),
            cert,
        });
        x = x_next;
    }
    if status == HpeStatus::MaxIters && is_solved(problem, &x, cfg.stop_res)? {
        status = HpeStatus::Solved;
    }
    Ok(HpeRun { x0: x0.clone(), records, status })
}

/// `ỹ_k = Σ_{i≤k} λ_i y_i / Σ_{i≤k} λ_i`.
pub fn ergodic_iterate(records: &[IterateRecord], k: usize) -> Result<Vector> {
    if records.is_empty() || k == 0 {
        return Err(Error::EmptyTrajectory);
    }
    if k > records.len() {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds {} records", records.len())));
    }
    let mut num = Vector::zeros(records[0].y.len());
    let mut den = 0.0;
    for r in &records[..k] {
        num += &r.y * r.lambda;
        den += r.lambda;
    }
    Ok(num / den)
}

/// Per-iteration metric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct HpeSeries {
    pub k: Vec<usize>,
    pub gap_ergodic: Vec<Option<f64>>,
    /// `min_{i≤k} res(y_i)`.
    pub residue_min: Vec<f64>,
    /// `dist(x_k, solutions)`.
    pub dist: Vec<Option<f64>>,
}

pub fn metric_series(run: &HpeRun, problem: &ProblemInstance) -> Result<HpeSeries> {
    let n = run.records.len();
    let mut out = HpeSeries {
        k: Vec::with_capacity(n),
        gap_ergodic: Vec::with_capacity(n),
        residue_min: Vec::with_capacity(n),
        dist: Vec::with_capacity(n),
    };
    let mut num = Vector::zeros(problem.dim());
    let mut den = 0.0;
    let mut best = f64::INFINITY;
    for r in &run.records {
        num += &r.y * r.lambda;
        den += r.lambda;
        out.k.push(r.k);
        out.gap_ergodic.push(optional_gap(problem, &(&num / den))?);
        best = best.min(metrics::residue(problem, &r.y)?);
        out.residue_min.push(best);
        out.dist.push(match metrics::dist_to_solutions(problem, &r.x_next) {
            Ok(d) => Some(d),
            Err(Error::UnknownSolution) => None,
            Err(e) => return Err(e),
        });
    }
    Ok(out)
}

/// Columns: `k, lambda, norm_v, eps, step, gap_ergodic, residue_min_so_far, dist`
/// where `step = ‖y_k − x_{k−1}‖` and `dist` is measured at `x_k`.
pub fn write_csv<W: Write>(run: &HpeRun, problem: &ProblemInstance, out: &mut W) -> Result<()> {
    writeln!(out, "k,lambda,norm_v,eps,step,gap_ergodic,residue_min_so_far,dist")?;
    let series = metric_series(run, problem)?;
    for (i, r) in run.records.iter().enumerate() {
        let row = [
            r.k.to_string(),
            fmt_float(r.lambda),
            fmt_float(r.v.norm()),
            fmt_float(r.eps),
            fmt_float((&r.y - &r.x_prev).norm()),
            fmt_opt(series.gap_ergodic[i]),
            fmt_float(series.residue_min[i]),
            fmt_opt(series.dist[i]),
        ];
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

const LEMMA_RTOL: f64 = 1e-8;

/// Checks the step certificates and the discrete Lyapunov lemmas with
/// `z` the solution nearest to `x_0` and `0 ∈ Az`.
pub fn check_discrete_lemmas(run: &HpeRun, problem: &ProblemInstance, cfg: &HpeConfig) -> Result<InvariantReport> {
    let z = problem.nearest_solution(&run.x0)?;
    let recs = &run.records;
    let s2 = cfg.sigma * cfg.sigma;
    let pf = cfg.p as f64;
    let e0 = metrics::lyapunov(&run.x0, &z);
    let d2 = 2.0 * e0;
    let d = d2.sqrt();
    let abs_floor = 1e-14 * e0.max(f64::MIN_POSITIVE);
    let mut report = InvariantReport::new();

    let mut rel = InvariantEntry::new("hpe: relative-error condition");
    let mut large = InvariantEntry::new("hpe: large-step condition");
    for r in recs {
        rel.observe(r.cert.relative_error_margin);
        large.observe(r.cert.large_step_margin);
    }
    report.push(rel);
    report.push(large);

    let mut lyap = InvariantEntry::new("hpe: Lyapunov descent");
    let mut descent = InvariantEntry::new("hpe: cumulative descent inequality");
    let mut steps_sum = InvariantEntry::new("hpe: sum of squared steps bound");
    let mut control = InvariantEntry::new("hpe: lambda-sum lower bound");
    let mut err_v = InvariantEntry::new("hpe: best scaled v bound");
    let mut err_eps = InvariantEntry::new("hpe: best eps bound");
    let mut dist_desc = InvariantEntry::new("hpe: distance descent");
    let all_exact = recs.iter().all(|r| r.eps == 0.0);

    let mut e_prev = e0;
    let mut sq_sum = 0.0;
    let mut lam_sum = 0.0;
    let mut best_v = f64::INFINITY;
    let mut best_eps = f64::INFINITY;
    for (i, r) in recs.iter().enumerate() {
        let k = (i + 1) as f64;
        let step2 = (&r.x_prev - &r.y).norm_squared();
        sq_sum += step2;
        lam_sum += r.lambda;
        best_v = best_v.min(r.lambda.sqrt() * r.v.norm());
        best_eps = best_eps.min(r.eps);
        let ek = metrics::lyapunov(&r.x_next, &z);

        lyap.observe((e_prev * (1.0 + LEMMA_RTOL) + abs_floor - ek) / e0);
        let lhs = 0.5 * (1.0 - s2) * sq_sum;
        let rhs = e0 - ek;
        descent.observe((rhs - lhs + LEMMA_RTOL * (lhs.abs() + rhs.abs()) + abs_floor) / e0);
        steps_sum.observe((d2 / (1.0 - s2) * (1.0 + LEMMA_RTOL) - sq_sum) / d2);
        let lower = cfg.theta * ((1.0 - s2) / d2).powf((pf - 1.0) / 2.0) * k.powf((pf + 1.0) / 2.0);
        control.observe((lam_sum - lower * (1.0 - LEMMA_RTOL)) / lower);
        let v_cap = ((1.0 + cfg.sigma) / (1.0 - cfg.sigma)).sqrt() * lam_sum.powf(-0.5) * d;
        err_v.observe((v_cap * (1.0 + LEMMA_RTOL) - best_v) / v_cap.max(f64::MIN_POSITIVE));
        let eps_cap = s2 / (2.0 * (1.0 - s2)) / lam_sum * d2;
        err_eps.observe(eps_cap * (1.0 + LEMMA_RTOL) - best_eps);

        if all_exact {
            let da = metrics::dist_to_solutions(problem, &r.x_prev)?;
            let db = metrics::dist_to_solutions(problem, &r.x_next)?;
            let gain = da * da - db * db;
            let need = (1.0 - s2) * step2;
            dist_desc.observe((gain - need + LEMMA_RTOL * (da * da) + abs_floor) / e0);
        }
        e_prev = ek;
    }
    report.push(lyap);
    report.push(descent);
    report.push(steps_sum);
    report.push(control);
    report.push(err_v);
    report.push(err_eps);
    if all_exact {
        report.push(dist_desc);
    } else {
        report.push(dist_desc.with_detail("skipped: inexact steps"));
    }
    Ok(report)
}
