//! Closed-loop dynamics `ẋ = J_{λ(t)}x − x` with `λ(t) = Λ_θ(x(t))`.
//!
//! Integration is fixed-step classical RK4. The feedback law is re-solved at
//! every stage, warm-started from the previous stage, so that each accepted
//! state carries an exact pair `(λ, y = J_λx)`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::feedback::{ensure_nonstationary, solve_lambda_full, FeedbackParams, FeedbackSolution};
use crate::metrics;
use crate::operator::{OperatorSpec, Vector};
use crate::problems::ProblemInstance;
use crate::report::{InvariantEntry, InvariantReport};

/// Relative tolerance on the feedback law at accepted states.
pub const FLOW_AE_TOL: f64 = 1e-8;
/// Largest admissible step size.
pub const MAX_STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub x: Vector,
    pub lambda: f64,
    /// `J_λx`.
    pub y: Vector,
}

impl FlowState {
    /// `‖x − y‖ = ‖ẋ‖`.
    pub fn speed(&self) -> f64 {
        (&self.x - &self.y).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Completed,
    /// The state became numerically stationary before the horizon.
    Stationary,
}

/// Running `∫λy ds` and `∫λ ds` by the trapezoid rule on a time grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErgodicAccumulator {
    num: Option<Vector>,
    den: f64,
    last: Option<(f64, f64, Vector)>,
}

impl ErgodicAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the node `(t, λ(t), y(t))`; times must increase.
    pub fn push(&mut self, t: f64, lambda: f64, y: &Vector) {
        if let Some((t0, l0, y0)) = &self.last {
            let half = 0.5 * (t - t0);
            let inc = (y0 * *l0 + y * lambda) * half;
            self.num = Some(match self.num.take() {
                Some(n) => n + inc,
                None => inc,
            });
            self.den += half * (l0 + lambda);
        }
        self.last = Some((t, lambda, y.clone()));
    }

    pub fn numerator(&self) -> Option<&Vector> {
        self.num.as_ref()
    }

    pub fn denominator(&self) -> f64 {
        self.den
    }

    pub fn point(&self) -> Option<Vector> {
        match &self.num {
            Some(n) if self.den > 0.0 => Some(n / self.den),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<FlowState>,
    /// Ergodic point at each sample time (`None` at `t = 0`).
    pub ergodic_path: Vec<Option<Vector>>,
    pub ergodic: ErgodicAccumulator,
    pub status: FlowStatus,
    pub steps: usize,
    pub params: FeedbackParams,
}

impl Trajectory {
    pub fn last(&self) -> &FlowState {
        self.samples.last().expect("trajectory holds its initial state")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Keep every `sample_stride`-th step (the final state is always kept).
    pub sample_stride: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { sample_stride: 1 }
    }
}

/// `J_{Λ_θ(x)}x − x`.
pub fn vector_field(op: &OperatorSpec, x: &Vector, params: FeedbackParams) -> Result<Vector> {
    let sol = solve_lambda_full(op, x, params, None)?;
    Ok(sol.resolvent.y - x)
}

fn law_residual(state: &FlowState, params: FeedbackParams) -> f64 {
    if params.p == 1 {
        return (state.lambda / params.theta - 1.0).abs();
    }
    (state.lambda * state.speed().powi(params.p as i32 - 1) / params.theta - 1.0).abs()
}

enum Stage {
    Ok(FeedbackSolution),
    Stationary,
}

fn stage(op: &OperatorSpec, x: &Vector, params: FeedbackParams, hint: f64, t: f64) -> Result<Stage> {
    match solve_lambda_full(op, x, params, Some(hint)) {
        Ok(s) => Ok(Stage::Ok(s)),
        Err(Error::Stationary { .. }) => Ok(Stage::Stationary),
        Err(Error::NotConverged { residual, .. }) => Err(Error::AlgebraicResidual { t, residual }),
        Err(e) => Err(e),
    }
}

pub fn integrate(
    problem: &ProblemInstance,
    x0: &Vector,
    params: FeedbackParams,
    horizon: f64,
    h: f64,
) -> Result<Trajectory> {
    integrate_with(problem, x0, params, horizon, h, FlowOptions::default())
}

pub fn integrate_with(
    problem: &ProblemInstance,
    x0: &Vector,
    params: FeedbackParams,
    horizon: f64,
    h: f64,
    opts: FlowOptions,
) -> Result<Trajectory> {
    let op = &problem.operator;
    op.check_dim(x0)?;
    if !(h > 0.0 && h <= MAX_STEP) {
        return Err(Error::InvalidParameter(format!("step size must lie in (0, {MAX_STEP}], got {h}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be nonnegative, got {horizon}")));
    }
    if opts.sample_stride == 0 {
        return Err(Error::InvalidParameter("sample stride must be positive".into()));
    }
    ensure_nonstationary(op, x0)?;

    let first = match stage(op, x0, params, 1.0, 0.0)? {
        Stage::Ok(s) => s,
        Stage::Stationary => unreachable!("initial point checked above"),
    };
    let mut state = FlowState { t: 0.0, x: x0.clone(), lambda: first.lambda, y: first.resolvent.y };
    check_state(&state, params)?;

    let mut ergodic = ErgodicAccumulator::new();
    ergodic.push(0.0, state.lambda, &state.y);
    let mut samples = vec![state.clone()];
    let mut ergodic_path = vec![None];
    let mut status = FlowStatus::Completed;

    let n_steps = if horizon == 0.0 { 0 } else { (horizon / h - 1e-9).ceil() as usize };
    let mut steps = 0;
    for k in 0..n_steps {
        let t0 = k as f64 * h;
        let t1 = if k + 1 == n_steps { horizon } else { (k + 1) as f64 * h };
        let dt = t1 - t0;
        let x = &state.x;

        let k1 = &state.y - x;
        let x2 = x + &k1 * (0.5 * dt);
        let Stage::Ok(s2) = stage(op, &x2, params, state.lambda, t0 + 0.5 * dt)? else {
            status = FlowStatus::Stationary;
            break;
        };
        let k2 = &s2.resolvent.y - &x2;
        let x3 = x + &k2 * (0.5 * dt);
        let Stage::Ok(s3) = stage(op, &x3, params, s2.lambda, t0 + 0.5 * dt)? else {
            status = FlowStatus::Stationary;
            break;
        };
        let k3 = &s3.resolvent.y - &x3;
        let x4 = x + &k3 * dt;
        let Stage::Ok(s4) = stage(op, &x4, params, s3.lambda, t1)? else {
            status = FlowStatus::Stationary;
            break;
        };
        let k4 = &s4.resolvent.y - &x4;
        let xn = x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
        let Stage::Ok(sn) = stage(op, &xn, params, s4.lambda, t1)? else {
            status = FlowStatus::Stationary;
            break;
        };
        state = FlowState { t: t1, x: xn, lambda: sn.lambda, y: sn.resolvent.y };
        check_state(&state, params)?;
        ergodic.push(t1, state.lambda, &state.y);
        steps += 1;
        if steps % opts.sample_stride == 0 || k + 1 == n_steps {
            samples.push(state.clone());
            ergodic_path.push(ergodic.point());
        }
    }
    if status == FlowStatus::Stationary && samples.last().map(|s| s.t) != Some(state.t) {
        samples.push(state.clone());
        ergodic_path.push(ergodic.point());
    }
    Ok(Trajectory { samples, ergodic_path, ergodic, status, steps, params })
}

fn check_state(state: &FlowState, params: FeedbackParams) -> Result<()> {
    let residual = law_residual(state, params);
    if !(residual <= FLOW_AE_TOL) {
        return Err(Error::AlgebraicResidual { t: state.t, residual });
    }
    Ok(())
}

/// `z̃(T) = ∫λy ds / ∫λ ds`.
pub fn ergodic_point(traj: &Trajectory) -> Result<Vector> {
    traj.ergodic.point().ok_or(Error::EmptyTrajectory)
}

/// Metric columns evaluated at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSeries {
    pub t: Vec<f64>,
    /// `gap(z̃(t))`, when the gap is available for the problem.
    pub gap_ergodic: Vec<Option<f64>>,
    /// `res(y(t))`, the residue at the pointwise iterate.
    pub residue: Vec<f64>,
    pub dist: Vec<Option<f64>>,
    pub energy: Vec<Option<f64>>,
}

pub fn metric_series(traj: &Trajectory, problem: &ProblemInstance) -> Result<FlowSeries> {
    let n = traj.samples.len();
    let mut out = FlowSeries {
        t: Vec::with_capacity(n),
        gap_ergodic: Vec::with_capacity(n),
        residue: Vec::with_capacity(n),
        dist: Vec::with_capacity(n),
        energy: Vec::with_capacity(n),
    };
    let anchor = problem.nearest_solution(&traj.samples[0].x).ok();
    for (s, erg) in traj.samples.iter().zip(&traj.ergodic_path) {
        out.t.push(s.t);
        out.gap_ergodic.push(match erg {
            Some(z) => optional_gap(problem, z)?,
            None => None,
        });
        out.residue.push(metrics::residue(problem, &s.y)?);
        out.dist.push(match metrics::dist_to_solutions(problem, &s.x) {
            Ok(d) => Some(d),
            Err(Error::UnknownSolution) => None,
            Err(e) => return Err(e),
        });
        out.energy.push(anchor.as_ref().map(|z| metrics::lyapunov(&s.x, z)));
    }
    Ok(out)
}

/// Gap when defined for the problem class, `None` when it is not.
pub(crate) fn optional_gap(problem: &ProblemInstance, z: &Vector) -> Result<Option<f64>> {
    match metrics::gap(problem, z) {
        Ok(g) => Ok(Some(g)),
        Err(Error::DomainUnbounded | Error::Unsupported(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub(crate) fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// Columns: `t, x0..x{d−1}, lambda, speed, gap_ergodic, residue_pointwise, dist, E`.
pub fn write_csv<W: Write>(traj: &Trajectory, problem: &ProblemInstance, out: &mut W) -> Result<()> {
    let d = problem.dim();
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("x{i}")));
    header.extend(["lambda", "speed", "gap_ergodic", "residue_pointwise", "dist", "E"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    let series = metric_series(traj, problem)?;
    for (i, s) in traj.samples.iter().enumerate() {
        let mut row = vec![fmt_float(s.t)];
        row.extend(s.x.iter().map(|&v| fmt_float(v)));
        row.push(fmt_float(s.lambda));
        row.push(fmt_float(s.speed()));
        row.push(fmt_opt(series.gap_ergodic[i]));
        row.push(fmt_float(series.residue[i]));
        row.push(fmt_opt(series.dist[i]));
        row.push(fmt_opt(series.energy[i]));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

const MONOTONE_RTOL: f64 = 1e-9;
const BOUND_RTOL: f64 = 1e-6;
const EXP_LOWER_RTOL: f64 = 1e-3;

/// Evaluates the trajectory-level invariants of the closed-loop system.
/// Entries needing a solution are skipped when the solution set is unknown.
pub fn check_flow_invariants(traj: &Trajectory, problem: &ProblemInstance, params: FeedbackParams) -> InvariantReport {
    let mut report = InvariantReport::new();
    let s = &traj.samples;
    let p = params.p;
    let theta = params.theta;

    let mut ae = InvariantEntry::new("flow: feedback law at samples");
    for st in s {
        ae.observe(FLOW_AE_TOL - law_residual(st, params));
    }
    report.push(ae);

    let mut nondec = InvariantEntry::new("flow: lambda nondecreasing");
    let mut growth = InvariantEntry::new("flow: lambda growth bound");
    let mut speed = InvariantEntry::new("flow: speed nonincreasing");
    for w in s.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        nondec.observe((b.lambda - a.lambda * (1.0 - MONOTONE_RTOL)) / a.lambda);
        let cap = a.lambda * ((p - 1) as f64 * (b.t - a.t)).exp() * (1.0 + BOUND_RTOL);
        growth.observe((cap - b.lambda) / a.lambda);
        let (va, vb) = (a.speed(), b.speed());
        speed.observe((va * (1.0 + MONOTONE_RTOL) + 1e-300 - vb) / va.max(f64::MIN_POSITIVE));
    }
    report.push(nondec);
    report.push(growth);
    report.push(speed);

    if p == 1 {
        let mut constant = InvariantEntry::new("flow: lambda constant for p = 1");
        for st in s {
            constant.observe(if st.lambda == theta { 0.0 } else { -(st.lambda - theta).abs() });
        }
        report.push(constant);
    } else {
        let mut lower = InvariantEntry::new("flow: speed exponential lower bound");
        let v0 = s[0].speed();
        for st in s {
            let floor = v0 * (-st.t).exp() * (1.0 - EXP_LOWER_RTOL);
            lower.observe((st.speed() - floor) / v0);
        }
        report.push(lower);
    }

    match problem.nearest_solution(&s[0].x) {
        Ok(z) => {
            let e0 = metrics::lyapunov(&s[0].x, &z);
            let mut desc = InvariantEntry::new("flow: Lyapunov descent");
            for w in s.windows(2) {
                let (ea, eb) = (metrics::lyapunov(&w[0].x, &z), metrics::lyapunov(&w[1].x, &z));
                desc.observe((ea * (1.0 + MONOTONE_RTOL) + 1e-300 - eb) / e0.max(f64::MIN_POSITIVE));
            }
            report.push(desc);

            let mut energy = InvariantEntry::new("flow: speed bounded by sqrt(E(0)/t)");
            let mut lam_lower = InvariantEntry::new("flow: lambda lower bound");
            for st in s.iter().filter(|st| st.t > 0.0) {
                let cap = e0 / st.t * (1.0 + BOUND_RTOL);
                energy.observe((cap - st.speed().powi(2)) / e0.max(f64::MIN_POSITIVE));
                let floor = theta * (st.t / e0).powf((p - 1) as f64 / 2.0) * (1.0 - BOUND_RTOL);
                lam_lower.observe((st.lambda - floor) / st.lambda);
            }
            report.push(energy);
            report.push(lam_lower);
        }
        Err(_) => {
            for name in ["flow: Lyapunov descent", "flow: speed bounded by sqrt(E(0)/t)", "flow: lambda lower bound"] {
                report.push(InvariantEntry::new(name).with_detail("skipped: solution set unknown"));
            }
        }
    }
    report
}
