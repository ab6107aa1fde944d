//! Randomized property suites behind `monoflow check`.
//!
//! Each suite is sequential and seeded, so its report is a pure function of
//! the seed. `Suite::All` runs the suites on a rayon pool whose size is
//! capped by `MONOFLOW_THREADS`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feedback::{gamma, phi, solve_lambda, FeedbackParams, AE_TOL};
use crate::flow::{self, FlowOptions};
use crate::hpe::{self, ExactOracle, HpeConfig};
use crate::metrics;
use crate::operator::{eps_enlargement_check, resolvent, taylor_surrogate, Matrix, OperatorSpec, Vector};
use crate::problems::{zoo, ProblemInstance, SolutionSet};
use crate::report::{InvariantEntry, InvariantReport};
use crate::tensor::{self, admissible_lipschitz, TensorConfig, TensorOracle};

pub const DEFAULT_SEED: u64 = 20240917;
pub const THREADS_ENV: &str = "MONOFLOW_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    All,
    Core,
    Problems,
    Feedback,
    Flow,
    Hpe,
    Tensor,
    Metrics,
}

impl Suite {
    pub const MEMBERS: [Suite; 7] =
        [Suite::Core, Suite::Problems, Suite::Feedback, Suite::Flow, Suite::Hpe, Suite::Tensor, Suite::Metrics];

    pub fn name(self) -> &'static str {
        match self {
            Suite::All => "all",
            Suite::Core => "core",
            Suite::Problems => "problems",
            Suite::Feedback => "feedback",
            Suite::Flow => "flow",
            Suite::Hpe => "hpe",
            Suite::Tensor => "tensor",
            Suite::Metrics => "metrics",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        std::iter::once(Suite::All)
            .chain(Suite::MEMBERS)
            .find(|m| m.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown suite {s:?}")))
    }
}

/// Thread count from `MONOFLOW_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs `suite` (or every member for `All`) and returns one report per
/// member suite, in a fixed order.
pub fn run(suite: Suite, seed: u64) -> Result<Vec<(Suite, InvariantReport)>> {
    let members: Vec<Suite> = match suite {
        Suite::All => Suite::MEMBERS.to_vec(),
        s => vec![s],
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| members.par_iter().map(|&s| run_member(s, seed).map(|r| (s, r))).collect())
}

fn suite_rng(suite: Suite, seed: u64) -> ChaCha8Rng {
    let salt = Suite::MEMBERS.iter().position(|&m| m == suite).unwrap_or(0) as u64;
    ChaCha8Rng::seed_from_u64(seed ^ (salt + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn run_member(suite: Suite, seed: u64) -> Result<InvariantReport> {
    let mut rng = suite_rng(suite, seed);
    match suite {
        Suite::Core => core_suite(&mut rng),
        Suite::Problems => problems_suite(seed),
        Suite::Feedback => feedback_suite(&mut rng),
        Suite::Flow => flow_suite(&mut rng),
        Suite::Hpe => hpe_suite(&mut rng),
        Suite::Tensor => tensor_suite(&mut rng),
        Suite::Metrics => metrics_suite(&mut rng),
        Suite::All => unreachable!("expanded by run"),
    }
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vector {
    Vector::from_fn(d, |_, _| rng.gen_range(-radius..radius))
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.gen_range(lo..hi))
}

fn random_domain_point(rng: &mut ChaCha8Rng, problem: &ProblemInstance) -> Result<Vector> {
    problem.operator.project_domain(&random_vector(rng, problem.dim(), 1.2))
}

/// Starting point away from the solution set.
fn start_point(rng: &mut ChaCha8Rng, problem: &ProblemInstance) -> Result<Vector> {
    loop {
        let x = random_domain_point(rng, problem)?;
        if problem.operator.residue(&x)?.is_some_and(|r| r > 1e-3) {
            return Ok(x);
        }
    }
}

fn record_error(report: &mut InvariantReport, name: &str, what: &str, e: Error) {
    let mut entry = InvariantEntry::new(name);
    entry.fail(format!("{what}: {e}"));
    report.push(entry);
}

fn core_suite(rng: &mut ChaCha8Rng) -> Result<InvariantReport> {
    let problems = zoo()?;
    let mut nonexp = InvariantEntry::new("core: resolvent nonexpansive");
    let mut cert = InvariantEntry::new("core: resolvent certificate");
    let mut mono = InvariantEntry::new("core: monotonicity spot check");
    let mut enl = InvariantEntry::new("core: exact pair admitted by enlargement check");
    let mut taylor = InvariantEntry::new("core: Taylor remainder bound");
    for problem in &problems {
        let op = &problem.operator;
        let d = problem.dim();
        for _ in 0..40 {
            let x1 = random_vector(rng, d, 2.0);
            let x2 = random_vector(rng, d, 2.0);
            let lambda = log_uniform(rng, -2.0, 2.0);
            let r1 = resolvent(op, lambda, &x1)?;
            let r2 = resolvent(op, lambda, &x2)?;
            nonexp.observe((&x1 - &x2).norm() + 2e-10 * (1.0 + x1.norm().max(x2.norm())) - (&r1.y - &r2.y).norm());
            for (x, r) in [(&x1, &r1), (&x2, &r2)] {
                cert.observe(1e-10 * 1f64.max((&r.y - x).norm()) - r.residual);
            }
            let (z1, z2) = (random_domain_point(rng, problem)?, random_domain_point(rng, problem)?);
            let (f1, f2) = (op.eval_single_valued(&z1)?, op.eval_single_valued(&z2)?);
            mono.observe((f1 - f2).dot(&(&z1 - &z2)) + 1e-12);
        }
        for k in 0..5 {
            let x = random_vector(rng, d, 1.5);
            let r = resolvent(op, log_uniform(rng, -1.0, 1.0), &x)?;
            let verdict = eps_enlargement_check(op, &r.y, &r.v, 0.0, 16, k)?;
            enl.observe(verdict.worst_margin + 1e-8 * (1.0 + r.v.norm()));
        }
        // Taylor remainder for every order the problem's class covers.
        for p in 1..=3 {
            let Some(l) = admissible_lipschitz(problem, p) else { continue };
            let fact: f64 = (1..=p).map(|i| i as f64).product();
            for _ in 0..20 {
                let a = random_domain_point(rng, problem)?;
                let u = random_domain_point(rng, problem)?;
                let err = (op.eval_single_valued(&u)? - taylor_surrogate(op, &a, p, &u)?).norm();
                let bound = l / fact * (&u - &a).norm().powi(p as i32);
                taylor.observe(bound * (1.0 + 1e-9) + 1e-12 - err);
            }
        }
    }
    let mut report = InvariantReport::new();
    for e in [nonexp, cert, mono, enl, taylor] {
        report.push(e);
    }
    Ok(report)
}

fn problems_suite(seed: u64) -> Result<InvariantReport> {
    let mut report = InvariantReport::new();
    for (i, problem) in zoo()?.iter().enumerate() {
        let mut entry = InvariantEntry::new("problems: solution residue, monotonicity and error bound");
        match problem.validate(200, seed.wrapping_add(i as u64)) {
            Ok(worst) => entry.observe(-worst),
            Err(e) => entry.fail(format!("{}: {e}", problem.name)),
        }
        let mut merged = InvariantReport::new();
        merged.push(entry);
        report.merge(merged);
    }
    Ok(report)
}

fn feedback_suite(rng: &mut ChaCha8Rng) -> Result<InvariantReport> {
    let problems = zoo()?;
    let mut lower = InvariantEntry::new("feedback: phi sandwich lower");
    let mut upper = InvariantEntry::new("feedback: phi sandwich upper");
    let mut lip = InvariantEntry::new("feedback: phi Lipschitz in x");
    let mut consistent = InvariantEntry::new("feedback: solve_lambda consistency");
    let mut gamma_lip = InvariantEntry::new("feedback: Gamma Lipschitz constant");
    let pick = |rng: &mut ChaCha8Rng| problems[rng.gen_range(0..problems.len())].clone();
    let nonstationary = |rng: &mut ChaCha8Rng, problem: &ProblemInstance| -> Result<Vector> {
        loop {
            let x = random_vector(rng, problem.dim(), 2.0);
            let y = resolvent(&problem.operator, 1.0, &x)?.y;
            if (&x - &y).norm() > 1e-6 {
                return Ok(x);
            }
        }
    };

    for _ in 0..100 {
        let problem = pick(rng);
        let op = &problem.operator;
        let p = rng.gen_range(2..=4usize);
        let e = 1.0 / (p as f64 - 1.0);
        let x = nonstationary(rng, &problem)?;
        let l1 = log_uniform(rng, -2.0, 1.0);
        let l2 = l1 * log_uniform(rng, 0.0, 1.5);
        let (f1, f2) = (phi(op, l1, &x, p)?, phi(op, l2, &x, p)?);
        let ratio = l2 / l1;
        let tol = 1e-8 * (f1 + f2) + 1e-12;
        lower.observe(f2 - ratio.powf(e) * f1 + tol);
        upper.observe(ratio.powf(p as f64 * e) * f1 + tol - f2);

        let x2 = &x + random_vector(rng, problem.dim(), 1.0) * log_uniform(rng, -3.0, 0.0);
        let g1 = phi(op, l1, &x2, p)?;
        lip.observe(l1.powf(e) * (&x - &x2).norm() + 1e-8 * (f1 + g1) + 1e-12 - (f1 - g1).abs());

        let params = FeedbackParams::new(rng.gen_range(0.05..0.95), p)?;
        let lambda = solve_lambda(op, &x, params, None)?;
        let target = params.theta.powf(e);
        consistent.observe(AE_TOL * (1.0 + 1e-3) - (phi(op, lambda, &x, p)? / target - 1.0).abs());
    }

    for _ in 0..1000 {
        let problem = pick(rng);
        let p = rng.gen_range(2..=3usize);
        let params = FeedbackParams::new(rng.gen_range(0.05..0.95), p)?;
        let x1 = nonstationary(rng, &problem)?;
        let x2 = &x1 + random_vector(rng, problem.dim(), 1.0) * log_uniform(rng, -2.0, 0.0);
        let (g1, g2) = match (gamma(&problem.operator, &x1, params), gamma(&problem.operator, &x2, params)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(Error::Stationary { .. }), _) | (_, Err(Error::Stationary { .. })) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let bound = params.theta.powf(-1.0 / (p as f64 - 1.0));
        gamma_lip.observe(bound + 1e-6 - (g1 - g2).abs() / (&x1 - &x2).norm());
    }

    let mut report = InvariantReport::new();
    for e in [lower, upper, lip, consistent, gamma_lip] {
        report.push(e);
    }
    Ok(report)
}

fn identity_problem(d: usize) -> Result<ProblemInstance> {
    let op = OperatorSpec::builder(d).affine(Matrix::identity(d, d), Vector::zeros(d)).build()?;
    ProblemInstance::new("identity", op, SolutionSet::Singleton(Vector::zeros(d)), None)
}

fn scaled_identity_problem(d: usize, mu: f64) -> Result<ProblemInstance> {
    let op = OperatorSpec::builder(d).affine(Matrix::identity(d, d) * mu, Vector::zeros(d)).build()?;
    ProblemInstance::new("scaled_identity", op, SolutionSet::Singleton(Vector::zeros(d)), None)
}

fn flow_suite(rng: &mut ChaCha8Rng) -> Result<InvariantReport> {
    let mut report = InvariantReport::new();

    let mut closed = InvariantEntry::new("flow: identity closed form at t = 1");
    for theta in [0.25, 0.5, 0.9] {
        let problem = identity_problem(1)?;
        let traj = flow::integrate(&problem, &Vector::from_element(1, 1.0), FeedbackParams::new(theta, 1)?, 1.0, 1e-3)?;
        let exact = (-theta / (1.0 + theta)).exp();
        closed.observe(1e-6 - (traj.last().x[0] - exact).abs());
    }
    report.push(closed);

    let mut problems = zoo()?;
    problems.push(identity_problem(2)?);
    for problem in &problems {
        for p in 1..=3 {
            let params = FeedbackParams::new(0.5, p)?;
            let x0 = start_point(rng, problem)?;
            let opts = FlowOptions { sample_stride: 5 };
            match flow::integrate_with(problem, &x0, params, 10.0, 0.01, opts) {
                Ok(traj) => report.merge(flow::check_flow_invariants(&traj, problem, params)),
                Err(e) => record_error(&mut report, "flow: integration", &format!("{} p = {p}", problem.name), e),
            }
        }
    }
    Ok(report)
}

fn hpe_suite(rng: &mut ChaCha8Rng) -> Result<InvariantReport> {
    let mut report = InvariantReport::new();
    for problem in &zoo()? {
        for p in 1..=3 {
            let cfg = HpeConfig::new(0.0, 0.5, p, 300)?;
            let x0 = start_point(rng, problem)?;
            let mut oracle = ExactOracle::new(&cfg)?;
            let run = match hpe::run(problem, &mut oracle, &cfg, &x0) {
                Ok(r) => r,
                Err(e) => {
                    record_error(&mut report, "hpe: run", &format!("{} p = {p}", problem.name), e);
                    continue;
                }
            };
            match hpe::check_discrete_lemmas(&run, problem, &cfg) {
                Ok(r) => report.merge(r),
                Err(Error::UnknownSolution) => {
                    let mut e = InvariantEntry::new("hpe: certificates without known solution");
                    for r in &run.records {
                        e.observe(r.cert.relative_error_margin.min(r.cert.large_step_margin));
                    }
                    let mut r = InvariantReport::new();
                    r.push(e);
                    report.merge(r);
                }
                Err(e) => return Err(e),
            }
        }
    }

    // Proximal point on F = μI contracts by exactly 1/(1 + θμ).
    let mut ppa = InvariantEntry::new("hpe: proximal contraction on scaled identity");
    for (mu, theta) in [(1.0, 0.5), (2.0, 0.3), (0.5, 0.9)] {
        let problem = scaled_identity_problem(3, mu)?;
        let cfg = HpeConfig::new(0.0, theta, 1, 40)?;
        let x0 = random_vector(rng, 3, 1.0);
        let run = hpe::run(&problem, &mut ExactOracle::new(&cfg)?, &cfg, &x0)?;
        let factor = 1.0 / (1.0 + theta * mu);
        for r in &run.records {
            ppa.observe(1e-8 - (r.x_next.norm() / r.x_prev.norm() - factor).abs());
        }
    }
    report.push(ppa);
    Ok(report)
}

/// Tensor configuration for order `p` on `problem`, if the class allows it.
pub fn tensor_config_for(problem: &ProblemInstance, p: usize) -> Option<TensorConfig> {
    if p >= 3 && problem.dim() > tensor::MAX_HIGH_ORDER_DIM {
        return None;
    }
    let l = admissible_lipschitz(problem, p)?;
    TensorConfig::new(0.1, 0.2, 0.5, l, p).ok()
}

fn tensor_suite(rng: &mut ChaCha8Rng) -> Result<InvariantReport> {
    let mut report = InvariantReport::new();
    for problem in &zoo()? {
        for p in 1..=3 {
            let Some(tcfg) = tensor_config_for(problem, p) else { continue };
            let hcfg = tcfg.hpe_config(200)?;
            let x0 = start_point(rng, problem)?;
            let mut oracle = TensorOracle::new(tcfg)?;
            let run = match hpe::run(problem, &mut oracle, &hcfg, &x0) {
                Ok(r) => r,
                Err(e) => {
                    record_error(&mut report, "tensor: run", &format!("{} p = {p}", problem.name), e);
                    continue;
                }
            };
            let steps: Vec<_> = run
                .records
                .iter()
                .map(|r| {
                    let step = hpe::OracleStep { lambda: r.lambda, y: r.y.clone(), v: r.v.clone(), eps: r.eps };
                    (r.x_prev.clone(), step)
                })
                .collect();
            report.merge(tensor::check_tensor_steps(&steps, &oracle.log, &tcfg)?);
            match hpe::check_discrete_lemmas(&run, problem, &hcfg) {
                Ok(r) => report.merge(r),
                Err(Error::UnknownSolution) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(report)
}

fn metrics_suite(rng: &mut ChaCha8Rng) -> Result<InvariantReport> {
    let mut sup = InvariantEntry::new("metrics: gap dominates sampled objective");
    let mut zero = InvariantEntry::new("metrics: gap vanishes on solutions");
    let mut convex = InvariantEntry::new("metrics: gap convexity");
    let mut res_v = InvariantEntry::new("metrics: residue below oracle v");
    for problem in zoo()?.iter() {
        let op = &problem.operator;
        if problem.domain_bounded {
            if let SolutionSet::Singleton(z) = &problem.solution_set {
                zero.observe(1e-8 - metrics::gap(problem, z)?);
            }
            for _ in 0..20 {
                let x1 = random_domain_point(rng, problem)?;
                let x2 = random_domain_point(rng, problem)?;
                let (g1, g2) = (metrics::gap(problem, &x1)?, metrics::gap(problem, &x2)?);
                let mid = metrics::gap(problem, &((&x1 + &x2) * 0.5))?;
                convex.observe(0.5 * (g1 + g2) + 1e-8 - mid);
                for _ in 0..5 {
                    let z = random_domain_point(rng, problem)?;
                    let objective = op.eval_single_valued(&z)?.dot(&(&x1 - &z));
                    sup.observe(g1 + 1e-10 - objective);
                }
            }
        }
        for _ in 0..20 {
            let x = random_vector(rng, problem.dim(), 2.0);
            let r = resolvent(op, log_uniform(rng, -1.0, 1.0), &x)?;
            res_v.observe(r.v.norm() + 1e-8 - metrics::residue(problem, &r.y)?);
        }
    }
    let mut fit = InvariantEntry::new("metrics: slope of exact power law");
    let series: Vec<(f64, f64)> = (1..=200).map(|k| (k as f64, (k as f64).powf(-1.5))).collect();
    fit.observe(1e-12 - (metrics::fit_rate(&series, 0.5)?.slope + 1.5).abs());
    let mut report = InvariantReport::new();
    for e in [sup, zero, convex, res_v, fit] {
        report.push(e);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        assert_eq!("ALL".parse::<Suite>().unwrap(), Suite::All);
        assert_eq!("Feedback".parse::<Suite>().unwrap(), Suite::Feedback);
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn single_suite_is_deterministic() {
        let a = run(Suite::Metrics, 5).unwrap();
        let b = run(Suite::Metrics, 5).unwrap();
        assert_eq!(a, b);
        assert!(a[0].1.all_passed(), "{}", a[0].1);
    }

    #[test]
    fn tensor_configs_follow_smoothness_class() {
        let cubic = crate::problems::make_cubic_1d().unwrap();
        assert!(tensor_config_for(&cubic, 2).is_none());
        assert_eq!(tensor_config_for(&cubic, 3).unwrap().lipschitz, 6.0);
        let big = crate::problems::make_convex_gradient(6).unwrap();
        assert!(tensor_config_for(&big, 3).is_none());
    }
}
