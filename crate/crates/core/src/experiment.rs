//! Config-driven runs: trace, summary and rate checks.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, MethodSpec};
use crate::error::{Error, Result};
use crate::flow::{self, FlowOptions, FlowStatus, Trajectory};
use crate::hpe::{self, ExactOracle, HpeRun, HpeStatus, OracleStep};
use crate::metrics::{self, fit_rate};
use crate::operator::Vector;
use crate::problems::{ProblemInstance, SolutionSet};
use crate::report::InvariantReport;
use crate::tensor::{check_tensor_steps, TensorOracle, TensorStepInfo};

/// Slack added to the theoretical exponents by [`Experiment::rate_checks`].
pub const RATE_SLACK: f64 = 0.2;

#[derive(Debug, Clone)]
pub enum Outcome {
    Flow(Trajectory),
    Hpe { run: HpeRun, tensor_log: Option<Vec<TensorStepInfo>> },
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: ProblemInstance,
    pub x0: Vector,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub problem: String,
    pub mode: String,
    pub p: usize,
    pub seed: u64,
    pub dim: usize,
    /// RK4 steps or framework iterations.
    pub steps: usize,
    pub status: String,
    pub final_gap: Option<f64>,
    pub final_residue: Option<f64>,
    pub final_dist: Option<f64>,
    pub gap_slope: Option<f64>,
    pub residue_slope: Option<f64>,
    pub certificates_passed: usize,
    pub certificates_total: usize,
    pub invariants: InvariantReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCheck {
    pub metric: String,
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
    pub threshold: f64,
    pub passed: bool,
    pub note: String,
}

impl std::fmt::Display for RateCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        match self.slope {
            Some(s) => write!(f, "[{tag}] {} slope {s:.4} (threshold {:.2}) {}", self.metric, self.threshold, self.note),
            None => write!(f, "[{tag}] {} no fit: {}", self.metric, self.note),
        }
    }
}

/// Configured `x0`, or a seeded draw from `[−0.9, 0.9]^d` projected onto the
/// domain.
pub fn initial_point(cfg: &ExperimentConfig, problem: &ProblemInstance) -> Result<Vector> {
    if let Some(x0) = &cfg.x0 {
        return Ok(Vector::from_column_slice(x0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let raw = Vector::from_fn(problem.dim(), |_, _| rng.gen_range(-0.9..0.9));
    problem.operator.project_domain(&raw)
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    let x0 = initial_point(cfg, &problem)?;
    let outcome = match &cfg.method {
        MethodSpec::Flow { horizon, step, sample_stride, .. } => {
            let params = cfg.method.feedback_params().expect("flow method");
            let opts = FlowOptions { sample_stride: *sample_stride };
            Outcome::Flow(flow::integrate_with(&problem, &x0, params, *horizon, *step, opts)?)
        }
        MethodSpec::HpeExact { .. } => {
            let hcfg = cfg.method.hpe_config().expect("hpe method");
            let mut oracle = ExactOracle::new(&hcfg)?;
            Outcome::Hpe { run: hpe::run(&problem, &mut oracle, &hcfg, &x0)?, tensor_log: None }
        }
        MethodSpec::Tensor { .. } => {
            let hcfg = cfg.method.hpe_config().expect("tensor method");
            let mut oracle = TensorOracle::new(cfg.method.tensor_config().expect("tensor method"))?;
            let run = hpe::run(&problem, &mut oracle, &hcfg, &x0)?;
            Outcome::Hpe { run, tensor_log: Some(oracle.log) }
        }
    };
    Ok(Experiment { config: cfg.clone(), problem, x0, outcome })
}

fn oracle_steps(run: &HpeRun) -> Vec<(Vector, OracleStep)> {
    run.records
        .iter()
        .map(|r| (r.x_prev.clone(), OracleStep { lambda: r.lambda, y: r.y.clone(), v: r.v.clone(), eps: r.eps }))
        .collect()
}

/// Metric series as `(index, value)` pairs for the slope fits.
struct Series {
    gap: Vec<(f64, f64)>,
    residue: Vec<(f64, f64)>,
    residue_label: &'static str,
    final_gap: Option<f64>,
    final_residue: Option<f64>,
    final_dist: Option<f64>,
}

impl Experiment {
    pub fn p(&self) -> usize {
        self.config.method.order()
    }

    fn series(&self) -> Result<Series> {
        match &self.outcome {
            Outcome::Flow(traj) => {
                let s = flow::metric_series(traj, &self.problem)?;
                let gap: Vec<_> = s.t.iter().zip(&s.gap_ergodic).filter_map(|(t, g)| g.map(|g| (*t, g))).collect();
                let residue: Vec<_> = s.t.iter().copied().zip(s.residue.iter().copied()).collect();
                Ok(Series {
                    final_gap: s.gap_ergodic.last().copied().flatten(),
                    final_residue: s.residue.last().copied(),
                    final_dist: s.dist.last().copied().flatten(),
                    gap,
                    residue,
                    residue_label: "pointwise residue",
                })
            }
            Outcome::Hpe { run, .. } => {
                let s = hpe::metric_series(run, &self.problem)?;
                let k = s.k.iter().map(|&k| k as f64);
                let gap: Vec<_> = k.clone().zip(&s.gap_ergodic).filter_map(|(k, g)| g.map(|g| (k, g))).collect();
                let residue: Vec<_> = k.zip(s.residue_min.iter().copied()).collect();
                let final_dist = match s.dist.last() {
                    Some(d) => *d,
                    None => metrics::dist_to_solutions(&self.problem, &self.x0).ok(),
                };
                Ok(Series {
                    final_gap: s.gap_ergodic.last().copied().flatten(),
                    final_residue: s.residue_min.last().copied(),
                    final_dist,
                    gap,
                    residue,
                    residue_label: "min-so-far residue",
                })
            }
        }
    }

    pub fn invariants(&self) -> Result<InvariantReport> {
        match &self.outcome {
            Outcome::Flow(traj) => {
                let params = self.config.method.feedback_params().expect("flow method");
                Ok(flow::check_flow_invariants(traj, &self.problem, params))
            }
            Outcome::Hpe { run, tensor_log } => {
                let hcfg = self.config.method.hpe_config().expect("hpe method");
                let mut report = match hpe::check_discrete_lemmas(run, &self.problem, &hcfg) {
                    Ok(r) => r,
                    Err(Error::UnknownSolution) => InvariantReport::default(),
                    Err(e) => return Err(e),
                };
                if let Some(log) = tensor_log {
                    let tcfg = self.config.method.tensor_config().expect("tensor method");
                    report.extend(check_tensor_steps(&oracle_steps(run), log, &tcfg)?);
                }
                Ok(report)
            }
        }
    }

    pub fn summary(&self) -> Result<RunSummary> {
        let s = self.series()?;
        let tail = self.config.rates.tail_fraction;
        let (steps, status, passed, total) = match &self.outcome {
            Outcome::Flow(traj) => {
                let status = match traj.status {
                    FlowStatus::Completed => "completed",
                    FlowStatus::Stationary => "stationary",
                };
                (traj.steps, status, 0, 0)
            }
            Outcome::Hpe { run, .. } => {
                let status = match run.status {
                    HpeStatus::Solved => "solved",
                    HpeStatus::MaxIters => "max_iters",
                    HpeStatus::PrecisionFloor => "precision_floor",
                };
                let passed = run.records.iter().filter(|r| r.cert.passed()).count();
                (run.records.len(), status, passed, run.records.len())
            }
        };
        Ok(RunSummary {
            problem: self.problem.name.clone(),
            mode: self.config.method.mode_name().to_string(),
            p: self.p(),
            seed: self.config.seed,
            dim: self.problem.dim(),
            steps,
            status: status.to_string(),
            final_gap: s.final_gap,
            final_residue: s.final_residue,
            final_dist: s.final_dist,
            gap_slope: fit_rate(&s.gap, tail).ok().map(|f| f.slope),
            residue_slope: fit_rate(&s.residue, tail).ok().map(|f| f.slope),
            certificates_passed: passed,
            certificates_total: total,
            invariants: self.invariants()?,
        })
    }

    /// Fitted tail slopes of the ergodic gap and the residue against
    /// `−(p+1)/2 + RATE_SLACK` and `−p/2 + RATE_SLACK`.
    pub fn rate_checks(&self) -> Result<Vec<RateCheck>> {
        if matches!(self.problem.solution_set, SolutionSet::Unknown) || !self.problem.domain_bounded {
            return Err(Error::Config(format!(
                "rates need a bounded-domain problem with a known solution; {} is not",
                self.problem.name
            )));
        }
        let s = self.series()?;
        let p = self.p() as f64;
        let tail = self.config.rates.tail_fraction;
        let check = |metric: &str, series: &[(f64, f64)], threshold: f64| match fit_rate(series, tail) {
            Ok(f) => RateCheck {
                metric: metric.to_string(),
                slope: Some(f.slope),
                r_squared: Some(f.r_squared),
                threshold,
                passed: f.slope <= threshold,
                note: format!("R² {:.3}, window [{}, {}], {} dropped", f.r_squared, f.window.0, f.window.1, f.dropped),
            },
            Err(e) => RateCheck {
                metric: metric.to_string(),
                slope: None,
                r_squared: None,
                threshold,
                passed: false,
                note: e.to_string(),
            },
        };
        Ok(vec![
            check("ergodic gap", &s.gap, -(p + 1.0) / 2.0 + RATE_SLACK),
            check(s.residue_label, &s.residue, -p / 2.0 + RATE_SLACK),
        ])
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        match &self.outcome {
            Outcome::Flow(traj) => flow::write_csv(traj, &self.problem, out),
            Outcome::Hpe { run, .. } => hpe::write_csv(run, &self.problem, out),
        }
    }
}

/// `out.csv` → `out.json`.
pub fn summary_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes the CSV trace to `csv` and the JSON summary next to it.
pub fn write_outputs(exp: &Experiment, summary: &impl Serialize, csv: &Path) -> Result<PathBuf> {
    if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(csv)?);
    exp.write_csv(&mut w)?;
    w.flush()?;
    let json_path = summary_path(csv);
    let json = serde_json::to_string_pretty(summary).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(&json_path, json + "\n")?;
    Ok(json_path)
}
