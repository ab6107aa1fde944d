use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use monoflow::checks::{self, Suite};
use monoflow::config::ExperimentConfig;
use monoflow::experiment::{execute, write_outputs};
use monoflow::Error;

const CSV_HELP: &str = "\
CSV columns (floats written with 17 significant digits):
  flow:            t, x0..x{d-1}, lambda, speed, gap_ergodic, residue_pointwise, dist, E
  hpe_exact/tensor: k, lambda, norm_v, eps, step, gap_ergodic, residue_min_so_far, dist
Empty cells mean the metric is undefined for the problem (e.g. gap on an
unbounded domain, dist with an unknown solution set).

Exit codes: 0 success, 1 runtime failure or failed check, 2 configuration error.";

#[derive(Parser)]
#[command(name = "monoflow", version, about = "Closed-loop proximal dynamics for monotone inclusions", after_help = CSV_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment; writes a CSV trace and a JSON summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV path; the summary goes to the same path with a .json extension.
        /// Without it (and without `output` in the config) the CSV goes to
        /// stdout and the summary to stderr.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the randomized invariant suites.
    Check {
        /// all, core, problems, feedback, flow, hpe, tensor or metrics.
        #[arg(long, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = checks::DEFAULT_SEED)]
        seed: u64,
    },
    /// Run an experiment and compare fitted tail slopes with the rate exponents.
    Rates {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if out.is_some() {
        cfg.output = out;
    }
    Ok(cfg)
}

fn emit(exp: &monoflow::experiment::Experiment, summary: &impl serde::Serialize) -> Result<(), Error> {
    match &exp.config.output {
        Some(path) => {
            let json = write_outputs(exp, summary, path)?;
            println!("wrote {} and {}", path.display(), json.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            exp.write_csv(&mut lock)?;
            lock.flush()?;
            let json = serde_json::to_string_pretty(summary).map_err(|e| Error::Io(e.to_string()))?;
            eprintln!("{json}");
        }
    }
    Ok(())
}

fn cmd_run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<bool, Error> {
    let cfg = load(&config, seed, out)?;
    let exp = execute(&cfg)?;
    emit(&exp, &exp.summary()?)?;
    Ok(true)
}

fn cmd_check(suite: Suite, seed: u64) -> Result<bool, Error> {
    let mut ok = true;
    for (member, report) in checks::run(suite, seed)? {
        println!("== {member}");
        print!("{report}");
        ok &= report.all_passed();
    }
    println!("{}", if ok { "all invariants passed" } else { "some invariants FAILED" });
    Ok(ok)
}

#[derive(serde::Serialize)]
struct RatesOutput {
    summary: monoflow::experiment::RunSummary,
    rates: Vec<monoflow::experiment::RateCheck>,
}

fn cmd_rates(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<bool, Error> {
    let cfg = load(&config, seed, out)?;
    let exp = execute(&cfg)?;
    let rates = exp.rate_checks()?;
    let summary = exp.summary()?;
    println!("{} {} p = {} ({} steps, {})", summary.problem, summary.mode, summary.p, summary.steps, summary.status);
    for r in &rates {
        println!("{r}");
    }
    let ok = rates.iter().all(|r| r.passed);
    if let Some(path) = &exp.config.output {
        let json = write_outputs(&exp, &RatesOutput { summary, rates }, path)?;
        println!("wrote {} and {}", path.display(), json.display());
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => cmd_run(config, seed, out),
        Command::Check { suite, seed } => cmd_check(suite, seed),
        Command::Rates { config, seed, out } => cmd_rates(config, seed, out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
