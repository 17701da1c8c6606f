//! Command-line front end: configuration ingestion, experiment
//! orchestration, and deterministic CSV/JSON emission.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
pub mod config;
mod output;

use config::ExperimentConfig;
use sleepscale::Policy;

#[derive(Debug, Parser)]
#[command(
    name = "sleepscale",
    version,
    about = "Stationary analysis, simulation, and policy optimization for a \
             single-server queue with setup times, on/off control, and \
             two-speed scaling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Evaluate the configured policy at one arrival rate
    Eval(CommonArgs),
    /// Find the minimum-cost policy at one arrival rate
    Optimize(CommonArgs),
    /// Optimize across an arrival-rate grid, one row per rate
    Sweep(CommonArgs),
    /// Locate the arrival rates where the optimal regime changes
    Thresholds(CommonArgs),
    /// Compare the best combined policy against single-mechanism bests
    Synergy(CommonArgs),
    /// Run the discrete-event simulator for the configured policy
    Simulate(CommonArgs),
    /// Run the built-in validation suite (oracles, balance invariants,
    /// simulator cross-validation); exits non-zero on any failure
    Validate(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Eval(a)
            | Command::Optimize(a)
            | Command::Sweep(a)
            | Command::Thresholds(a)
            | Command::Synergy(a)
            | Command::Simulate(a)
            | Command::Validate(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Path to the JSON experiment config
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,

    /// Arrival rate (overrides the config)
    #[arg(long, value_name = "X")]
    pub lambda: Option<f64>,

    /// Arrival-rate sweep range (overrides the config)
    #[arg(long, value_name = "LO:HI")]
    pub lambda_range: Option<String>,

    /// Sweep step or threshold bracket width (overrides the config)
    #[arg(long, value_name = "R")]
    pub resolution: Option<f64>,

    /// Write the artifact to this file instead of standard output
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Artifact format
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Simulation seed (overrides the config)
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,

    /// Worker threads for policy evaluation (defaults to available cores)
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,

    /// Synergy verdict threshold on the relative gain
    #[arg(long, value_name = "X")]
    pub smallness_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Errors split by exit code: usage problems exit 2, domain and I/O
/// failures exit 1.
#[derive(Debug)]
pub enum AppError {
    Usage(String),
    Domain(sleepscale::Error),
    Io(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Domain(_) | AppError::Io(_) => 1,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(msg) => write!(f, "{msg}"),
            AppError::Domain(e) => write!(f, "{e}"),
            AppError::Io(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<sleepscale::Error> for AppError {
    fn from(e: sleepscale::Error) -> AppError {
        AppError::Domain(e)
    }
}

/// Result of one subcommand: a human summary for standard output and the
/// machine artifact (CSV or JSON).
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub summary: String,
    pub artifact: String,
    pub exit_code: i32,
}

fn parse_range(args: &CommonArgs, config: &ExperimentConfig) -> Result<(f64, f64), AppError> {
    if let Some(raw) = &args.lambda_range {
        let (lo, hi) = raw.split_once(':').ok_or_else(|| {
            AppError::Usage(format!("--lambda-range: expected LO:HI, got {raw:?}"))
        })?;
        let lo: f64 = lo
            .parse()
            .map_err(|_| AppError::Usage(format!("--lambda-range: bad lower bound {lo:?}")))?;
        let hi: f64 = hi
            .parse()
            .map_err(|_| AppError::Usage(format!("--lambda-range: bad upper bound {hi:?}")))?;
        return Ok((lo, hi));
    }
    if let Some(range) = &config.lambda_range {
        return Ok((range.lo, range.hi));
    }
    Err(AppError::Usage(
        "--lambda-range is required (or set lambda_range in the config)".into(),
    ))
}

fn require_lambda(args: &CommonArgs, config: &ExperimentConfig) -> Result<f64, AppError> {
    args.lambda
        .or(config.lambda)
        .ok_or_else(|| AppError::Usage("--lambda is required (or set lambda in the config)".into()))
}

fn require_policy(config: &ExperimentConfig) -> Result<Policy, AppError> {
    config
        .policy
        .map(|p| p.to_policy())
        .ok_or_else(|| AppError::Usage("--config: this command needs a \"policy\" entry".into()))
}

/// Loads the config, applies flag overrides, and runs the subcommand.
pub fn execute(command: &Command) -> Result<Execution, AppError> {
    let args = command.args();
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| AppError::Usage(format!("--config {}: {e}", args.config.display())))?;
    let config = ExperimentConfig::parse(&text)?;
    let format = args.format;

    match command {
        Command::Eval(args) => {
            let lambda = require_lambda(args, &config)?;
            commands::eval(&config, lambda, require_policy(&config)?, format)
        }
        Command::Optimize(args) => {
            let lambda = require_lambda(args, &config)?;
            commands::run_optimize(&config, lambda, format)
        }
        Command::Sweep(args) => {
            let range = parse_range(args, &config)?;
            let step = args.resolution.or(config.resolution).unwrap_or(0.05);
            commands::sweep(&config, range, step, format)
        }
        Command::Thresholds(args) => {
            let range = parse_range(args, &config)?;
            let resolution = args.resolution.or(config.resolution).unwrap_or(1e-3);
            commands::thresholds(&config, range, resolution, format)
        }
        Command::Synergy(args) => {
            let range = parse_range(args, &config)?;
            let step = args.resolution.or(config.resolution).unwrap_or(0.05);
            let smallness = args
                .smallness_threshold
                .unwrap_or_else(|| config.smallness_threshold());
            commands::synergy(&config, range, step, smallness, format)
        }
        Command::Simulate(args) => {
            let lambda = require_lambda(args, &config)?;
            let seed = args.seed.unwrap_or(config.sim.seed);
            commands::run_simulate(&config, lambda, require_policy(&config)?, seed, format)
        }
        Command::Validate(_) => commands::validate(&config, format),
    }
}

/// Executes the command inside a worker pool sized by `--jobs`, prints the
/// summary, and writes the artifact to `--out` (or standard output).
/// Returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32, AppError> {
    let args = cli.command.args().clone();
    let execution = match args.jobs {
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| AppError::Usage(format!("--jobs: {e}")))?;
            pool.install(|| execute(&cli.command))?
        }
        None => execute(&cli.command)?,
    };

    println!("{}", execution.summary);
    match &args.out {
        Some(path) => std::fs::write(path, execution.artifact.as_bytes())
            .map_err(|e| AppError::Io(format!("--out {}: {e}", path.display())))?,
        None => print!("{}", execution.artifact),
    }
    Ok(execution.exit_code)
}
