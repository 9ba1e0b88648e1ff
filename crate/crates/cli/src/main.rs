//! fleetidx: allocate human operators across a fleet of semi-autonomous
//! robots. The binary drives the full pipeline from the command line:
//! scenario generation, indexability certification, Whittle index tables,
//! Monte Carlo policy comparison, and decision-latency benchmarks.

mod commands;
mod schema;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: u8 = 0;
/// Malformed input: unreadable or invalid files, bad flag values, models
/// that fail validation.
pub const EXIT_INPUT: u8 = 2;
/// The scenario is not certified indexable.
pub const EXIT_NOT_INDEXABLE: u8 = 3;
/// The greedy solver and the bisection oracle disagree.
pub const EXIT_ORACLE_MISMATCH: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "fleetidx",
    version,
    about = "Whittle-index operator allocation for fleets of semi-autonomous robots"
)]
struct Cli {
    /// Worker threads for parallel rollouts (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a random scenario from the two bounded task families.
    Generate(GenerateArgs),
    /// Certify that every robot's arm is indexable.
    Check(CheckArgs),
    /// Compute Whittle index tables for every robot.
    Solve(SolveArgs),
    /// Roll out allocation policies and report discounted costs.
    Simulate(SimulateArgs),
    /// Measure precompute and per-decision latency for each policy.
    Bench(BenchArgs),
}

/// Which indexability verifier to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Closed-form sufficient conditions only; fast, can only certify.
    Theorem,
    /// Penalty-sweep monotonicity check only; slower, decisive either way.
    Numeric,
    /// Both. The sweep decides; disagreements are flagged.
    Both,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Theorem => "theorem",
            Method::Numeric => "numeric",
            Method::Both => "both",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator configuration JSON; explicit flags override its fields.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Fleet size K (default 4).
    #[arg(long, value_name = "K")]
    pub robots: Option<usize>,

    /// Operator count M (default 2).
    #[arg(long, value_name = "M")]
    pub operators: Option<usize>,

    /// Tasks per robot (default 7).
    #[arg(long, value_name = "N")]
    pub waypoints: Option<usize>,

    /// Fraction of tasks drawn from the continuation family; the rest are
    /// reset tasks (default 0.5).
    #[arg(long, value_name = "FRACTION")]
    pub zone_mix: Option<f64>,

    /// Discount factor (default 0.99).
    #[arg(long)]
    pub gamma: Option<f64>,

    /// Master seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,

    /// Scenario JSON output path.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Scenario JSON to verify.
    pub scenario: PathBuf,

    /// Verifier to run.
    #[arg(long, value_enum, default_value = "both")]
    pub method: Method,

    /// Verdict JSON path; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Scenario JSON to solve.
    pub scenario: PathBuf,

    /// Index tables JSON output path.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,

    /// Emit tables even when indexability verification fails.
    #[arg(long)]
    pub force: bool,

    /// Cross-check every index against the independent bisection solver.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON to roll out.
    pub scenario: PathBuf,

    /// Comma-separated policies to compare: whittle, optimal, reactive,
    /// myopic1, myopic2, benefit.
    #[arg(long, default_value = "whittle,benefit,reactive,myopic1")]
    pub policies: String,

    /// Rollouts per policy.
    #[arg(long, default_value_t = fleetidx_core::sim::DEFAULT_ITERATIONS)]
    pub iterations: usize,

    /// Per-rollout wall-clock budget in seconds; 0 disables the timeout.
    #[arg(long, default_value_t = 10.0, value_name = "SECONDS")]
    pub timeout: f64,

    /// Give each policy its own environment noise instead of paired draws.
    #[arg(long)]
    pub independent_noise: bool,

    /// Override the scenario's embedded seed for the rollout streams.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Report JSON path; the CSV copy lands next to it with extension csv.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Scenario JSON to benchmark on.
    pub scenario: PathBuf,

    /// Comma-separated policies to time.
    #[arg(long, default_value = "whittle,benefit,reactive,myopic1,myopic2")]
    pub policies: String,

    /// Timed decision calls per policy.
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,

    /// Override the scenario's embedded seed for the probe states.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Report JSON path; the CSV copy lands next to it with extension csv.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: building the thread pool: {err}");
            return ExitCode::from(EXIT_INPUT);
        }
    }

    let result = match &cli.command {
        Command::Generate(args) => commands::generate(args),
        Command::Check(args) => commands::check(args),
        Command::Solve(args) => commands::solve(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Bench(args) => commands::bench(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// Map bubbled errors to documented exit codes. An indexability refusal
/// from the core keeps its dedicated code; everything else is bad input.
fn classify(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<fleetidx_core::Error>() {
        Some(fleetidx_core::Error::NotIndexable { .. }) => EXIT_NOT_INDEXABLE,
        _ => EXIT_INPUT,
    }
}
