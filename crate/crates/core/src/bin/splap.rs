use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use splap::experiment::{default_workers, parse_config_for, run_experiment, Experiment};

#[derive(Parser)]
#[command(
    name = "splap",
    version,
    about = "Convergence experiments for averaged stochastic p-Laplace schemes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output` (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Empirical vs theoretical covariance of the increment sampler.
    VerifyLaw(RunArgs),
    /// Linear problem with a closed-form reference.
    Explicit(RunArgs),
    /// Coarse-fine sweep for the nonlinear problem.
    Converge(RunArgs),
    /// Raw increment tables.
    SampleNoise(RunArgs),
    /// Built-in numerical checks; fails on any failed check.
    Selftest(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match cli.command {
        Command::VerifyLaw(a) => (Experiment::VerifyLaw, a),
        Command::Explicit(a) => (Experiment::Explicit, a),
        Command::Converge(a) => (Experiment::Converge, a),
        Command::SampleNoise(a) => (Experiment::SampleNoise, a),
        Command::Selftest(a) => (Experiment::SelfTest, a),
    };
    match run(experiment, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("splap: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(experiment: Experiment, args: RunArgs) -> splap::Result<bool> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| splap::Error::Io(format!("{}: {e}", args.config.display())))?;
    let mut cfg = parse_config_for(&text, Some(experiment))?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let dir = args
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let workers = default_workers();
    let start = Instant::now();
    let outcome = run_experiment(&cfg, workers)?;
    let path = outcome.write(&dir)?;
    eprintln!(
        "splap: {} finished in {:.1} s with {workers} worker(s); wrote {}",
        experiment,
        start.elapsed().as_secs_f64(),
        path.display()
    );
    if !outcome.passed {
        for r in outcome.rows.iter().filter(|r| r.scheme == "FAIL") {
            eprintln!("splap: check {} failed (value {})", r.metric, r.mean);
        }
    }
    Ok(outcome.passed)
}
