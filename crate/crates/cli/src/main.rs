use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tdvr_harness::{run_experiment, ExperimentConfig, ExperimentKind, Overrides};

/// Variance-reduced TD experiments.
#[derive(Parser, Debug)]
#[command(name = "tdvr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Structural inequalities on random ergodic instances.
    Lemmas(Flags),
    /// Exact-operator runs against the oracle lower bound.
    OracleLb(Flags),
    /// Error versus discount on the two-state family.
    SweepTwoState(Flags),
    /// Extrapolation on versus off.
    AblationOe(Flags),
    /// Mini-batching on versus off.
    AblationMinibatch(Flags),
    /// Learning curves on a grid world.
    Gridworld(Flags),
    /// Trajectory sampling on the two-state family.
    MarkovTwoState(Flags),
    /// One epoch of each variance-reduced method.
    EpochContraction(Flags),
    /// Iteration counts on a noiseless chain.
    Acceleration(Flags),
}

#[derive(Args, Debug, Clone)]
struct Flags {
    /// JSON config file; any field may be omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed of every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Independent replications per cell.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Only run schedules that satisfy every convergence condition.
    #[arg(long)]
    strict_schedule: bool,
}

impl Command {
    fn split(self) -> (ExperimentKind, Flags) {
        match self {
            Command::Lemmas(f) => (ExperimentKind::LemmaSuite, f),
            Command::OracleLb(f) => (ExperimentKind::OracleLb, f),
            Command::SweepTwoState(f) => (ExperimentKind::SweepTwoState, f),
            Command::AblationOe(f) => (ExperimentKind::AblationOe, f),
            Command::AblationMinibatch(f) => (ExperimentKind::AblationMinibatch, f),
            Command::Gridworld(f) => (ExperimentKind::Gridworld, f),
            Command::MarkovTwoState(f) => (ExperimentKind::MarkovTwoState, f),
            Command::EpochContraction(f) => (ExperimentKind::EpochContraction, f),
            Command::Acceleration(f) => (ExperimentKind::Acceleration, f),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, flags) = cli.command.split();
    let overrides = Overrides {
        seed: flags.seed,
        trials: flags.trials,
        out: flags.out,
        workers: flags.workers,
        strict_schedule: flags.strict_schedule,
    };
    let result = ExperimentConfig::resolve(kind, flags.config.as_deref(), &overrides)
        .and_then(|config| run_experiment(&config));
    match result {
        Ok(report) => {
            println!("{}", report.csv_path.display());
            println!("{}", report.summary_path.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
