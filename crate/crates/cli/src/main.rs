use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use output::Format;

/// Invalid invocation or input; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "teamsdt", version, about = "Complementarity bounds and simulations for two-agent decision teams")]
pub struct Cli {
    /// JSON file supplying option values; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output format for stdout or --out
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Write the result to this file
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Write `<command>.csv` and `<command>.json` into this directory
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form bounds for a pair of agents
    Bounds(commands::BoundsArgs),
    /// Simulate a trial log
    Simulate(commands::SimulateArgs),
    /// Gain over a grid of accuracies and error correlations (long format)
    Phase(commands::SweepArgs),
    /// Per-cell rule accuracies and gain thresholds over a symmetric grid
    Sweep(commands::SweepArgs),
    /// Threshold scaling with the number of classes
    Kclass(commands::KClassArgs),
    /// Predicted vs simulated team accuracy under non-Gaussian confidence
    Robust(commands::RobustArgs),
    /// Maximum-likelihood fit of a trial log, per pair
    Fit(commands::FitArgs),
    /// Parameter-recovery study on synthetic pairs
    Recover(commands::RecoverArgs),
    /// BIC model comparison and rule accuracies on a trial log, or the
    /// synthetic rule benchmark when no input is given
    Compare(commands::CompareArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use teamsdt::Error as E;
    for cause in err.chain() {
        if cause.is::<Usage>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_) => 3,
                E::InvalidParameter { .. }
                | E::DegenerateAgent { .. }
                | E::InfeasibleCorrelation { .. }
                | E::InvalidClassCount { .. }
                | E::EmptySample
                | E::Precondition(_)
                | E::Malformed(_) => 2,
                _ => 4,
            };
        }
    }
    4
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(&cli.command, cli.config.as_deref()).and_then(|o| {
        o.emit(cli.format, cli.out.as_deref(), cli.out_dir.as_deref())
    }) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
