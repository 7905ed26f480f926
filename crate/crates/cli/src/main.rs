//! `dsse`: simulate online state estimation on distribution feeders.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Exit status for runtime failures (bad inputs, solver failures, I/O).
const EXIT_RUNTIME: u8 = 2;
/// Exit status of `verify-bound` when the empirical error exceeds the bound.
const EXIT_BOUND_VIOLATED: u8 = 3;
/// Exit status for command-line usage errors.
const EXIT_USAGE: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "dsse", version, about = "Online distribution system state estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BatchAlgorithm {
    /// Gauss-Newton.
    Gn,
    /// Gradient steps iterated to convergence.
    Go,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Template {
    #[value(name = "2bus")]
    TwoBus,
    #[value(name = "4bus")]
    FourBus,
    #[value(name = "13node")]
    ThirteenNode,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write trace, summary and timing CSVs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario horizon.
        #[arg(long)]
        horizon: Option<u64>,
        /// Also write every estimator's (p, q) estimate to states.csv.
        #[arg(long)]
        log_states: bool,
        /// Also write the full measurement batches to measurements.csv.
        #[arg(long)]
        dump_measurements: bool,
    },
    /// Solve the power flow for given injections and print node voltages.
    Powerflow {
        /// Feeder file, or builtin:<template>.
        #[arg(long)]
        feeder: String,
        /// JSON document {"loads": [{"bus", "phase", "p", "q"}]} in per unit.
        /// Omit for zero injections.
        #[arg(long)]
        injections: Option<PathBuf>,
    },
    /// Estimate the state from one batch of a measurement CSV.
    EstimateBatch {
        /// Feeder file, or builtin:<template>.
        #[arg(long)]
        feeder: String,
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long, value_enum, default_value = "gn")]
        algorithm: BatchAlgorithm,
        /// Time step to use (default: the first in the file).
        #[arg(long)]
        t: Option<u64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Write an embedded feeder document.
    GenFeeder {
        #[arg(long, value_enum)]
        template: Template,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the steady-state error bound of stochastic gradient on the
    /// scenario's linearized problem.
    VerifyBound {
        #[arg(long)]
        scenario: PathBuf,
        /// Number of Monte Carlo seeds (default: the scenario's bound setting).
        #[arg(long)]
        seeds: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::BoundViolated) => ExitCode::from(EXIT_BOUND_VIOLATED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
