//! `homc`: fit higher-order Markov chain models to categorical sequences,
//! test lag hypotheses, predict, diagnose chains and run simulation studies.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 runtime
//! failure, 4 I/O failure.

mod commands;
mod config;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use homc_core::Schedule;

use crate::commands::{DataFlags, SimulateFlags};
use crate::config::{parse_schedule, GlobalFlags, Settings};
use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "homc",
    version,
    about = "Bayesian higher-order Markov chain modeling"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for replicate-level parallelism.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Use the large-count approximation in the class-count update.
    #[arg(long, global = true)]
    stirling: bool,
    /// Sweep schedule.
    #[arg(long, global = true, value_name = "N_ITER,N_BURN,THIN", value_parser = parse_schedule)]
    schedule: Option<Schedule>,
    /// Override any config key, e.g. --set model.phi=0.8 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model; writes the chain, a summary and diagnostics.
    Fit {
        #[command(flatten)]
        data: DataFlags,
        /// Extra contexts to record transition snapshots for.
        #[arg(long, value_name = "FILE")]
        contexts: Option<PathBuf>,
    },
    /// Evaluate lag hypotheses against a fitted chain.
    Test {
        #[command(flatten)]
        data: DataFlags,
        /// Hypothesis file.
        #[arg(long, value_name = "FILE")]
        hypotheses: Option<PathBuf>,
    },
    /// Run a simulation study on a synthetic case.
    Simulate(SimulateFlags),
    /// One-step-ahead predictions from a fitted chain.
    Predict {
        /// Contexts to predict (default: every recorded snapshot context).
        #[arg(long, value_name = "FILE")]
        contexts: Option<PathBuf>,
        /// Prediction horizon; only 1 is supported.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Monte Carlo standard errors and running quantiles of a fitted chain.
    Diagnose {
        /// Batch length for batch-means standard errors.
        #[arg(long)]
        batch_len: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let flags = GlobalFlags {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        threads: cli.threads,
        stirling: cli.stirling,
        schedule: cli.schedule,
        set: cli.set,
    };
    let settings = Settings::load(&flags)?;
    if let Some(n) = settings.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::runtime(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fit { data, contexts } => commands::cmd_fit(&settings, &data, contexts),
        Command::Test { data, hypotheses } => commands::cmd_test(&settings, &data, hypotheses),
        Command::Simulate(flags) => commands::cmd_simulate(&settings, &flags),
        Command::Predict { contexts, horizon } => {
            commands::cmd_predict(&settings, contexts, horizon)
        }
        Command::Diagnose { batch_len } => commands::cmd_diagnose(&settings, batch_len),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("homc: {f}");
            ExitCode::from(f.code() as u8)
        }
    }
}
