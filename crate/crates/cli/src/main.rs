//! `fedomg`: run, sweep and self-check federated experiments from JSON
//! manifests.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad arguments or config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Failure, SweepParam};

#[derive(Parser)]
#[command(name = "fedomg", version, about = "Federated learning with matching-gradient aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its per-round metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-run a config once per value of one parameter, in parallel.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Compare the server solve with a sampled dual bound on random instances.
    OracleCheck {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write the dataset a config describes as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run { config } => commands::run(config),
        Command::Sweep {
            config,
            param,
            values,
        } => commands::sweep(config, *param, values),
        Command::OracleCheck { instances, seed } => commands::oracle_check(*instances, *seed),
        Command::GenData { config, out } => commands::gen_data(config, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
