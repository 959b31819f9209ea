//! `fedsim`: run federated-learning experiments from key=value files.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on invalid configuration
//! or input.

mod commands;
mod error;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Deterministic federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output path (overrides the file's `out` key).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its metrics table.
    Run(Common),
    /// Write the partition manifest and a per-client skew table.
    Partition(Common),
    /// Run several algorithms on the same data and seed.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated algorithms (overrides `compare.algorithms`).
        #[arg(long, value_delimiter = ',')]
        algorithms: Vec<String>,
    },
    /// Summarize a metrics table.
    Report {
        /// Metrics table written by `run` or `compare`.
        metrics: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(c) => commands::run(c.config.as_deref(), &c.overrides, c.out),
        Command::Partition(c) => commands::partition(c.config.as_deref(), &c.overrides, c.out),
        Command::Compare { common: c, algorithms } => {
            commands::compare(c.config.as_deref(), &c.overrides, c.out, &algorithms)
        }
        Command::Report { metrics } => commands::report(&metrics),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedsim: {e}");
            e.exit_code()
        }
    }
}
