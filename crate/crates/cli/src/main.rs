//! Experiment harness: single rollouts, sweeps, the lower-bound game and certificate tables.
//!
//! Exit codes: 0 ok, 1 invariant failure, 2 config error, 3 numeric failure.

mod build;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "lds-robust", version, about = "Robust online control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config, or JSON when the file ends in .json.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweep cells.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// One rollout: trajectory.csv, events.jsonl, report.json, invariants.csv.
    Simulate,
    /// Cross product of the sweep axes: results.csv.
    Sweep,
    /// The scalar lower-bound game: game.csv, trajectory.csv, lowerbound.json.
    Lowerbound,
    /// Certificate table: certificates.csv.
    Certificates,
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    match cli.command {
        Command::Simulate => {
            commands::validate(&cfg)?;
            commands::simulate(&cfg)
        }
        Command::Sweep => {
            commands::validate(&cfg)?;
            commands::sweep(&cfg, cli.jobs)
        }
        Command::Lowerbound => commands::lowerbound(&cfg),
        Command::Certificates => commands::certificates(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Config(_) => 2,
                CliError::Io(_) => 3,
            })
        }
    }
}
