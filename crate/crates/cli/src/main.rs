//! Command-line entry point: configuration, dispatch, and machine-readable
//! failure reporting.

mod commands;
mod config;
mod lock;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "mlpo",
    version,
    about = "Hierarchical leader/agent-team inference, training-data generation, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run T-round leader/agent-team episodes over a task file
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Episode-level worker count (defaults to run.workers)
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Ask the leader alone, without the agent team
    ZeroShot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Build the backtracking SFT corpus
    DatagenSft {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Build the round-0 leader-prompt training corpus
    DatagenMlpo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Build the multi-round continuation corpus
    DatagenMlpoPlus {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train the toy aggregation policy; emits a CSV reward curve
    TrainToy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate transcripts into accuracy reports (CSV + JSON)
    Eval {
        /// Transcript files or run directories
        #[arg(long, required = true, num_args = 1..)]
        transcripts: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Task file for category/difficulty breakdowns
        #[arg(long)]
        tasks: Option<PathBuf>,
    },
    /// Monte Carlo synthetic-team simulation (no network)
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also emit the exact enumeration curve
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Infer {
            config,
            tasks,
            out,
            workers,
        } => {
            let (cfg, hash) = config::parse_config(&config)?;
            commands::infer::run(&cfg, &hash, &tasks, &out, workers)
        }
        Command::ZeroShot {
            config,
            tasks,
            out,
            workers,
        } => {
            let (cfg, hash) = config::parse_config(&config)?;
            commands::zero_shot::run(&cfg, &hash, &tasks, &out, workers)
        }
        Command::DatagenSft {
            config,
            tasks,
            out,
            workers,
        } => {
            let (cfg, hash) = config::parse_config(&config)?;
            commands::datagen_sft::run(&cfg, &hash, &tasks, &out, workers)
        }
        Command::DatagenMlpo {
            config,
            tasks,
            out,
            workers,
        } => {
            let (cfg, hash) = config::parse_config(&config)?;
            commands::datagen_mlpo::run(&cfg, &hash, &tasks, &out, workers)
        }
        Command::DatagenMlpoPlus {
            config,
            tasks,
            out,
            workers,
        } => {
            let (cfg, hash) = config::parse_config(&config)?;
            commands::datagen_mlpo_plus::run(&cfg, &hash, &tasks, &out, workers)
        }
        Command::TrainToy { config, out } => {
            let (cfg, hash) = config::parse_config(&config)?;
            commands::train_toy::run(&cfg, &hash, &out)
        }
        Command::Eval {
            transcripts,
            out,
            tasks,
        } => commands::eval::run(&transcripts, &out, tasks.as_deref()),
        Command::Simulate {
            config,
            out,
            oracle,
            workers,
        } => {
            let (cfg, hash) = config::parse_config(&config)?;
            commands::simulate::run(&cfg, &hash, &out, oracle, workers)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            let message = format!("{error:#}");
            let is_config = message.contains("configuration invalid")
                || message.contains("parsing config")
                || matches!(
                    error.downcast_ref::<mlpo_core::Error>(),
                    Some(mlpo_core::Error::Config(_))
                );
            let payload = serde_json::json!({
                "error": {
                    "kind": if is_config { "config" } else { "runtime" },
                    "message": message,
                }
            });
            eprintln!("{payload}");
            if is_config {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
