//! `cerberus`: data generation, teacher training, distillation, evaluation,
//! latency benchmarks and ensemble tuning from JSON configs.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numeric failure,
//! 1 anything else.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(
    name = "cerberus",
    version,
    about = "Multi-teacher distillation experiments for answer sentence selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/dev/test dataset as JSONL.
    GenerateData(Common),
    /// Train a teacher on hard labels and cache its training-split logits.
    TrainTeacher(Common),
    /// Train a student or multi-head model with one of the teacher strategies.
    Distill(Common),
    /// Ranking metrics for a checkpoint, per head, with optional agreement analysis.
    Evaluate(Common),
    /// Forward-pass latency and parameter counts.
    Bench(Common),
    /// Grid-search score-level ensemble weights on the dev split.
    TuneEnsemble(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's `out` directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load<T: DeserializeOwned>(&self) -> anyhow::Result<T> {
        Ok(config::load(
            &self.config,
            self.seed,
            self.out.as_deref().map(Path::new),
        )?)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenerateData(c) => commands::generate_data(c.load()?),
        Command::TrainTeacher(c) => commands::train_teacher(c.load()?),
        Command::Distill(c) => commands::distill(c.load()?),
        Command::Evaluate(c) => commands::evaluate(c.load()?),
        Command::Bench(c) => commands::bench(c.load()?),
        Command::TuneEnsemble(c) => commands::tune_ensemble(c.load()?),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use cerberus_core::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                _ if e.is_numeric() => 3,
                Error::Config(_)
                | Error::Parse { .. }
                | Error::Json(_)
                | Error::Io(_)
                | Error::Archive(_) => 2,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
