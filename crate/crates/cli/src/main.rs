use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stiefel_lora::commands;

/// Stiefel-constrained LoRA experiments on synthetic teacher-student tasks.
#[derive(Debug, Parser)]
#[command(name = "stiefel-lora", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one adapter stack and write metrics.csv, summary.json and adapter/.
    Train(RunArgs),
    /// Train with Stiefel and AdamW on the same task and batch stream.
    Compare(RunArgs),
    /// Compare both optimizers over the configured `ranks` and `seeds`.
    SweepRank(RunArgs),
    /// Measure a saved adapter checkpoint.
    Diagnose {
        /// Checkpoint directory (as written by `train`).
        #[arg(long, visible_alias = "config")]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed (and the sweep seed list).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors; 2 is reserved for numerical failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => commands::run_train(&a.config, &a.out, a.seed),
        Command::Compare(a) => commands::run_compare(&a.config, &a.out, a.seed),
        Command::SweepRank(a) => commands::run_sweep_rank(&a.config, &a.out, a.seed),
        Command::Diagnose { checkpoint, out } => commands::run_diagnose(checkpoint, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
