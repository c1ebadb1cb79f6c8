//! `ttrnn train|eval|inspect|bench <path>`
//!
//! Exit status: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ttrnn_core::commands::{cmd_bench, cmd_eval, cmd_inspect, cmd_train, train_summary, Overrides};
use ttrnn_core::train::Split;

#[derive(Parser)]
#[command(name = "ttrnn", version, about = "Tensor-Train recurrent networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file.
    Train {
        config: PathBuf,
        /// Overrides init_seed and data_seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Run directory for logs and checkpoints.
        #[arg(long)]
        out: Option<String>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        checkpoint: PathBuf,
        /// Config whose data paths to use; must describe the same architecture.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "valid")]
        split: String,
    },
    /// Print the structure and parameter counts of a checkpoint or config.
    Inspect { path: PathBuf },
    /// Run a timing sweep described by a bench config.
    Bench { config: PathBuf },
}

fn run(cli: Cli) -> ttrnn_core::Result<String> {
    match cli.command {
        Command::Train {
            config,
            seed,
            epochs,
            out,
        } => cmd_train(&config, &Overrides { seed, epochs, out }).map(|o| train_summary(&o)),
        Command::Eval {
            checkpoint,
            config,
            split,
        } => {
            let split: Split = split.parse()?;
            cmd_eval(&checkpoint, config.as_deref(), split).map(|s| s.to_line() + "\n")
        }
        Command::Inspect { path } => cmd_inspect(&path),
        Command::Bench { config } => cmd_bench(&config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
