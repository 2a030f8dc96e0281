use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gffm::cli::{run, Command};

/// Conditional flow-matching lab: train, sample and benchmark velocity
/// models with guidance at inference or guidance baked into training.
#[derive(Parser)]
#[command(name = "gffm", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a run config and write checkpoint + training log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a trained checkpoint and dump the points as CSV.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained checkpoint against the exact mixture.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full training x guidance x step-count benchmark grid.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the guidance weight baked into training.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated weights, e.g. 0,0.3,0.5,0.7,1.0,2.0
        #[arg(long)]
        w: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match cli.cmd {
        Cmd::Train { config, out } => Command::Train { config, out },
        Cmd::Sample { config, ckpt, out } => Command::Sample { config, ckpt, out },
        Cmd::Eval { config, ckpt, out } => Command::Eval { config, ckpt, out },
        Cmd::Grid { config, out } => Command::Grid { config, out },
        Cmd::Sweep { config, w, out } => Command::Sweep { config, w, out },
    };
    match run(&cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
