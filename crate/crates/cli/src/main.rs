use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod commands;
mod exit;
mod manifest;

use commands::{eval, gen_synth, gradcheck, predict, slices, train};

/// Uncertainty-gated two-stream segmentation of multi-modal 3D volumes.
#[derive(Parser, Debug)]
#[command(name = "uafuse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic labeled phantoms as NIfTI case directories.
    GenSynth(gen_synth::GenSynthArgs),
    /// Train a network and write checkpoints plus metrics.jsonl.
    Train(train::TrainArgs),
    /// Sliding-window prediction for one case.
    Predict(predict::PredictArgs),
    /// Per-class Dice of predictions against ground truth.
    Eval(eval::EvalArgs),
    /// Finite-difference check of every differentiable op.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Export axial slices of a volume as PGM images.
    Slices(slices::SlicesArgs),
}

/// `UAFUSE_THREADS` caps the worker pool; unset or 0 means one per core.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("UAFUSE_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| uafuse::Error::Config(format!("UAFUSE_THREADS must be a non-negative integer, got '{v}'")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cannot configure the thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    configure_threads()?;
    match cli.command {
        Command::GenSynth(a) => gen_synth::run(&a)?,
        Command::Train(a) => train::run(&a)?,
        Command::Predict(a) => predict::run(&a)?,
        Command::Eval(a) => eval::run(&a)?,
        Command::Gradcheck(a) => return gradcheck::run(&a),
        Command::Slices(a) => slices::run(&a)?,
    }
    Ok(exit::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return exit::to_exit(if e.use_stderr() { exit::USAGE } else { exit::SUCCESS });
        }
    };
    match run(cli) {
        Ok(code) => exit::to_exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            exit::to_exit(exit::code(&e))
        }
    }
}
