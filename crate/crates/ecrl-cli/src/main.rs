//! Batch front end for the grounding pipeline.
//!
//! Every command reads a flat `key=value` config (with `--set`
//! overrides), does one job, writes files, and exits. Exit codes are a
//! stable contract: 0 success, 2 config/input error, 3 I/O error,
//! 4 training abort, 5 checkpoint error, 6 gradient-check failure.

mod commands;
mod plot;

use clap::{Parser, Subcommand};
use ecrl_core::config::{parse_set_arg, RunConfig};
use ecrl_core::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ecrl", version, about = "Temporal sentence grounding experiments on synthetic features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: feature files plus train/val/test manifests.
    GenData {
        /// Flat key=value config file (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for features and manifests.
        #[arg(long)]
        out: PathBuf,
        /// Total number of samples across all splits.
        #[arg(long)]
        n: usize,
        /// Override a single config key, e.g. --set num_frames=32.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train on a generated dataset; writes checkpoint, log and validation report.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root containing train.tsv and val.tsv.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint, log and reports.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint on a manifest; writes the recall report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest file (e.g. DATASET/test.tsv).
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path; a per-sample detail file is written next to it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Print the augmented timeline of one sample as a text table.
    AugmentPreview {
        /// Manifest file the sample lives in.
        #[arg(long)]
        data: PathBuf,
        /// Sample id from the manifest.
        #[arg(long)]
        id: String,
        /// Seed for the augmentation draw.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Verify analytic gradients of the full loss against finite differences.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Debug: plant a known gradient fault; the check must then fail.
        #[arg(long)]
        corrupt: bool,
    },
    /// Render loss/recall curves and a text summary from a training log.
    Report {
        /// Training log CSV produced by `train`.
        #[arg(long)]
        log: PathBuf,
        /// Output directory for the SVG plots and summary.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Load the config file (or defaults) and apply `--set` overrides.
fn load_config(path: Option<&PathBuf>, sets: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for s in sets {
        let (k, v) = parse_set_arg(s)?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The stable exit-code contract.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Input(_) => 2,
        Error::Io { .. } | Error::Format { .. } | Error::Manifest { .. } => 3,
        Error::TrainingAbort(_) => 4,
        Error::Checkpoint(_) => 5,
        Error::GradCheck(_) => 6,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, n, set } => {
            let cfg = load_config(config.as_ref(), &set)?;
            commands::gen_data(&cfg, &out, n)
        }
        Command::Train { config, data, out, set } => {
            let cfg = load_config(config.as_ref(), &set)?;
            commands::train(&cfg, &data, &out)
        }
        Command::Eval { checkpoint, data, report } => {
            commands::eval(&checkpoint, &data, &report)
        }
        Command::AugmentPreview { data, id, seed, config, set } => {
            let cfg = load_config(config.as_ref(), &set)?;
            commands::augment_preview(&cfg, &data, &id, seed)
        }
        Command::GradCheck { config, set, corrupt } => {
            let cfg = load_config(config.as_ref(), &set)?;
            commands::grad_check(&cfg, corrupt)
        }
        Command::Report { log, out } => commands::report(&log, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
