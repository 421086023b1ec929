//! `longvid`: data generation, training, sampling and evaluation for the
//! toy long-video diffusion model.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, bad config
//! values), 2 on runtime failures.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<longvid_core::Error> for CliError {
    fn from(e: longvid_core::Error) -> Self {
        match e {
            longvid_core::Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "longvid", version, about = "Toy long-video diffusion: train, sample, evaluate", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic clip dataset.
    GenData(commands::data::GenDataArgs),
    /// Spatial pretraining followed by temporal co-training.
    Train(commands::train::TrainArgs),
    /// Multi-round guided sampling from a checkpoint.
    Sample(commands::sample::SampleArgs),
    /// Per-round latent std and intensity drift for several resampling scales.
    DriftProbe(commands::sample::DriftArgs),
    /// Per-timestep SNR table and terminal-SNR flag.
    AnalyzeSchedule(commands::analysis::ScheduleArgs),
    /// DDIM transport check against a Gaussian world with a closed-form predictor.
    OracleCheck(commands::analysis::OracleArgs),
    /// Consistency, PSNR/SSIM and Fréchet-lite metrics for videos on disk.
    Evaluate(commands::evaluate::EvaluateArgs),
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat key = value config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed; every component derives its own stream from it.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => commands::data::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Sample(a) => commands::sample::run(a),
        Command::DriftProbe(a) => commands::sample::run_drift(a),
        Command::AnalyzeSchedule(a) => commands::analysis::run_schedule(a),
        Command::OracleCheck(a) => commands::analysis::run_oracle(a),
        Command::Evaluate(a) => commands::evaluate::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{}", e.render());
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
