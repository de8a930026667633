//! The `avfe` command line: configuration, feature files and subcommands.

mod commands;
pub mod config;
pub mod features;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use commands::{model_from_checkpoint, run};
pub use config::{DatasetSource, RunConfig};
pub use features::FeatureFile;

use crate::Error;

/// Environment variable naming the directory that relative data paths start from.
pub const DATA_ROOT_ENV: &str = "AVFE_DATA_ROOT";

#[derive(Debug, Parser)]
#[command(name = "avfe", version, about = "Acoustic frontends for bird activity detection")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration file (key = value lines under [section] headers).
    #[arg(short, long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    /// Base for relative data paths [default: $AVFE_DATA_ROOT].
    #[arg(long, global = true, value_name = "DIR")]
    pub data_root: Option<PathBuf>,
    /// Worker threads for audio decoding and feature extraction.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic chirp dataset with manifests and a config snippet.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_clips: usize,
        #[arg(long, default_value_t = 10.0)]
        snr_min: f64,
        #[arg(long, default_value_t = 30.0)]
        snr_max: f64,
        #[arg(long, default_value_t = 1.0)]
        clip_s: f64,
        #[arg(long, default_value_t = 0.5)]
        tone_prob: f64,
        /// Defaults to run.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Assign manifest items to train/val/test and write the split file.
    Split {
        /// Replace an existing split file.
        #[arg(long)]
        force: bool,
    },
    /// Compute one feature file per clip.
    Extract {
        /// Recompute files that already exist.
        #[arg(long)]
        force: bool,
        /// Use the trained frontend from this checkpoint.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Defaults to <output_dir>/features/<kind>.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train frontend and classifier; writes the log and the best checkpoint.
    Train,
    /// Score a checkpoint on one split.
    Eval {
        /// Defaults to <output_dir>/<kind>/model.avck.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Compare trained systems on the test split with significance tests.
    Compare {
        #[arg(long = "system", value_name = "NAME=CHECKPOINT", required = true)]
        systems: Vec<String>,
        /// Defaults to <output_dir>/compare.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        /// A learnable frontend, or `classifier`.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random input clip length in seconds.
        #[arg(long, default_value_t = 0.3)]
        duration: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Exit status classes: 1 for invalid input or configuration, 2 for failures at run time.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Param(_) => Failure::Validation(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

/// Parses `std::env::args` and runs the chosen subcommand.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
