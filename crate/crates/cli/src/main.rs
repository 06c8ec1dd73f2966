//! `sqsglu`: train GLU classifiers, extract eigenfeatures, and benchmark gates.
//!
//! Exit status is 0 on success, 1 for usage and validation errors, 2 for
//! failures while running.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sqsglu::Error;

#[derive(Parser, Debug)]
#[command(name = "sqsglu", version, about = "SQS-gated GLU training and weight-based interpretability")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Shared training flags; anything left unset falls back to `--config`, then the profile defaults.
#[derive(Args, Debug, Default, Clone)]
pub struct TrainArgs {
    /// mnist or fmnist
    #[arg(long)]
    pub dataset: Option<String>,
    /// sqs, relu, gelu, swish or bilinear
    #[arg(long)]
    pub gate: Option<String>,
    /// SQS shrink strength λ
    #[arg(long)]
    pub lambda: Option<f64>,
    /// SQS shift c
    #[arg(long = "c")]
    pub c: Option<f64>,
    /// SQS shrink exponent p
    #[arg(long = "p")]
    pub p: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long = "noise-std")]
    pub noise_std: Option<f32>,
    /// First seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds starting at --seed
    #[arg(long)]
    pub seeds: Option<usize>,
    /// interp (1 layer, no biases, batch 2048) or perf (2 layers, biases, batch 512)
    #[arg(long)]
    pub profile: Option<String>,
    /// Directory holding the IDX files (falls back to $SQS_DATA_DIR, then ./data)
    #[arg(long = "data-dir")]
    pub data_dir: Option<PathBuf>,
    /// Single-worker matmuls
    #[arg(long)]
    pub deterministic: bool,
    /// Stop after this many optimizer steps
    #[arg(long = "max-steps")]
    pub max_steps: Option<usize>,
    /// key = value file with any of the flags above
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model per seed; writes checkpoints and metrics CSVs
    Train {
        #[command(flatten)]
        args: TrainArgs,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
    },
    /// Spectra and top eigenvector images per class from a checkpoint
    Eigen {
        #[arg(long)]
        ckpt: PathBuf,
        /// Only this class (default: every class)
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 4)]
        top: usize,
        /// Use cyclic Jacobi instead of tridiagonal QL
        #[arg(long)]
        jacobi: bool,
        #[arg(long, default_value = "runs/eigen")]
        out: PathBuf,
    },
    /// Cosine similarity of top eigenvectors between two checkpoints, per class
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 4)]
        top: usize,
        #[arg(long, default_value = "runs/compare")]
        out: PathBuf,
    },
    /// Eigenfeature contributions to one test sample's logit
    Attribute {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long = "data-dir")]
        data_dir: Option<PathBuf>,
        /// Test-set sample index
        #[arg(long)]
        index: usize,
        /// Class to explain (default: the predicted class)
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long, default_value = "runs/attribute")]
        out: PathBuf,
    },
    /// Sample a gate and x·gate over a range
    Curve {
        #[arg(long, default_value = "sqs")]
        gate: String,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long = "c")]
        c: Option<f64>,
        #[arg(long = "p")]
        p: Option<f64>,
        #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 6.0, allow_hyphen_values = true)]
        hi: f64,
        #[arg(long, default_value_t = 1201)]
        n: usize,
        #[arg(long, default_value = "runs/curve")]
        out: PathBuf,
    },
    /// Forward + backward timing of a one-layer GLU for every gate
    Bench {
        /// `full` (4×4 table), or comma-separated shapes like 1024x1024x1024
        #[arg(long, default_value = "full")]
        grid: String,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// Split matmul rows across worker threads
        #[arg(long)]
        parallel: bool,
        /// Also write per-repetition samples as JSON
        #[arg(long)]
        json: bool,
        #[arg(long, default_value = "runs/bench")]
        out: PathBuf,
    },
    /// Seeds × gates × datasets table with mean and std per checkpoint
    Repro {
        #[command(flatten)]
        args: TrainArgs,
        /// Comma-separated datasets
        #[arg(long, default_value = "mnist,fmnist")]
        datasets: String,
        /// Comma-separated gates
        #[arg(long, default_value = "sqs,relu,gelu,swish,bilinear")]
        gates: String,
        #[arg(long, default_value = "runs/repro")]
        out: PathBuf,
    },
}

/// Failure classes that map onto exit codes.
pub enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Parameter(_)
            | Error::Unsupported(_)
            | Error::Contract(_)
            | Error::Dimension { .. }
            | Error::Index { .. } => Failure::Invalid(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
