//! `hsdssa` command line: parameter tables, embedding extraction, cosine
//! scoring, EER/minDCF evaluation, latency benchmarking, gradient checking
//! and attention inspection.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;
mod config;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "hsdssa", version, about = "Hierarchical-split / DSSA speaker embedding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print analytic and constructed parameter counts per system
    Params {
        /// JSON run configuration (seed + systems)
        #[arg(long)]
        config: PathBuf,
    },
    /// Build one system from a run configuration and save it to a directory
    Build {
        #[arg(long)]
        config: PathBuf,
        /// Name of the system inside the configuration
        #[arg(long)]
        system: String,
        /// Overrides the configuration seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a feature matrix with a saved model
    Forward {
        /// Model directory written by `build`
        #[arg(long)]
        model: PathBuf,
        /// FMAT feature matrix, frames × bins
        #[arg(long)]
        features: PathBuf,
        /// Output FMAT embedding (1 × embedding_dim)
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine-score trial pairs from embedding directories
    Score {
        #[arg(long, value_name = "DIR")]
        enroll_dir: PathBuf,
        #[arg(long, value_name = "DIR")]
        test_dir: PathBuf,
        /// Trial list: `label enroll test` per line
        #[arg(long)]
        trials: PathBuf,
        /// Output score file: `enroll test score` per line
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a score file against labeled trials
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// DET curve CSV output
        #[arg(long, default_value = "det.csv")]
        det_out: PathBuf,
    },
    /// Benchmark every system in a run configuration
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Timed repetitions per system (≥ 5)
        #[arg(long, default_value_t = 9)]
        reps: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        /// Input frames for the timed embedding
        #[arg(long, default_value_t = 64)]
        frames: usize,
        /// Writes <prefix>.json and <prefix>.csv
        #[arg(long, default_value = "bench")]
        out_prefix: String,
    },
    /// Run the finite-difference gradient suite
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dump per-channel attention weight matrices as FMAT files
    DemoAttention {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Overrides the model's top-k sparsity (≥ 1)
        #[arg(long)]
        topk: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Errors split by exit code.
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<hsdssa::Error> for CliError {
    fn from(e: hsdssa::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful terminations
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    let result = match cli.command {
        Command::Params { config } => commands::params(&config),
        Command::Build {
            config,
            system,
            seed,
            out,
        } => commands::build(&config, &system, seed, &out),
        Command::Forward {
            model,
            features,
            out,
        } => commands::forward(&model, &features, &out),
        Command::Score {
            enroll_dir,
            test_dir,
            trials,
            out,
        } => commands::score(&enroll_dir, &test_dir, &trials, &out),
        Command::Eval {
            scores,
            trials,
            det_out,
        } => commands::eval(&scores, &trials, &det_out),
        Command::Bench {
            config,
            reps,
            warmup,
            frames,
            out_prefix,
        } => commands::bench(&config, reps, warmup, frames, &out_prefix),
        Command::Gradcheck { instances, seed } => commands::gradcheck(instances, seed),
        Command::DemoAttention {
            model,
            features,
            topk,
            out_dir,
        } => commands::demo_attention(&model, &features, topk, &out_dir),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}
