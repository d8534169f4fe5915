//! `tbdl`: split, train, evaluate, predict and inspect.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
//! The binary is a thin wrapper over [`run`], which tests can also drive
//! in-process.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tbdl::nn::Architecture;

#[derive(Debug, Parser)]
#[command(name = "tbdl", version, about = "Chest X-ray TB classifier toolkit")]
struct Cli {
    /// Worker threads; 1 forces fully serial execution, 0 uses all cores.
    #[arg(long, global = true, env = "TBDL_THREADS", default_value_t = 0)]
    threads: usize,

    /// Overwrite output paths that already exist.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan a TB/ + Normal/ directory and write the split manifest.
    Split(SplitArgs),
    /// Train a model and write its best checkpoint and history log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one manifest split.
    Eval(EvalArgs),
    /// Classify a single image.
    Predict(PredictArgs),
    /// Print the per-layer summary of an architecture.
    Info(InfoArgs),
    /// Write a seeded synthetic blob-vs-noise dataset.
    Synth(SynthArgs),
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: tbdl::Error| e.to_string())
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Images per class in the train+validation pool.
    #[arg(long, default_value_t = 600)]
    train_per_class: usize,
    /// Fraction of each class's pool held out for validation.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 100)]
    test_tb: usize,
    #[arg(long, default_value_t = 101)]
    test_normal: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_arch)]
    arch: Architecture,
    /// Add simple bypass connections (SqueezeNet only).
    #[arg(long)]
    bypass: bool,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, value_parser = ["adam", "sgd"], default_value = "adam")]
    optimizer: String,
    /// SGD momentum.
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// History log path [default: <out>.history.csv].
    #[arg(long)]
    history: Option<PathBuf>,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    no_augment: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// JSON report path.
    #[arg(long)]
    report: PathBuf,
    /// Expected architecture of the checkpoint.
    #[arg(long, value_parser = parse_arch)]
    arch: Option<Architecture>,
    /// Optional per-image CSV of predictions.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
}

#[derive(Debug, Args)]
struct InfoArgs {
    #[arg(long, value_parser = parse_arch)]
    arch: Architecture,
    #[arg(long)]
    bypass: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    tb: usize,
    #[arg(long, default_value_t = 50)]
    normal: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let threads = cli.threads;
    match tbdl::parallel::with_threads(threads, || commands::run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
