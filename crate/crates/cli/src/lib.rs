//! Command-line experiments over dataset bundles: generate or ingest a
//! bundle, train a model, evaluate, dump embeddings and print graph
//! statistics.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use artgnn::Split;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, Result};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "ARTGNN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "artgnn", version, about = "Graph-convolutional artist embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-partition bundle.
    Synth(SynthArgs),
    /// Build a bundle from per-track feature records and an edge list.
    Ingest(IngestArgs),
    /// Train a model and write a checkpoint with its training log.
    Train(TrainArgs),
    /// Score a checkpoint with NDCG@K on a held-out split.
    Evaluate(EvaluateArgs),
    /// Write l2-normalized embeddings as CSV.
    Embed(EmbedArgs),
    /// Print graph statistics as JSON.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub communities: usize,
    #[arg(long, default_value_t = 50)]
    pub community_size: usize,
    #[arg(long, default_value_t = 0.3)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    pub p_out: f64,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 2.0)]
    pub feature_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSON lines, one `{"artist": .., "features": {..}}` object per track.
    #[arg(long)]
    pub records: PathBuf,
    /// CSV with a `source,target[,weight]` header.
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for the split and for neighbor sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for checkpoint.json, train_log.csv and run.json.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with `[model]` and `[train]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: config::ModelOverrides,
    #[command(flatten)]
    pub train: config::TrainOverrides,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "validation")]
    pub split: SplitArg,
    #[arg(long, default_value_t = artgnn::eval::DEFAULT_CUTOFF)]
    pub k: usize,
    /// Output directory for report.json and report.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EmbedScope {
    /// Every node over the full graph.
    All,
    /// Training nodes over the training subgraph.
    Train,
    /// Validation nodes over their evaluation graph.
    Validation,
    /// Test nodes over their evaluation graph.
    Test,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub split: EmbedScope,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Also write the statistics to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    // A second initialization in the same process is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Parses `args` and runs the command. Exit codes: 0 on success, 1 for
/// usage errors, 2 for runtime failures.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let outcome = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Embed(a) => commands::embed(a),
        Command::Stats(a) => commands::stats(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: invalid configuration: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
