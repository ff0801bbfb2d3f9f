//! `cape` — train, evaluate and inspect compositional recognition models.
//!
//! Exit codes: 0 success, 2 configuration problems (bad flags, bad config
//! file, invalid hyperparameters), 3 data problems (missing or malformed
//! files), 4 numeric failures (non-finite loss or gradients).

mod cmd;
mod config;
mod data_io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use cape_core::Result;

#[derive(Parser)]
#[command(
    name = "cape",
    version,
    about = "Compositional zero-shot recognition: synthesize data, train, evaluate, inspect"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset on disk
    Synth(SynthArgs),
    /// Train one model and write checkpoints plus a training log
    Train(TrainCmdArgs),
    /// Evaluate a checkpoint on a split, or re-score an exported score matrix
    Eval(EvalArgs),
    /// Rank the attention routes of a trained model for one query composition
    Routes(RoutesArgs),
    /// Train every variant with identical hyperparameters and tabulate them
    Ablate(AblateArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Number of states
    #[arg(long, default_value_t = 6)]
    pub states: usize,
    /// Number of objects
    #[arg(long, default_value_t = 6)]
    pub objects: usize,
    /// Number of seen pairs (must cover every state and object)
    #[arg(long, default_value_t = 24)]
    pub seen: usize,
    /// Number of unseen pairs, alternating validation / test
    #[arg(long, default_value_t = 12)]
    pub unseen: usize,
    /// Training samples per seen pair
    #[arg(long, default_value_t = 60)]
    pub samples: usize,
    /// Validation/test samples per pair
    #[arg(long, default_value_t = 10)]
    pub eval_samples: usize,
    /// Standard deviation of the feature noise
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Image-feature dimensionality
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    /// Word-embedding dimensionality
    #[arg(long, default_value_t = 12)]
    pub embedding_dim: usize,
    /// Generator seed
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output directory (pairs.txt, embeddings.txt, features.bin, config.toml)
    #[arg(long)]
    pub out: PathBuf,
}

/// File inputs shared by the dataset-consuming commands. Individual
/// commands state which of them they actually require.
#[derive(Args)]
pub struct DataArgs {
    /// Composition list: one "state object split" line per pair
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Binary image-feature store
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Word-embedding text file ("token v1 v2 ..." lines)
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Optional second embedding file, concatenated after the first
    #[arg(long)]
    pub embeddings2: Option<PathBuf>,
    /// Joiner substituted for spaces when matching multi-word names
    #[arg(long, default_value = "_")]
    pub joiner: String,
}

/// Hyperparameter flags. Every flag is optional; precedence is
/// flags > config file (--config) > built-in defaults.
#[derive(Args, Default)]
pub struct HyperArgs {
    /// TOML config file with the same keys as these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model variant: cape, cape_self, cape_dual or mlp
    #[arg(long)]
    pub variant: Option<String>,
    /// Attention heads
    #[arg(long)]
    pub heads: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Minibatch size
    #[arg(long)]
    pub batch: Option<usize>,
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scale attention scores by 1/sqrt(head_dim): true or false
    #[arg(long)]
    pub scale_attention: Option<bool>,
    /// Multiplier on cosine scores inside the training loss
    #[arg(long)]
    pub logit_scale: Option<f64>,
    /// Hidden width of the projection MLP
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    /// Dropout probability
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Learn an output projection after the attention concat: true or false
    #[arg(long)]
    pub output_projection: Option<bool>,
    /// Run the validation sweep every N epochs
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Cap on swept bias points (default: every critical value)
    #[arg(long)]
    pub n_bias: Option<usize>,
}

#[derive(Args)]
pub struct TrainCmdArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Output directory (last.ckpt, best.ckpt, train_log.csv, config.toml)
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from OUT/last.ckpt if present (flags other than a larger
    /// --epochs are ignored in favor of the checkpointed recipe)
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model checkpoint to evaluate (checkpoint mode)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Partition to evaluate in checkpoint mode: val or test
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Exported score CSV to re-evaluate instead of a checkpoint
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Comma-separated unseen column names for --scores when no --pairs
    /// file is given (every other column counts as seen)
    #[arg(long)]
    pub unseen_cols: Option<String>,
    /// Cap on swept bias points
    #[arg(long)]
    pub n_bias: Option<usize>,
    /// Also report seen/unseen/harmonic-mean at this exact bias (repeatable)
    #[arg(long = "at-bias", allow_negative_numbers = true)]
    pub at_bias: Vec<f64>,
    /// Optional output directory (curve.csv, scores.csv)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RoutesArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model checkpoint to inspect
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Query composition, "state object" or "state+object"
    #[arg(long)]
    pub query: String,
    /// Number of top and bottom routes per head
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Restrict the report to one head index (default: every head plus the
    /// max-over-heads merge)
    #[arg(long)]
    pub head: Option<usize>,
    /// Keep the query's own row among the ranked candidates
    #[arg(long)]
    pub include_self: bool,
    /// Optional output directory (routes.csv)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Output directory (ablation.csv, ablation.md, config.toml)
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth(args) => cmd::synth::run(&args),
        Cmd::Train(args) => cmd::train::run(&args),
        Cmd::Eval(args) => cmd::eval::run(&args),
        Cmd::Routes(args) => cmd::routes::run(&args),
        Cmd::Ablate(args) => cmd::ablate::run(&args),
    }
}

fn main() {
    // Die quietly on a closed pipe (e.g. `cape routes ... | head`) like
    // other line-oriented tools instead of panicking mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 0 for --help/--version and 2 for usage errors.
        Err(e) => e.exit(),
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
