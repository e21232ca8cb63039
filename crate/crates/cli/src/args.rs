use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "d12", version, about = "D12-equivariant chord accompaniment")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for initialization, shuffling, splitting and random inputs.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON file with `model` and `train` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (or directory for `train`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// No progress logs on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Leave the timestamp out of reports.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Characters, multiplicities and change-of-basis matrices.
    Irreps,
    /// Converts MIDI files with chord and beat annotations to Piece JSON lines.
    Ingest(IngestArgs),
    /// Trains a model on a Piece corpus.
    Train(TrainArgs),
    /// Scores a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Predicts chords for the pieces in a file.
    Predict(PredictArgs),
    /// Applies a group element to every piece in a file.
    Transform(TransformArgs),
    /// Equivariance, gradient and gradient-growth checks.
    Audit(AuditArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Unknown {
    Skip,
    Fail,
    RootGuess,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub midi_dir: PathBuf,
    #[arg(long)]
    pub chord_dir: PathBuf,
    #[arg(long)]
    pub beat_dir: PathBuf,
    /// Time step in beats.
    #[arg(long, default_value_t = 0.5)]
    pub u: f64,
    /// Handling of chord qualities missing from the table.
    #[arg(long, value_enum, default_value_t = Unknown::Skip)]
    pub unknown: Unknown,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Piece JSON lines.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Validation pieces. Without it and without `--split` there is no
    /// validation set.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Split the corpus into train/val/test with the seed.
    #[arg(long, conflicts_with = "val")]
    pub split: bool,
    /// Use the plain baseline instead of the equivariant model.
    #[arg(long)]
    pub plain: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Stop once training exact accuracy reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One Piece JSON object or Piece JSON lines.
    #[arg(long)]
    pub piece: PathBuf,
}

#[derive(Args, Debug)]
pub struct TransformArgs {
    #[arg(long)]
    pub piece: PathBuf,
    /// `Ti` or `TiR`, i in 0..11.
    #[arg(long)]
    pub element: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AuditMode {
    Equivariance,
    Gradcheck,
    GradientGrowth,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[arg(long, value_enum, default_value_t = AuditMode::Equivariance)]
    pub mode: AuditMode,
    #[arg(long, required_unless_present = "random", conflicts_with = "random")]
    pub checkpoint: Option<PathBuf>,
    /// Freshly initialized model from `--config` (or the default) and `--seed`.
    #[arg(long)]
    pub random: bool,
    /// Audit the plain baseline (with `--random`).
    #[arg(long, requires = "random")]
    pub plain: bool,
    /// Use the norm-gated nonlinearity (with `--random`).
    #[arg(long, requires = "random")]
    pub norm_gated: bool,
    /// Pieces to audit on; synthetic pieces from the seed when absent.
    #[arg(long)]
    pub piece: Option<PathBuf>,
    /// Add a piece with a silent melody to the synthetic batch.
    #[arg(long)]
    pub silent: bool,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Optimizer steps for gradient growth.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Gradient magnitude counted as an explosion.
    #[arg(long, default_value_t = 1e6)]
    pub threshold: f64,
}
