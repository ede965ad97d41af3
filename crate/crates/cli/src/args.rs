use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ogctl::heads::{DEFAULT_PATCHES, DEFAULT_PATCH_DIM};
use ogctl::losses::MarginForm;
use ogctl::{HeadKind, LossKind, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "ogctl",
    version,
    about = "Occlusion-gated compact templates: synthesize, train, encode, match, evaluate, benchmark",
    args_override_self = true,
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic embedding container
    Synth(SynthArgs),
    /// Train a head and write a checkpoint
    Train(TrainArgs),
    /// Map embeddings through a trained head to compact templates
    Encode(EncodeArgs),
    /// Score every probe template against every gallery template (CSV)
    Match(MatchArgs),
    /// Identification / verification report (JSON + CSV)
    Eval(EvalArgs),
    /// Matcher throughput (JSON)
    Bench(BenchArgs),
    /// Convert a CSV export into an embedding container
    ImportCsv(ImportArgs),
}

/// Shared by every command: flat `key=value` file whose keys are this
/// command's long flag names. Flags on the command line take precedence.
#[derive(Args, Debug)]
pub struct ConfigArg {
    /// key=value settings file (keys are long flag names without the leading --)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output embedding container
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Number of identities
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(usize))]
    pub ids: usize,
    /// Samples per identity
    #[arg(long, default_value_t = 10)]
    pub per_id: usize,
    /// Per-coordinate noise around each identity mean
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    /// Seed for identity means
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed for per-sample noise [default: derived from --seed]
    #[arg(long)]
    pub sample_seed: Option<u64>,
    /// Number of patches
    #[arg(long, default_value_t = DEFAULT_PATCHES)]
    pub patches: usize,
    /// Dimension of every patch embedding
    #[arg(long, default_value_t = DEFAULT_PATCH_DIM)]
    pub patch_dim: usize,
    /// Dimension of the auxiliary vector (0: none)
    #[arg(long, default_value_t = 0)]
    pub aux_dim: usize,
    /// Noise scale of occluded patches [default: matches a visible sample's norm]
    #[arg(long)]
    pub garbage_sigma: Option<f64>,
    /// Comma-separated occlusion profiles (frontal, profile, or 0/1 strings), assigned round-robin
    #[arg(long, default_value = "frontal,profile")]
    pub profiles: String,
    #[command(flatten)]
    pub config: ConfigArg,
}

fn d() -> TrainConfig {
    TrainConfig::default()
}

fn margin_form(s: &str) -> Result<MarginForm, String> {
    match s {
        "monotonic" => Ok(MarginForm::Monotonic),
        "literal" => Ok(MarginForm::Literal),
        _ => Err(format!("expected monotonic or literal, got {s:?}")),
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training embeddings
    #[arg(long, value_name = "PATH")]
    pub embeddings: PathBuf,
    /// Output checkpoint (also written every --checkpoint-every epochs)
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Continue from this checkpoint; --epochs is then the total epoch count
    #[arg(long, value_name = "PATH")]
    pub resume: Option<PathBuf>,
    /// Write the training report as JSON
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Number of epochs
    #[arg(long, default_value_t = d().epochs, value_parser = clap::value_parser!(u32).range(1..))]
    pub epochs: u32,
    /// Minibatch size
    #[arg(long, default_value_t = d().batch_size as u64, value_parser = clap::value_parser!(u64).range(2..))]
    pub batch_size: u64,
    /// Seed for initialization and shuffling
    #[arg(long, default_value_t = d().seed)]
    pub seed: u64,
    /// Loss: asoftmax or softmax
    #[arg(long, default_value_t = d().loss)]
    pub loss: LossKind,
    /// Head: ogctl, ogctl+, a3 or a4
    #[arg(long, default_value_t = d().head)]
    pub head: HeadKind,
    /// Template dimension
    #[arg(long, default_value_t = d().template_dim as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    /// Hidden width of each projection
    #[arg(long, default_value_t = d().hidden as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub hidden: u64,
    /// Angular margin multiplier
    #[arg(long, default_value_t = d().margin, value_parser = clap::value_parser!(u32).range(1..))]
    pub margin: u32,
    /// Margin function: monotonic or literal
    #[arg(long, default_value = "monotonic", value_parser = margin_form)]
    pub margin_form: MarginForm,
    /// Adam learning rate
    #[arg(long, default_value_t = d().adam.lr)]
    pub lr: f64,
    /// Adam first-moment decay
    #[arg(long, default_value_t = d().adam.beta1)]
    pub beta1: f64,
    /// Adam second-moment decay
    #[arg(long, default_value_t = d().adam.beta2)]
    pub beta2: f64,
    /// Adam epsilon
    #[arg(long, default_value_t = d().adam.eps)]
    pub adam_eps: f64,
    /// Initial λ of the margin annealing
    #[arg(long, default_value_t = d().lambda.start)]
    pub lambda_start: f64,
    /// Floor of λ
    #[arg(long, default_value_t = d().lambda.min)]
    pub lambda_min: f64,
    /// λ decay rate per iteration
    #[arg(long, default_value_t = d().lambda.decay)]
    pub lambda_decay: f64,
    /// Normalization epsilon
    #[arg(long, default_value_t = d().norm.eps)]
    pub bn_eps: f64,
    /// Running-statistics momentum
    #[arg(long, default_value_t = d().norm.momentum)]
    pub bn_momentum: f64,
    /// Rows used for batch statistics: all or visible
    #[arg(long, default_value = "all", value_parser = ["all", "visible"])]
    pub bn_stats: String,
    /// Checkpoint cadence in epochs (0: only at the end)
    #[arg(long, default_value_t = d().checkpoint_every)]
    pub checkpoint_every: u32,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Input embeddings
    #[arg(long, value_name = "PATH")]
    pub embeddings: PathBuf,
    /// Trained checkpoint
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Output template container
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    /// Probe templates
    #[arg(long, value_name = "PATH")]
    pub probes: PathBuf,
    /// Gallery templates
    #[arg(long, value_name = "PATH")]
    pub gallery: PathBuf,
    /// Output CSV
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Keep only the best K gallery entries per probe (0: all)
    #[arg(long, default_value_t = 0)]
    pub top: usize,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Protocol {
    Identification,
    Verification,
    Both,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Embeddings to encode; fully visible records form the gallery, the rest are probes
    #[arg(long, value_name = "PATH", requires = "checkpoint")]
    pub embeddings: Option<PathBuf>,
    /// Checkpoint used with --embeddings
    #[arg(long, value_name = "PATH", requires = "embeddings")]
    pub checkpoint: Option<PathBuf>,
    /// Gallery templates (instead of --embeddings)
    #[arg(long, value_name = "PATH", requires = "probes", conflicts_with = "embeddings")]
    pub gallery: Option<PathBuf>,
    /// Probe templates (instead of --embeddings)
    #[arg(long, value_name = "PATH", requires = "gallery", conflicts_with = "embeddings")]
    pub probes: Option<PathBuf>,
    /// Evaluation protocol
    #[arg(long, value_enum, default_value_t = Protocol::Identification)]
    pub protocol: Protocol,
    /// Average-pool gallery templates per subject before matching
    #[arg(long)]
    pub pool_gallery: bool,
    /// Report path (JSON); ROC/CMC CSV files are written next to it
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Compact,
    Dprfs,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Matcher to measure
    #[arg(long, value_enum, default_value_t = Mode::Compact)]
    pub mode: Mode,
    /// Gallery entries (random data)
    #[arg(long, default_value_t = 10_000)]
    pub gallery_size: usize,
    /// Probes per pass (random data)
    #[arg(long, default_value_t = 100)]
    pub probes: usize,
    /// Template dimension for compact mode
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    /// Patches for dprfs mode
    #[arg(long, default_value_t = DEFAULT_PATCHES)]
    pub patches: usize,
    /// Patch dimension for dprfs mode
    #[arg(long, default_value_t = DEFAULT_PATCH_DIM)]
    pub patch_dim: usize,
    /// Use templates from this file instead of random data (compact mode; also used as probes)
    #[arg(long, value_name = "PATH")]
    pub templates: Option<PathBuf>,
    /// Use embeddings from this file instead of random data (dprfs mode; also used as probes)
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Minimum measured seconds per figure
    #[arg(long, default_value_t = 3.0)]
    pub seconds: f64,
    /// Threads for the parallel figure [default: all cores]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Seed for random data
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the report as JSON
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Args, Debug)]
pub struct ImportArgs {
    /// CSV with header subject,media,m_1..m_n followed by aux then patch floats
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Output embedding container
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Comma-separated per-patch dimensions
    #[arg(long, value_delimiter = ',', default_value = "512,512,512,512,512,512,512,512")]
    pub patch_dims: Vec<usize>,
    /// Auxiliary vector dimension
    #[arg(long, default_value_t = 0)]
    pub aux_dim: usize,
    /// Visibility threshold applied to the m_i columns
    #[arg(long, default_value_t = 0.7)]
    pub eps: f64,
    #[command(flatten)]
    pub config: ConfigArg,
}
