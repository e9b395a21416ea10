use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "n2n",
    version,
    about = "Speech denoising with noisy or clean training targets"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GlobalArgs {
    /// Base seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Floating-point width of model arithmetic: 32 or 64.
    #[arg(long, global = true, default_value_t = 32)]
    pub precision: u32,
    /// Pipeline sample rate in Hz; audio is resampled on load.
    #[arg(long, global = true, default_value_t = 16_000)]
    pub sample_rate: u32,
    /// JSON object whose keys override flags of the same name.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic harmonic "speech" clips.
    Synth(SynthArgs),
    /// Mix clean speech with noise into a training or test set.
    Mix(MixArgs),
    /// Train a network on a mixed dataset.
    Train(TrainArgs),
    /// Denoise a WAV file or a directory of them.
    Denoise(DenoiseArgs),
    /// Score a test set, optionally through trained networks.
    Eval(EvalArgs),
    /// Compare saved metric reports.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Mix(_) => "mix",
            Command::Train(_) => "train",
            Command::Denoise(_) => "denoise",
            Command::Eval(_) => "eval",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    /// Noisy targets; noise drawn from the bank, categories as given.
    N2n,
    /// Clean targets.
    N2c,
    /// Test pairs whose target is the clean reference.
    Test,
    /// Noisy targets with input and target categories both drawn at random.
    Mixed,
    /// Noisy targets with independent white noise on each side.
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Float32,
    Pcm16,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MixArgs {
    #[arg(long)]
    pub clean_dir: PathBuf,
    /// Directory with one sub-directory of WAV files per noise category.
    #[arg(long, conflicts_with = "white")]
    pub noise_dir: Option<PathBuf>,
    /// Use white Gaussian noise instead of a noise bank.
    #[arg(long)]
    pub white: bool,
    #[arg(long, value_enum)]
    pub mode: MixMode,
    /// Input noise category, or "random".
    #[arg(long, default_value = "random")]
    pub category: String,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Encoding::Float32)]
    pub encoding: Encoding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    N2n,
    N2c,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Preset name (desk-10, dcunet-20, tiny) or a JSON architecture file.
    #[arg(long, default_value = "desk-10")]
    pub arch: String,
    #[arg(long, value_enum)]
    pub mode: TrainMode,
    #[arg(long, default_value_t = 4)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Training crop length in samples.
    #[arg(long, default_value_t = 16_384)]
    pub crop: usize,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Save a resumable checkpoint every N steps (0 disables).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Single worker for reproducible runs.
    #[arg(long)]
    pub deterministic: bool,
    /// Continue from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// WAV file or directory of WAV files.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Test-set manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Network scored under the condition name given by --name.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "Model")]
    pub name: String,
    /// Network trained with clean targets.
    #[arg(long)]
    pub n2c: Option<PathBuf>,
    /// Network trained with noisy targets.
    #[arg(long)]
    pub n2n: Option<PathBuf>,
    /// External PESQ scores as CONDITION=FILE (CSV pair_id,pesq_nb,pesq_wb).
    #[arg(long)]
    pub pesq_csv: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Plotdata,
    Text,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Report JSON files; the first is the reference for differences.
    #[arg(long, num_args = 1.., required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    pub format: ReportFormat,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
