//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "resq", version, about = "Offline residual vector quantization of latent frames")]
pub struct Cli {
    /// Worker threads for frame-parallel work; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a quantizer on a frame file.
    Train(TrainArgs),
    /// Encode frames into a packed code stream.
    Encode(EncodeArgs),
    /// Decode a code stream into reconstructed frames.
    Decode(DecodeArgs),
    /// Report MSE and codebook usage of a model on a frame file.
    Eval(EvalArgs),
    /// Convert a headerless little-endian blob into a frame file.
    Import(ImportArgs),
    /// Describe a model, stream or frame file.
    Dump(DumpArgs),
    /// Bits per second for N codebooks of size K at frame rate F.
    Bitrate(BitrateArgs),
    /// Write a seeded synthetic mixture as a frame file.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuantizerKind {
    Rvq,
    Irvq,
    Qinco,
}

impl QuantizerKind {
    pub fn name(self) -> &'static str {
        match self {
            QuantizerKind::Rvq => "rvq",
            QuantizerKind::Irvq => "irvq",
            QuantizerKind::Qinco => "qinco",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub quantizer: QuantizerKind,
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub n_codebooks: usize,
    #[arg(long, default_value_t = 1024)]
    pub codebook_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mini-batch k-means updates per codebook.
    #[arg(long, default_value_t = 1000)]
    pub kmeans_iters: usize,
    /// Mini-batch k-means batch size; defaults to three times the codebook size.
    #[arg(long)]
    pub kmeans_batch: Option<usize>,
    /// Residual blocks per stage network (qinco).
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    /// Hidden width of the stage networks (qinco).
    #[arg(long, default_value_t = 128)]
    pub hidden_dim: usize,
    /// Optimizer steps (qinco).
    #[arg(long, default_value_t = 1000)]
    pub steps: u64,
    /// Adam learning rate (qinco).
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f32,
    /// Frames per optimizer step (qinco).
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Record the training loss every this many steps (qinco).
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Latent frames per second; stored in the stream and used for the bitrate.
    #[arg(long)]
    pub frame_rate: Option<f64>,
    /// Store one u32 per code instead of packing.
    #[arg(long)]
    pub unpacked: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub frames: PathBuf,
    /// Write the per-stage perplexity curve as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Headerless blob of little-endian values.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub latent_dim: usize,
    #[arg(long, value_enum, default_value_t = Dtype::F32)]
    pub dtype: Dtype,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct DumpTarget {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub stream: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub target: DumpTarget,
    /// Frames (or codebook entries) to list.
    #[arg(long, default_value_t = 8)]
    pub limit: usize,
}

#[derive(Debug, Args)]
pub struct BitrateArgs {
    #[arg(long)]
    pub n_codebooks: usize,
    #[arg(long)]
    pub codebook_size: usize,
    #[arg(long)]
    pub frame_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKindArg {
    Isotropic,
    Anisotropic,
    HeavyTailed,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKindArg::HeavyTailed)]
    pub kind: SynthKindArg,
    #[arg(long, default_value_t = 16)]
    pub components: usize,
    #[arg(long)]
    pub latent_dim: usize,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub spread_min: Option<f64>,
    #[arg(long)]
    pub spread_max: Option<f64>,
    #[arg(long)]
    pub center_spread: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}
