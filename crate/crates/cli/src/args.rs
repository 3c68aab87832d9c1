use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ravg", version, about = "Temporal kernel-predicting denoiser with robust-average blocks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render synthetic sequences and write a training dataset
    GenData(GenDataArgs),
    /// Train a model on a generated dataset
    Train(TrainArgs),
    /// Denoise a rendered sequence with a checkpoint
    Denoise(DenoiseArgs),
    /// Report per-frame kernel weight statistics
    Stats(StatsArgs),
    /// PSNR and SSIM between two RTF images
    Metrics(MetricsArgs),
}

#[derive(Args, Debug, Clone)]
pub struct GenDataArgs {
    /// Scene preset(s), comma separated, or a scene JSON file
    #[arg(long, default_value = "pan-checker")]
    pub scene: String,
    /// Frames per scene
    #[arg(long, default_value_t = 24)]
    pub frames: usize,
    /// Base sample count n (half = floor(n/e), low = 4)
    #[arg(long, default_value_t = 32)]
    pub spp: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Temporal half-window k (windows hold 2k+1 frames)
    #[arg(long, default_value_t = 2)]
    pub window: usize,
    /// Noise pair for every window ("random" or e.g. "half->noisy")
    #[arg(long, default_value = "random")]
    pub pair: String,
    /// Tile size for dataset records (0 disables tiling)
    #[arg(long, default_value_t = 64)]
    pub tile: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write 8-bit PNG previews of each sequence [default: off]
    #[arg(long)]
    pub png: bool,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Temporal,
    Spatial,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    RaVsTkpcn,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Dataset directory
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Validation dataset directory [default: hold out part of --data]
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Fraction of --data held out for validation when --val is absent
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    /// Model preset (desk-tiny, desk, paper) or a model JSON file
    #[arg(long, default_value = "desk-tiny")]
    pub config: String,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = LossKind::Temporal)]
    pub loss: LossKind,
    /// Fraction of steps in the second phase
    #[arg(long, default_value_t = 0.2)]
    pub phase2_frac: f64,
    /// Add the down-weighted global term in the second phase
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub post_train: bool,
    /// Validate every N steps
    #[arg(long, default_value_t = 100)]
    pub val_every: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run an ablation study instead of a single training run
    #[arg(long, value_enum, default_value_t = Ablation::None)]
    pub ablate: Ablation,
    /// Continue from <out>/last, keeping the step counter [default: off]
    #[arg(long)]
    pub resume: bool,
    /// Run directory
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct InferenceArgs {
    /// Checkpoint directory (holding model.json)
    #[arg(long, default_value = "run/best")]
    pub checkpoint: PathBuf,
    /// Sequence directory (holding sequence.json)
    #[arg(long, default_value = "data/sequences/pan-checker")]
    pub input: PathBuf,
    /// Kernel threshold t in [0, 1/K) [default: from checkpoint]
    #[arg(long)]
    pub kernel_threshold: Option<f64>,
    /// Expected kernel size HxW ("auto" accepts the checkpoint's)
    #[arg(long, default_value = "auto")]
    pub kernel: String,
}

#[derive(Args, Debug, Clone)]
pub struct DenoiseArgs {
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Number of denoising passes
    #[arg(long, default_value_t = 1)]
    pub passes: usize,
    /// RTF file with one auxiliary image per frame to filter with the color kernels [default: none]
    #[arg(long)]
    pub aov: Option<PathBuf>,
    /// Also write 8-bit PNG previews [default: off]
    #[arg(long)]
    pub png: bool,
    #[arg(long, default_value = "denoised")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct StatsArgs {
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Also write per-frame contribution images (RTF and PNG) [default: off]
    #[arg(long)]
    pub contributions: bool,
    #[arg(long, default_value = "stats")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct MetricsArgs {
    /// Image under test (RTF)
    pub test: PathBuf,
    /// Reference image (RTF)
    pub reference: PathBuf,
    /// Record to read from multi-record files [default: first record]
    #[arg(long)]
    pub record: Option<String>,
    /// Peak value for PSNR after clipping to [0, peak]
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
}
