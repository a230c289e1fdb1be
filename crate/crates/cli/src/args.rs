use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use latentflow::data::SplitName;
use latentflow::tensor::CodecKind;

#[derive(Debug, Parser)]
#[command(name = "latentflow", version, about = "Radar-to-optical translation with latent flow matching")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize paired radar/optical scenes with a split manifest.
    GenData(GenDataArgs),
    /// Fit percentile scalers on the training split.
    FitScaler(FitScalerArgs),
    /// Build (and for vq, train) the radar and optical codecs.
    TrainCodec(TrainCodecArgs),
    /// Encode one split into a latent archive.
    Encode(EncodeArgs),
    /// Train a velocity model from a run config.
    Train(TrainArgs),
    /// Translate chips with a trained run and write result files.
    Infer(InferArgs),
    /// Score result files, or run the schedule comparison benchmark.
    Eval(EvalArgs),
    /// Continue training a checkpoint on another dataset.
    Finetune(FinetuneArgs),
    /// Render truth/prediction panels for result files.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleChoice {
    Linear,
    Expo,
    Cosine,
}

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    /// Interpolation schedule (overrides the config).
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleChoice>,
    /// Rate of the exponential schedule.
    #[arg(long)]
    pub expo_k: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl SplitArg {
    pub fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
            SplitArg::Test => "test",
        }
    }
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Val => SplitName::Val,
            SplitArg::Test => SplitName::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Identity,
    Patch,
    Vq,
}

impl From<KindArg> for CodecKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Identity => CodecKind::Identity,
            KindArg::Patch => CodecKind::Patch,
            KindArg::Vq => CodecKind::Vq,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub scenes: usize,
    /// Scene edge length in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Correlation length of the latent fields, in pixels.
    #[arg(long)]
    pub smoothness: Option<f64>,
    /// Radar mixing matrix, row-major.
    #[arg(long, num_args = 4, value_names = ["A", "B", "C", "D"])]
    pub mixing: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitScalerArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [0.1, 99.9])]
    pub radar_pct: Vec<f64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [1.0, 98.0])]
    pub optical_pct: Vec<f64>,
    /// Raw optical ceiling applied before scaling.
    #[arg(long)]
    pub clip_high: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainCodecArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub scalers: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Patch)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, default_value_t = 2)]
    pub factor: usize,
    /// VQ training epochs (ignored by the training-free codecs).
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub scalers: PathBuf,
    #[arg(long)]
    pub codecs: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset directory (overrides data.dir).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use scalers from `fit-scaler` instead of fitting.
    #[arg(long)]
    pub scalers: Option<PathBuf>,
    /// Use codecs from `train-codec` instead of building them.
    #[arg(long)]
    pub codecs: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to load instead of the run's final model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Number of grid points T.
    #[arg(long)]
    pub steps: Option<usize>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Clamp decoded reflectance to [0, 1] before the indices.
    #[arg(long)]
    pub clip_unit: bool,
    /// Also write RGB/NDVI/NDWI PNGs per chip.
    #[arg(long)]
    pub png: bool,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["results", "benchmark"])))]
pub struct EvalArgs {
    /// Directory of result files from `infer`.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Benchmark config; trains and compares the three schedules.
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    /// Step counts for the benchmark comparison.
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 1000])]
    pub steps: Vec<usize>,
    /// CSV report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON mirror of the report.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Run directory holding config, scalers and codecs.
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint to resume (defaults to the run's final model).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
