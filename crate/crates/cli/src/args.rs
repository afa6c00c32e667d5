use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use funcnet::data::{Split, Task};
use funcnet::func_param::MapKind;
use funcnet::model::ModelKind;

#[derive(Debug, Parser)]
#[command(
    name = "funcnet",
    version,
    about = "Train and evaluate functional restoration networks"
)]
pub struct Cli {
    /// Worker threads; 0 reads FUNCNET_THREADS or uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write its checkpoint and log.
    Train(TrainArgs),
    /// Mean PSNR of a checkpoint at one parameter level.
    Eval(EvalArgs),
    /// Mean PSNR of an exported plain checkpoint.
    EvalPlain(EvalPlainArgs),
    /// PSNR across a grid of parameter levels.
    Sweep(SweepArgs),
    /// Materialize a plain network at one level.
    Export(ExportArgs),
    /// Dump one convolution kernel slice across levels.
    Kernels(KernelArgs),
    /// Train and compare weight parameterizations.
    Ablate(AblateArgs),
    /// Degrade one image the way evaluation does.
    Degrade(DegradeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Auto,
    Denoise,
    Deblock,
}

impl TaskArg {
    pub fn task(self) -> Option<Task> {
        match self {
            TaskArg::Auto => None,
            TaskArg::Denoise => Some(Task::Denoise),
            TaskArg::Deblock => Some(Task::Deblock),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MapArg {
    Auto,
    Identity,
    Reciprocal,
    JpegScale,
    LearnedMlp,
}

impl MapArg {
    pub fn map(self) -> Option<MapKind> {
        match self {
            MapArg::Auto => None,
            MapArg::Identity => Some(MapKind::Identity),
            MapArg::Reciprocal => Some(MapKind::Reciprocal),
            MapArg::JpegScale => Some(MapKind::JpegScale),
            MapArg::LearnedMlp => Some(MapKind::LearnedMlp),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Funcnet,
    Plain,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Funcnet => ModelKind::Funcnet,
            KindArg::Plain => ModelKind::Plain,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
        }
    }
}

/// Run settings shared by `train` and `ablate`. Flags given on the command
/// line override values from `--config`.
#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TaskArg::Denoise)]
    pub task: TaskArg,
    /// Image list with `path,split` rows.
    #[arg(long, default_value = "data/corpus/manifest.csv")]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Funcnet)]
    pub model: KindArg,
    /// Parameter map; `auto` picks the task's own map.
    #[arg(long, value_enum, default_value_t = MapArg::Auto)]
    pub map: MapArg,
    /// Image channels; 0 picks the task's default.
    #[arg(long, default_value_t = 0)]
    pub channels: usize,
    #[arg(long, default_value_t = 20_000)]
    pub iters: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 8_000)]
    pub decay_every: u64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 32)]
    pub patch: usize,
    #[arg(long, default_value_t = 4)]
    pub levels_per_batch: usize,
    #[arg(long, default_value_t = 2_000)]
    pub val_every: u64,
    #[arg(long, default_value_t = 2_000)]
    pub checkpoint_every: u64,
    #[arg(long, default_value_t = 12_345)]
    pub eval_seed: u64,
    /// Print a progress line every this many iterations (0 for silence).
    #[arg(long, default_value_t = 100)]
    pub report_every: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Directory receiving `model.fnck` and `train.log.csv`.
    #[arg(long, default_value = "run")]
    pub out_dir: PathBuf,
    /// Continue from the checkpoint in `--out-dir` when one exists.
    #[arg(long, default_value_t = false)]
    pub resume: bool,
}

#[derive(Clone, Debug, Args)]
pub struct EvalData {
    #[arg(long, default_value = "data/corpus/manifest.csv")]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
    /// Degradation task; `auto` reads it from the checkpoint.
    #[arg(long, value_enum, default_value_t = TaskArg::Auto)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 12_345)]
    pub eval_seed: u64,
    /// Average over the eight flips and rotations of each input.
    #[arg(long, default_value_t = false)]
    pub ensemble: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub x: f64,
    #[command(flatten)]
    pub data: EvalData,
}

#[derive(Debug, Args)]
pub struct EvalPlainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Degradation level; `auto` uses the level the network was exported at.
    #[arg(long, default_value = "auto")]
    pub x: String,
    #[command(flatten)]
    pub data: EvalData,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `start:stop:step` (inclusive) or a comma list; `auto` uses the task grid.
    #[arg(long, default_value = "auto")]
    pub grid: String,
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: EvalData,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub x: f64,
    #[arg(long, default_value = "plain.fnck")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Index of a convolution layer.
    #[arg(long, default_value_t = 0)]
    pub layer: usize,
    #[arg(long, default_value_t = 0)]
    pub out_channel: usize,
    #[arg(long, default_value_t = 0)]
    pub in_channel: usize,
    /// `start:stop:step` (inclusive) or a comma list; `auto` uses the task grid.
    #[arg(long, default_value = "auto")]
    pub grid: String,
    #[arg(long, default_value = "kernels.csv")]
    pub csv: PathBuf,
    /// PGM montage of the slices.
    #[arg(long, default_value = "kernels.pgm")]
    pub montage: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated subset of funcnet, plain, identity_h, mlp_h.
    #[arg(long, default_value = "funcnet,plain,identity_h,mlp_h")]
    pub variants: String,
    /// Directory for per-variant checkpoints, logs and `ablation.csv`.
    #[arg(long, default_value = "ablation")]
    pub dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// PGM or PPM image.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = TaskArg::Denoise)]
    pub task: TaskArg,
    /// Noise level or JPEG quality.
    #[arg(long)]
    pub x: f64,
    #[arg(long, default_value_t = 12_345)]
    pub seed: u64,
    /// Image index within the evaluation split.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value = "degraded.pnm")]
    pub out: PathBuf,
}
