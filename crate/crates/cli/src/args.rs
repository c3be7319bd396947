//! Command-line surface. Every subcommand's flags can also be given in the
//! matching table of a TOML config file; flags win over the file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use specsplat_core::TrainConfig;

#[derive(Debug, Parser)]
#[command(name = "specsplat", version, about = "Multi-spectral Gaussian splatting")]
pub struct Cli {
    /// TOML file with a table per subcommand (and an optional top-level `threads`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Render one band from a checkpoint.
    Render(RenderArgs),
    /// Evaluate a checkpoint on the held-out views of a dataset.
    Eval(EvalArgs),
    /// Render a vegetation index map.
    Ndvi(NdviArgs),
    /// Rigidly register two single-band images by mutual information.
    Register(RegisterArgs),
    /// Write a synthetic multi-spectral dataset.
    Synth(SynthArgs),
    /// Per-primitive float counts of a color model.
    Payload(PayloadArgs),
}

impl Command {
    /// Name of the config-file table for this subcommand.
    pub fn table(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Render(_) => "render",
            Command::Eval(_) => "eval",
            Command::Ndvi(_) => "ndvi",
            Command::Register(_) => "register",
            Command::Synth(_) => "synth",
            Command::Payload(_) => "payload",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorModelArg {
    Neural,
    Sh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingArg {
    Weighted,
    Interleave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexArg {
    Ndvi,
    Gndvi,
    Savi,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated band names to train on (default: all).
    #[arg(long, value_delimiter = ',')]
    pub bands: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub color_model: Option<ColorModelArg>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Hidden layer width of the decoder.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Number of hidden-to-hidden layers.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long, value_enum)]
    pub sampling: Option<SamplingArg>,
    /// Sampling weight of RGB views relative to one multi-spectral view.
    #[arg(long)]
    pub rgb_weight: Option<f64>,
    /// Enable or disable densification.
    #[arg(long)]
    pub densify: Option<bool>,
    #[arg(long)]
    pub background: Option<f64>,
    /// Hold out every Nth image per band for evaluation.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Evaluate held-out views every N iterations (0: only at the end).
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// Rewrite the output checkpoint every N iterations (0: only at the end).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Metrics log; defaults to the output path with a `.log` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Full training configuration that the flags above override.
    #[arg(skip)]
    pub options: Option<TrainConfig>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// View index within the band (needs --data) or a pose TOML file.
    #[arg(long)]
    pub view: Option<String>,
    /// Dataset whose cameras index views.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub band: Option<String>,
    /// Output image (.png or .tif, 16-bit).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Report table; defaults to the checkpoint path with `.eval.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Key-value report; defaults to the report path with a `.kv` extension.
    #[arg(long)]
    pub kv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NdviArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// View index within the NIR band (needs --data) or a pose TOML file.
    #[arg(long)]
    pub view: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// 16-bit index image; the colorized map goes next to it as `<stem>_color.png`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub index: Option<IndexArg>,
    /// Soil brightness term of SAVI.
    #[arg(long)]
    pub lsoil: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegisterArgs {
    /// Reference image.
    #[arg(long = "ref")]
    #[serde(rename = "ref")]
    pub reference: Option<PathBuf>,
    /// Image moved onto the reference.
    #[arg(long)]
    pub moving: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Search bounds as `max_shift_px,max_angle_deg`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub bounds: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optional 16-bit gradient error map of the registered pair.
    #[arg(long)]
    pub error_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub gaussians: Option<usize>,
    /// Views per band.
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Give NIR primitive-level texture that the other bands lack.
    #[arg(long)]
    pub nir_texture: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PayloadArgs {
    #[arg(long, value_enum)]
    pub color_model: Option<ColorModelArg>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub sh_degree: Option<usize>,
    /// Total channel count of the band set (7 for RGB plus four narrow bands).
    #[arg(long)]
    pub channels: Option<usize>,
    /// Primitive count for the model-size estimate.
    #[arg(long)]
    pub primitives: Option<usize>,
    /// Read the model kind and sizes from a checkpoint instead.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
}
