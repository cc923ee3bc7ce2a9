use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "basisformer", version, about = "Train, evaluate and inspect basis-expansion forecasters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a series.
    Eval(EvalArgs),
    /// Forecast the next O steps from a history CSV.
    Predict(PredictArgs),
    /// Train every point of a hyperparameter grid over several seeds.
    Ablate(AblateArgs),
    /// Write the basis a checkpoint generates at one τ.
    ExportBasis(ExportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Run directory holding `checkpoint.bfck`; results go here too.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Checkpoint to load instead of `<out>/checkpoint.bfck`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Window stride for scoring.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// CSV with exactly I rows and C channel columns after the timestamp.
    #[arg(long)]
    pub history: PathBuf,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Normalized timestamp of the first history step.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Grid axis `key=v1,v2,...`; repeat for a cartesian product.
    #[arg(long = "grid", required = true)]
    pub grid: Vec<String>,
    /// Seeds to train each variant with (defaults to --seed).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Also draw the basis as an SVG line plot.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV path, `synth`, or `synth:key=value,...` (channels, length,
    /// periods as p1/p2/..., noise). Synthetic data follows the seed.
    #[arg(long, default_value = "synth")]
    pub data: String,
}

/// Flags that override config file values.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML file with flat `key = value` settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Number of basis functions.
    #[arg(long = "N")]
    pub n_basis: Option<usize>,
    /// Number of heads; must divide O.
    #[arg(long = "H")]
    pub heads: Option<usize>,
    /// Number of cross-attention layers.
    #[arg(long = "M")]
    pub layers: Option<usize>,
    /// Coefficient embedding width.
    #[arg(long = "Dc")]
    pub d_c: Option<usize>,
    #[arg(long)]
    pub bottleneck: Option<usize>,
    /// InfoNCE temperature.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub w_pred: Option<f64>,
    #[arg(long)]
    pub w_align: Option<f64>,
    #[arg(long)]
    pub w_smooth: Option<f64>,
    /// learnable, fixed-sine-grid or random-sine.
    #[arg(long)]
    pub basis_kind: Option<String>,
    /// History length.
    #[arg(long = "I")]
    pub input_len: Option<usize>,
    /// Forecast horizon.
    #[arg(long = "O")]
    pub output_len: Option<usize>,
    /// Training window stride.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Train/val/test ratios, e.g. 0.7,0.1,0.2.
    #[arg(long)]
    pub split: Option<String>,
}

impl ConfigArgs {
    /// `(config key, value)` for every flag that was given.
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |key: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((key, v));
            }
        };
        let s = |v: Option<usize>| v.map(|v| v.to_string());
        let f = |v: Option<f64>| v.map(|v| v.to_string());
        put("seed", self.seed.map(|v| v.to_string()));
        put("epochs", s(self.epochs));
        put("patience", s(self.patience));
        put("n_basis", s(self.n_basis));
        put("heads", s(self.heads));
        put("layers", s(self.layers));
        put("d_c", s(self.d_c));
        put("bottleneck", s(self.bottleneck));
        put("temperature", f(self.epsilon));
        put("w_pred", f(self.w_pred));
        put("w_align", f(self.w_align));
        put("w_smooth", f(self.w_smooth));
        put("basis_kind", self.basis_kind.clone());
        put("input_len", s(self.input_len));
        put("output_len", s(self.output_len));
        put("stride", s(self.stride));
        put("batch_size", s(self.batch));
        put("lr", f(self.lr));
        put("split", self.split.clone());
        out
    }
}
