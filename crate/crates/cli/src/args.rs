use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use supersparse::dataio::SyntheticKind;
use supersparse::metrics::LossKind;
use supersparse::GradMode;

#[derive(Parser, Debug)]
#[command(name = "supersparse", version, about = "Train and evaluate models built on a few learned prototypes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model with a fixed number of prototypes.
    Train(TrainArgs),
    /// Choose the number of prototypes by cross-validation.
    SelectM(SelectArgs),
    /// Train a prototype-selection or full-kernel baseline.
    Baseline(BaselineArgs),
    /// Compare methods on one train/test pair.
    Bench(BenchArgs),
    /// Score a CSV file with a saved model.
    Predict(PredictArgs),
    /// Write a synthetic dataset to CSV.
    Generate(GenerateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Training CSV with a header row.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generate the training set instead of reading one.
    #[arg(long, value_parser = parse_synthetic)]
    pub synthetic: Option<SyntheticKind>,
    /// Size of the generated set (default depends on the kind).
    #[arg(long, requires = "synthetic", value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    #[arg(long, default_value = "y")]
    pub target: String,
    #[arg(long)]
    pub group_column: Option<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SimilarityKind {
    Rbf,
    Linear,
    Blackbox,
}

#[derive(Args, Debug, Clone)]
pub struct SimilarityArgs {
    #[arg(long, value_enum, default_value_t = SimilarityKind::Rbf)]
    pub similarity: SimilarityKind,
    /// RBF width; defaults to 1/d.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Scorer command line for `--similarity blackbox`.
    #[arg(long, required_if_eq("similarity", "blackbox"))]
    pub scorer: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 1e-6)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    pub eta: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_sweeps: u64,
    #[arg(long, value_parser = parse_grad_mode, default_value = "analytic")]
    pub grad_mode: GradMode,
    /// Repel prototypes from each other (default).
    #[arg(long, overrides_with = "no_penalty")]
    pub penalty: bool,
    #[arg(long, action = ArgAction::SetTrue)]
    pub no_penalty: bool,
    /// `none`, `hull`, or per-dimension `lo:hi` pairs separated by commas.
    #[arg(long = "box", default_value = "none")]
    pub bounds: String,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub similarity: SimilarityArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub m: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub similarity: SimilarityArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Strictly descending sizes, e.g. `10,8,6,4,2`.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Cost per prototype; defaults by loss.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, value_parser = parse_loss, default_value = "mse")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Virtual prototypes trained by alternating descent.
    Sparse,
    PsR,
    PsB,
    PsS,
    PsKm,
    Ridge,
    Lasso,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sparse => "sparse",
            Method::PsR => "ps-r",
            Method::PsB => "ps-b",
            Method::PsS => "ps-s",
            Method::PsKm => "ps-km",
            Method::Ridge => "ridge",
            Method::Lasso => "lasso",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct BaselineOpts {
    /// Coefficient ridge penalty.
    #[arg(long, default_value_t = 1e-6)]
    pub lambda: f64,
    /// L1 penalty for `lasso`; when absent it is tuned to keep `--m` prototypes.
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Evaluation CSV; the training set is used when absent.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub similarity: SimilarityArgs,
    #[command(flatten)]
    pub opts: BaselineOpts,
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub m: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub similarity: SimilarityArgs,
    #[command(flatten)]
    pub opts: BaselineOpts,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "sparse,ps-r,ps-b,ps-s,ps-km,ridge,lasso"
    )]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub m: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Target column; scored as truth when present in the file.
    #[arg(long, default_value = "y")]
    pub target: String,
    /// Column to ignore when reading features.
    #[arg(long)]
    pub group_column: Option<String>,
    /// Predictions CSV; the manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_parser = parse_synthetic)]
    pub kind: SyntheticKind,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_synthetic(s: &str) -> Result<SyntheticKind, String> {
    s.parse().map_err(|e: supersparse::Error| e.to_string())
}

fn parse_grad_mode(s: &str) -> Result<GradMode, String> {
    s.parse().map_err(|e: supersparse::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: supersparse::Error| e.to_string())
}
