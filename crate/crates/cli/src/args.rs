use std::path::PathBuf;

use adascan::model::{HyperParams, RegKind};
use adascan::Pooler;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "adascan", version, about = "Adaptive scan pooling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write model.json and metrics.jsonl.
    Train(TrainArgs),
    /// Evaluate a saved model.
    Eval(EvalArgs),
    /// Write per-frame importances of an adaptive model.
    Trace(TraceArgs),
    /// Train one adaptive model per lambda and report accuracy and sparsity.
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients on a small instance.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic benchmark as train.jsonl and test.jsonl.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Synthetic preset (standard, default, hard, tiny), inline JSON config, or
    /// path to a JSON config. Used when --data is absent.
    #[arg(long, conflicts_with = "data")]
    pub synthetic: Option<String>,

    /// JSONL file with one sequence per line.
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Held-out JSONL file used alongside --data.
    #[arg(long, requires = "data")]
    pub test_data: Option<PathBuf>,

    /// Number of classes for JSONL input (default: largest label + 1).
    #[arg(long)]
    pub classes: Option<usize>,

    /// Keep N evenly spaced frames of every sequence.
    #[arg(long)]
    pub subsample: Option<usize>,
}

fn parse_hidden(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected two sizes like 64,32, got '{s}'"))?;
    let h1 = a.trim().parse().map_err(|e| format!("bad size '{a}': {e}"))?;
    let h2 = b.trim().parse().map_err(|e| format!("bad size '{b}': {e}"))?;
    Ok((h1, h2))
}

#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value = "entropy", value_parser = ["entropy", "l1", "none"])]
    pub reg: String,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr_pool: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr_classifier: f64,
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value = "64,32", value_parser = parse_hidden)]
    pub hidden: (usize, usize),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl HyperArgs {
    pub fn to_hyper(&self) -> HyperParams {
        HyperParams {
            lambda: self.lambda,
            lr_pool: self.lr_pool,
            lr_classifier: self.lr_classifier,
            clip_norm: self.clip_norm,
            epochs: self.epochs,
            batch_size: self.batch_size,
            dropout_p: self.dropout,
            reg_kind: self.reg.parse::<RegKind>().expect("value_parser restricts --reg"),
            hidden: self.hidden,
            seed: self.seed,
        }
    }
}

fn parse_pooler(s: &str) -> Result<Pooler, String> {
    s.parse().map_err(|e: adascan::Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "adascan", value_parser = parse_pooler)]
    pub pooler: Pooler,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Also write eval.json into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Draw importance bars on the terminal.
    #[arg(long)]
    pub bars: bool,
    /// Number of samples drawn with --bars.
    #[arg(long, default_value_t = 3)]
    pub limit: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Comma-separated regularization strengths.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,1,10,100")]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "adascan", value_parser = parse_pooler)]
    pub pooler: Pooler,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Scale the backward rule of one primitive (negative control).
    #[arg(long, hide = true)]
    pub corrupt_grad: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value = "standard")]
    pub synthetic: String,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}
