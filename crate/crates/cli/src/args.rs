use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use icmvc::graphs::TransferRule;
use icmvc::trainer::Ablation;

#[derive(Debug, Parser)]
#[command(name = "icmvc", version, about = "Incomplete contrastive multi-view clustering experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Gaussian-blob dataset directory.
    Gen(GenArgs),
    /// Train on one dataset, one missing rate and one seed.
    Run(RunArgs),
    /// Train over a grid of missing rates and seeds.
    Sweep(SweepArgs),
    /// Score the four loss configurations over several seeds.
    Ablate(AblateArgs),
    /// Score predicted labels against true labels.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub views: usize,
    #[arg(long)]
    pub clusters: usize,
    /// Features per view.
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, env = "ICMVC_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Skip the per-view random rotation.
    #[arg(long)]
    pub no_rotate: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Model and optimizer settings shared by the training commands. Unset
/// flags fall back to the config file, then to the built-in defaults.
#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    /// Dataset directory (view1.csv.., labels.csv, optional mask.csv).
    #[arg(long)]
    pub data: PathBuf,
    /// Flat JSON file of training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub knn: Option<usize>,
    #[arg(long)]
    pub tau_i: Option<f64>,
    #[arg(long)]
    pub tau_c: Option<f64>,
    #[arg(long)]
    pub tau_att: Option<f64>,
    /// Width of the projection heads.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Width of the GCN hidden layers.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, value_parser = ["copy", "union", "intersection"])]
    pub transfer: Option<String>,
}

impl TrainArgs {
    pub fn transfer_rule(&self) -> Option<TransferRule> {
        self.transfer.as_deref().map(|s| s.parse().expect("checked by clap"))
    }
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: icmvc::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Missing rate; without it the dataset's mask.csv is used.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, env = "ICMVC_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_ablation)]
    pub ablate: Option<Ablation>,
    /// Also write the fused embedding rows to embeddings.csv.
    #[arg(long)]
    pub embeddings: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    /// Explicit seed list; defaults to five consecutive seeds from `--seed`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, env = "ICMVC_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Concurrent runs; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl SeedArgs {
    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds
            .clone()
            .unwrap_or_else(|| (self.seed..self.seed + 5).collect())
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub seeds: SeedArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9])]
    pub eta: Vec<f64>,
    #[arg(long, value_parser = parse_ablation)]
    pub ablate: Option<Ablation>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub seeds: SeedArgs,
    #[arg(long, default_value_t = 0.3)]
    pub eta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted labels, one id per line.
    #[arg(long)]
    pub pred: PathBuf,
    /// True labels, one id per line.
    #[arg(long)]
    pub truth: PathBuf,
    /// Directory for metrics.json and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
