use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use setproc::learn::{CardFamily, FeatFamily, GmmOptions};

#[derive(Debug, Parser)]
#[command(name = "setproc", version, about = "Point-process learning on point-pattern data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample labeled patterns from a built-in scenario or a config file.
    Simulate(SimulateArgs),
    /// Fit a classifier or a single novelty model.
    Train(TrainArgs),
    /// Posterior class probabilities and labels for each pattern.
    Classify(ClassifyArgs),
    /// Flag novel patterns against a quantile threshold.
    Detect(DetectArgs),
    /// Finite-mixture clustering by EM.
    ClusterEm(ClusterEmArgs),
    /// Dirichlet-process clustering by collapsed Gibbs sampling.
    ClusterDp(ClusterDpArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Stratified k-fold cross-validation of a classifier.
    Xval(XvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Classify,
    Novelty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Classify,
    Novelty,
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Poisson,
    Nb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CardArg {
    Categorical,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    Uniform,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankArg {
    Ranking,
    Density,
    Nb,
}

/// `gaussian` or `gmm:J`.
pub fn parse_feat(s: &str) -> Result<FeatFamily, String> {
    if s == "gaussian" {
        return Ok(FeatFamily::Gaussian);
    }
    if let Some(j) = s.strip_prefix("gmm:") {
        let j: usize = j.parse().map_err(|_| format!("invalid component count in '{s}'"))?;
        if j == 0 {
            return Err("a mixture needs at least one component".into());
        }
        return Ok(FeatFamily::Gmm(GmmOptions::with_components(j)));
    }
    Err(format!("expected 'gaussian' or 'gmm:J', got '{s}'"))
}

/// Cardinality and feature family flags shared by fitting commands.
#[derive(Debug, Clone, Args)]
pub struct FamilyArgs {
    #[arg(long, value_enum, default_value = "poisson")]
    pub card: CardArg,
    #[arg(long, value_parser = parse_feat, default_value = "gaussian")]
    pub feat: FeatFamily,
    /// Laplace smoothing for categorical cardinalities.
    #[arg(long, default_value_t = 1.0)]
    pub laplace: f64,
    /// Largest supported cardinality for categorical cardinalities.
    #[arg(long)]
    pub max_card: Option<usize>,
    /// Unit hyper-volume of the reference measure.
    #[arg(long, default_value_t = 1.0)]
    pub unit_u: f64,
}

impl FamilyArgs {
    pub fn card_family(&self) -> CardFamily {
        match self.card {
            CardArg::Poisson => CardFamily::Poisson,
            CardArg::Categorical => CardFamily::Categorical {
                max: self.max_card,
                laplace: self.laplace,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, conflicts_with = "config", value_parser = clap::builder::PossibleValuesParser::new(crate::scenario::BUILTIN_NAMES))]
    pub scenario: Option<String>,
    /// Scenario config as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Patterns per class: one value for all classes or one per class.
    #[arg(long, value_delimiter = ',')]
    pub counts: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the resolved config.
    #[arg(long)]
    pub config_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long, value_enum, default_value = "poisson")]
    pub model: ModelKind,
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long, value_enum, default_value = "uniform")]
    pub prior: PriorArg,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// A fitted point-process model or a saved detector.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub quantile: f64,
    /// Scoring mode; defaults to the saved detector's mode, else ranking.
    #[arg(long, value_enum)]
    pub rank: Option<RankArg>,
    /// Normal patterns used to set the threshold.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub detector_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterEmArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Log-likelihood trace as JSON.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ClusterDpArgs {
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 100)]
    pub burnin: usize,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub hyper_out: Option<PathBuf>,
    /// Cluster-count trace and point-estimate score as JSON.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub task: EvalTask,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fold manifest `{"folds": [[index, ...], ...]}` for per-fold mean and std.
    #[arg(long)]
    pub folds: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct XvalArgs {
    #[arg(long, default_value_t = 4)]
    pub folds: usize,
    #[arg(long, value_enum, default_value = "poisson")]
    pub model: ModelKind,
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long, value_enum, default_value = "uniform")]
    pub prior: PriorArg,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
    /// Out-of-fold predictions in input order.
    #[arg(long)]
    pub pred_out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
