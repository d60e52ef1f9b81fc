use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use diml_core::matching::MarginalMode;
use diml_core::ot::SinkhornConfig;
use diml_core::Combine;

#[derive(Debug, Parser)]
#[command(
    name = "diml",
    version,
    about = "Structural re-ranking of retrieval results with optimal transport"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank a gallery for every query, re-scoring the top K structurally.
    Rerank(RerankArgs),
    /// Score rankings with P@1, R-Precision and MAP@R.
    Eval(EvalArgs),
    /// Break one query/gallery match down into its transport plan.
    Explain(ExplainArgs),
    /// Run the Sinkhorn solver on a cost matrix read from JSON.
    Solve(SolveArgs),
    /// Forward values of the structural metric-learning losses over a bank.
    LossEval(LossEvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum CombineArg {
    Sum,
    StructuralOnly,
    CosineOnly,
}

impl From<CombineArg> for Combine {
    fn from(c: CombineArg) -> Self {
        match c {
            CombineArg::Sum => Combine::Sum,
            CombineArg::StructuralOnly => Combine::StructuralOnly,
            CombineArg::CosineOnly => Combine::CosineOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MarginalArg {
    /// Cross-correlation of each map's cells with the other map's mean.
    Cc,
    Uniform,
}

impl From<MarginalArg> for MarginalMode {
    fn from(m: MarginalArg) -> Self {
        match m {
            MarginalArg::Cc => MarginalMode::CrossCorrelation,
            MarginalArg::Uniform => MarginalMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Entropic regularization strength.
    #[arg(long, default_value_t = 0.05)]
    pub lambda: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Max-norm marginal violation at which iteration stops.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

impl SolverArgs {
    pub fn config(&self) -> SinkhornConfig {
        SinkhornConfig {
            lambda: self.lambda,
            max_iters: self.max_iters,
            tol: self.tol,
            log_domain: true,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BankArgs {
    /// Gallery feature bank; its manifest sits next to it.
    #[arg(long)]
    pub bank: PathBuf,
    /// Query bank. Without it the gallery queries itself, leaving each
    /// query out of its own candidates.
    #[arg(long)]
    pub queries: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RerankArgs {
    #[command(flatten)]
    pub banks: BankArgs,
    /// Candidates re-scored structurally per query; 0 keeps the cosine ranking.
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Pooled grid side for the structural stage.
    #[arg(long, default_value_t = 4)]
    pub grid: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = CombineArg::Sum)]
    pub combine: CombineArg,
    #[arg(long, value_enum, default_value_t = MarginalArg::Cc)]
    pub marginals: MarginalArg,
    /// JSON-lines output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "DIML_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// JSON-lines rankings written by `rerank`.
    #[arg(long)]
    pub rankings: PathBuf,
    #[command(flatten)]
    pub banks: BankArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub banks: BankArgs,
    /// Query id (looked up in --queries, else --bank).
    #[arg(long)]
    pub query: String,
    /// Gallery id.
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 4)]
    pub grid: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = MarginalArg::Cc)]
    pub marginals: MarginalArg,
    #[arg(long, default_value_t = 5)]
    pub top_m: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// JSON with `cost`, `mu_s`, `mu_t` and optional solver fields; `-` reads stdin.
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
    /// Also solve the unregularized problem exactly (small instances only).
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossKind {
    Margin,
    Ms,
    ProxyNca,
}

#[derive(Debug, Clone, Args)]
pub struct LossEvalArgs {
    /// Batch bank.
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, value_enum)]
    pub loss: LossKind,
    /// Proxy bank for proxy-nca; labels pick the class. Defaults to the
    /// first batch item of each class.
    #[arg(long)]
    pub proxies: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub grid: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = MarginalArg::Uniform)]
    pub marginals: MarginalArg,
    #[arg(long, default_value_t = 0.2)]
    pub sigma: f64,
    /// Margin decision boundary.
    #[arg(long, default_value_t = 1.2)]
    pub beta: f64,
    /// Multi-similarity positive scale.
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    /// Multi-similarity negative scale.
    #[arg(long = "ms-beta", default_value_t = 50.0)]
    pub ms_beta: f64,
    #[arg(long = "ms-lambda", default_value_t = 0.5)]
    pub ms_lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
}
