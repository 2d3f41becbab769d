use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Scenario {
    /// Independent covariate innovations.
    A,
    /// Innovations with a random correlation matrix.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Scale {
    /// 20,000 bins, 40 patients, 8 signatures.
    Full,
    /// 2,000 bins, 10 patients, 4 signatures.
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Form {
    Exact,
    Printed,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "a")]
    pub scenario: Scenario,
    #[arg(long, value_enum, default_value = "full")]
    pub scale: Scale,
    #[arg(long)]
    pub n_bins: Option<usize>,
    #[arg(long)]
    pub bin_width: Option<u64>,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub p_true: Option<usize>,
    #[arg(long)]
    pub k0: Option<usize>,
    /// CSV matrix (channels x signatures) used for the leading truth columns.
    #[arg(long)]
    pub fixed_signatures: Option<PathBuf>,
    /// CSV matrix (p x p) for the covariate innovations; overrides the scenario.
    #[arg(long)]
    pub sigma0: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Directory with bins.tsv and mutations.tsv, optionally copies.tsv and patients.txt.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<PathBuf>,
    #[arg(long)]
    pub mutations: Option<PathBuf>,
    /// Copy-number segments; without them every patient is diploid.
    #[arg(long)]
    pub copies: Option<PathBuf>,
    /// Patient order, one id per line (default: sorted ids from the catalog).
    #[arg(long)]
    pub patient_list: Option<PathBuf>,
    /// Covariate columns to use (default: all non-coordinate columns).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Fit copy numbers only.
    #[arg(long)]
    pub no_covariates: bool,
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long, default_value_t = 0.999)]
    pub cap_quantile: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct HyperArgs {
    /// Upper bound on the number of signatures.
    #[arg(short = 'k', long = "factors", default_value_t = 15)]
    pub k: usize,
    #[arg(long, default_value_t = 1.01)]
    pub a: f64,
    #[arg(long, default_value_t = 0.001)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1.01)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100.0)]
    pub c0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub d0: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PruneArgs {
    #[arg(long)]
    pub no_prune: bool,
    /// Discard only factors with relevance weight at most this multiple of epsilon.
    #[arg(long, default_value_t = 5.0)]
    pub mu_factor: f64,
    #[arg(long, default_value_t = 0.975)]
    pub cos_threshold: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FitMapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub prune: PruneArgs,
    #[arg(long, default_value_t = 3)]
    pub starts: usize,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, default_value_t = 2)]
    pub newton_repeats: usize,
    #[arg(long, value_enum, default_value = "exact")]
    pub update_form: Form,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-iteration JSON progress lines on stderr.
    #[arg(long)]
    #[serde(skip)]
    pub verbose: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ChainArgs {
    #[arg(long, default_value_t = 2000)]
    pub iter: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_shrinks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FitMcmcArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Fit directory whose estimates start the chain; K is taken from it.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct RefitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Reference signatures, channels x signatures, columns summing to one.
    #[arg(long)]
    pub signatures: PathBuf,
    /// Flag factors whose posterior mean relevance is at most this multiple of epsilon.
    #[arg(long, default_value_t = 1.5)]
    pub shrink_factor: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CompnmfArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub prune: PruneArgs,
    #[arg(long, default_value_t = 3)]
    pub starts: usize,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AttributeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub fit: PathBuf,
    /// Second fit for a cross-model confusion table.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PostprocessArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long, default_value_t = 0.001)]
    pub epsilon: f64,
    #[command(flatten)]
    pub prune: PruneArgs,
    /// Truth directory with R0.csv and optionally B0.csv and Theta0.csv.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    pub f1_cut: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PredictTrackArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub fit: PathBuf,
    /// Window size in bins.
    #[arg(long, default_value_t = 500)]
    pub window: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
