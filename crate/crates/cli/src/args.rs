use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use subsetgrad::estimators::EstimatorKind;

use crate::presets::{Experiment, GeneratorOverrides, ObjectiveChoice};

#[derive(Debug, Parser)]
#[command(
    name = "subsetgrad",
    version,
    about = "Best subset selection by stochastic gradients over inclusion probabilities",
    after_help = "Exit codes: 0 ok, 2 flag error, 3 data error, 4 divergence, 5 problem too large.\n\
                  SUBSETGRAD_THREADS caps the worker pool."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one dataset at a fixed penalty or by cross-validation.
    #[command(after_help = "Writes result.json and coefficients.csv (index,beta_hat,pi_final).")]
    Fit(FitArgs),
    /// Repeated synthetic trials across methods and design grids.
    #[command(after_help = "Writes trials.csv (cell,trial,method,estimator,objective,n,rho,snr,seed,lambda,\
                            precision,recall,f1,nonzero,rr,rte,pve,converged,iters,runtime_s) and summary.json.\n\
                            All columns except runtime_s are reproducible bit-for-bit.")]
    Bench(BenchArgs),
    /// Gradient-estimator diagnostics.
    #[command(after_help = "unbiasedness.csv: kind,estimator,pi,coord,exact,mc_mean,mc_se,z\n\
                            variance_curves.csv: pi,estimator,exact_mean,exact_var,mc_mean,mc_var,snr,closed_form_var\n\
                            ordering.csv: triple,pi,f0,f1,var_u2g,var_arm,var_reinforce,exact_u2g,exact_arm,exact_reinforce,pass")]
    Lab(LabArgs),
    /// Warm-started fits along a penalty grid.
    #[command(after_help = "Writes path.csv (lambda,support,val_mse,converged,iters,beta_0..beta_{p-1}) and path.json.")]
    Path(PathArgs),
    /// Exhaustive best subset for small p.
    #[command(after_help = "Writes oracle.json.")]
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorArg {
    U2g,
    Arm0,
    Arm,
    Reinforce,
}

impl From<EstimatorArg> for EstimatorKind {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::U2g => EstimatorKind::U2g,
            EstimatorArg::Arm0 => EstimatorKind::Arm0,
            EstimatorArg::Arm => EstimatorKind::Arm,
            EstimatorArg::Reinforce => EstimatorKind::Reinforce,
        }
    }
}

#[derive(Debug, Clone, Serialize, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long, value_name = "CSV", conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,
    /// Response column of --data.
    #[arg(long, default_value = "y")]
    pub target: String,
    /// Add an unpenalized intercept column to --data.
    #[arg(long)]
    pub intercept: bool,
    /// Keep --data columns unstandardized.
    #[arg(long)]
    pub raw: bool,
    /// Sidecar `index,beta_star` file with the true coefficients of --data.
    #[arg(long, value_name = "CSV", requires = "data")]
    pub truth: Option<PathBuf>,
    /// Noise standard deviation recorded with --truth.
    #[arg(long, default_value_t = 0.0, requires = "truth")]
    pub truth_sigma: f64,
    /// Generate data from a built-in design instead.
    #[arg(long, value_enum)]
    pub synthetic: Option<Experiment>,
    #[command(flatten)]
    pub generator: GeneratorOverrides,
}

#[derive(Debug, Clone, Serialize, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value = "u2g")]
    pub estimator: EstimatorArg,
    #[arg(long, value_enum, default_value = "freq")]
    pub objective: ObjectiveChoice,
    /// Monte Carlo draws per update.
    #[arg(long)]
    pub k: Option<usize>,
    /// Fixed step size; must be below 2/lambda for the penalized fit.
    #[arg(long)]
    pub step: Option<f64>,
    /// Seed for data generation, splits and draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Penalty. Default log(n)/(2n); for --objective vi the prior logit, default log(p).
    #[arg(long, conflicts_with = "cv")]
    pub lambda: Option<f64>,
    /// Choose the penalty on a validation split.
    #[arg(long)]
    pub cv: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Args)]
pub struct GridArgs {
    /// Explicit comma-separated penalties.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["grid_span", "grid_count"])]
    pub grid: Option<Vec<f64>>,
    /// Ratio of the largest penalty to the default one.
    #[arg(long)]
    pub grid_span: Option<f64>,
    #[arg(long)]
    pub grid_count: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Penalty. Default log(n)/(2n).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Largest p accepted.
    #[arg(long, default_value_t = 20)]
    pub max_p: usize,
    /// Also run a gradient fit and report whether the supports agree.
    #[arg(long)]
    pub with_fit: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "u2g")]
    pub estimators: Vec<EstimatorArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "freq")]
    pub objective: Vec<ObjectiveChoice>,
    #[arg(long, value_delimiter = ',')]
    pub snr_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[command(flatten)]
    pub generator: GeneratorOverrides,
    /// Fixed penalty instead of cross-validation.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Base seed; trial t uses a seed derived from (seed, t).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LabMode {
    Unbiasedness,
    VarianceCurves,
    Ordering,
}

#[derive(Debug, Clone, Serialize, Args)]
pub struct LabArgs {
    #[arg(long, value_enum)]
    pub mode: LabMode,
    /// Inclusion probabilities for the univariate checks.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
    pub pis: Vec<f64>,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    pub f0: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub f1: f64,
    /// Monte Carlo draws per estimate.
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    /// Interior grid points for the variance curves.
    #[arg(long, default_value_t = 99)]
    pub points: usize,
    /// Random triples for the ordering check.
    #[arg(long, default_value_t = 50)]
    pub triples: usize,
    /// Relative tolerance of the ordering check.
    #[arg(long, default_value_t = 0.05)]
    pub slack: f64,
    /// Covariates of the multivariate unbiasedness instance.
    #[arg(long, default_value_t = 8)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}
