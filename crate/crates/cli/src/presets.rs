//! Synthetic experiment designs and the solver settings used with them.

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use subsetgrad::datagen::{
    gen_correlated, gen_independent, gen_sensing, BetaPattern, Covariance, NoiseLevel, SensingSpec,
    SyntheticKind, SyntheticSpec,
};
use subsetgrad::estimators::EstimatorKind;
use subsetgrad::model::{Dataset, ObjectiveConfig};
use subsetgrad::optimizer::{CvOptions, LambdaGrid, OptimizerConfig, Split, SplitFractions, StepSize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    /// AR(1) design, n = 60, p = 200, signal (3, 1.5, 0, 0, 2, 0, ...).
    Exp1,
    /// Isotropic design, n = 100, p = 1000, ten unit coefficients, SNR 5.
    Exp2,
    /// Compressive sensing, n = 500, p = 1024, ten +-1 spikes, sigma 0.1.
    Cs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveChoice {
    /// Penalized residual sum of squares.
    Freq,
    /// Spike-and-slab ELBO.
    Vi,
}

/// Generator overrides; unset fields keep the experiment default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct GeneratorOverrides {
    /// Rows.
    #[arg(long)]
    pub n: Option<usize>,
    /// Covariates.
    #[arg(long)]
    pub p: Option<usize>,
    /// Active covariates (exp2, cs).
    #[arg(long)]
    pub s: Option<usize>,
    /// AR(1) correlation (exp1, exp2).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Noise standard deviation.
    #[arg(long, conflicts_with = "snr")]
    pub sigma: Option<f64>,
    /// Population SNR; sets sigma (exp1, exp2).
    #[arg(long)]
    pub snr: Option<f64>,
}

pub struct Generated {
    pub data: Dataset,
    /// Population covariance of a design row, for the prediction metrics.
    pub cov: Covariance,
    /// Resolved generator parameters.
    pub generator: serde_json::Value,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
            Experiment::Cs => "cs",
        }
    }

    pub fn generate(self, ov: &GeneratorOverrides, seed: u64) -> CliResult<Generated> {
        let noise = |default_sigma: Option<f64>, default_snr: Option<f64>| match (ov.sigma, ov.snr) {
            (Some(s), _) => NoiseLevel::Sigma(s),
            (_, Some(r)) => NoiseLevel::Snr(r),
            _ => default_sigma.map(NoiseLevel::Sigma).or(default_snr.map(NoiseLevel::Snr)).expect("a default"),
        };
        match self {
            Experiment::Exp1 | Experiment::Exp2 => {
                let spec = if self == Experiment::Exp1 {
                    if ov.s.is_some() {
                        return Err(CliError::flag("s", "exp1 has a fixed three-coefficient signal"));
                    }
                    SyntheticSpec::exp1(
                        ov.n.unwrap_or(60),
                        ov.p.unwrap_or(200),
                        ov.rho.unwrap_or(0.5),
                        noise(Some(1.0), None),
                        seed,
                    )
                } else {
                    let rho = ov.rho.unwrap_or(0.0);
                    SyntheticSpec {
                        kind: if rho == 0.0 { SyntheticKind::Independent } else { SyntheticKind::Correlated },
                        n: ov.n.unwrap_or(100),
                        p: ov.p.unwrap_or(1000),
                        s: ov.s.unwrap_or(10),
                        rho,
                        noise: noise(None, Some(5.0)),
                        beta: BetaPattern::LeadingOnes,
                        seed,
                    }
                };
                let data = match spec.kind {
                    SyntheticKind::Independent => gen_independent(&spec),
                    _ => gen_correlated(&spec),
                }
                .map_err(|e| CliError::with_flag(e, "synthetic"))?;
                let generator = serde_json::to_value(&spec).expect("serializable spec");
                Ok(Generated { cov: spec.covariance(), data, generator })
            }
            Experiment::Cs => {
                if ov.rho.is_some() {
                    return Err(CliError::flag("rho", "the sensing matrix has no correlation parameter"));
                }
                if ov.snr.is_some() {
                    return Err(CliError::flag("snr", "cs takes --sigma"));
                }
                let d = SensingSpec::default();
                let spec = SensingSpec {
                    n: ov.n.unwrap_or(d.n),
                    p: ov.p.unwrap_or(d.p),
                    s: ov.s.unwrap_or(d.s),
                    sigma: ov.sigma.unwrap_or(d.sigma),
                    seed,
                    ..d
                };
                let data = gen_sensing(&spec).map_err(|e| CliError::with_flag(e, "synthetic"))?;
                let generator = serde_json::json!({
                    "kind": "compressive_sensing",
                    "n": spec.n,
                    "p": spec.p,
                    "s": spec.s,
                    "amplitude": spec.amplitude,
                    "sigma": spec.sigma,
                    "seed": spec.seed,
                });
                Ok(Generated { data, cov: Covariance::Identity, generator })
            }
        }
    }

    /// Solver settings for this design.
    ///
    /// Exp. 2 starts from a small initial model and runs at least 3000
    /// updates: with p >> n the entropy rule is met while weak true
    /// coordinates are still climbing. Compressive sensing uses K = 5 and a
    /// small `c / lambda` step because its penalties are tiny.
    pub fn optimizer(self, estimator: EstimatorKind, objective: ObjectiveChoice, seed: u64) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::defaults(estimator, seed);
        match self {
            Experiment::Exp1 => {}
            Experiment::Exp2 => {
                cfg.init_mass = 0.1;
                cfg.min_iters = 3000;
                cfg.max_iters = 3000;
            }
            Experiment::Cs => {
                cfg.k = 5;
                cfg.max_iters = 6000;
                if objective == ObjectiveChoice::Freq {
                    cfg.step = StepSize::InverseLambda(0.1);
                }
            }
        }
        cfg
    }

    /// Penalty grid searched by cross-validation on an `n x p` dataset.
    pub fn cv_grid(self, objective: ObjectiveChoice, n: usize, p: usize) -> CliResult<LambdaGrid> {
        let grid = match (objective, self) {
            (ObjectiveChoice::Vi, _) | (ObjectiveChoice::Freq, Experiment::Exp1) => return default_grid(objective, n, p),
            (ObjectiveChoice::Freq, Experiment::Exp2) => LambdaGrid::standard(n, 40.0, 8),
            (ObjectiveChoice::Freq, Experiment::Cs) => LambdaGrid::spanning(LambdaGrid::base_for(n), 100.0, 1.0, 15),
        };
        grid.map_err(|e| CliError::with_flag(e, "n"))
    }

    /// Exp. 1 averages five train/validation partitions: its 9-row
    /// validation split alone cannot tell adjacent penalties apart.
    pub fn cv_options(self) -> CvOptions {
        match self {
            Experiment::Exp1 => CvOptions { repeats: 5, ..CvOptions::default() },
            _ => CvOptions::default(),
        }
    }
}

/// Grid for data without a design preset: 15 values from `30 x` the default
/// penalty down to it, or nine prior logits around `log(p)`.
pub fn default_grid(objective: ObjectiveChoice, n: usize, p: usize) -> CliResult<LambdaGrid> {
    let grid = match objective {
        ObjectiveChoice::Freq => LambdaGrid::standard(n, 30.0, 15),
        ObjectiveChoice::Vi => LambdaGrid::spanning(default_penalty(objective, n, p), 4.0, 2.0, 9),
    };
    grid.map_err(|e| CliError::with_flag(e, "grid"))
}

/// `log(n) / (2n)` for the penalized fit; `log(p)` (prior inclusion
/// probability about `1/p`) for the spike-and-slab prior logit.
pub fn default_penalty(objective: ObjectiveChoice, n: usize, p: usize) -> f64 {
    match objective {
        ObjectiveChoice::Freq => LambdaGrid::base_for(n),
        ObjectiveChoice::Vi => (p.max(2) as f64).ln(),
    }
}

/// Objective with the given penalty. The spike-and-slab variances are
/// estimated from `rows` of `data` only (all rows when `None`), so that
/// held-out rows stay untouched.
pub fn objective_config(
    objective: ObjectiveChoice,
    penalty: f64,
    data: &Dataset,
    rows: Option<&[usize]>,
) -> CliResult<ObjectiveConfig> {
    let cfg = match objective {
        ObjectiveChoice::Freq => ObjectiveConfig::frequentist(penalty),
        ObjectiveChoice::Vi => match rows {
            Some(r) => ObjectiveConfig::bayesian_for(&data.select_rows(r), penalty)?,
            None => ObjectiveConfig::bayesian_for(data, penalty)?,
        },
    };
    cfg.validate().map_err(|e| CliError::with_flag(e, "lambda"))?;
    Ok(cfg)
}

/// Rows that cross-validation may touch: training plus validation.
pub fn selection_rows(n: usize, fractions: SplitFractions, seed: u64) -> CliResult<Vec<usize>> {
    let sp = Split::random(n, fractions, seed)?;
    let mut rows = sp.train;
    rows.extend(sp.val);
    rows.sort_unstable();
    Ok(rows)
}
