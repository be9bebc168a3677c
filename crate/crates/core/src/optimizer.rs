//! Stochastic gradient descent over inclusion logits, with the entropy
//! stopping rule, penalty selection by validation, regularization paths and
//! a Monte Carlo check of the expected-gradient sign pattern.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    derive_seed, estimate_multivariate, keyed_rng, logit, EstimatorKind, SelectionState, UniformDraws,
};
use crate::model::{
    solve_subset_ls, Dataset, GramCache, Objective, ObjectiveConfig, ObjectiveKind, SubsetIndicator, TrueModel,
};

/// Logit the intercept is pinned to; it is never updated.
const INTERCEPT_LOGIT: f64 = 30.0;
const DIVERGENCE_LIMIT: f64 = 1e6;
const INIT_STREAM: u64 = u64::MAX;
const SPLIT_SALT: u64 = 0x0053_504c_4954;

/// Step used for the Bayesian objective when none is given.
pub const DEFAULT_VI_STEP: f64 = 0.1;

/// How the SGD step size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum StepSize {
    /// `min(5, 1.8 / lambda)` for the frequentist objective,
    /// [`DEFAULT_VI_STEP`] for the Bayesian one.
    Default,
    Fixed(f64),
    /// `c / lambda` with `0 < c < 2`; keeps the logit movement per unit of
    /// penalty constant across a grid.
    InverseLambda(f64),
}

impl StepSize {
    /// Concrete step for an objective. Rejects frequentist steps `>= 2/lambda`.
    pub fn resolve(&self, obj: &ObjectiveConfig) -> Result<f64> {
        let penalty = obj.penalty();
        let step = match (*self, obj.kind()) {
            (StepSize::Default, ObjectiveKind::Frequentist) => {
                if penalty > 0.0 {
                    5f64.min(1.8 / penalty)
                } else {
                    5.0
                }
            }
            (StepSize::Default, ObjectiveKind::Bayesian) => DEFAULT_VI_STEP,
            (StepSize::Fixed(v), _) => v,
            (StepSize::InverseLambda(c), _) => {
                if !(c > 0.0 && c < 2.0) {
                    return Err(Error::InvalidConfig(format!("step scale must lie in (0, 2), got {c}")));
                }
                if penalty <= 0.0 {
                    return Err(Error::InvalidConfig("a lambda-scaled step needs a positive penalty".into()));
                }
                c / penalty
            }
        };
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidConfig(format!("step must be finite and > 0, got {step}")));
        }
        if obj.kind() == ObjectiveKind::Frequentist && penalty > 0.0 && step >= 2.0 / penalty {
            return Err(Error::InvalidConfig(format!(
                "step {step} violates the step-size rule step < 2/lambda = {}",
                2.0 / penalty
            )));
        }
        Ok(step)
    }

    /// Like [`resolve`](Self::resolve), but a fixed step that breaks the
    /// rule at this penalty falls back to `1.8 / lambda`. Used across grids.
    fn resolve_capped(&self, obj: &ObjectiveConfig) -> Result<f64> {
        match self.resolve(obj) {
            Err(Error::InvalidConfig(_)) if matches!(self, StepSize::Fixed(_)) && obj.penalty() > 0.0 => {
                Ok(1.8 / obj.penalty())
            }
            r => r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub estimator: EstimatorKind,
    /// Draws per step.
    pub k: usize,
    pub step: StepSize,
    pub max_iters: usize,
    pub stop_entropy: f64,
    pub stop_fraction: f64,
    /// Convergence also requires every probability outside
    /// `(band, 1 - band)`; 0 disables the check.
    pub extreme_band: f64,
    /// The stopping rule is not checked before this many updates.
    pub min_iters: usize,
    pub init_pi: f64,
    /// Caps the initial probability at `init_mass * n / p`, keeping the
    /// expected initial model size below the sample size; 0 disables it.
    pub init_mass: f64,
    pub init_jitter: f64,
    pub seed: u64,
}

impl OptimizerConfig {
    /// Defaults with the default step rule, which always satisfies the
    /// step-size bound.
    pub fn defaults(estimator: EstimatorKind, seed: u64) -> Self {
        Self {
            estimator,
            k: 20,
            step: StepSize::Default,
            max_iters: 2000,
            stop_entropy: 0.1,
            stop_fraction: 0.05,
            extreme_band: 0.05,
            min_iters: 100,
            init_pi: 0.1,
            init_mass: 0.5,
            init_jitter: 0.01,
            seed,
        }
    }

    /// Defaults with an explicit step, checked against the objective.
    pub fn new(estimator: EstimatorKind, step: StepSize, obj: &ObjectiveConfig, seed: u64) -> Result<Self> {
        let cfg = Self { step, ..Self::defaults(estimator, seed) };
        cfg.validate(obj)?;
        Ok(cfg)
    }

    pub fn validate(&self, obj: &ObjectiveConfig) -> Result<()> {
        obj.validate()?;
        self.step.resolve(obj)?;
        self.validate_rest()
    }

    fn validate_rest(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.stop_fraction > 0.0 && self.stop_fraction <= 1.0) {
            return bad(format!("stop_fraction must lie in (0, 1], got {}", self.stop_fraction));
        }
        if !(self.stop_entropy > 0.0) {
            return bad(format!("stop_entropy must be > 0, got {}", self.stop_entropy));
        }
        if !(0.0..0.5).contains(&self.extreme_band) {
            return bad(format!("extreme_band must lie in [0, 0.5), got {}", self.extreme_band));
        }
        if !(self.init_pi > 0.0 && self.init_pi < 1.0) {
            return bad(format!("init_pi must lie in (0, 1), got {}", self.init_pi));
        }
        if !(self.init_mass >= 0.0 && self.init_mass.is_finite()) {
            return bad(format!("init_mass must be >= 0, got {}", self.init_mass));
        }
        if self.min_iters > self.max_iters {
            return bad(format!("min_iters {} exceeds max_iters {}", self.min_iters, self.max_iters));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return bad(format!("init_jitter must be >= 0, got {}", self.init_jitter));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub z_hat: SubsetIndicator,
    /// OLS refit on `z_hat`, zero elsewhere.
    pub beta_hat: Vec<f64>,
    pub phi_final: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    /// Objective at the most likely subset after each step.
    pub objective_trace: Vec<f64>,
    pub lambda_used: f64,
    pub step_used: f64,
}

impl FitResult {
    pub fn pi_final(&self) -> Vec<f64> {
        SelectionState::new(self.phi_final.clone()).pi()
    }
}

/// Mean of the `ceil(fraction * p)` largest `-pi log pi` (at least one).
pub fn stopping_entropy(state: &SelectionState, fraction: f64) -> f64 {
    let mut h: Vec<f64> = state.pi().iter().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).collect();
    if h.is_empty() {
        return 0.0;
    }
    let m = ((fraction * h.len() as f64).ceil() as usize).clamp(1, h.len());
    h.sort_by(|a, b| b.total_cmp(a));
    h[..m].iter().sum::<f64>() / m as f64
}

/// Starting probability: `init_pi`, capped at `init_mass * n / p`.
pub fn initial_probability(n: usize, p: usize, cfg: &OptimizerConfig) -> f64 {
    if cfg.init_mass > 0.0 && p > 0 {
        cfg.init_pi.min(cfg.init_mass * n as f64 / p as f64)
    } else {
        cfg.init_pi
    }
}

/// Initial logits `logit(pi0) + init_jitter * N(0, 1)` with `pi0` from
/// [`initial_probability`].
pub fn initial_logits(n: usize, p: usize, cfg: &OptimizerConfig) -> Vec<f64> {
    let mut rng = keyed_rng(cfg.seed, INIT_STREAM, 0);
    let base = logit(initial_probability(n, p, cfg));
    (0..p).map(|_| base + cfg.init_jitter * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// One SGD run, exposed step by step.
pub struct Fitter<'a> {
    obj: Objective<'a>,
    cfg: OptimizerConfig,
    step: f64,
    state: SelectionState,
    iter: usize,
    trace: Vec<f64>,
}

impl<'a> Fitter<'a> {
    pub fn new(data: &'a Dataset, obj: ObjectiveConfig, cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate(&obj)?;
        let step = cfg.step.resolve(&obj)?;
        Self::build(Objective::new(data, obj)?, cfg, step, None)
    }

    fn build(obj: Objective<'a>, cfg: OptimizerConfig, step: f64, warm: Option<&[f64]>) -> Result<Self> {
        cfg.validate_rest()?;
        let data = obj.data();
        let p = data.p();
        let mut phi = match warm {
            Some(w) if w.len() == p => w.to_vec(),
            Some(w) => return Err(Error::DimensionMismatch { expected: p, got: w.len() }),
            None => initial_logits(data.n(), p, &cfg),
        };
        if let Some(c) = data.intercept_col {
            phi[c] = INTERCEPT_LOGIT;
        }
        Ok(Self { obj, cfg, step, state: SelectionState::new(phi), iter: 0, trace: Vec::new() })
    }

    pub fn state(&self) -> &SelectionState {
        &self.state
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    pub fn objective(&self) -> &Objective<'a> {
        &self.obj
    }

    /// Whether the stopping rule holds at the current logits.
    pub fn should_stop(&self) -> bool {
        if stopping_entropy(&self.state, self.cfg.stop_fraction) >= self.cfg.stop_entropy {
            return false;
        }
        let band = self.cfg.extreme_band;
        band == 0.0 || self.state.pi().iter().all(|&p| p <= band || p >= 1.0 - band)
    }

    /// One update `phi <- phi - step * mean_k g_k`.
    pub fn step_once(&mut self) -> Result<()> {
        let p = self.state.p();
        let draws = UniformDraws::generate(self.cfg.seed, self.iter as u64, self.cfg.k, p);
        let pi = self.state.pi();
        let obj = &self.obj;
        let est = estimate_multivariate(self.cfg.estimator, &self.state, &draws, |z| obj.value(z, &pi))?;
        let fixed = self.obj.data().intercept_col;
        for (j, (phi, g)) in self.state.phi.iter_mut().zip(&est.g).enumerate() {
            if Some(j) != fixed {
                *phi -= self.step * g;
            }
        }
        self.iter += 1;
        if let Some(m) = self.state.phi.iter().map(|v| v.abs()).reduce(|a, b| if b.is_nan() { b } else { a.max(b) }) {
            if m.is_nan() || m > DIVERGENCE_LIMIT {
                return Err(Error::Diverged { iter: self.iter, magnitude: m });
            }
        }
        let mode = self.state.mode();
        let pi = self.state.pi();
        self.trace.push(self.obj.value(&mode, &pi)?);
        Ok(())
    }

    /// Iterate until the stopping rule holds or `max_iters` is reached. The
    /// rule is checked only after `min_iters` updates (at least one), since a
    /// small starting probability satisfies it before any data is seen.
    pub fn run(mut self) -> Result<FitResult> {
        let mut converged = false;
        while !converged && self.iter < self.cfg.max_iters {
            self.step_once()?;
            converged = self.iter >= self.cfg.min_iters.max(1) && self.should_stop();
        }
        self.finish(converged)
    }

    fn finish(self, converged: bool) -> Result<FitResult> {
        let data = self.obj.data();
        let z_hat = self.state.mode();
        let beta_hat = refit(data, &z_hat)?;
        Ok(FitResult {
            z_hat,
            beta_hat,
            phi_final: self.state.phi,
            iters: self.iter,
            converged,
            objective_trace: self.trace,
            lambda_used: self.obj.config().penalty(),
            step_used: self.step,
        })
    }
}

fn refit(data: &Dataset, z: &SubsetIndicator) -> Result<Vec<f64>> {
    let sol = solve_subset_ls(data, z)?;
    let mut beta = vec![0.0; data.p()];
    for (&j, &a) in sol.columns.iter().zip(&sol.alpha_hat) {
        beta[j] = a;
    }
    Ok(beta)
}

/// Algorithm 1: SGD on the logits from `logit(init_pi)` plus jitter.
pub fn fit(data: &Dataset, obj: &ObjectiveConfig, cfg: &OptimizerConfig) -> Result<FitResult> {
    Fitter::new(data, *obj, *cfg)?.run()
}

fn fit_shared(
    data: &Dataset,
    cache: &Arc<GramCache>,
    obj: ObjectiveConfig,
    cfg: &OptimizerConfig,
    warm: Option<&[f64]>,
) -> Result<FitResult> {
    let step = cfg.step.resolve_capped(&obj)?;
    Fitter::build(Objective::with_cache(data, obj, cache.clone())?, *cfg, step, warm)?.run()
}

/// Candidate penalties, stored in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
    pub base: f64,
    /// `max / min` of the grid.
    pub span: f64,
    pub count: usize,
}

impl LambdaGrid {
    /// `log(n) / (2n)`.
    pub fn base_for(n: usize) -> f64 {
        (n as f64).ln() / (2.0 * n as f64)
    }

    /// `count` geometric values from `base * up` down to `base / down`.
    /// `base` itself is always a member.
    pub fn spanning(base: f64, down: f64, up: f64, count: usize) -> Result<Self> {
        if !(base > 0.0 && base.is_finite()) || !(down >= 1.0) || !(up >= 1.0) || count == 0 {
            return Err(Error::InvalidConfig(format!(
                "invalid lambda grid: base={base}, down={down}, up={up}, count={count}"
            )));
        }
        let hi = (base * up).ln();
        let lo = (base / down).ln();
        let mut values: Vec<f64> = if count == 1 {
            vec![base]
        } else {
            (0..count).map(|i| (hi + (lo - hi) * i as f64 / (count - 1) as f64).exp()).collect()
        };
        let nearest = (0..values.len())
            .min_by(|&a, &b| (values[a].ln() - base.ln()).abs().total_cmp(&(values[b].ln() - base.ln()).abs()))
            .expect("nonempty");
        values[nearest] = base;
        Self::from_values(values, base)
    }

    /// The default grid: `count` values from `base * span` down to `base`.
    pub fn standard(n: usize, span: f64, count: usize) -> Result<Self> {
        Self::spanning(Self::base_for(n), 1.0, span, count)
    }

    pub fn single(lambda: f64) -> Result<Self> {
        Self::from_values(vec![lambda], lambda)
    }

    /// Arbitrary positive values; `base` is added if missing.
    pub fn from_values(mut values: Vec<f64>, base: f64) -> Result<Self> {
        if values.iter().chain(std::iter::once(&base)).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("lambda grid values must be finite and > 0".into()));
        }
        if !values.contains(&base) {
            values.push(base);
        }
        values.sort_by(|a, b| b.total_cmp(a));
        values.dedup();
        let span = values[0] / values[values.len() - 1];
        Ok(Self { count: values.len(), values, base, span })
    }
}

/// Penalty interval over which the expected gradient points toward the true
/// support: `((|b|^2 + s^2)/n, ((n-1)/n)(eta - 1/n) min_{j in A} b_j^2)`.
pub fn lambda_region(truth: &TrueModel, n: usize, eta: f64) -> Result<(f64, f64)> {
    let nf = n as f64;
    if n < 2 || !(eta > 1.0 / nf && eta < 1.0) {
        return Err(Error::InvalidConfig(format!("eta must lie in (1/n, 1), got {eta} with n = {n}")));
    }
    let norm2: f64 = truth.beta_star.iter().map(|b| b * b).sum();
    let lo = (norm2 + truth.sigma * truth.sigma) / nf;
    let min_sq = truth.active_set().iter().map(|&j| truth.beta_star[j].powi(2)).fold(f64::INFINITY, f64::min);
    let min_sq = if min_sq.is_finite() { min_sq } else { 0.0 };
    let hi = (nf - 1.0) / nf * (eta - 1.0 / nf) * min_sq;
    if lo >= hi {
        return Err(Error::EmptyRegion { lo, hi });
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.70, val: 0.15, test: 0.15 }
    }
}

/// Row indices of a random train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn random(n: usize, fr: SplitFractions, seed: u64) -> Result<Self> {
        let f = [fr.train, fr.val, fr.test];
        if f.iter().any(|v| !(*v > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split fractions must be positive and sum to 1, got {f:?}")));
        }
        let n_val = (fr.val * n as f64).round() as usize;
        let n_test = (fr.test * n as f64).round() as usize;
        let n_train = n.saturating_sub(n_val + n_test);
        for (name, c) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
            if c < 2 {
                return Err(Error::InsufficientData(format!("{name} split has {c} rows; at least 2 are needed")));
            }
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut keyed_rng(derive_seed(seed, SPLIT_SALT), 0, 0));
        let mut train = idx[..n_train].to_vec();
        let mut val = idx[n_train..n_train + n_val].to_vec();
        let mut test = idx[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Ok(Self { train, val, test })
    }
}

/// Mean squared prediction error of `beta` on `data`.
pub fn prediction_mse(data: &Dataset, beta: &[f64]) -> f64 {
    let b = DVector::from_column_slice(beta);
    (&data.y - &data.x * b).norm_squared() / data.n() as f64
}



/// How the validation table picks a penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Smallest validation error.
    #[default]
    MinError,
    /// Largest penalty whose validation error is within one standard error
    /// of the smallest.
    OneStandardError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub lambda: f64,
    pub val_mse: f64,
    /// Standard error of `val_mse` over the validation rows.
    pub val_se: f64,
    pub support: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    /// Fit at the selected penalty on the training and validation rows.
    pub best: FitResult,
    pub lambda: f64,
    pub table: Vec<CvRow>,
    pub split: Split,
    /// Error of `best` on the held-out test rows.
    pub test_mse: f64,
}

/// Penalty-selection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub fractions: SplitFractions,
    pub rule: SelectionRule,
    /// Number of train/validation partitions of the non-test rows whose
    /// validation errors are averaged. The first is the partition in
    /// [`CvOutcome::split`]; the test rows are the same for all.
    pub repeats: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { fractions: SplitFractions::default(), rule: SelectionRule::MinError, repeats: 1 }
    }
}

/// Fit on the training rows for each penalty, score on the validation rows,
/// and refit the winner on training plus validation rows. Ties go to the
/// larger penalty. Test rows are only used for the final report.
pub fn cross_validate(
    data: &Dataset,
    obj: &ObjectiveConfig,
    cfg: &OptimizerConfig,
    grid: &LambdaGrid,
    split: SplitFractions,
) -> Result<CvOutcome> {
    cross_validate_with(data, obj, cfg, grid, &CvOptions { fractions: split, ..CvOptions::default() })
}

/// [`cross_validate`] with a selection rule and repeated partitions.
pub fn cross_validate_with(
    data: &Dataset,
    obj: &ObjectiveConfig,
    cfg: &OptimizerConfig,
    grid: &LambdaGrid,
    opts: &CvOptions,
) -> Result<CvOutcome> {
    obj.validate()?;
    cfg.validate_rest()?;
    if opts.repeats == 0 {
        return Err(Error::InvalidConfig("at least one validation partition is required".into()));
    }
    let sp = Split::random(data.n(), opts.fractions, cfg.seed)?;
    let mut pool = sp.train.clone();
    pool.extend(&sp.val);
    pool.sort_unstable();
    let partitions: Vec<(Vec<usize>, Vec<usize>)> = (0..opts.repeats)
        .map(|r| {
            if r == 0 {
                return (sp.train.clone(), sp.val.clone());
            }
            let mut idx = pool.clone();
            idx.shuffle(&mut keyed_rng(derive_seed(cfg.seed, SPLIT_SALT), 1, r as u64));
            let (tr, va) = idx.split_at(sp.train.len());
            let (mut tr, mut va) = (tr.to_vec(), va.to_vec());
            tr.sort_unstable();
            va.sort_unstable();
            (tr, va)
        })
        .collect();
    let parts: Vec<(Dataset, Dataset, Arc<GramCache>)> = partitions
        .iter()
        .map(|(tr, va)| {
            let train = data.select_rows(tr);
            let cache = Arc::new(GramCache::new(&train));
            (train, data.select_rows(va), cache)
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..grid.values.len()).flat_map(|g| (0..parts.len()).map(move |r| (g, r))).collect();
    let results: Vec<(Vec<f64>, usize, bool)> = jobs
        .par_iter()
        .map(|&(g, r)| {
            let (train, val, cache) = &parts[r];
            let fit = fit_shared(train, cache, obj.with_penalty(grid.values[g]), cfg, None)?;
            let b = DVector::from_column_slice(&fit.beta_hat);
            let resid = &val.y - &val.x * b;
            Ok((resid.iter().map(|e| e * e).collect(), fit.z_hat.k(), fit.converged))
        })
        .collect::<Result<_>>()?;
    let table: Vec<CvRow> = grid
        .values
        .iter()
        .enumerate()
        .map(|(g, &lam)| {
            let cell = &results[g * parts.len()..(g + 1) * parts.len()];
            let sq: Vec<f64> = cell.iter().flat_map(|c| c.0.iter().copied()).collect();
            let m = sq.len() as f64;
            let val_mse = sq.iter().sum::<f64>() / m;
            let var = sq.iter().map(|e| (e - val_mse).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
            CvRow {
                lambda: lam,
                val_mse,
                val_se: (var / m).sqrt(),
                support: cell[0].1,
                converged: cell.iter().all(|c| c.2),
            }
        })
        .collect();
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if row.val_mse < table[best].val_mse * (1.0 - 1e-12) {
            best = i;
        }
    }
    if opts.rule == SelectionRule::OneStandardError {
        // The grid is descending, so the first row within reach is the largest penalty.
        let limit = table[best].val_mse + table[best].val_se;
        best = table.iter().position(|r| r.val_mse <= limit).unwrap_or(best);
    }
    let lambda = table[best].lambda;
    let refit_data = data.select_rows(&pool);
    let cache = Arc::new(GramCache::new(&refit_data));
    let best_fit = fit_shared(&refit_data, &cache, obj.with_penalty(lambda), cfg, None)?;
    let test_mse = prediction_mse(&data.select_rows(&sp.test), &best_fit.beta_hat);
    Ok(CvOutcome { best: best_fit, lambda, table, split: sp, test_mse })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub lambda: f64,
    pub support: usize,
    pub beta_hat: Vec<f64>,
    pub val_mse: Option<f64>,
    pub converged: bool,
    pub iters: usize,
}

/// Logit bound applied to warm starts: `logit(0.95)`.
const WARM_LOGIT_CAP: f64 = 2.944_438_979_166_440_4;

/// Fits along the grid in descending order, warm-starting each from the
/// previous final logits clipped to `±logit(0.95)`; unclipped, coordinates
/// saturated at the previous penalty would never move. With one grid value
/// this is exactly [`fit`].
pub fn regularization_path(
    data: &Dataset,
    obj: &ObjectiveConfig,
    cfg: &OptimizerConfig,
    grid: &LambdaGrid,
    validation: Option<&Dataset>,
) -> Result<(Vec<PathRecord>, Vec<FitResult>)> {
    obj.validate()?;
    cfg.validate_rest()?;
    let cache = Arc::new(GramCache::new(data));
    let mut warm: Option<Vec<f64>> = None;
    let mut records = Vec::with_capacity(grid.values.len());
    let mut fits = Vec::with_capacity(grid.values.len());
    for &lam in &grid.values {
        let r = fit_shared(data, &cache, obj.with_penalty(lam), cfg, warm.as_deref())?;
        records.push(PathRecord {
            lambda: lam,
            support: r.z_hat.k(),
            beta_hat: r.beta_hat.clone(),
            val_mse: validation.map(|v| prediction_mse(v, &r.beta_hat)),
            converged: r.converged,
            iters: r.iters,
        });
        warm = Some(r.phi_final.iter().map(|v| v.clamp(-WARM_LOGIT_CAP, WARM_LOGIT_CAP)).collect());
        fits.push(r);
    }
    Ok((records, fits))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryHarnessConfig {
    pub eta: f64,
    pub varpi: f64,
    pub datasets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSign {
    pub index: usize,
    pub active: bool,
    pub mean: f64,
    pub std_error: f64,
    /// Two-sided 99% normal-approximation interval of the mean.
    pub ci: (f64, f64),
    /// Negative for active, positive for inactive coordinates, with the
    /// interval excluding zero.
    pub as_predicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    pub region: (f64, f64),
    pub lambda: f64,
    pub in_region: bool,
    pub coords: Vec<CoordinateSign>,
}

impl SignReport {
    pub fn all_as_predicted(&self) -> bool {
        self.coords.iter().all(|c| c.as_predicted)
    }
}

const Z99: f64 = 2.575_829_303_548_901;

/// Monte Carlo mean of the U2G gradient at fixed logits over freshly
/// generated `(X, y, u)`, with `X` having i.i.d. standard normal entries.
pub fn expected_gradient_sign_check(
    truth: &TrueModel,
    n: usize,
    state: &SelectionState,
    obj: &ObjectiveConfig,
    harness: &TheoryHarnessConfig,
    seed: u64,
) -> Result<SignReport> {
    let p = truth.p();
    if state.p() != p {
        return Err(Error::DimensionMismatch { expected: p, got: state.p() });
    }
    if harness.datasets < 2 {
        return Err(Error::InvalidConfig("the harness needs at least 2 datasets".into()));
    }
    let mass: f64 = state.pi().iter().sum();
    if mass > harness.varpi - truth.s() as f64 {
        return Err(Error::InvalidConfig(format!(
            "initial mass {mass} exceeds varpi - S = {}",
            harness.varpi - truth.s() as f64
        )));
    }
    let region = lambda_region(truth, n, harness.eta)?;
    let lambda = obj.penalty();
    let beta = DVector::from_column_slice(&truth.beta_star);
    let samples: Vec<Vec<f64>> = (0..harness.datasets)
        .into_par_iter()
        .map(|i| {
            let mut rng = keyed_rng(seed, 1, i as u64);
            let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut y = &x * &beta;
            for v in y.iter_mut() {
                *v += truth.sigma * rng.sample::<f64, _>(StandardNormal);
            }
            let data = Dataset::new(x, y)?;
            let o = Objective::new(&data, *obj)?;
            let pi = state.pi();
            let draws = UniformDraws::generate(derive_seed(seed, i as u64), 2, 1, p);
            Ok(estimate_multivariate(EstimatorKind::U2g, state, &draws, |z| o.value(z, &pi))?.g)
        })
        .collect::<Result<_>>()?;
    let m = samples.len() as f64;
    let support = truth.support();
    let coords = (0..p)
        .map(|j| {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / m;
            let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            let se = (var / m).sqrt();
            let ci = (mean - Z99 * se, mean + Z99 * se);
            let active = support.get(j);
            let as_predicted = if active { ci.1 < 0.0 } else { ci.0 > 0.0 };
            CoordinateSign { index: j, active, mean, std_error: se, ci, as_predicted }
        })
        .collect();
    Ok(SignReport { region, lambda, in_region: lambda > region.0 && lambda < region.1, coords })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_correlated, NoiseLevel, SyntheticSpec};

    fn single_covariate(seed: u64) -> Dataset {
        let mut rng = keyed_rng(seed, 0, 0);
        let n = 200;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| 3.0 * x[(i, 0)] + 0.1 * rng.sample::<f64, _>(StandardNormal));
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn entropy_examples() {
        let st = SelectionState::from_probs(&[1e-9, 1.0 - 1e-9, 1e-9]);
        assert!(stopping_entropy(&st, 0.05) < 1e-6);
        let half = SelectionState::new(vec![0.0; 10]);
        assert!((stopping_entropy(&half, 0.05) - 0.5 * 2f64.ln()).abs() < 1e-12);
        let mut probs = vec![0.01; 100];
        probs[..5].iter_mut().for_each(|p| *p = 0.5);
        let st = SelectionState::from_probs(&probs);
        assert!((stopping_entropy(&st, 0.05) - 0.5 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn step_guard() {
        let obj = ObjectiveConfig::frequentist(0.5);
        assert!(OptimizerConfig::new(EstimatorKind::U2g, StepSize::Fixed(4.0), &obj, 0).is_err());
        assert!(OptimizerConfig::new(EstimatorKind::U2g, StepSize::Fixed(3.9), &obj, 0).is_ok());
        assert_eq!(StepSize::Default.resolve(&obj).unwrap(), 3.6);
        assert_eq!(StepSize::Default.resolve(&ObjectiveConfig::frequentist(0.1)).unwrap(), 5.0);
        assert!(StepSize::InverseLambda(2.0).resolve(&obj).is_err());
        assert_eq!(StepSize::Fixed(4.0).resolve_capped(&obj).unwrap(), 3.6);
    }

    #[test]
    fn single_covariate_recovered() {
        let d = single_covariate(1);
        let lam = LambdaGrid::base_for(200);
        let r = fit(&d, &ObjectiveConfig::frequentist(lam), &OptimizerConfig::defaults(EstimatorKind::U2g, 1)).unwrap();
        assert!(r.z_hat.get(0));
        assert!((r.beta_hat[0] - 3.0).abs() <= 0.1);
        assert!(r.converged);
        assert_eq!(r.objective_trace.len(), r.iters);
    }

    #[test]
    fn beta_support_matches_selection() {
        let spec = SyntheticSpec::exp1(60, 30, 0.5, NoiseLevel::Sigma(1.0), 4);
        let d = gen_correlated(&spec).unwrap();
        let r = fit(&d, &ObjectiveConfig::frequentist(0.5), &OptimizerConfig::defaults(EstimatorKind::U2g, 4)).unwrap();
        for j in 0..30 {
            assert_eq!(r.beta_hat[j] != 0.0, r.z_hat.get(j));
        }
    }

    #[test]
    fn region_example() {
        let mut b = vec![0.0; 200];
        b[0] = 3.0;
        b[1] = 1.5;
        b[4] = 2.0;
        let t = TrueModel::new(b, 1.0).unwrap();
        let (lo, hi) = lambda_region(&t, 60, 0.5).unwrap();
        assert!((lo - 16.25 / 60.0).abs() < 1e-12);
        assert!((hi - 59.0 / 60.0 * (0.5 - 1.0 / 60.0) * 2.25).abs() < 1e-12);
        let weak = TrueModel::new(vec![1e-3, 0.0], 1.0).unwrap();
        assert!(matches!(lambda_region(&weak, 60, 0.5), Err(Error::EmptyRegion { .. })));
        let noisy = TrueModel::new(vec![3.0, 0.0], 50.0).unwrap();
        assert!(matches!(lambda_region(&noisy, 60, 0.5), Err(Error::EmptyRegion { .. })));
    }

    #[test]
    fn grids() {
        let g = LambdaGrid::standard(60, 30.0, 15).unwrap();
        assert_eq!(g.values.len(), 15);
        assert_eq!(*g.values.last().unwrap(), LambdaGrid::base_for(60));
        assert!(g.values.windows(2).all(|w| w[0] > w[1]));
        let g = LambdaGrid::spanning(0.01, 100.0, 1.0, 15).unwrap();
        assert_eq!(g.values[0], 0.01);
        assert!(g.values.contains(&0.01));
        assert!(LambdaGrid::from_values(vec![0.1, -1.0], 0.1).is_err());
    }

    #[test]
    fn split_sizes_and_errors() {
        let s = Split::random(100, SplitFractions::default(), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(matches!(Split::random(8, SplitFractions::default(), 3), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn single_lambda_path_equals_fit() {
        let spec = SyntheticSpec::exp1(60, 20, 0.5, NoiseLevel::Sigma(1.0), 9);
        let d = gen_correlated(&spec).unwrap();
        let obj = ObjectiveConfig::frequentist(0.4);
        let cfg = OptimizerConfig::defaults(EstimatorKind::U2g, 9);
        let a = fit(&d, &obj, &cfg).unwrap();
        let (_, fits) = regularization_path(&d, &obj, &cfg, &LambdaGrid::single(0.4).unwrap(), None).unwrap();
        assert_eq!(a, fits[0]);
    }

    #[test]
    fn pure_noise_selects_nothing_at_large_penalty() {
        let mut rng = keyed_rng(11, 0, 0);
        let x = DMatrix::from_fn(80, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(80, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d = Dataset::new(x, y).unwrap();
        let r = fit(&d, &ObjectiveConfig::frequentist(0.5), &OptimizerConfig::defaults(EstimatorKind::U2g, 2)).unwrap();
        assert_eq!(r.z_hat.k(), 0);
        assert!(r.beta_hat.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn converged_fits_end_at_extremes() {
        let spec = SyntheticSpec::exp1(60, 40, 0.5, NoiseLevel::Sigma(1.0), 6);
        let d = gen_correlated(&spec).unwrap();
        for kind in [EstimatorKind::U2g, EstimatorKind::Arm0] {
            let r = fit(&d, &ObjectiveConfig::frequentist(0.5), &OptimizerConfig::defaults(kind, 6)).unwrap();
            assert!(r.converged);
            assert!(r.pi_final().iter().all(|&p| p <= 0.05 || p >= 0.95));
            assert_eq!(r.z_hat.active(), vec![0, 1, 4]);
        }
    }

    #[test]
    fn warm_path_moves_saturated_coordinates() {
        let spec = SyntheticSpec::exp1(60, 30, 0.5, NoiseLevel::Sigma(1.0), 8);
        let d = gen_correlated(&spec).unwrap();
        let grid = LambdaGrid::from_values(vec![1.0, 0.01], 1.0).unwrap();
        let cfg = OptimizerConfig::defaults(EstimatorKind::U2g, 8);
        let (rec, _) = regularization_path(&d, &ObjectiveConfig::frequentist(1.0), &cfg, &grid, None).unwrap();
        assert_eq!(rec[0].support, 3);
        assert!(rec[1].support > 3, "{rec:?}");
    }

    #[test]
    fn expected_gradient_signs_follow_the_truth() {
        let truth = TrueModel::new(vec![2.0, 2.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        let (lo, hi) = lambda_region(&truth, 200, 0.5).unwrap();
        let obj = ObjectiveConfig::frequentist(0.5 * (lo + hi));
        let state = SelectionState::from_probs(&[0.1; 5]);
        let h = TheoryHarnessConfig { eta: 0.5, varpi: 3.0, datasets: 300 };
        let rep = expected_gradient_sign_check(&truth, 200, &state, &obj, &h, 1).unwrap();
        assert!(rep.in_region);
        assert!(rep.all_as_predicted(), "{rep:?}");
        let crowded = SelectionState::from_probs(&[0.9; 5]);
        assert!(expected_gradient_sign_check(&truth, 200, &crowded, &obj, &h, 1).is_err());
    }
}
