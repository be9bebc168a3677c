use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lstsq::{solve_columns, solve_subset_ls, stepwise_noise_variance};
use super::{Dataset, SubsetIndicator};
use crate::error::{Error, Result};

/// Probabilities inside `log q(z)` are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Frequentist,
    Bayesian,
}

/// Which subset objective to minimize and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectiveConfig {
    /// `rss(z)/n + lambda * ||z||_0`
    Frequentist { lambda: f64 },
    /// Negated tightened ELBO integrand of the spike-and-slab model with
    /// prior inclusion probability `sigmoid(-lambda0)`.
    Bayesian { lambda0: f64, sigma2: f64, sigma_alpha2: f64 },
}

impl ObjectiveConfig {
    pub fn frequentist(lambda: f64) -> Self {
        ObjectiveConfig::Frequentist { lambda }
    }

    /// Bayesian objective with data-driven variances: the noise variance
    /// comes from a forward-stepwise pre-fit and the slab variance is `100 * var(y)`.
    pub fn bayesian_for(data: &Dataset, lambda0: f64) -> Result<Self> {
        let sigma2 = stepwise_noise_variance(data)?;
        let n = data.n() as f64;
        let mean = data.y.sum() / n;
        let var_y = data.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let cfg = ObjectiveConfig::Bayesian { lambda0, sigma2, sigma_alpha2: 100.0 * var_y.max(f64::MIN_POSITIVE) };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kind(&self) -> ObjectiveKind {
        match self {
            ObjectiveConfig::Frequentist { .. } => ObjectiveKind::Frequentist,
            ObjectiveConfig::Bayesian { .. } => ObjectiveKind::Bayesian,
        }
    }

    /// The sparsity penalty: `lambda` or `lambda0`.
    pub fn penalty(&self) -> f64 {
        match *self {
            ObjectiveConfig::Frequentist { lambda } => lambda,
            ObjectiveConfig::Bayesian { lambda0, .. } => lambda0,
        }
    }

    pub fn with_penalty(self, value: f64) -> Self {
        match self {
            ObjectiveConfig::Frequentist { .. } => ObjectiveConfig::Frequentist { lambda: value },
            ObjectiveConfig::Bayesian { sigma2, sigma_alpha2, .. } => {
                ObjectiveConfig::Bayesian { lambda0: value, sigma2, sigma_alpha2 }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ObjectiveConfig::Frequentist { lambda } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::InvalidConfig(format!("lambda must be finite and >= 0, got {lambda}")));
                }
            }
            ObjectiveConfig::Bayesian { lambda0, sigma2, sigma_alpha2 } => {
                if !(lambda0 >= 0.0 && lambda0.is_finite()) {
                    return Err(Error::InvalidConfig(format!("lambda0 must be finite and >= 0, got {lambda0}")));
                }
                if !(sigma2 > 0.0 && sigma2.is_finite()) {
                    return Err(Error::InvalidConfig(format!("sigma2 must be finite and > 0, got {sigma2}")));
                }
                if !(sigma_alpha2 > 0.0 && sigma_alpha2.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "sigma_alpha2 must be finite and > 0, got {sigma_alpha2}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Penalized least-squares objective `rss(z)/n + lambda * ||z||_0`.
pub fn objective_freq(data: &Dataset, z: &SubsetIndicator, cfg: &ObjectiveConfig) -> Result<f64> {
    let ObjectiveConfig::Frequentist { lambda } = *cfg else {
        return Err(Error::InvalidConfig("objective_freq needs a frequentist config".into()));
    };
    let solve = solve_subset_ls(data, z)?;
    Ok(solve.rss / data.n() as f64 + lambda * data.penalized_count(z) as f64)
}

/// `log N(y; 0, sigma2 I + sigma_alpha2 X_z X_z^T)` evaluated through the
/// `k x k` matrix `X_z^T X_z + (sigma2/sigma_alpha2) I`.
pub fn log_marginal(data: &Dataset, z: &SubsetIndicator, cfg: &ObjectiveConfig) -> Result<f64> {
    let ObjectiveConfig::Bayesian { sigma2, sigma_alpha2, .. } = *cfg else {
        return Err(Error::InvalidConfig("log_marginal needs a Bayesian config".into()));
    };
    cfg.validate()?;
    data.check_indicator(z)?;
    data.check_finite()?;
    let cols = data.fit_columns(z);
    let xz = data.x.select_columns(cols.iter());
    let inner = xz.tr_mul(&xz);
    let b = xz.tr_mul(&data.y);
    log_marginal_inner(data.n(), data.y.norm_squared(), inner, &b, sigma2, sigma_alpha2)
}

/// Negated ELBO integrand `-(log p(y|z) + log p(z) - log q(z))`, with the
/// variational probabilities held fixed for the draw.
pub fn objective_vi(
    data: &Dataset,
    z: &SubsetIndicator,
    state_probs: &[f64],
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    let ObjectiveConfig::Bayesian { lambda0, .. } = *cfg else {
        return Err(Error::InvalidConfig("objective_vi needs a Bayesian config".into()));
    };
    if state_probs.len() != data.p() {
        return Err(Error::DimensionMismatch { expected: data.p(), got: state_probs.len() });
    }
    let lm = log_marginal(data, z, cfg)?;
    Ok(-(lm + log_prior(data, z, lambda0) - log_q(data, z, state_probs)))
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn log_prior(data: &Dataset, z: &SubsetIndicator, lambda0: f64) -> f64 {
    let on = log_sigmoid(-lambda0);
    let off = log_sigmoid(lambda0);
    (0..z.len())
        .filter(|&j| Some(j) != data.intercept_col)
        .map(|j| if z.get(j) { on } else { off })
        .sum()
}

fn log_q(data: &Dataset, z: &SubsetIndicator, probs: &[f64]) -> f64 {
    (0..z.len())
        .filter(|&j| Some(j) != data.intercept_col)
        .map(|j| {
            let pi = probs[j].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if z.get(j) {
                pi.ln()
            } else {
                (1.0 - pi).ln()
            }
        })
        .sum()
}

fn log_marginal_inner(
    n: usize,
    yty: f64,
    mut inner: DMatrix<f64>,
    b: &DVector<f64>,
    sigma2: f64,
    sigma_alpha2: f64,
) -> Result<f64> {
    let nf = n as f64;
    let k = inner.nrows();
    let base = nf * (2.0 * PI).ln() + nf * sigma2.ln();
    if k == 0 {
        return Ok(-0.5 * (base + yty / sigma2));
    }
    let ratio = sigma2 / sigma_alpha2;
    for i in 0..k {
        inner[(i, i)] += ratio;
    }
    let chol = Cholesky::new(inner)
        .ok_or_else(|| Error::NumericalFailure("inner k x k matrix is not positive definite".into()))?;
    let logdet_inner: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let logdet = logdet_inner - (k as f64) * ratio.ln();
    let quad = (yty - b.dot(&chol.solve(b))) / sigma2;
    let value = -0.5 * (base + logdet + quad);
    if !value.is_finite() {
        return Err(Error::NumericalFailure("log marginal is not finite".into()));
    }
    Ok(value)
}

/// Precomputed `X^T X`, `X^T y` and `y^T y` so each subset evaluation only
/// touches a `k x k` block.
#[derive(Debug, Clone)]
pub struct GramCache {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
}

impl GramCache {
    pub fn new(data: &Dataset) -> Self {
        Self { gram: data.x.tr_mul(&data.x), xty: data.x.tr_mul(&data.y), yty: data.y.norm_squared() }
    }

    fn block(&self, cols: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let k = cols.len();
        let g = DMatrix::from_fn(k, k, |r, c| self.gram[(cols[r], cols[c])]);
        let b = DVector::from_fn(k, |r, _| self.xty[cols[r]]);
        (g, b)
    }
}

/// Thread-safe evaluator of the configured objective on one dataset.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    data: &'a Dataset,
    cfg: ObjectiveConfig,
    cache: Arc<GramCache>,
}

impl<'a> Objective<'a> {
    pub fn new(data: &'a Dataset, cfg: ObjectiveConfig) -> Result<Self> {
        Self::with_cache(data, cfg, Arc::new(GramCache::new(data)))
    }

    /// Reuse a cache built for the same dataset.
    pub fn with_cache(data: &'a Dataset, cfg: ObjectiveConfig, cache: Arc<GramCache>) -> Result<Self> {
        cfg.validate()?;
        data.check_finite()?;
        if cache.gram.nrows() != data.p() {
            return Err(Error::DimensionMismatch { expected: data.p(), got: cache.gram.nrows() });
        }
        Ok(Self { data, cfg, cache })
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &Arc<GramCache> {
        &self.cache
    }

    /// Residual sum of squares of the subset fit. Uses a Cholesky solve of
    /// the cached normal equations and falls back to the orthogonal solver
    /// when the block is ill-conditioned or the fit is nearly exact. With
    /// `k >= n` an exact fit is detected from `n` well-conditioned columns.
    pub fn rss(&self, z: &SubsetIndicator) -> Result<f64> {
        self.data.check_indicator(z)?;
        let cols = self.data.fit_columns(z);
        let k = cols.len();
        if k == 0 {
            return Ok(self.cache.yty);
        }
        let n = self.data.n();
        if k >= n {
            // Any n well-conditioned columns already span R^n, so y is fitted exactly.
            let (g, _) = self.cache.block(&cols[..n]);
            let gmax = g.diagonal().max();
            if let Some(chol) = Cholesky::new(g) {
                let dmin = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, d| m.min(d * d));
                if gmax > 0.0 && dmin > 1e-8 * gmax {
                    return Ok(0.0);
                }
            }
        } else {
            let (g, b) = self.cache.block(&cols);
            let gmax = g.diagonal().max();
            if let Some(chol) = Cholesky::new(g) {
                let dmin = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, d| m.min(d * d));
                if gmax > 0.0 && dmin > 1e-8 * gmax {
                    let alpha = chol.solve(&b);
                    let rss = self.cache.yty - b.dot(&alpha);
                    if rss > 1e-8 * self.cache.yty {
                        return Ok(rss);
                    }
                }
            }
        }
        Ok(solve_columns(&self.data.x, &self.data.y, cols)?.rss)
    }

    pub fn log_marginal(&self, z: &SubsetIndicator) -> Result<f64> {
        let ObjectiveConfig::Bayesian { sigma2, sigma_alpha2, .. } = self.cfg else {
            return Err(Error::InvalidConfig("log marginal needs a Bayesian config".into()));
        };
        self.data.check_indicator(z)?;
        let cols = self.data.fit_columns(z);
        let (g, b) = self.cache.block(&cols);
        log_marginal_inner(self.data.n(), self.cache.yty, g, &b, sigma2, sigma_alpha2)
    }

    /// Objective value at `z`. `probs` are the current inclusion
    /// probabilities; only the Bayesian objective reads them.
    pub fn value(&self, z: &SubsetIndicator, probs: &[f64]) -> Result<f64> {
        match self.cfg {
            ObjectiveConfig::Frequentist { lambda } => {
                Ok(self.rss(z)? / self.data.n() as f64 + lambda * self.data.penalized_count(z) as f64)
            }
            ObjectiveConfig::Bayesian { lambda0, .. } => {
                if probs.len() != self.data.p() {
                    return Err(Error::DimensionMismatch { expected: self.data.p(), got: probs.len() });
                }
                let lm = self.log_marginal(z)?;
                Ok(-(lm + log_prior(self.data, z, lambda0) - log_q(self.data, z, probs)))
            }
        }
    }
}
