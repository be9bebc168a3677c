//! Unbiased gradient estimators for Bernoulli-parameterized objectives.
//!
//! Each estimator is a function `g(u; pi)` of one uniform draw per
//! coordinate of the form `a(u; pi) f(1[u < pi]) + b(u; pi) f(1[u > 1 - pi])`,
//! whose expectation over `u` is the gradient of `E_z[f(z)]` with respect to
//! the logits. The multivariate forms share the (at most) two objective
//! evaluations across all coordinates.

pub mod rng;

use std::fmt;
use std::str::FromStr;

use rand::distr::{Distribution, Open01};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SubsetIndicator;

pub use rng::{derive_seed, keyed_rng};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Logits of independent Bernoulli inclusion variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub phi: Vec<f64>,
}

impl SelectionState {
    pub fn new(phi: Vec<f64>) -> Self {
        Self { phi }
    }

    pub fn from_probs(pi: &[f64]) -> Self {
        Self { phi: pi.iter().map(|&p| logit(p)).collect() }
    }

    pub fn p(&self) -> usize {
        self.phi.len()
    }

    pub fn pi(&self) -> Vec<f64> {
        self.phi.iter().map(|&v| sigmoid(v)).collect()
    }

    /// Most likely subset, `1[pi > 1/2]`.
    pub fn mode(&self) -> SubsetIndicator {
        SubsetIndicator::new(self.phi.iter().map(|&v| v > 0.0).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Reinforce,
    Arm,
    Arm0,
    U2g,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] =
        [EstimatorKind::Reinforce, EstimatorKind::Arm, EstimatorKind::Arm0, EstimatorKind::U2g];

    /// Weight on `f(1[u < pi])`.
    pub fn a(self, u: f64, pi: f64) -> f64 {
        let lo = indicator(u < pi);
        let hi = indicator(u > 1.0 - pi);
        match self {
            EstimatorKind::Reinforce => lo - pi,
            EstimatorKind::Arm => 0.5 - u,
            EstimatorKind::Arm0 => (0.5 - u) * (hi - lo).abs(),
            EstimatorKind::U2g => pi.max(1.0 - pi) * (lo - hi) / 2.0,
        }
    }

    /// Weight on `f(1[u > 1 - pi])`.
    pub fn b(self, u: f64, pi: f64) -> f64 {
        let lo = indicator(u < pi);
        let hi = indicator(u > 1.0 - pi);
        match self {
            EstimatorKind::Reinforce => 0.0,
            EstimatorKind::Arm => u - 0.5,
            EstimatorKind::Arm0 => (u - 0.5) * (hi - lo).abs(),
            EstimatorKind::U2g => pi.max(1.0 - pi) * (hi - lo) / 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Reinforce => "reinforce",
            EstimatorKind::Arm => "arm",
            EstimatorKind::Arm0 => "arm0",
            EstimatorKind::U2g => "u2g",
        }
    }

    /// Objective evaluations needed per draw.
    pub fn evals_per_draw(self) -> usize {
        match self {
            EstimatorKind::Reinforce => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reinforce" => Ok(EstimatorKind::Reinforce),
            "arm" => Ok(EstimatorKind::Arm),
            "arm0" => Ok(EstimatorKind::Arm0),
            "u2g" => Ok(EstimatorKind::U2g),
            other => Err(Error::InvalidConfig(format!("unknown estimator `{other}`"))),
        }
    }
}

#[inline]
fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// `K x p` matrix of uniforms strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformDraws {
    rows: Vec<Vec<f64>>,
    pub seed: u64,
}

impl UniformDraws {
    /// Draw `k` rows of width `p`. Row `i` comes from the stream keyed by
    /// `(seed, stream, i)`.
    pub fn generate(seed: u64, stream: u64, k: usize, p: usize) -> Self {
        let rows = (0..k)
            .map(|i| {
                let mut rng = keyed_rng(seed, stream, i as u64);
                (0..p).map(|_| Open01.sample(&mut rng)).collect()
            })
            .collect();
        Self { rows, seed }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidConfig("at least one draw is required".into()));
        }
        let p = rows[0].len();
        for r in &rows {
            if r.len() != p {
                return Err(Error::DimensionMismatch { expected: p, got: r.len() });
            }
            if r.iter().any(|&u| !(u > 0.0 && u < 1.0)) {
                return Err(Error::InvalidConfig("uniform draws must lie strictly inside (0, 1)".into()));
            }
        }
        Ok(Self { rows, seed: 0 })
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }
}

/// Averaged stochastic gradient with the cost it took to form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub g: Vec<f64>,
    pub kind: EstimatorKind,
    pub k: usize,
    pub f_evals: usize,
}

/// `pi (1 - pi) (f1 - f0)`, the exact derivative of `E[f(z)]` in the logit.
pub fn exact_gradient_univariate(f0: f64, f1: f64, pi: f64) -> f64 {
    pi * (1.0 - pi) * (f1 - f0)
}

pub fn estimate_univariate(kind: EstimatorKind, u: f64, pi: f64, f0: f64, f1: f64) -> f64 {
    let f_lo = if u < pi { f1 } else { f0 };
    let f_hi = if u > 1.0 - pi { f1 } else { f0 };
    kind.a(u, pi) * f_lo + kind.b(u, pi) * f_hi
}

/// Contribution of a single uniform vector. Returns the gradient sample and
/// the number of objective evaluations spent.
fn single_draw<F>(kind: EstimatorKind, pi: &[f64], u: &[f64], f: &F) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&SubsetIndicator) -> Result<f64>,
{
    let p = pi.len();
    let z_lo = SubsetIndicator::new(u.iter().zip(pi).map(|(&uj, &pj)| uj < pj).collect());
    if kind == EstimatorKind::Reinforce {
        let f_lo = f(&z_lo)?;
        let g = (0..p).map(|j| f_lo * (indicator(z_lo.get(j)) - pi[j])).collect();
        return Ok((g, 1));
    }
    let z_hi = SubsetIndicator::new(u.iter().zip(pi).map(|(&uj, &pj)| uj > 1.0 - pj).collect());
    if z_lo == z_hi {
        // Identical subsets: the shared difference is zero for every coordinate.
        return Ok((vec![0.0; p], 0));
    }
    let diff = f(&z_hi)? - f(&z_lo)?;
    let g = (0..p)
        .map(|j| {
            let hi = indicator(z_hi.get(j));
            let lo = indicator(z_lo.get(j));
            match kind {
                EstimatorKind::Arm => diff * (u[j] - 0.5),
                EstimatorKind::Arm0 => diff * (u[j] - 0.5) * (hi - lo).abs(),
                EstimatorKind::U2g => 0.5 * diff * pi[j].max(1.0 - pi[j]) * (hi - lo),
                EstimatorKind::Reinforce => unreachable!(),
            }
        })
        .collect();
    Ok((g, 2))
}

/// Monte Carlo average of the vector estimator over the rows of `draws`.
///
/// Draws are processed in parallel; the reduction runs in draw order so the
/// result does not depend on scheduling.
pub fn estimate_multivariate<F>(
    kind: EstimatorKind,
    state: &SelectionState,
    draws: &UniformDraws,
    f: F,
) -> Result<GradientEstimate>
where
    F: Fn(&SubsetIndicator) -> Result<f64> + Sync,
{
    let p = state.p();
    if draws.width() != p {
        return Err(Error::DimensionMismatch { expected: p, got: draws.width() });
    }
    let pi = state.pi();
    let samples: Vec<(Vec<f64>, usize)> = (0..draws.k())
        .into_par_iter()
        .map(|i| single_draw(kind, &pi, draws.row(i), &f))
        .collect::<Result<_>>()?;
    let mut g = vec![0.0; p];
    let mut f_evals = 0;
    for (s, evals) in &samples {
        for (gj, sj) in g.iter_mut().zip(s) {
            *gj += sj;
        }
        f_evals += evals;
    }
    let k = draws.k() as f64;
    g.iter_mut().for_each(|v| *v /= k);
    Ok(GradientEstimate { g, kind, k: draws.k(), f_evals })
}

/// Per-draw gradient samples (not averaged); used by diagnostics that need
/// sample variances.
pub fn gradient_samples<F>(
    kind: EstimatorKind,
    state: &SelectionState,
    draws: &UniformDraws,
    f: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&SubsetIndicator) -> Result<f64> + Sync,
{
    let p = state.p();
    if draws.width() != p {
        return Err(Error::DimensionMismatch { expected: p, got: draws.width() });
    }
    let pi = state.pi();
    (0..draws.k())
        .into_par_iter()
        .map(|i| single_draw(kind, &pi, draws.row(i), &f).map(|(g, _)| g))
        .collect()
}

/// `pi |pi - 1/2| (1 - pi) max(pi, 1 - pi) delta^2`.
pub fn u2g_variance_closed_form(pi: f64, delta: f64) -> f64 {
    pi * (pi - 0.5).abs() * (1.0 - pi) * pi.max(1.0 - pi) * delta * delta
}

/// Signal-to-noise ratio of the univariate U2G estimator; infinite at `pi = 1/2`.
pub fn u2g_snr_closed_form(pi: f64) -> f64 {
    let denom = (pi - 0.5).abs() * pi.max(1.0 - pi);
    if denom == 0.0 {
        return f64::INFINITY;
    }
    (pi * (1.0 - pi) / denom).sqrt()
}

/// Sample mean and unbiased sample variance of the univariate estimator.
pub fn empirical_moments(
    kind: EstimatorKind,
    pi: f64,
    f0: f64,
    f1: f64,
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    const CHUNK: usize = 1 << 14;
    let chunks = draws.div_ceil(CHUNK);
    // Welford per chunk, merged in chunk order.
    let parts: Vec<(f64, f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = keyed_rng(seed, 0x756e_6976, c as u64);
            let len = CHUNK.min(draws - c * CHUNK);
            let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
            for _ in 0..len {
                let u: f64 = Open01.sample(&mut rng);
                let g = estimate_univariate(kind, u, pi, f0, f1);
                n += 1.0;
                let d = g - mean;
                mean += d / n;
                m2 += d * (g - mean);
            }
            (n, mean, m2)
        })
        .collect();
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for (nb, mb, m2b) in parts {
        if nb == 0.0 {
            continue;
        }
        let tot = n + nb;
        let d = mb - mean;
        mean += d * nb / tot;
        m2 += m2b + d * d * n * nb / tot;
        n = tot;
    }
    (mean, if n > 1.0 { m2 / (n - 1.0) } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_examples() {
        assert!((exact_gradient_univariate(4.0, 5.0, 2.0 / 3.0) - 2.0 / 9.0).abs() < 1e-15);
        assert_eq!(exact_gradient_univariate(3.0, 3.0, 0.3), 0.0);
        assert!(exact_gradient_univariate(-100.0, 100.0, 1e-12).abs() < 1e-9);
    }

    #[test]
    fn u2g_is_constant_at_half() {
        for u in [0.01, 0.2, 0.49, 0.51, 0.9] {
            assert!((estimate_univariate(EstimatorKind::U2g, u, 0.5, 4.0, 5.0) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn arm_vanishes_at_midpoint() {
        for pi in [0.2, 0.5, 0.8] {
            assert_eq!(estimate_univariate(EstimatorKind::Arm, 0.5, pi, 1.0, 7.0), 0.0);
        }
    }

    #[test]
    fn u2g_monte_carlo_mean_is_unbiased() {
        let (mean, var) = empirical_moments(EstimatorKind::U2g, 2.0 / 3.0, 4.0, 5.0, 1_000_000, 3);
        let se = (var / 1e6).sqrt();
        assert!((mean - 2.0 / 9.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn u2g_variance_examples() {
        assert_eq!(u2g_variance_closed_form(0.5, 3.0), 0.0);
        assert_eq!(u2g_variance_closed_form(0.3, 0.0), 0.0);
        let max = (1..10_000)
            .map(|i| u2g_variance_closed_form(i as f64 / 10_000.0, 1.0))
            .fold(0.0, f64::max);
        assert!((max - 0.0388).abs() < 0.0002, "max {max}");
        assert!(max <= 0.0389);
    }

    #[test]
    fn u2g_snr_examples() {
        assert!(u2g_snr_closed_form(1e-6) < 0.01);
        assert!(u2g_snr_closed_form(1.0 - 1e-6) < 0.01);
        assert!(u2g_snr_closed_form(0.5).is_infinite());
        assert!((u2g_snr_closed_form(2.0 / 3.0) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empirical_variance_tracks_closed_form() {
        let (_, var) = empirical_moments(EstimatorKind::U2g, 2.0 / 3.0, 4.0, 5.0, 1_000_000, 17);
        let exact = u2g_variance_closed_form(2.0 / 3.0, 1.0);
        assert!((var - exact).abs() < 0.02 * exact);
    }

    #[test]
    fn equal_objective_values_give_zero_mean() {
        for kind in EstimatorKind::ALL {
            let (mean, var) = empirical_moments(kind, 0.3, 2.5, 2.5, 100_000, 5);
            let se = (var / 1e5).sqrt();
            assert!(mean.abs() <= 3.0 * se + 1e-15, "{kind}: {mean}");
        }
    }

    #[test]
    fn ordering_at_reference_point() {
        let v = |k| empirical_moments(k, 2.0 / 3.0, 4.0, 5.0, 200_000, 8).1;
        let (u2g, arm, rf) = (v(EstimatorKind::U2g), v(EstimatorKind::Arm), v(EstimatorKind::Reinforce));
        assert!(u2g <= 0.95 * arm && arm <= 0.95 * rf, "{u2g} {arm} {rf}");
    }

    #[test]
    fn constant_objective_gives_zero_gradient() {
        let state = SelectionState::new(vec![0.3, -1.0, 2.0]);
        let draws = UniformDraws::generate(1, 0, 50, 3);
        for kind in [EstimatorKind::Arm, EstimatorKind::Arm0, EstimatorKind::U2g] {
            let est = estimate_multivariate(kind, &state, &draws, |_| Ok(7.5)).unwrap();
            assert!(est.g.iter().all(|&v| v == 0.0));
        }
        let est = estimate_multivariate(EstimatorKind::Reinforce, &state, &UniformDraws::generate(2, 0, 200_000, 3), |_| Ok(7.5))
            .unwrap();
        // f * (z - pi) has sd <= 7.5/2 per draw.
        assert!(est.g.iter().all(|v| v.abs() < 4.0 * 3.75 / (200_000f64).sqrt()));
    }

    #[test]
    fn evaluation_budget_is_per_draw() {
        let state = SelectionState::new(vec![0.1; 40]);
        let draws = UniformDraws::generate(4, 1, 25, 40);
        for kind in EstimatorKind::ALL {
            let est = estimate_multivariate(kind, &state, &draws, |z| Ok(z.k() as f64)).unwrap();
            assert!(est.f_evals <= kind.evals_per_draw() * 25);
            assert_eq!(est.k, 25);
        }
    }

    #[test]
    fn masked_estimators_are_sparse() {
        // Coordinate with u in the band (min(pi,1-pi), max(pi,1-pi)) has equal
        // indicators, so ARM0 and U2G give exactly zero there.
        let state = SelectionState::from_probs(&[0.8, 0.2, 0.6]);
        let u = vec![vec![0.5, 0.5, 0.45]];
        let draws = UniformDraws::from_rows(u).unwrap();
        for kind in [EstimatorKind::Arm0, EstimatorKind::U2g] {
            let est = estimate_multivariate(kind, &state, &draws, |z| Ok(z.k() as f64 * 3.0 + 1.0)).unwrap();
            assert!(est.g.iter().all(|&v| v == 0.0));
        }
        let u = vec![vec![0.1, 0.5, 0.45]];
        let draws = UniformDraws::from_rows(u).unwrap();
        for kind in [EstimatorKind::Arm0, EstimatorKind::U2g] {
            let est = estimate_multivariate(kind, &state, &draws, |z| Ok(z.k() as f64 * 3.0 + 1.0)).unwrap();
            assert_ne!(est.g[0], 0.0);
            assert_eq!(est.g[1], 0.0);
            assert_eq!(est.g[2], 0.0);
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let state = SelectionState::new(vec![0.0; 3]);
        let draws = UniformDraws::generate(0, 0, 2, 4);
        assert!(matches!(
            estimate_multivariate(EstimatorKind::U2g, &state, &draws, |_| Ok(0.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn draws_stay_open() {
        let d = UniformDraws::generate(9, 3, 100, 20);
        assert!((0..d.k()).all(|i| d.row(i).iter().all(|&u| u > 0.0 && u < 1.0)));
        assert!(UniformDraws::from_rows(vec![vec![0.0, 0.5]]).is_err());
    }

    #[test]
    fn kind_parses() {
        assert_eq!("U2G".parse::<EstimatorKind>().unwrap(), EstimatorKind::U2g);
        assert!("rebar".parse::<EstimatorKind>().is_err());
    }
}
