//! Ground-truth machinery for small problems: exhaustive best-subset search,
//! the exact expected-objective gradient by enumeration, and exact
//! stratum-wise moments of the univariate estimators.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, SelectionState};
use crate::model::{Dataset, Objective, ObjectiveConfig, SubsetIndicator};

pub const DEFAULT_MAX_P_EXHAUSTIVE: usize = 20;
pub const DEFAULT_MAX_P_ENUM: usize = 12;

/// Rebuild the swept matrix from scratch after this many flips.
const REFRESH_EVERY: u64 = 64;
/// Relative pivot size below which a sweep is considered unsafe.
const PIVOT_TOL: f64 = 1e-9;

/// Augmented Gram matrix `[[X^T X, X^T y], [y^T X, y^T y]]` with the sweep
/// operator. After sweeping a set `S` of covariates, the bottom-right entry
/// equals the residual sum of squares of regressing `y` on `X_S`.
struct Sweeper {
    base: DMatrix<f64>,
    cur: DMatrix<f64>,
    swept: Vec<bool>,
    valid: bool,
}

impl Sweeper {
    fn new(data: &Dataset) -> Self {
        let p = data.p();
        let mut base = DMatrix::zeros(p + 1, p + 1);
        let g = data.x.tr_mul(&data.x);
        let b = data.x.tr_mul(&data.y);
        base.view_mut((0, 0), (p, p)).copy_from(&g);
        for j in 0..p {
            base[(j, p)] = b[j];
            base[(p, j)] = b[j];
        }
        base[(p, p)] = data.y.norm_squared();
        Self { cur: base.clone(), base, swept: vec![false; p], valid: true }
    }

    /// Sweep `k` in (or out, if already swept). Returns false when the pivot
    /// is too small to do so safely; the state is then left invalid.
    fn toggle(&mut self, k: usize) -> bool {
        let d = self.cur[(k, k)];
        if d.abs() <= PIVOT_TOL * self.base[(k, k)].abs().max(f64::MIN_POSITIVE) {
            self.valid = false;
            return false;
        }
        let m = self.cur.nrows();
        let out = self.swept[k];
        let a = self.cur.clone();
        for i in 0..m {
            if i == k {
                continue;
            }
            for j in 0..m {
                if j == k {
                    continue;
                }
                self.cur[(i, j)] = a[(i, j)] - a[(i, k)] * a[(k, j)] / d;
            }
        }
        let s = if out { -1.0 } else { 1.0 };
        for i in 0..m {
            if i != k {
                self.cur[(i, k)] = s * a[(i, k)] / d;
                self.cur[(k, i)] = s * a[(k, i)] / d;
            }
        }
        self.cur[(k, k)] = -1.0 / d;
        self.swept[k] = !out;
        true
    }

    /// Reset to `target`, sweeping from the unswept matrix.
    fn rebuild(&mut self, target: &[bool]) {
        self.cur.copy_from(&self.base);
        self.swept.iter_mut().for_each(|s| *s = false);
        self.valid = true;
        for (k, &on) in target.iter().enumerate() {
            if on && !self.toggle(k) {
                return;
            }
        }
    }

    fn rss(&self) -> f64 {
        let p = self.swept.len();
        self.cur[(p, p)].max(0.0)
    }
}

fn gray(i: u64) -> u64 {
    i ^ (i >> 1)
}

/// Candidate ordering: smaller value, then smaller support, then the
/// indicator that is lexicographically smaller reading covariates from index 0
/// (a zero beats a one at the first difference).
fn better(a: (f64, &SubsetIndicator), b: (f64, &SubsetIndicator)) -> bool {
    let tol = 1e-12 * (1.0 + a.0.abs().max(b.0.abs()));
    if a.0 < b.0 - tol {
        return true;
    }
    if a.0 > b.0 + tol {
        return false;
    }
    if a.1.k() != b.1.k() {
        return a.1.k() < b.1.k();
    }
    a.1.as_slice() < b.1.as_slice()
}

/// Global minimizer of the frequentist objective over all `2^p` subsets.
///
/// Subsets are visited in Gray-code order so consecutive subsets differ by
/// one covariate; each flip updates the swept normal equations in
/// `O(p^2)`. The swept state is rebuilt every 64 flips, and subsets whose
/// sweep pivot is unsafe are evaluated with the direct solver.
pub fn exhaustive_best_subset(data: &Dataset, lambda: f64, max_p: usize) -> Result<(SubsetIndicator, f64)> {
    let p = data.p();
    if p > max_p || p > 62 {
        return Err(Error::TooLarge { p, max: max_p.min(62) });
    }
    let cfg = ObjectiveConfig::frequentist(lambda);
    let obj = Objective::new(data, cfg)?;
    let n = data.n() as f64;
    let forced = data.intercept_col;
    let free: Vec<usize> = (0..p).filter(|&j| Some(j) != forced).collect();
    let m = free.len();
    let total: u64 = 1 << m;
    let chunks = (total / 1024).clamp(1, 256);
    let chunk_len = total.div_ceil(chunks);

    let decode = |code: u64| -> SubsetIndicator {
        let mut z = SubsetIndicator::zeros(p);
        for (b, &j) in free.iter().enumerate() {
            if code >> b & 1 == 1 {
                z.set(j, true);
            }
        }
        if let Some(c) = forced {
            z.set(c, true);
        }
        z
    };

    let best: Vec<Result<(SubsetIndicator, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * chunk_len;
            let end = (start + chunk_len).min(total);
            let mut sweeper = Sweeper::new(data);
            let mut best: Option<(SubsetIndicator, f64)> = None;
            let mut z = decode(gray(start));
            sweeper.rebuild(z.as_slice());
            for i in start..end {
                if i > start {
                    let flip = (gray(i) ^ gray(i - 1)).trailing_zeros() as usize;
                    let j = free[flip];
                    z.set(j, !z.get(j));
                    if !sweeper.valid || (i - start).is_multiple_of(REFRESH_EVERY) {
                        sweeper.rebuild(z.as_slice());
                    } else {
                        sweeper.toggle(j);
                    }
                }
                let rss = if sweeper.valid { sweeper.rss() } else { obj.rss(&z)? };
                let value = rss / n + lambda * data.penalized_count(&z) as f64;
                if best.as_ref().is_none_or(|(bz, bv)| better((value, &z), (*bv, bz))) {
                    best = Some((z.clone(), value));
                }
            }
            Ok(best.expect("every chunk is non-empty"))
        })
        .collect();

    let mut out: Option<(SubsetIndicator, f64)> = None;
    for r in best {
        let (z, v) = r?;
        if out.as_ref().is_none_or(|(bz, bv)| better((v, &z), (*bv, bz))) {
            out = Some((z, v));
        }
    }
    let (z, _) = out.expect("at least one subset");
    // Report the value from the direct solver for the winner.
    let value = obj.value(&z, &[])?;
    Ok((z, value))
}

/// Exact gradient of `E_z[f(z)]` with respect to the logits for an
/// arbitrary set function `f`, by summing over all `2^p` subsets.
pub fn exact_gradient_enum_fn<F>(pi: &[f64], max_p: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(&SubsetIndicator) -> Result<f64> + Sync,
{
    let p = pi.len();
    if p > max_p || p > 30 {
        return Err(Error::TooLarge { p, max: max_p.min(30) });
    }
    let total = 1usize << p;
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|mask| f(&SubsetIndicator::from_mask(p, mask as u64)))
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; p];
    for (v, g) in grad.iter_mut().enumerate() {
        let bit = 1usize << v;
        let mut acc = 0.0;
        for mask in (0..total).filter(|m| m & bit == 0) {
            let mut w = 1.0;
            for (j, &pj) in pi.iter().enumerate() {
                if j != v {
                    w *= if mask >> j & 1 == 1 { pj } else { 1.0 - pj };
                }
            }
            acc += w * (values[mask | bit] - values[mask]);
        }
        *g = pi[v] * (1.0 - pi[v]) * acc;
    }
    Ok(grad)
}

/// Exact gradient of the configured objective's expectation at `state`.
/// For the Bayesian objective the variational probabilities inside `f` are
/// held at `state`'s values.
pub fn exact_gradient_enum(
    data: &Dataset,
    obj: &ObjectiveConfig,
    state: &SelectionState,
    max_p: usize,
) -> Result<Vec<f64>> {
    if state.p() != data.p() {
        return Err(Error::DimensionMismatch { expected: data.p(), got: state.p() });
    }
    let objective = Objective::new(data, *obj)?;
    let pi = state.pi();
    exact_gradient_enum_fn(&pi, max_p, |z| objective.value(z, &pi))
}

/// Expected value of `E_z[f(z)]` under independent inclusion probabilities.
pub fn expected_objective_enum<F>(pi: &[f64], f: F) -> Result<f64>
where
    F: Fn(&SubsetIndicator) -> Result<f64>,
{
    let p = pi.len();
    if p > 30 {
        return Err(Error::TooLarge { p, max: 30 });
    }
    let mut total = 0.0;
    for mask in 0..(1u64 << p) {
        let w: f64 = pi.iter().enumerate().map(|(j, &pj)| if mask >> j & 1 == 1 { pj } else { 1.0 - pj }).product();
        if w > 0.0 {
            total += w * f(&SubsetIndicator::from_mask(p, mask))?;
        }
    }
    Ok(total)
}

/// Estimator value on a stratum where `1[u < pi] = lo` and `1[u > 1 - pi] = hi`.
fn stratum_value(kind: EstimatorKind, u: f64, pi: f64, lo: bool, hi: bool, f0: f64, f1: f64) -> f64 {
    let f_lo = if lo { f1 } else { f0 };
    let f_hi = if hi { f1 } else { f0 };
    let (l, h) = (lo as u8 as f64, hi as u8 as f64);
    match kind {
        EstimatorKind::Reinforce => f_lo * (l - pi),
        EstimatorKind::Arm => (f_hi - f_lo) * (u - 0.5),
        EstimatorKind::Arm0 => (f_hi - f_lo) * (u - 0.5) * (h - l).abs(),
        EstimatorKind::U2g => 0.5 * pi.max(1.0 - pi) * (f_hi - f_lo) * (h - l),
    }
}

/// Exact mean and second moment of a univariate estimator over `u ~ U(0,1)`.
///
/// On each of the three strata cut at `min(pi, 1-pi)` and `max(pi, 1-pi)`
/// the paired indicators are constant, so `g` is a polynomial of degree at
/// most one in `u` and `g^2` of degree at most two. Simpson's rule
/// integrates both exactly.
pub fn stratum_expectation(kind: EstimatorKind, pi: f64, f0: f64, f1: f64) -> (f64, f64) {
    let a = pi.min(1.0 - pi);
    let b = pi.max(1.0 - pi);
    let mut mean = 0.0;
    let mut second = 0.0;
    for (l, r) in [(0.0, a), (a, b), (b, 1.0)] {
        let w = r - l;
        if w <= 0.0 {
            continue;
        }
        let mid = 0.5 * (l + r);
        let lo = mid < pi;
        let hi = mid > 1.0 - pi;
        let g = |u: f64| stratum_value(kind, u, pi, lo, hi, f0, f1);
        let (gl, gm, gr) = (g(l), g(mid), g(r));
        mean += w / 6.0 * (gl + 4.0 * gm + gr);
        second += w / 6.0 * (gl * gl + 4.0 * gm * gm + gr * gr);
    }
    (mean, second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{exact_gradient_univariate, u2g_variance_closed_form};
    use crate::model::objective_freq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] * 2.0 - x[(i, p - 1)] + rng.random::<f64>() - 0.5);
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn single_covariate_compares_both_subsets() {
        let d = random_data(15, 1, 1);
        let lam = 0.01;
        let (z, v) = exhaustive_best_subset(&d, lam, 20).unwrap();
        let cfg = ObjectiveConfig::frequentist(lam);
        let v0 = objective_freq(&d, &SubsetIndicator::zeros(1), &cfg).unwrap();
        let v1 = objective_freq(&d, &SubsetIndicator::ones(1), &cfg).unwrap();
        assert_eq!(z.get(0), v1 < v0);
        assert!((v - v0.min(v1)).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_design_hard_thresholds() {
        // Columns of a scaled Hadamard matrix satisfy X^T X = n I.
        let n = 16;
        let mut h = DMatrix::from_element(1, 1, 1.0);
        while h.nrows() < n {
            let m = h.nrows();
            let mut next = DMatrix::zeros(2 * m, 2 * m);
            next.view_mut((0, 0), (m, m)).copy_from(&h);
            next.view_mut((0, m), (m, m)).copy_from(&h);
            next.view_mut((m, 0), (m, m)).copy_from(&h);
            next.view_mut((m, m), (m, m)).copy_from(&(-&h));
            h = next;
        }
        let x = h.columns(1, 6).into_owned();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = DVector::from_fn(n, |i, _| 1.2 * x[(i, 0)] - 0.4 * x[(i, 3)] + 0.3 * (rng.random::<f64>() - 0.5));
        let d = Dataset::new(x.clone(), y.clone()).unwrap();
        let lam = 0.05;
        let (z, _) = exhaustive_best_subset(&d, lam, 20).unwrap();
        for j in 0..6 {
            let c = x.column(j).dot(&y) / n as f64;
            assert_eq!(z.get(j), c * c > lam, "column {j}");
        }
    }

    #[test]
    fn global_minimum_spot_check() {
        let d = random_data(30, 9, 7);
        let lam = 0.02;
        let (_, best) = exhaustive_best_subset(&d, lam, 20).unwrap();
        let cfg = ObjectiveConfig::frequentist(lam);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let z = SubsetIndicator::new((0..9).map(|_| rng.random::<bool>()).collect());
            assert!(best <= objective_freq(&d, &z, &cfg).unwrap() + 1e-12);
        }
    }

    #[test]
    fn sweep_and_direct_agree_on_every_subset() {
        let d = random_data(12, 6, 21);
        let obj = Objective::new(&d, ObjectiveConfig::frequentist(0.0)).unwrap();
        let mut sweeper = Sweeper::new(&d);
        let mut z = SubsetIndicator::zeros(6);
        for i in 1..64u64 {
            let j = (gray(i) ^ gray(i - 1)).trailing_zeros() as usize;
            z.set(j, !z.get(j));
            assert!(sweeper.toggle(j));
            let direct = obj.rss(&z).unwrap();
            assert!((sweeper.rss() - direct).abs() < 1e-9 * (1.0 + direct));
        }
    }

    #[test]
    fn ties_prefer_smaller_support() {
        // Duplicate columns tie exactly; lambda = 0 and interpolation ties too.
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0]);
        let y = DVector::from_vec(vec![1.0, 1.0]);
        let d = Dataset::new(x, y).unwrap();
        let (z, v) = exhaustive_best_subset(&d, 0.0, 20).unwrap();
        assert!(v.abs() < 1e-12);
        assert_eq!(z.k(), 2);
        assert_eq!(z.active(), vec![1, 2]);
    }

    #[test]
    fn too_large_is_rejected() {
        let d = random_data(5, 13, 1);
        assert!(matches!(exhaustive_best_subset(&d, 0.1, 12), Err(Error::TooLarge { .. })));
        let st = SelectionState::new(vec![0.0; 13]);
        assert!(matches!(
            exact_gradient_enum(&d, &ObjectiveConfig::frequentist(0.1), &st, 12),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn enumeration_reduces_to_univariate() {
        let g = exact_gradient_enum_fn(&[0.3], 12, |z| Ok(if z.get(0) { 5.0 } else { 4.0 })).unwrap();
        assert!((g[0] - exact_gradient_univariate(4.0, 5.0, 0.3)).abs() < 1e-15);
        let g = exact_gradient_enum_fn(&[0.3, 0.8, 0.5], 12, |_| Ok(2.0)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn enumeration_ignores_constant_shift() {
        let d = random_data(20, 5, 4);
        let cfg = ObjectiveConfig::frequentist(0.1);
        let obj = Objective::new(&d, cfg).unwrap();
        let pi = [0.2, 0.7, 0.4, 0.9, 0.1];
        let a = exact_gradient_enum_fn(&pi, 12, |z| obj.value(z, &[])).unwrap();
        let b = exact_gradient_enum_fn(&pi, 12, |z| Ok(obj.value(z, &[])? + 1e3)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn strata_are_unbiased() {
        for kind in EstimatorKind::ALL {
            for pi in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let (m, _) = stratum_expectation(kind, pi, 4.0, 5.0);
                assert!((m - pi * (1.0 - pi)).abs() < 1e-12, "{kind} {pi}");
            }
        }
    }

    #[test]
    fn stratum_u2g_variance_is_closed_form() {
        let pi = 2.0 / 3.0;
        let (m, s) = stratum_expectation(EstimatorKind::U2g, pi, 4.0, 5.0);
        assert!((s - m * m - u2g_variance_closed_form(pi, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn arm_and_arm0_share_moments() {
        let a = stratum_expectation(EstimatorKind::Arm, 2.0 / 3.0, 4.0, 5.0);
        let b = stratum_expectation(EstimatorKind::Arm0, 2.0 / 3.0, 4.0, 5.0);
        assert!((a.0 - b.0).abs() < 1e-15 && (a.1 - b.1).abs() < 1e-15);
    }
}
