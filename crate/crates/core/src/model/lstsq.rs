use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{Dataset, SubsetIndicator};
use crate::error::{Error, Result};

/// Least-squares fit restricted to the columns selected by a subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSolve {
    /// Coefficients on the fitted columns, in increasing column order. The
    /// intercept column, when present, is always among them.
    pub alpha_hat: Vec<f64>,
    /// Columns the coefficients refer to.
    pub columns: Vec<usize>,
    pub rss: f64,
    pub rank: usize,
    pub min_norm: bool,
}

/// Minimize `||y - X_z a||^2` over `a`.
///
/// Full column rank subsets go through a column-pivoted QR. Rank-deficient
/// subsets (including `k >= n`) fall back to the SVD pseudo-inverse, which
/// yields the minimum-norm minimizer.
pub fn solve_subset_ls(data: &Dataset, z: &SubsetIndicator) -> Result<SubsetSolve> {
    data.check_indicator(z)?;
    data.check_finite()?;
    let cols = data.fit_columns(z);
    solve_columns(&data.x, &data.y, cols)
}

pub(crate) fn solve_columns(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    cols: Vec<usize>,
) -> Result<SubsetSolve> {
    let n = x.nrows();
    let k = cols.len();
    if k == 0 {
        return Ok(SubsetSolve {
            alpha_hat: Vec::new(),
            columns: cols,
            rss: y.norm_squared(),
            rank: 0,
            min_norm: false,
        });
    }
    let xz = x.select_columns(cols.iter());
    let scale = xz.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(SubsetSolve {
            alpha_hat: vec![0.0; k],
            columns: cols,
            rss: y.norm_squared(),
            rank: 0,
            min_norm: true,
        });
    }

    if k <= n {
        let qr = xz.clone().col_piv_qr();
        let r = qr.r();
        let r00 = r[(0, 0)].abs();
        let tol = r00 * (n.max(k) as f64) * f64::EPSILON;
        let rank = (0..k).filter(|&i| r[(i, i)].abs() > tol).count();
        if rank == k {
            // X P = Q R, so R w = Q^T y and alpha = P w.
            let qty = qr.q().tr_mul(y);
            if let Some(mut alpha) = r.solve_upper_triangular(&qty) {
                qr.p().inv_permute_rows(&mut alpha);
                let rss = (y - &xz * &alpha).norm_squared();
                return Ok(SubsetSolve {
                    alpha_hat: alpha.iter().copied().collect(),
                    columns: cols,
                    rss,
                    rank,
                    min_norm: false,
                });
            }
        }
    }

    let svd = xz.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * (n.max(k) as f64) * f64::EPSILON;
    let rank = svd.rank(eps);
    let alpha = svd
        .solve(y, eps)
        .map_err(|e| Error::NumericalFailure(format!("pseudo-inverse solve failed: {e}")))?;
    let rss = (y - &xz * &alpha).norm_squared();
    Ok(SubsetSolve {
        alpha_hat: alpha.iter().copied().collect(),
        columns: cols,
        rss,
        rank,
        min_norm: true,
    })
}

/// Noise variance estimate from a forward-stepwise pre-fit: columns enter
/// greedily by residual reduction and stop once the extended BIC
/// `n ln(rss/n) + k ln n + 2 ln C(p, k)` stops decreasing; the estimate is
/// `rss / (n - k - 1)` at the last improving step. Unlike ridge it stays calibrated when the signal is
/// sparse and `p > n`.
pub fn stepwise_noise_variance(data: &Dataset) -> Result<f64> {
    data.check_finite()?;
    let n = data.n();
    if n < 3 {
        return Err(Error::InsufficientData("stepwise pre-fit needs at least 3 rows".into()));
    }
    let nf = n as f64;
    let mut cols: Vec<DVector<f64>> = (0..data.p()).map(|j| data.x.column(j).into_owned()).collect();
    let mut r = data.y.clone();
    let mut active = vec![false; cols.len()];
    let mut fixed = 0usize;
    let absorb = |q: &DVector<f64>, cols: &mut Vec<DVector<f64>>, r: &mut DVector<f64>| {
        for c in cols.iter_mut() {
            let a = q.dot(c);
            c.axpy(-a, q, 1.0);
        }
        let a = q.dot(r);
        r.axpy(-a, q, 1.0);
    };
    if let Some(ic) = data.intercept_col {
        active[ic] = true;
        let norm = cols[ic].norm();
        if norm > 0.0 {
            let q = &cols[ic] / norm;
            absorb(&q, &mut cols, &mut r);
            fixed = 1;
        }
    }
    let candidates = active.iter().filter(|a| !**a).count();
    let k_max = candidates.min(n.saturating_sub(fixed + 2) / 2);
    let scale: Vec<f64> = cols.iter().map(|c| c.norm()).collect();
    let ebic = |rss: f64, k: usize, log_choose: f64| nf * (rss / nf).max(f64::MIN_POSITIVE).ln() + k as f64 * nf.ln() + 2.0 * log_choose;
    let mut rss = r.norm_squared();
    let mut log_choose = 0.0;
    let mut best = (ebic(rss, 0, 0.0), rss, 0usize);
    for k in 1..=k_max {
        let mut pick: Option<(usize, f64)> = None;
        for (j, c) in cols.iter().enumerate() {
            if active[j] {
                continue;
            }
            let nn = c.norm_squared();
            if nn <= 1e-10 * scale[j].powi(2).max(f64::MIN_POSITIVE) {
                continue;
            }
            let gain = c.dot(&r).powi(2) / nn;
            if pick.is_none_or(|(_, g)| gain > g) {
                pick = Some((j, gain));
            }
        }
        let Some((j, _)) = pick else { break };
        active[j] = true;
        let q = &cols[j] / cols[j].norm();
        absorb(&q, &mut cols, &mut r);
        rss = r.norm_squared();
        log_choose += ((candidates - k + 1) as f64 / k as f64).ln();
        let value = ebic(rss, k, log_choose);
        if value >= best.0 {
            break;
        }
        best = (value, rss, k);
    }
    let (_, rss, k) = best;
    let sigma2 = rss / (nf - (k + fixed) as f64).max(1.0);
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(sigma2)
    } else {
        Err(Error::NumericalFailure("stepwise pre-fit produced no usable noise estimate".into()))
    }
}

/// Noise variance estimate from a ridge pre-fit whose penalty is chosen by
/// generalized cross-validation: `||y - y_hat||^2 / (n - df)`.
pub fn ridge_noise_variance(data: &Dataset) -> Result<f64> {
    data.check_finite()?;
    let n = data.n();
    if n < 2 {
        return Err(Error::InsufficientData("ridge pre-fit needs at least 2 rows".into()));
    }
    let x = &data.x;
    let y = &data.y;
    // Spectrum of the smaller Gram matrix gives the singular values of X and
    // the projections of y on its left singular vectors.
    let (s2, c): (Vec<f64>, Vec<f64>) = if n <= data.p() {
        let k = x * x.transpose();
        let eig = SymmetricEigen::new(k);
        let c = eig.eigenvectors.transpose() * y;
        (eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(), c.iter().copied().collect())
    } else {
        let g = x.transpose() * x;
        let eig = SymmetricEigen::new(g);
        let xty = x.transpose() * y;
        let proj = eig.eigenvectors.transpose() * xty;
        let mut s2 = Vec::with_capacity(proj.len());
        let mut c = Vec::with_capacity(proj.len());
        for (lam, pj) in eig.eigenvalues.iter().zip(proj.iter()) {
            let lam = lam.max(0.0);
            s2.push(lam);
            c.push(if lam > 0.0 { pj / lam.sqrt() } else { 0.0 });
        }
        (s2, c)
    };
    let yty = y.norm_squared();
    let smax = s2.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(yty / (n as f64 - 1.0));
    }
    let nf = n as f64;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..=60 {
        let gamma = smax * 10f64.powf(-6.0 + 8.0 * i as f64 / 60.0);
        let mut rss = yty;
        let mut df = 0.0;
        for (&s, &ci) in s2.iter().zip(c.iter()) {
            let shrink = gamma / (s + gamma);
            rss -= ci * ci * (1.0 - shrink * shrink);
            df += s / (s + gamma);
        }
        let rss = rss.max(0.0);
        let resid_df = nf - df;
        if resid_df < 0.5 {
            continue;
        }
        let gcv = nf * rss / (resid_df * resid_df);
        let sigma2 = rss / resid_df;
        if best.is_none_or(|(g, _)| gcv < g) {
            best = Some((gcv, sigma2));
        }
    }
    best.map(|(_, s)| s)
        .filter(|s| *s > 0.0 && s.is_finite())
        .ok_or_else(|| Error::NumericalFailure("ridge pre-fit produced no usable noise estimate".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        Dataset::new(x, y).unwrap()
    }

    /// Independent route: form and solve the normal equations by Gaussian
    /// elimination with partial pivoting.
    fn normal_equations_rss(data: &Dataset, cols: &[usize]) -> f64 {
        let k = cols.len();
        let mut a = vec![vec![0.0; k + 1]; k];
        for (r, &i) in cols.iter().enumerate() {
            for (c, &j) in cols.iter().enumerate() {
                a[r][c] = (0..data.n()).map(|t| data.x[(t, i)] * data.x[(t, j)]).sum();
            }
            a[r][k] = (0..data.n()).map(|t| data.x[(t, i)] * data.y[t]).sum();
        }
        for col in 0..k {
            let piv = (col..k).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
            a.swap(col, piv);
            let pivot = a[col].clone();
            for row in a.iter_mut().skip(col + 1) {
                let f = row[col] / pivot[col];
                for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                    *x -= f * p;
                }
            }
        }
        let mut beta = vec![0.0; k];
        for r in (0..k).rev() {
            let s: f64 = (r + 1..k).map(|c| a[r][c] * beta[c]).sum();
            beta[r] = (a[r][k] - s) / a[r][r];
        }
        (0..data.n())
            .map(|t| {
                let fit: f64 = cols.iter().zip(&beta).map(|(&j, b)| data.x[(t, j)] * b).sum();
                (data.y[t] - fit).powi(2)
            })
            .sum()
    }

    #[test]
    fn empty_subset_leaves_response() {
        let d = random_data(7, 3, 1);
        let s = solve_subset_ls(&d, &SubsetIndicator::zeros(3)).unwrap();
        assert!(s.alpha_hat.is_empty());
        assert_eq!(s.rss, d.y.norm_squared());
    }

    #[test]
    fn identity_design_interpolates() {
        let y = DVector::from_vec(vec![1.5, -2.0, 0.25, 7.0]);
        let d = Dataset::new(DMatrix::identity(4, 4), y.clone()).unwrap();
        let s = solve_subset_ls(&d, &SubsetIndicator::ones(4)).unwrap();
        for (a, b) in s.alpha_hat.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(s.rss < 1e-24);
        assert!(!s.min_norm);
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let d = random_data(20, 6, 42);
        let cols = [0, 2, 5];
        let oracle = normal_equations_rss(&d, &cols);
        let s = solve_subset_ls(&d, &SubsetIndicator::from_active(6, &cols)).unwrap();
        assert!((s.rss - oracle).abs() <= 1e-8 * oracle);
        assert_eq!(s.rank, 3);
    }

    #[test]
    fn wide_subset_uses_min_norm() {
        let d = random_data(3, 5, 9);
        let s = solve_subset_ls(&d, &SubsetIndicator::from_active(5, &[0, 1, 2, 4])).unwrap();
        assert!(s.min_norm);
        assert_eq!(s.rank, 3);
        assert!(s.rss < 1e-20);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let mut d = random_data(10, 3, 5);
        let c0 = d.x.column(0).clone_owned();
        d.x.set_column(1, &c0);
        let s = solve_subset_ls(&d, &SubsetIndicator::ones(3)).unwrap();
        assert!(s.min_norm);
        assert_eq!(s.rank, 2);
        // Minimum norm splits weight evenly across identical columns.
        assert!((s.alpha_hat[0] - s.alpha_hat[1]).abs() < 1e-9);
        let reduced = solve_subset_ls(&d, &SubsetIndicator::from_active(3, &[0, 2])).unwrap();
        assert!((s.rss - reduced.rss).abs() < 1e-9);
    }

    #[test]
    fn errors_on_bad_input() {
        let mut d = random_data(5, 2, 3);
        assert!(matches!(
            solve_subset_ls(&d, &SubsetIndicator::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
        d.y[0] = f64::NAN;
        assert!(matches!(
            solve_subset_ls(&d, &SubsetIndicator::zeros(2)),
            Err(Error::NonFiniteData(_))
        ));
    }

    #[test]
    fn ridge_noise_estimate_is_reasonable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400;
        let x = DMatrix::from_fn(n, 5, |_, _| rng.random::<f64>() * 3.4 - 1.7);
        let noise = DVector::from_fn(n, |_, _| (rng.random::<f64>() - 0.5) * 12f64.sqrt());
        let beta = DVector::from_vec(vec![2.0, 0.0, -1.0, 0.0, 0.5]);
        let y = &x * beta + noise;
        let d = Dataset::new(x, y).unwrap();
        let s2 = ridge_noise_variance(&d).unwrap();
        assert!((s2 - 1.0).abs() < 0.2, "sigma2 = {s2}");
    }

    #[test]
    fn stepwise_noise_estimate_handles_sparse_wide_designs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, p) = (60, 200);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 3.4 - 1.7);
        let noise = DVector::from_fn(n, |_, _| (rng.random::<f64>() - 0.5) * 12f64.sqrt());
        let mut beta = DVector::zeros(p);
        beta[0] = 3.0;
        beta[1] = 1.5;
        beta[4] = 2.0;
        let y = &x * beta + noise;
        let d = Dataset::new(x, y).unwrap();
        let s2 = stepwise_noise_variance(&d).unwrap();
        assert!((s2 - 1.0).abs() < 0.4, "sigma2 = {s2}");
    }
}
