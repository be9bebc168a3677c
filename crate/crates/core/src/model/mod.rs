//! Data model and the two subset objectives.
//!
//! A [`Dataset`] carries the design matrix and response. A [`SubsetIndicator`]
//! selects columns. The frequentist objective is the penalized residual sum
//! of squares; the Bayesian objective is the negated ELBO integrand of a
//! spike-and-slab regression with the slab coefficients integrated out.

mod lstsq;
mod objective;

pub use lstsq::{ridge_noise_variance, solve_subset_ls, stepwise_noise_variance, SubsetSolve};
pub use objective::{
    log_marginal, objective_freq, objective_vi, GramCache, Objective, ObjectiveConfig,
    ObjectiveKind, PROB_CLAMP,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth generative parameters for synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    pub beta_star: Vec<f64>,
    pub sigma: f64,
    active_set: Vec<usize>,
}

impl TrueModel {
    pub fn new(beta_star: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("noise sd must be finite and >= 0, got {sigma}")));
        }
        if beta_star.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFiniteData("beta_star"));
        }
        let active_set = beta_star
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(j, _)| j)
            .collect();
        Ok(Self { beta_star, sigma, active_set })
    }

    pub fn active_set(&self) -> &[usize] {
        &self.active_set
    }

    /// Size of the active set.
    pub fn s(&self) -> usize {
        self.active_set.len()
    }

    pub fn p(&self) -> usize {
        self.beta_star.len()
    }

    pub fn support(&self) -> SubsetIndicator {
        SubsetIndicator::from_active(self.p(), &self.active_set)
    }
}

/// Binary inclusion vector over the `p` covariates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubsetIndicator {
    z: Vec<bool>,
    k: usize,
}

impl SubsetIndicator {
    pub fn new(z: Vec<bool>) -> Self {
        let k = z.iter().filter(|&&b| b).count();
        Self { z, k }
    }

    pub fn zeros(p: usize) -> Self {
        Self { z: vec![false; p], k: 0 }
    }

    pub fn ones(p: usize) -> Self {
        Self { z: vec![true; p], k: p }
    }

    /// Indicator with ones exactly at `active` (indices must be `< p`).
    pub fn from_active(p: usize, active: &[usize]) -> Self {
        let mut z = vec![false; p];
        for &j in active {
            z[j] = true;
        }
        Self::new(z)
    }

    /// Decode the low `p` bits of `mask` (bit `j` is covariate `j`).
    pub fn from_mask(p: usize, mask: u64) -> Self {
        Self::new((0..p).map(|j| mask >> j & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Number of ones.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, j: usize) -> bool {
        self.z[j]
    }

    pub fn set(&mut self, j: usize, value: bool) {
        if self.z[j] != value {
            self.z[j] = value;
            if value {
                self.k += 1;
            } else {
                self.k -= 1;
            }
        }
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.z
    }

    pub fn active(&self) -> Vec<usize> {
        self.z.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect()
    }
}

/// Design matrix, response and optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub truth: Option<TrueModel>,
    pub standardized: bool,
    /// Column of all ones that is always in the model and never penalized.
    pub intercept_col: Option<usize>,
    /// Columns found constant during standardization (left unscaled).
    pub constant_cols: Vec<usize>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InsufficientData(format!(
                "design matrix must be non-empty, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.len() });
        }
        Ok(Self {
            x,
            y,
            truth: None,
            standardized: false,
            intercept_col: None,
            constant_cols: Vec::new(),
        })
    }

    pub fn with_truth(mut self, truth: TrueModel) -> Result<Self> {
        if truth.p() != self.p() {
            return Err(Error::DimensionMismatch { expected: self.p(), got: truth.p() });
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData("design matrix"));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData("response"));
        }
        Ok(())
    }

    /// Center and scale every column to unit sample standard deviation.
    /// Constant columns are recorded and left untouched.
    pub fn standardize(&mut self) {
        let n = self.n() as f64;
        self.constant_cols.clear();
        for j in 0..self.p() {
            if Some(j) == self.intercept_col {
                continue;
            }
            let mut col = self.x.column_mut(j);
            let mean = col.sum() / n;
            let var = if n > 1.0 {
                col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let sd = var.sqrt();
            if sd <= 1e-12 * (1.0 + mean.abs()) {
                self.constant_cols.push(j);
                continue;
            }
            col.apply(|v| *v = (*v - mean) / sd);
        }
        self.standardized = true;
    }

    /// Append an all-ones column and mark it as the unpenalized intercept.
    pub fn add_intercept(&mut self) {
        let n = self.n();
        let p = self.p();
        self.x = self.x.clone().insert_column(p, 1.0);
        debug_assert_eq!(self.x.nrows(), n);
        self.intercept_col = Some(p);
        if let Some(t) = self.truth.as_mut() {
            let mut beta = t.beta_star.clone();
            beta.push(0.0);
            *t = TrueModel::new(beta, t.sigma).expect("extending a valid truth stays valid");
        }
    }

    /// Columns entering the least-squares fit for `z`: its ones plus the intercept.
    pub fn fit_columns(&self, z: &SubsetIndicator) -> Vec<usize> {
        let mut cols = z.active();
        if let Some(c) = self.intercept_col {
            if !z.get(c) {
                cols.push(c);
                cols.sort_unstable();
            }
        }
        cols
    }

    /// Penalized support size: ones of `z` excluding the intercept.
    pub fn penalized_count(&self, z: &SubsetIndicator) -> usize {
        match self.intercept_col {
            Some(c) if z.get(c) => z.k() - 1,
            _ => z.k(),
        }
    }

    /// Rows `rows` of this dataset, truth and column metadata preserved.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Dataset {
            x,
            y,
            truth: self.truth.clone(),
            standardized: self.standardized,
            intercept_col: self.intercept_col,
            constant_cols: self.constant_cols.clone(),
        }
    }

    pub(crate) fn check_indicator(&self, z: &SubsetIndicator) -> Result<()> {
        if z.len() != self.p() {
            return Err(Error::DimensionMismatch { expected: self.p(), got: z.len() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicator_counts_track_updates() {
        let mut z = SubsetIndicator::zeros(5);
        z.set(1, true);
        z.set(3, true);
        z.set(3, true);
        assert_eq!(z.k(), 2);
        z.set(1, false);
        assert_eq!(z.k(), 1);
        assert_eq!(z.active(), vec![3]);
        assert_eq!(SubsetIndicator::from_mask(4, 0b1010).active(), vec![1, 3]);
    }

    #[test]
    fn truth_active_set_is_nonzero_pattern() {
        let t = TrueModel::new(vec![3.0, 1.5, 0.0, 0.0, 2.0, 0.0], 1.0).unwrap();
        assert_eq!(t.active_set(), &[0, 1, 4]);
        assert_eq!(t.s(), 3);
        assert!(TrueModel::new(vec![1.0], -1.0).is_err());
    }

    #[test]
    fn dataset_rejects_mismatched_response() {
        let x = DMatrix::zeros(3, 2);
        let y = DVector::zeros(4);
        assert!(matches!(Dataset::new(x, y), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn standardize_centers_and_scales() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 5.0, 2.0, 2.0, 5.0, 4.0, 3.0, 5.0, 9.0, 4.0, 5.0, 1.0]);
        let mut d = Dataset::new(x, DVector::zeros(4)).unwrap();
        d.standardize();
        assert_eq!(d.constant_cols, vec![1]);
        for j in [0, 2] {
            let c = d.x.column(j);
            let mean = c.sum() / 4.0;
            let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
            assert!(mean.abs() < 1e-9);
            assert!((sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn intercept_is_always_fit_and_never_counted() {
        let mut d = Dataset::new(DMatrix::from_element(3, 2, 1.5), DVector::zeros(3)).unwrap();
        d.add_intercept();
        assert_eq!(d.p(), 3);
        let z = SubsetIndicator::from_active(3, &[0]);
        assert_eq!(d.fit_columns(&z), vec![0, 2]);
        assert_eq!(d.penalized_count(&z), 1);
        let z = SubsetIndicator::from_active(3, &[0, 2]);
        assert_eq!(d.penalized_count(&z), 1);
    }
}
