//! Synthetic data generators, CSV ingestion and population quantities.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, TrueModel};

/// Population covariance of the covariates, in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Covariance {
    Identity,
    /// `Sigma_ij = rho^|i-j|`
    Ar1 { rho: f64 },
}

impl Covariance {
    /// `v^T Sigma v` in O(p).
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        match *self {
            Covariance::Identity => v.iter().map(|x| x * x).sum(),
            Covariance::Ar1 { rho } => {
                // (Sigma v)_i = fwd_i + bwd_i - v_i with the two one-sided
                // geometric sums computed recursively.
                let p = v.len();
                let mut fwd = vec![0.0; p];
                let mut acc = 0.0;
                for i in 0..p {
                    acc = rho * acc + v[i];
                    fwd[i] = acc;
                }
                let mut total = 0.0;
                acc = 0.0;
                for i in (0..p).rev() {
                    acc = rho * acc + v[i];
                    total += v[i] * (fwd[i] + acc - v[i]);
                }
                total
            }
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match *self {
            Covariance::Identity => {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            }
            Covariance::Ar1 { rho } => rho.powi(i.abs_diff(j) as i32),
        }
    }
}

/// Lower-triangular Cholesky factor of the AR(1) covariance:
/// `L_i0 = rho^i`, `L_ij = rho^(i-j) sqrt(1 - rho^2)` for `1 <= j <= i`.
pub fn ar1_cholesky(p: usize, rho: f64) -> DMatrix<f64> {
    let c = (1.0 - rho * rho).sqrt();
    DMatrix::from_fn(p, p, |i, j| {
        if j > i {
            0.0
        } else if j == 0 {
            rho.powi(i as i32)
        } else {
            rho.powi((i - j) as i32) * c
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Correlated,
    Independent,
    CompressiveSensing,
}

/// Noise level given either directly or through the population SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLevel {
    Sigma(f64),
    Snr(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaPattern {
    /// First `S` coefficients equal to one.
    LeadingOnes,
    /// `(3, 1.5, 0, 0, 2, 0, ...)`
    Fan,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub rho: f64,
    pub noise: NoiseLevel,
    pub beta: BetaPattern,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Correlated design with the `(3, 1.5, 0, 0, 2, 0, ...)` signal.
    pub fn exp1(n: usize, p: usize, rho: f64, noise: NoiseLevel, seed: u64) -> Self {
        Self { kind: SyntheticKind::Correlated, n, p, s: 3, rho, noise, beta: BetaPattern::Fan, seed }
    }

    /// Isotropic design with the first `s` coefficients equal to one.
    pub fn exp2(n: usize, p: usize, s: usize, snr: f64, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::Independent,
            n,
            p,
            s,
            rho: 0.0,
            noise: NoiseLevel::Snr(snr),
            beta: BetaPattern::LeadingOnes,
            seed,
        }
    }

    pub fn covariance(&self) -> Covariance {
        match self.kind {
            SyntheticKind::Correlated if self.rho != 0.0 => Covariance::Ar1 { rho: self.rho },
            _ => Covariance::Identity,
        }
    }

    pub fn beta_star(&self) -> Result<Vec<f64>> {
        let beta = match &self.beta {
            BetaPattern::LeadingOnes => (0..self.p).map(|j| if j < self.s { 1.0 } else { 0.0 }).collect(),
            BetaPattern::Fan => {
                if self.p < 5 {
                    return Err(Error::InvalidConfig("the (3, 1.5, 0, 0, 2) pattern needs p >= 5".into()));
                }
                let mut b = vec![0.0; self.p];
                b[0] = 3.0;
                b[1] = 1.5;
                b[4] = 2.0;
                b
            }
            BetaPattern::Explicit(b) => {
                if b.len() != self.p {
                    return Err(Error::DimensionMismatch { expected: self.p, got: b.len() });
                }
                b.clone()
            }
        };
        Ok(beta)
    }

    /// Noise standard deviation implied by `noise`.
    pub fn sigma(&self) -> Result<f64> {
        match self.noise {
            NoiseLevel::Sigma(s) => {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(Error::InvalidConfig(format!("sigma must be finite and >= 0, got {s}")));
                }
                Ok(s)
            }
            NoiseLevel::Snr(snr) => {
                if !(snr > 0.0) {
                    return Err(Error::InvalidConfig(format!("SNR must be > 0, got {snr}")));
                }
                let signal = self.covariance().quad_form(&self.beta_star()?);
                Ok((signal / snr).sqrt())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidConfig("n and p must be positive".into()));
        }
        if self.s > self.p {
            return Err(Error::InvalidConfig(format!("S = {} exceeds p = {}", self.s, self.p)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gen_gaussian_design(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let beta = spec.beta_star()?;
    let sigma = spec.sigma()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rho = spec.rho;
    let c = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(spec.n, spec.p);
    // Row-wise application of the banded AR(1) factor: x_0 = e_0,
    // x_j = rho x_{j-1} + sqrt(1 - rho^2) e_j.
    for i in 0..spec.n {
        let mut prev = 0.0;
        for j in 0..spec.p {
            let e = normal(&mut rng);
            let v = if j == 0 { e } else { rho * prev + c * e };
            x[(i, j)] = v;
            prev = v;
        }
    }
    let b = DVector::from_column_slice(&beta);
    let mut y = &x * &b;
    for v in y.iter_mut() {
        *v += sigma * normal(&mut rng);
    }
    Dataset::new(x, y)?.with_truth(TrueModel::new(beta, sigma)?)
}

/// Rows drawn i.i.d. from `N(0, Sigma)` with `Sigma_ij = rho^|i-j|`.
pub fn gen_correlated(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.kind != SyntheticKind::Correlated {
        return Err(Error::InvalidConfig("gen_correlated needs a correlated spec".into()));
    }
    gen_gaussian_design(spec)
}

/// Rows drawn i.i.d. from `N(0, I)`.
pub fn gen_independent(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.kind != SyntheticKind::Independent {
        return Err(Error::InvalidConfig("gen_independent needs an independent spec".into()));
    }
    if spec.rho != 0.0 {
        return Err(Error::InvalidConfig("independent designs have rho = 0".into()));
    }
    gen_gaussian_design(spec)
}

/// Sparse-signal measurement setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingSpec {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub amplitude: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SensingSpec {
    fn default() -> Self {
        Self { n: 500, p: 1024, s: 10, amplitude: 1.0, sigma: 0.1, seed: 0 }
    }
}

/// Gaussian sensing matrix with unit-norm rows and a `±amplitude` signal on
/// `s` positions chosen uniformly without replacement.
pub fn gen_sensing(spec: &SensingSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.p == 0 || spec.s > spec.p {
        return Err(Error::InvalidConfig(format!(
            "invalid sensing spec n={}, p={}, S={}",
            spec.n, spec.p, spec.s
        )));
    }
    if !(spec.sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {}", spec.sigma)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut a = DMatrix::zeros(spec.n, spec.p);
    for i in 0..spec.n {
        let row: Vec<f64> = (0..spec.p).map(|_| normal(&mut rng)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v / norm;
        }
    }
    let mut theta = vec![0.0; spec.p];
    for j in sample(&mut rng, spec.p, spec.s).into_iter() {
        theta[j] = if rng.random::<bool>() { spec.amplitude } else { -spec.amplitude };
    }
    let mut y = &a * DVector::from_column_slice(&theta);
    if spec.sigma > 0.0 {
        for v in y.iter_mut() {
            *v += spec.sigma * normal(&mut rng);
        }
    }
    Dataset::new(a, y)?.with_truth(TrueModel::new(theta, spec.sigma)?)
}

/// `beta*^T Sigma beta* / sigma^2`.
pub fn population_snr(truth: &TrueModel, cov: &Covariance) -> Result<f64> {
    if truth.sigma == 0.0 {
        return Err(Error::ZeroNoise);
    }
    Ok(cov.quad_form(&truth.beta_star) / (truth.sigma * truth.sigma))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvOptions {
    pub standardize: bool,
    pub intercept: bool,
    /// Sidecar file with columns `index,beta_star` (0-based covariate index).
    pub truth: Option<std::path::PathBuf>,
    /// Noise sd recorded in the sidecar truth.
    pub truth_sigma: f64,
}

impl CsvOptions {
    pub fn ingest() -> Self {
        Self { standardize: true, intercept: false, truth: None, truth_sigma: 0.0 }
    }
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        row,
        col,
        msg: format!("`{cell}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse { row, col, msg: format!("`{cell}` is not finite") });
    }
    Ok(v)
}

/// Read a comma-separated file with a header row. Every column other than
/// `target` becomes a covariate, in file order. Rows and columns in errors
/// are 1-based file positions (the header is row 1).
pub fn load_csv(path: impl AsRef<Path>, target: &str, opts: &CsvOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse { row: 1, col: 0, msg: e.to_string() })?
        .clone();
    let target_idx = headers
        .iter()
        .position(|h| h.trim() == target)
        .ok_or_else(|| Error::MissingTarget(target.to_string()))?;
    let width = headers.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 2;
        let record = record.map_err(|e| Error::Parse { row, col: 0, msg: e.to_string() })?;
        if record.len() != width {
            return Err(Error::Parse {
                row,
                col: record.len().min(width) + 1,
                msg: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let v = parse_cell(cell, row, c + 1)?;
            if c == target_idx {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    let p = width - 1;
    if n == 0 || p == 0 {
        return Err(Error::InsufficientData(format!("csv has {n} rows and {p} covariates")));
    }
    let x = DMatrix::from_row_slice(n, p, &xs);
    let mut data = Dataset::new(x, DVector::from_vec(ys))?;
    if let Some(truth_path) = &opts.truth {
        let beta = load_truth_csv(truth_path, p)?;
        data = data.with_truth(TrueModel::new(beta, opts.truth_sigma)?)?;
    }
    if opts.standardize {
        data.standardize();
    }
    if opts.intercept {
        data.add_intercept();
    }
    Ok(data)
}

/// Read an `index,beta_star` sidecar into a dense length-`p` vector.
pub fn load_truth_csv(path: impl AsRef<Path>, p: usize) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    let mut beta = vec![0.0; p];
    for (r, record) in reader.records().enumerate() {
        let row = r + 2;
        let record = record.map_err(|e| Error::Parse { row, col: 0, msg: e.to_string() })?;
        if record.len() < 2 {
            return Err(Error::Parse { row, col: record.len() + 1, msg: "expected index,beta_star".into() });
        }
        let idx = parse_cell(&record[0], row, 1)?;
        if idx < 0.0 || idx.fract() != 0.0 || idx as usize >= p {
            return Err(Error::Parse { row, col: 1, msg: format!("index {idx} out of range for p = {p}") });
        }
        beta[idx as usize] = parse_cell(&record[1], row, 2)?;
    }
    Ok(beta)
}

/// Write covariates `x1..xp` followed by the response column `target`.
/// Values are written in shortest round-trip form.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>, target: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Io(e.to_string()))?;
    let mut header: Vec<String> = (1..=data.p()).map(|j| format!("x{j}")).collect();
    header.push(target.to_string());
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for i in 0..data.n() {
        let mut row: Vec<String> = (0..data.p()).map(|j| format!("{:?}", data.x[(i, j)])).collect();
        row.push(format!("{:?}", data.y[i]));
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_corr(x: &DMatrix<f64>, a: usize, b: usize) -> f64 {
        let n = x.nrows() as f64;
        let (ca, cb) = (x.column(a), x.column(b));
        let (ma, mb) = (ca.sum() / n, cb.sum() / n);
        let cov: f64 = ca.iter().zip(cb.iter()).map(|(u, v)| (u - ma) * (v - mb)).sum();
        let va: f64 = ca.iter().map(|u| (u - ma).powi(2)).sum();
        let vb: f64 = cb.iter().map(|v| (v - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn ar1_factor_reproduces_covariance() {
        for rho in [0.0, 0.5, 0.8] {
            for p in [1, 7, 200] {
                let l = ar1_cholesky(p, rho);
                let s = &l * l.transpose();
                let cov = Covariance::Ar1 { rho };
                for i in 0..p {
                    for j in 0..p {
                        assert!((s[(i, j)] - cov.entry(i, j)).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn quad_form_matches_dense() {
        let v: Vec<f64> = (0..13).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let cov = Covariance::Ar1 { rho: 0.6 };
        let dense: f64 = (0..13).flat_map(|i| (0..13).map(move |j| (i, j))).map(|(i, j)| v[i] * v[j] * cov.entry(i, j)).sum();
        assert!((cov.quad_form(&v) - dense).abs() < 1e-12);
    }

    #[test]
    fn uncorrelated_columns() {
        let spec = SyntheticSpec::exp1(10_000, 6, 0.0, NoiseLevel::Sigma(1.0), 1);
        let d = gen_correlated(&spec).unwrap();
        let tol = 4.0 / 100.0;
        for a in 0..6 {
            for b in a + 1..6 {
                assert!(sample_corr(&d.x, a, b).abs() < tol);
            }
        }
    }

    #[test]
    fn correlated_neighbours() {
        let spec = SyntheticSpec::exp1(10_000, 6, 0.5, NoiseLevel::Sigma(1.0), 2);
        let d = gen_correlated(&spec).unwrap();
        assert!((sample_corr(&d.x, 0, 1) - 0.5).abs() < 0.04);
    }

    #[test]
    fn sigma_from_snr() {
        let spec = SyntheticSpec::exp1(60, 200, 0.5, NoiseLevel::Snr(21.3), 0);
        assert!((spec.sigma().unwrap() - 1.0).abs() < 0.02);
        let spec = SyntheticSpec::exp2(100, 1000, 10, 5.0, 0);
        assert!((spec.sigma().unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let spec = SyntheticSpec::exp2(100, 1000, 10, 1e12, 0);
        assert!(spec.sigma().unwrap() < 1e-5);
    }

    #[test]
    fn independent_support_is_leading_block() {
        let d = gen_independent(&SyntheticSpec::exp2(20, 1000, 10, 5.0, 3)).unwrap();
        assert_eq!(d.truth.unwrap().active_set(), (0..10).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn sensing_rows_are_unit_norm() {
        let spec = SensingSpec { n: 50, p: 128, s: 5, sigma: 0.0, ..SensingSpec::default() };
        let d = gen_sensing(&spec).unwrap();
        for i in 0..d.n() {
            assert!((d.x.row(i).norm() - 1.0).abs() < 1e-12);
        }
        let t = d.truth.as_ref().unwrap();
        assert_eq!(t.s(), 5);
        assert!(t.beta_star.iter().all(|b| *b == 0.0 || b.abs() == 1.0));
        let exact = &d.x * DVector::from_column_slice(&t.beta_star);
        assert_eq!(exact, d.y);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SyntheticSpec::exp1(30, 20, 0.5, NoiseLevel::Sigma(1.0), 99);
        assert_eq!(gen_correlated(&spec).unwrap(), gen_correlated(&spec).unwrap());
        let s = SensingSpec { n: 20, p: 64, s: 3, seed: 5, ..SensingSpec::default() };
        assert_eq!(gen_sensing(&s).unwrap(), gen_sensing(&s).unwrap());
    }

    #[test]
    fn population_snr_values() {
        let t = TrueModel::new(vec![1.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(population_snr(&t, &Covariance::Identity).unwrap(), 1.0);
        let mut fan = vec![0.0; 200];
        fan[0] = 3.0;
        fan[1] = 1.5;
        fan[4] = 2.0;
        let cov = Covariance::Ar1 { rho: 0.5 };
        let hi = population_snr(&TrueModel::new(fan.clone(), 1.0).unwrap(), &cov).unwrap();
        let lo = population_snr(&TrueModel::new(fan.clone(), 3.0).unwrap(), &cov).unwrap();
        assert!((hi - 21.25).abs() < 1e-12, "{hi}");
        assert!((lo - 21.25 / 9.0).abs() < 1e-12, "{lo}");
        assert_eq!(population_snr(&TrueModel::new(fan, 0.0).unwrap(), &cov), Err(Error::ZeroNoise));
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = SyntheticSpec::exp2(10, 5, 6, 5.0, 0);
        assert!(gen_independent(&spec).is_err());
        spec.s = 2;
        spec.rho = 1.0;
        assert!(gen_independent(&spec).is_err());
        assert!(gen_correlated(&SyntheticSpec::exp2(10, 5, 2, 5.0, 0)).is_err());
    }
}
