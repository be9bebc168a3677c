//! Support-recovery and prediction metrics, and their aggregation over trials.

use serde::{Deserialize, Serialize};

use crate::datagen::Covariance;
use crate::error::{Error, Result};
use crate::model::{SubsetIndicator, TrueModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub nonzero: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub rr: f64,
    pub rte: f64,
    pub pve: f64,
}

/// All seven per-trial metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub nonzero: f64,
    pub rr: f64,
    pub rte: f64,
    pub pve: f64,
    pub trial_seed: u64,
}

impl MetricsReport {
    pub fn new(support: SupportMetrics, prediction: PredictionMetrics, trial_seed: u64) -> Self {
        Self {
            precision: support.precision,
            recall: support.recall,
            f1: support.f1,
            nonzero: support.nonzero as f64,
            rr: prediction.rr,
            rte: prediction.rte,
            pve: prediction.pve,
            trial_seed,
        }
    }

    pub const FIELDS: [&'static str; 7] = ["precision", "recall", "f1", "nonzero", "rr", "rte", "pve"];

    pub fn values(&self) -> [f64; 7] {
        [self.precision, self.recall, self.f1, self.nonzero, self.rr, self.rte, self.pve]
    }
}

/// Precision, recall and F1 of `z_hat` against the true active set.
/// Empty denominators give 0.
pub fn support_metrics(z_hat: &SubsetIndicator, truth: &TrueModel) -> SupportMetrics {
    let truth_z = truth.support();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for j in 0..z_hat.len() {
        match (z_hat.get(j), truth_z.get(j)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    SupportMetrics { precision, recall, f1, nonzero: z_hat.k() }
}

/// Relative risk, relative test error and proportion of variance explained,
/// evaluated with the population covariance.
pub fn prediction_metrics(beta_hat: &[f64], truth: &TrueModel, cov: &Covariance) -> Result<PredictionMetrics> {
    if beta_hat.len() != truth.p() {
        return Err(Error::DimensionMismatch { expected: truth.p(), got: beta_hat.len() });
    }
    let signal = cov.quad_form(&truth.beta_star);
    if signal == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let d: Vec<f64> = beta_hat.iter().zip(&truth.beta_star).map(|(b, s)| b - s).collect();
    let risk = cov.quad_form(&d);
    let s2 = truth.sigma * truth.sigma;
    let rte = if s2 > 0.0 {
        (risk + s2) / s2
    } else if risk == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    Ok(PredictionMetrics { rr: risk / signal, rte, pve: 1.0 - (risk + s2) / (signal + s2) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, sd, count: n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub precision: Stat,
    pub recall: Stat,
    pub f1: Stat,
    pub nonzero: Stat,
    pub rr: Stat,
    pub rte: Stat,
    pub pve: Stat,
}

/// Per-metric mean and sample standard deviation.
pub fn aggregate(reports: &[MetricsReport]) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::EmptyList);
    }
    let col = |f: fn(&MetricsReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(Summary {
        count: reports.len(),
        precision: col(|r| r.precision),
        recall: col(|r| r.recall),
        f1: col(|r| r.f1),
        nonzero: col(|r| r.nonzero),
        rr: col(|r| r.rr),
        rte: col(|r| r.rte),
        pve: col(|r| r.pve),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth3() -> TrueModel {
        let mut b = vec![0.0; 200];
        b[0] = 3.0;
        b[1] = 1.5;
        b[4] = 2.0;
        TrueModel::new(b, 1.0).unwrap()
    }

    #[test]
    fn perfect_support() {
        let t = truth3();
        let m = support_metrics(&t.support(), &t);
        assert_eq!((m.precision, m.recall, m.f1, m.nonzero), (1.0, 1.0, 1.0, 3));
    }

    #[test]
    fn full_support() {
        let t = truth3();
        let m = support_metrics(&SubsetIndicator::ones(200), &t);
        assert!((m.precision - 3.0 / 200.0).abs() < 1e-15);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 2.0 * m.precision / (m.precision + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn empty_support_convention() {
        let m = support_metrics(&SubsetIndicator::zeros(200), &truth3());
        assert_eq!((m.precision, m.recall, m.f1, m.nonzero), (0.0, 0.0, 0.0, 0));
    }

    #[test]
    fn perfect_prediction() {
        let t = truth3();
        let cov = Covariance::Ar1 { rho: 0.5 };
        let m = prediction_metrics(&t.beta_star, &t, &cov).unwrap();
        let snr = cov.quad_form(&t.beta_star);
        assert_eq!(m.rr, 0.0);
        assert_eq!(m.rte, 1.0);
        assert!((m.pve - snr / (1.0 + snr)).abs() < 1e-15);
    }

    #[test]
    fn null_prediction_has_unit_risk() {
        let t = truth3();
        let m = prediction_metrics(&vec![0.0; 200], &t, &Covariance::Identity).unwrap();
        assert!((m.rr - 1.0).abs() < 1e-15);
        let zero = TrueModel::new(vec![0.0; 3], 1.0).unwrap();
        assert_eq!(prediction_metrics(&[0.0; 3], &zero, &Covariance::Identity), Err(Error::ZeroSignal));
    }

    #[test]
    fn pve_identity() {
        let t = truth3();
        let cov = Covariance::Ar1 { rho: 0.5 };
        let mut b = t.beta_star.clone();
        b[0] = 2.7;
        b[9] = 0.4;
        let m = prediction_metrics(&b, &t, &cov).unwrap();
        let d: Vec<f64> = b.iter().zip(&t.beta_star).map(|(x, y)| x - y).collect();
        let ratio = (cov.quad_form(&d) + 1.0) / (cov.quad_form(&t.beta_star) + 1.0);
        assert!((m.pve + ratio - 1.0).abs() < 1e-15);
    }

    #[test]
    fn aggregation() {
        let base = MetricsReport { precision: 1.0, recall: 1.0, f1: 1.0, nonzero: 3.0, rr: 0.1, rte: 1.1, pve: 0.9, trial_seed: 0 };
        let s = aggregate(&[base]).unwrap();
        assert_eq!(s.rr.mean, 0.1);
        assert_eq!(s.rr.sd, 0.0);
        let other = MetricsReport { rr: 0.3, ..base };
        let s = aggregate(&[base, other]).unwrap();
        assert!((s.rr.mean - 0.2).abs() < 1e-15);
        assert!((s.rr.sd - 0.1414).abs() < 1e-4);
        assert_eq!(s.count, 2);
        assert_eq!(aggregate(&[]), Err(Error::EmptyList));
    }
}
