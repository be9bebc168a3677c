//! Gradient-estimator diagnostics: unbiasedness, variance curves and the
//! variance ordering of the univariate estimators.

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Map, Value};
use subsetgrad::datagen::{gen_independent, BetaPattern, NoiseLevel, SyntheticKind, SyntheticSpec};
use subsetgrad::estimators::{
    derive_seed, empirical_moments, exact_gradient_univariate, gradient_samples, keyed_rng, u2g_snr_closed_form,
    u2g_variance_closed_form, EstimatorKind, SelectionState, UniformDraws,
};
use subsetgrad::model::{Objective, ObjectiveConfig};
use subsetgrad::optimizer::LambdaGrid;
use subsetgrad::oracles::{exact_gradient_enum_fn, stratum_expectation};

use crate::args::{LabArgs, LabMode};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, envelope, num, write_json, Table};
use crate::run::Written;

const MULTI_STREAM: u64 = 0x6d75_6c74;

/// Estimators compared in the univariate checks.
pub const UNIVARIATE: [EstimatorKind; 4] =
    [EstimatorKind::U2g, EstimatorKind::Arm, EstimatorKind::Arm0, EstimatorKind::Reinforce];

#[derive(Debug, Clone, Serialize)]
pub struct MeanCheck {
    pub kind: &'static str,
    pub estimator: EstimatorKind,
    pub pi: f64,
    pub coord: usize,
    pub exact: f64,
    /// Stratum-integrated mean (univariate rows only).
    pub stratum_mean: Option<f64>,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub z: f64,
}

fn z_score(mean: f64, exact: f64, se: f64) -> f64 {
    if se > 0.0 {
        (mean - exact) / se
    } else if mean == exact {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Stratum and Monte Carlo means of every univariate estimator at each `pi`.
pub fn univariate_means(pis: &[f64], f0: f64, f1: f64, draws: usize, seed: u64) -> Vec<MeanCheck> {
    let mut out = Vec::new();
    for (i, &pi) in pis.iter().enumerate() {
        let exact = exact_gradient_univariate(f0, f1, pi);
        for kind in UNIVARIATE {
            let (stratum, _) = stratum_expectation(kind, pi, f0, f1);
            let (mean, var) = empirical_moments(kind, pi, f0, f1, draws, derive_seed(seed, i as u64));
            let se = (var / draws as f64).sqrt();
            out.push(MeanCheck {
                kind: "univariate",
                estimator: kind,
                pi,
                coord: 0,
                exact,
                stratum_mean: Some(stratum),
                mc_mean: mean,
                mc_se: se,
                z: z_score(mean, exact, se),
            });
        }
    }
    out
}

/// Random `p`-covariate frequentist instance with logits drawn from
/// `U(-2, 2)`: Monte Carlo means of each estimator against the enumerated
/// gradient. All estimators share the same uniform draws.
pub fn multivariate_means(p: usize, draws: usize, seed: u64) -> CliResult<Vec<MeanCheck>> {
    if !(1..=16).contains(&p) {
        return Err(CliError::flag("p", "the enumerated gradient needs 1 <= p <= 16"));
    }
    let n = 50;
    let spec = SyntheticSpec {
        kind: SyntheticKind::Independent,
        n,
        p,
        s: p.min(3),
        rho: 0.0,
        noise: NoiseLevel::Sigma(1.0),
        beta: BetaPattern::LeadingOnes,
        seed,
    };
    let data = gen_independent(&spec)?;
    let obj = Objective::new(&data, ObjectiveConfig::frequentist(LambdaGrid::base_for(n)))?;
    let mut rng = keyed_rng(seed, MULTI_STREAM, 0);
    let state = SelectionState::new((0..p).map(|_| rng.random_range(-2.0..2.0)).collect());
    let pi = state.pi();
    let f = |z: &subsetgrad::model::SubsetIndicator| obj.value(z, &pi);
    let exact = exact_gradient_enum_fn(&pi, p, f)?;
    let u = UniformDraws::generate(seed, MULTI_STREAM, draws.max(2), p);
    let m = u.k() as f64;
    let mut out = Vec::new();
    for kind in UNIVARIATE {
        let samples = gradient_samples(kind, &state, &u, f)?;
        for j in 0..p {
            let mean = samples.iter().map(|g| g[j]).sum::<f64>() / m;
            let var = samples.iter().map(|g| (g[j] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            let se = (var / m).sqrt();
            out.push(MeanCheck {
                kind: "multivariate",
                estimator: kind,
                pi: pi[j],
                coord: j,
                exact: exact[j],
                stratum_mean: None,
                mc_mean: mean,
                mc_se: se,
                z: z_score(mean, exact[j], se),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub pi: f64,
    pub estimator: EstimatorKind,
    pub exact_mean: f64,
    pub exact_var: f64,
    pub mc_mean: f64,
    pub mc_var: f64,
    /// `|mean| / sd` from the exact moments; infinite for a zero-variance estimator.
    pub snr: f64,
    /// U2G only.
    pub closed_form_var: Option<f64>,
}

/// `points` interior grid values `i / (points + 1)`.
pub fn pi_grid(points: usize) -> Vec<f64> {
    (1..=points).map(|i| i as f64 / (points + 1) as f64).collect()
}

pub fn exact_moments(kind: EstimatorKind, pi: f64, f0: f64, f1: f64) -> (f64, f64) {
    let (mean, second) = stratum_expectation(kind, pi, f0, f1);
    (mean, (second - mean * mean).max(0.0))
}

pub fn variance_curves(pis: &[f64], f0: f64, f1: f64, draws: usize, seed: u64) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    for (i, &pi) in pis.iter().enumerate() {
        for kind in UNIVARIATE {
            let (exact_mean, exact_var) = exact_moments(kind, pi, f0, f1);
            let (mc_mean, mc_var) = empirical_moments(kind, pi, f0, f1, draws, derive_seed(seed, i as u64));
            let snr = if kind == EstimatorKind::U2g {
                u2g_snr_closed_form(pi)
            } else if exact_var > 0.0 {
                exact_mean.abs() / exact_var.sqrt()
            } else {
                f64::INFINITY
            };
            out.push(CurvePoint {
                pi,
                estimator: kind,
                exact_mean,
                exact_var,
                mc_mean,
                mc_var,
                snr,
                closed_form_var: (kind == EstimatorKind::U2g).then(|| u2g_variance_closed_form(pi, f1 - f0)),
            });
        }
    }
    out
}

/// Monte Carlo variances of one estimator at each `pi`, seeded as in
/// [`variance_curves`].
pub fn empirical_variances(kind: EstimatorKind, pis: &[f64], f0: f64, f1: f64, draws: usize, seed: u64) -> Vec<f64> {
    pis.iter()
        .enumerate()
        .map(|(i, &pi)| empirical_moments(kind, pi, f0, f1, draws, derive_seed(seed, i as u64)).1)
        .collect()
}

/// Supremum over `pi` of the U2G closed-form variance per unit `delta^2`,
/// by golden-section search on each side of `pi = 1/2`.
pub fn u2g_variance_constant() -> f64 {
    let c = |pi: f64| u2g_variance_closed_form(pi, 1.0);
    let golden = |mut a: f64, mut b: f64| {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let x1 = b - r * (b - a);
            let x2 = a + r * (b - a);
            if c(x1) < c(x2) {
                a = x1;
            } else {
                b = x2;
            }
        }
        c(0.5 * (a + b))
    };
    golden(0.0, 0.5).max(golden(0.5, 1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderingRow {
    pub triple: usize,
    pub pi: f64,
    pub f0: f64,
    pub f1: f64,
    pub var_u2g: f64,
    pub var_arm: f64,
    pub var_reinforce: f64,
    pub exact_u2g: f64,
    pub exact_arm: f64,
    pub exact_reinforce: f64,
    pub pass: bool,
}

/// Random admissible triples: `pi ~ U(0.05, 0.95)`, `f0 ~ U(1, 10)` and
/// `f1 = f0 + delta` with `delta ~ U(-f0/2, f0)`, so that
/// `|f1 - f0| <= min(f0, f1)`. A triple passes when the Monte Carlo
/// variances satisfy `u2g <= (1 + slack) arm` and `arm <= (1 + slack) reinforce`.
pub fn ordering(triples: usize, draws: usize, slack: f64, seed: u64) -> Vec<OrderingRow> {
    let mut rng = keyed_rng(seed, 0x6f72_6465, 0);
    (0..triples)
        .map(|t| {
            let pi = rng.random_range(0.05..0.95);
            let f0: f64 = rng.random_range(1.0..10.0);
            let f1 = f0 + rng.random_range(-0.5 * f0..f0);
            let s = derive_seed(seed, t as u64);
            let var = |k| empirical_moments(k, pi, f0, f1, draws, s).1;
            let exact = |k| exact_moments(k, pi, f0, f1).1;
            let (vu, va, vr) = (var(EstimatorKind::U2g), var(EstimatorKind::Arm), var(EstimatorKind::Reinforce));
            OrderingRow {
                triple: t,
                pi,
                f0,
                f1,
                var_u2g: vu,
                var_arm: va,
                var_reinforce: vr,
                exact_u2g: exact(EstimatorKind::U2g),
                exact_arm: exact(EstimatorKind::Arm),
                exact_reinforce: exact(EstimatorKind::Reinforce),
                pass: vu <= (1.0 + slack) * va && va <= (1.0 + slack) * vr,
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn check_args(a: &LabArgs) -> CliResult<()> {
    if a.draws < 2 {
        return Err(CliError::flag("draws", "at least two draws are required"));
    }
    if let Some(pi) = a.pis.iter().find(|pi| !(**pi > 0.0 && **pi < 1.0)) {
        return Err(CliError::flag("pis", format!("{pi} is outside (0, 1)")));
    }
    if !a.f0.is_finite() || !a.f1.is_finite() {
        return Err(CliError::flag("f0", "function values must be finite"));
    }
    if !(a.slack >= 0.0) {
        return Err(CliError::flag("slack", "must be non-negative"));
    }
    Ok(())
}

pub fn cmd_lab(a: &LabArgs) -> CliResult<Written> {
    check_args(a)?;
    ensure_dir(&a.out)?;
    let mut body = Map::new();
    let file = match a.mode {
        LabMode::Unbiasedness => {
            let mut rows = univariate_means(&a.pis, a.f0, a.f1, a.draws, a.seed);
            let multi = multivariate_means(a.p, a.draws, derive_seed(a.seed, MULTI_STREAM))?;
            let max_z = multi.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
            let max_stratum_err = rows
                .iter()
                .map(|r| (r.stratum_mean.unwrap_or(r.exact) - r.exact).abs())
                .fold(0.0, f64::max);
            rows.extend(multi);
            let mut t = Table::new(["kind", "estimator", "pi", "coord", "exact", "stratum_mean", "mc_mean", "mc_se", "z"]);
            for r in &rows {
                t.push(vec![
                    r.kind.into(),
                    r.estimator.name().into(),
                    num(r.pi),
                    r.coord.to_string(),
                    num(r.exact),
                    opt(r.stratum_mean),
                    num(r.mc_mean),
                    num(r.mc_se),
                    num(r.z),
                ]);
            }
            body.insert("max_abs_z_multivariate".into(), max_z.into());
            body.insert("max_stratum_error".into(), max_stratum_err.into());
            t.write(&a.out, "unbiasedness.csv")?
        }
        LabMode::VarianceCurves => {
            let rows = variance_curves(&pi_grid(a.points), a.f0, a.f1, a.draws, a.seed);
            let mut t = Table::new([
                "pi", "estimator", "exact_mean", "exact_var", "mc_mean", "mc_var", "snr", "closed_form_var",
            ]);
            for r in &rows {
                t.push(vec![
                    num(r.pi),
                    r.estimator.name().into(),
                    num(r.exact_mean),
                    num(r.exact_var),
                    num(r.mc_mean),
                    num(r.mc_var),
                    num(r.snr),
                    opt(r.closed_form_var),
                ]);
            }
            let c = u2g_variance_constant();
            body.insert("u2g_variance_constant".into(), c.into());
            body.insert("u2g_variance_sup".into(), (c * (a.f1 - a.f0).powi(2)).into());
            t.write(&a.out, "variance_curves.csv")?
        }
        LabMode::Ordering => {
            let rows = ordering(a.triples, a.draws, a.slack, a.seed);
            let mut t = Table::new([
                "triple", "pi", "f0", "f1", "var_u2g", "var_arm", "var_reinforce", "exact_u2g", "exact_arm",
                "exact_reinforce", "pass",
            ]);
            for r in &rows {
                t.push(vec![
                    r.triple.to_string(),
                    num(r.pi),
                    num(r.f0),
                    num(r.f1),
                    num(r.var_u2g),
                    num(r.var_arm),
                    num(r.var_reinforce),
                    num(r.exact_u2g),
                    num(r.exact_arm),
                    num(r.exact_reinforce),
                    r.pass.to_string(),
                ]);
            }
            body.insert("passes".into(), Value::from(rows.iter().filter(|r| r.pass).count()));
            body.insert("triples".into(), Value::from(rows.len()));
            t.write(&a.out, "ordering.csv")?
        }
    };
    let doc = envelope("lab", a.seed, &json!({ "args": a }), body);
    let summary = write_json(&a.out, "lab.json", &doc)?;
    Ok(Written { files: vec![file, summary], doc })
}
