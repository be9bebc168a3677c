//! `fit`, `path`, `oracle` and the single-trial engine behind `bench`.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Map, Value};
use subsetgrad::datagen::{load_csv, Covariance, CsvOptions};
use subsetgrad::estimators::{derive_seed, EstimatorKind};
use subsetgrad::metrics::{prediction_metrics, support_metrics, MetricsReport, SupportMetrics};
use subsetgrad::model::{Dataset, Objective, ObjectiveConfig};
use subsetgrad::optimizer::{
    cross_validate_with, fit, regularization_path, CvOptions, CvRow, FitResult, LambdaGrid, OptimizerConfig,
    StepSize,
};
use subsetgrad::oracles::exhaustive_best_subset;

use crate::args::{DataArgs, FitArgs, GridArgs, OracleArgs, PathArgs, SolverArgs};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, envelope, num, opt_num, write_json, Table};
use crate::presets::{
    default_grid, default_penalty, objective_config, selection_rows, Experiment, GeneratorOverrides,
    ObjectiveChoice,
};

/// Seed salt of the independent validation sample drawn by `path`.
const VALIDATION_SALT: u64 = 0x7661_6c69;

pub struct Loaded {
    pub data: Dataset,
    /// Known population covariance (synthetic designs only).
    pub cov: Option<Covariance>,
    pub experiment: Option<Experiment>,
    pub source: Value,
}

pub fn load_data(args: &DataArgs, seed: u64) -> CliResult<Loaded> {
    match (&args.data, args.synthetic) {
        (Some(path), _) => {
            if args.generator != GeneratorOverrides::default() {
                return Err(CliError::flag("data", "generator overrides (--n, --p, ...) need --synthetic"));
            }
            let opts = CsvOptions {
                standardize: !args.raw,
                intercept: args.intercept,
                truth: args.truth.clone(),
                truth_sigma: args.truth_sigma,
            };
            let data = load_csv(path, &args.target, &opts).map_err(|e| CliError::data(format!("--data: {e}")))?;
            let source = json!({
                "csv": path,
                "target": args.target,
                "standardized": !args.raw,
                "intercept": args.intercept,
                "truth": args.truth,
            });
            Ok(Loaded { data, cov: None, experiment: None, source })
        }
        (None, Some(exp)) => {
            let g = exp.generate(&args.generator, seed)?;
            Ok(Loaded {
                data: g.data,
                cov: Some(g.cov),
                experiment: Some(exp),
                source: json!({ "synthetic": exp.name(), "generator": g.generator }),
            })
        }
        (None, None) => Err(CliError::flag("data", "either --data or --synthetic is required")),
    }
}

/// Preset solver settings with the command-line overrides applied.
pub fn solver_config(
    estimator: EstimatorKind,
    objective: ObjectiveChoice,
    experiment: Option<Experiment>,
    seed: u64,
    k: Option<usize>,
    step: Option<f64>,
    max_iter: Option<usize>,
) -> OptimizerConfig {
    let mut cfg = match experiment {
        Some(e) => e.optimizer(estimator, objective, seed),
        None => OptimizerConfig::defaults(estimator, seed),
    };
    if let Some(k) = k {
        cfg.k = k;
    }
    if let Some(s) = step {
        cfg.step = StepSize::Fixed(s);
    }
    if let Some(m) = max_iter {
        cfg.max_iters = m;
        cfg.min_iters = cfg.min_iters.min(m);
    }
    cfg
}

fn solver_from_args(s: &SolverArgs, experiment: Option<Experiment>) -> OptimizerConfig {
    solver_config(s.estimator.into(), s.objective, experiment, s.seed, s.k, s.step, s.max_iter)
}

/// Validates `cfg` against `obj`, naming the offending flag.
pub fn check_solver(cfg: &OptimizerConfig, obj: &ObjectiveConfig) -> CliResult<()> {
    if cfg.k == 0 {
        return Err(CliError::flag("k", "K must be at least 1"));
    }
    cfg.step.resolve(obj).map_err(|e| CliError::with_flag(e, "step"))?;
    cfg.validate(obj).map_err(|e| CliError::with_flag(e, "max-iter"))
}

pub enum Penalty {
    Fixed(f64),
    /// The preset or generic grid, scored on a validation split.
    CrossValidated,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvSummary {
    pub grid: LambdaGrid,
    pub options: CvOptions,
    pub table: Vec<CvRow>,
    pub test_mse: f64,
    pub rows: (usize, usize, usize),
}

pub struct Solved {
    pub fit: FitResult,
    pub lambda: f64,
    pub objective: ObjectiveConfig,
    pub optimizer: OptimizerConfig,
    pub cv: Option<CvSummary>,
}

/// Fit at a fixed penalty, or select it by cross-validation and refit.
pub fn solve(
    data: &Dataset,
    experiment: Option<Experiment>,
    objective: ObjectiveChoice,
    cfg: OptimizerConfig,
    penalty: Penalty,
) -> CliResult<Solved> {
    let (n, p) = (data.n(), data.p());
    match penalty {
        Penalty::Fixed(lambda) => {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(CliError::flag("lambda", format!("must be finite and >= 0, got {lambda}")));
            }
            let obj = objective_config(objective, lambda, data, None)?;
            check_solver(&cfg, &obj)?;
            let fit = fit(data, &obj, &cfg)?;
            Ok(Solved { fit, lambda, objective: obj, optimizer: cfg, cv: None })
        }
        Penalty::CrossValidated => {
            let grid = match experiment {
                Some(e) => e.cv_grid(objective, n, p)?,
                None => default_grid(objective, n, p)?,
            };
            let options = experiment.map(|e| e.cv_options()).unwrap_or_default();
            let rows = selection_rows(n, options.fractions, cfg.seed)?;
            // The step rule is checked at the largest penalty of the grid.
            let obj = objective_config(objective, grid.values[0], data, Some(&rows))?;
            check_solver(&cfg, &obj)?;
            let out = cross_validate_with(data, &obj, &cfg, &grid, &options)?;
            let cv = CvSummary {
                grid,
                options,
                table: out.table,
                test_mse: out.test_mse,
                rows: (out.split.train.len(), out.split.val.len(), out.split.test.len()),
            };
            Ok(Solved {
                fit: out.best,
                lambda: out.lambda,
                objective: obj.with_penalty(out.lambda),
                optimizer: cfg,
                cv: Some(cv),
            })
        }
    }
}

/// Support metrics when the truth is known; all seven metrics when the
/// population covariance is known as well.
pub fn evaluate(data: &Dataset, cov: Option<Covariance>, fit: &FitResult, seed: u64) -> CliResult<Evaluation> {
    let Some(truth) = data.truth.as_ref() else {
        return Ok(Evaluation::None);
    };
    let support = support_metrics(&fit.z_hat, truth);
    match cov {
        Some(c) => {
            let pred = prediction_metrics(&fit.beta_hat, truth, &c)?;
            Ok(Evaluation::Full(MetricsReport::new(support, pred, seed)))
        }
        None => Ok(Evaluation::Support(support)),
    }
}

pub enum Evaluation {
    None,
    Support(SupportMetrics),
    Full(MetricsReport),
}

impl Evaluation {
    fn to_json(&self) -> Value {
        match self {
            Evaluation::None => Value::Null,
            Evaluation::Support(s) => serde_json::to_value(s).expect("serializable"),
            Evaluation::Full(m) => serde_json::to_value(m).expect("serializable"),
        }
    }
}

fn coefficients_table(fit: &FitResult) -> Table {
    let mut t = Table::new(["index", "beta_hat", "pi_final"]);
    for (j, (b, pi)) in fit.beta_hat.iter().zip(fit.pi_final()).enumerate() {
        t.push(vec![j.to_string(), num(*b), num(pi)]);
    }
    t
}

pub struct Written {
    pub files: Vec<PathBuf>,
    pub doc: Value,
}

pub fn cmd_fit(a: &FitArgs) -> CliResult<Written> {
    let start = Instant::now();
    let loaded = load_data(&a.data, a.solver.seed)?;
    let data = &loaded.data;
    let cfg = solver_from_args(&a.solver, loaded.experiment);
    let penalty = if a.cv {
        Penalty::CrossValidated
    } else {
        Penalty::Fixed(a.lambda.unwrap_or_else(|| default_penalty(a.solver.objective, data.n(), data.p())))
    };
    let solved = solve(data, loaded.experiment, a.solver.objective, cfg, penalty)?;
    let metrics = evaluate(data, loaded.cov, &solved.fit, a.solver.seed)?;
    let config = json!({
        "args": a,
        "data": loaded.source,
        "objective": solved.objective,
        "optimizer": solved.optimizer,
    });
    let mut body = Map::new();
    body.insert("lambda".into(), solved.lambda.into());
    body.insert("active".into(), json!(solved.fit.z_hat.active()));
    body.insert("converged".into(), solved.fit.converged.into());
    body.insert("result".into(), serde_json::to_value(&solved.fit).expect("serializable"));
    body.insert("cv".into(), serde_json::to_value(&solved.cv).expect("serializable"));
    body.insert("metrics".into(), metrics.to_json());
    body.insert("wall_time_s".into(), start.elapsed().as_secs_f64().into());
    let doc = envelope("fit", a.solver.seed, &config, body);
    ensure_dir(&a.out)?;
    let files = vec![write_json(&a.out, "result.json", &doc)?, coefficients_table(&solved.fit).write(&a.out, "coefficients.csv")?];
    Ok(Written { files, doc })
}

fn path_grid(g: &GridArgs, experiment: Option<Experiment>, objective: ObjectiveChoice, n: usize, p: usize) -> CliResult<LambdaGrid> {
    if let Some(values) = &g.grid {
        if values.is_empty() {
            return Err(CliError::flag("grid", "no values"));
        }
        let base = values.iter().cloned().fold(f64::NAN, f64::min);
        return LambdaGrid::from_values(values.clone(), base).map_err(|e| CliError::with_flag(e, "grid"));
    }
    if g.grid_span.is_some() || g.grid_count.is_some() {
        let base = default_penalty(objective, n, p);
        return LambdaGrid::spanning(base, 1.0, g.grid_span.unwrap_or(30.0), g.grid_count.unwrap_or(15))
            .map_err(|e| CliError::with_flag(e, "grid-span"));
    }
    match experiment {
        Some(e) => e.cv_grid(objective, n, p),
        None => default_grid(objective, n, p),
    }
}

/// Fits the full dataset along the grid. Synthetic designs are scored on an
/// independent validation sample of the same size; CSV data has no
/// validation column.
pub fn cmd_path(a: &PathArgs) -> CliResult<Written> {
    let start = Instant::now();
    let loaded = load_data(&a.data, a.solver.seed)?;
    let data = &loaded.data;
    let (n, p) = (data.n(), data.p());
    let objective = a.solver.objective;
    let grid = path_grid(&a.grid, loaded.experiment, objective, n, p)?;
    let validation = match loaded.experiment {
        Some(e) => Some(e.generate(&a.data.generator, derive_seed(a.solver.seed, VALIDATION_SALT))?.data),
        None => None,
    };
    let cfg = solver_from_args(&a.solver, loaded.experiment);
    let obj = objective_config(objective, grid.values[0], data, None)?;
    check_solver(&cfg, &obj)?;
    let (records, _) = regularization_path(data, &obj, &cfg, &grid, validation.as_ref())?;
    let mut header: Vec<String> = ["lambda", "support", "val_mse", "converged", "iters"].map(String::from).to_vec();
    header.extend((0..p).map(|j| format!("beta_{j}")));
    let mut table = Table::new(header);
    for r in &records {
        let mut row = vec![num(r.lambda), r.support.to_string(), opt_num(r.val_mse), r.converged.to_string(), r.iters.to_string()];
        row.extend(r.beta_hat.iter().map(|b| num(*b)));
        table.push(row);
    }
    let config = json!({ "args": a, "data": loaded.source, "objective": obj, "optimizer": cfg, "grid": grid });
    let mut body = Map::new();
    body.insert("records".into(), serde_json::to_value(&records).expect("serializable"));
    body.insert("wall_time_s".into(), start.elapsed().as_secs_f64().into());
    let doc = envelope("path", a.solver.seed, &config, body);
    ensure_dir(&a.out)?;
    let files = vec![table.write(&a.out, "path.csv")?, write_json(&a.out, "path.json", &doc)?];
    Ok(Written { files, doc })
}

pub fn cmd_oracle(a: &OracleArgs) -> CliResult<Written> {
    let start = Instant::now();
    if a.solver.objective != ObjectiveChoice::Freq {
        return Err(CliError::flag("objective", "the exhaustive search covers the penalized objective only"));
    }
    let loaded = load_data(&a.data, a.solver.seed)?;
    let data = &loaded.data;
    let lambda = a.lambda.unwrap_or_else(|| default_penalty(ObjectiveChoice::Freq, data.n(), data.p()));
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(CliError::flag("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    let (z_opt, value) = exhaustive_best_subset(data, lambda, a.max_p)?;
    let mut body = Map::new();
    body.insert("lambda".into(), lambda.into());
    body.insert("z_opt".into(), json!(z_opt.active()));
    body.insert("value".into(), value.into());
    let mut optimizer = Value::Null;
    if a.with_fit {
        let cfg = solver_from_args(&a.solver, loaded.experiment);
        let solved = solve(data, loaded.experiment, ObjectiveChoice::Freq, cfg, Penalty::Fixed(lambda))?;
        let obj = Objective::new(data, solved.objective)?;
        body.insert(
            "fit".into(),
            json!({
                "active": solved.fit.z_hat.active(),
                "value": obj.value(&solved.fit.z_hat, &[])?,
                "converged": solved.fit.converged,
                "iters": solved.fit.iters,
                "agree": solved.fit.z_hat == z_opt,
            }),
        );
        optimizer = serde_json::to_value(solved.optimizer).expect("serializable");
    }
    body.insert("wall_time_s".into(), start.elapsed().as_secs_f64().into());
    let config = json!({ "args": a, "data": loaded.source, "optimizer": optimizer });
    let doc = envelope("oracle", a.solver.seed, &config, body);
    ensure_dir(&a.out)?;
    let files = vec![write_json(&a.out, "oracle.json", &doc)?];
    Ok(Written { files, doc })
}

/// One synthetic trial of one method.
#[derive(Debug, Clone, Serialize)]
pub struct TrialSpec {
    pub experiment: Experiment,
    pub generator: GeneratorOverrides,
    pub estimator: EstimatorKind,
    pub objective: ObjectiveChoice,
    pub seed: u64,
    /// Fixed penalty; cross-validation when `None`.
    pub lambda: Option<f64>,
    pub k: Option<usize>,
    pub step: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub report: MetricsReport,
    pub lambda: f64,
    pub fit: FitResult,
    pub n: usize,
    pub rho: Option<f64>,
    pub snr: f64,
    pub runtime_s: f64,
}

pub fn run_trial(t: &TrialSpec) -> CliResult<TrialOutcome> {
    let start = Instant::now();
    let g = t.experiment.generate(&t.generator, t.seed)?;
    let cfg = solver_config(t.estimator, t.objective, Some(t.experiment), t.seed, t.k, t.step, t.max_iter);
    let penalty = t.lambda.map_or(Penalty::CrossValidated, Penalty::Fixed);
    let solved = solve(&g.data, Some(t.experiment), t.objective, cfg, penalty)?;
    let truth = g.data.truth.as_ref().expect("synthetic data carries its truth");
    let report = MetricsReport::new(
        support_metrics(&solved.fit.z_hat, truth),
        prediction_metrics(&solved.fit.beta_hat, truth, &g.cov)?,
        t.seed,
    );
    let snr = g.cov.quad_form(&truth.beta_star) / (truth.sigma * truth.sigma);
    Ok(TrialOutcome {
        report,
        lambda: solved.lambda,
        n: g.data.n(),
        rho: match g.cov {
            Covariance::Ar1 { rho } => Some(rho),
            Covariance::Identity if t.experiment == Experiment::Cs => None,
            Covariance::Identity => Some(0.0),
        },
        snr,
        fit: solved.fit,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}
