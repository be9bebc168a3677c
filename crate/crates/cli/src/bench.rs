//! Repeated synthetic trials over methods and design cells.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map};
use subsetgrad::estimators::{derive_seed, EstimatorKind};
use subsetgrad::metrics::{aggregate, MetricsReport, Stat, Summary};

use crate::args::BenchArgs;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, envelope, num, opt_num, write_json, Table};
use crate::presets::{GeneratorOverrides, ObjectiveChoice};
use crate::run::{run_trial, TrialOutcome, TrialSpec, Written};

/// One point of the design sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub n: Option<usize>,
    pub rho: Option<f64>,
    pub snr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Method {
    pub estimator: EstimatorKind,
    pub objective: ObjectiveChoice,
}

impl Method {
    pub fn label(&self) -> String {
        match self.objective {
            ObjectiveChoice::Freq => self.estimator.name().to_string(),
            ObjectiveChoice::Vi => format!("{}-vi", self.estimator.name()),
        }
    }
}

/// Cartesian product of the sweep grids, `n` outermost.
pub fn cells(a: &BenchArgs) -> Vec<Cell> {
    let ns: Vec<Option<usize>> = a.n_grid.as_ref().map_or(vec![None], |g| g.iter().map(|v| Some(*v)).collect());
    let rhos: Vec<Option<f64>> = a.rho_grid.as_ref().map_or(vec![None], |g| g.iter().map(|v| Some(*v)).collect());
    let snrs: Vec<Option<f64>> = a.snr_grid.as_ref().map_or(vec![None], |g| g.iter().map(|v| Some(*v)).collect());
    let mut out = Vec::new();
    for &n in &ns {
        for &rho in &rhos {
            for &snr in &snrs {
                out.push(Cell { n, rho, snr });
            }
        }
    }
    out
}

pub fn methods(a: &BenchArgs) -> Vec<Method> {
    let mut out = Vec::new();
    for &objective in &a.objective {
        for &e in &a.estimators {
            let m = Method { estimator: e.into(), objective };
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    out
}

/// Seed of trial `t`, shared by all methods and cells.
pub fn trial_seed(base: u64, t: usize) -> u64 {
    derive_seed(base, t as u64)
}

fn overrides(base: &GeneratorOverrides, cell: &Cell) -> GeneratorOverrides {
    let mut ov = base.clone();
    if cell.n.is_some() {
        ov.n = cell.n;
    }
    if cell.rho.is_some() {
        ov.rho = cell.rho;
    }
    if cell.snr.is_some() {
        ov.snr = cell.snr;
        ov.sigma = None;
    }
    ov
}

pub struct TrialRow {
    pub cell: usize,
    pub trial: usize,
    pub method: Method,
    pub seed: u64,
    pub outcome: TrialOutcome,
}

pub const TRIAL_COLUMNS: [&str; 20] = [
    "cell", "trial", "method", "estimator", "objective", "n", "rho", "snr", "seed", "lambda", "precision", "recall",
    "f1", "nonzero", "rr", "rte", "pve", "converged", "iters", "runtime_s",
];

/// Runs every (cell, trial, method) job; rows come back sorted by
/// (cell, trial, method) whatever the scheduling.
pub fn run_jobs(a: &BenchArgs) -> CliResult<Vec<TrialRow>> {
    if a.trials == 0 {
        return Err(CliError::flag("trials", "at least one trial is required"));
    }
    if a.estimators.is_empty() || a.objective.is_empty() {
        return Err(CliError::flag("estimators", "at least one method is required"));
    }
    let cells = cells(a);
    let methods = methods(a);
    let mut jobs = Vec::with_capacity(cells.len() * a.trials * methods.len());
    for (ci, cell) in cells.iter().enumerate() {
        for t in 0..a.trials {
            for m in &methods {
                jobs.push((ci, t, *m, overrides(&a.generator, cell)));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(cell, trial, method, generator)| {
            let seed = trial_seed(a.seed, trial);
            let spec = TrialSpec {
                experiment: a.experiment,
                generator,
                estimator: method.estimator,
                objective: method.objective,
                seed,
                lambda: a.lambda,
                k: a.k,
                step: a.step,
                max_iter: a.max_iter,
            };
            run_trial(&spec).map(|outcome| TrialRow { cell, trial, method, seed, outcome })
        })
        .collect()
}

pub fn trials_table(rows: &[TrialRow]) -> Table {
    let mut t = Table::new(TRIAL_COLUMNS);
    for r in rows {
        let o = &r.outcome;
        let mut row = vec![
            r.cell.to_string(),
            r.trial.to_string(),
            r.method.label(),
            r.method.estimator.name().to_string(),
            serde_json::to_value(r.method.objective).expect("serializable").as_str().unwrap_or_default().to_string(),
            o.n.to_string(),
            opt_num(o.rho),
            num(o.snr),
            r.seed.to_string(),
            num(o.lambda),
        ];
        row.extend(o.report.values().iter().map(|v| num(*v)));
        row.extend([o.fit.converged.to_string(), o.fit.iters.to_string(), num(o.runtime_s)]);
        t.push(row);
    }
    t
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub cell: usize,
    pub method: String,
    pub estimator: EstimatorKind,
    pub objective: ObjectiveChoice,
    pub n: usize,
    pub rho: Option<f64>,
    pub snr: f64,
    pub metrics: Summary,
    pub converged: usize,
    pub runtime_s: Stat,
}

pub fn summarize(rows: &[TrialRow]) -> CliResult<Vec<CellSummary>> {
    let mut keys: Vec<(usize, String)> = Vec::new();
    for r in rows {
        let k = (r.cell, r.method.label());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(cell, label)| {
            let group: Vec<&TrialRow> = rows.iter().filter(|r| r.cell == cell && r.method.label() == label).collect();
            let reports: Vec<MetricsReport> = group.iter().map(|r| r.outcome.report).collect();
            let first = group[0];
            Ok(CellSummary {
                cell,
                method: label,
                estimator: first.method.estimator,
                objective: first.method.objective,
                n: first.outcome.n,
                rho: first.outcome.rho,
                snr: first.outcome.snr,
                metrics: aggregate(&reports)?,
                converged: group.iter().filter(|r| r.outcome.fit.converged).count(),
                runtime_s: Stat::of(&group.iter().map(|r| r.outcome.runtime_s).collect::<Vec<_>>()),
            })
        })
        .collect()
}

pub fn cmd_bench(a: &BenchArgs) -> CliResult<Written> {
    let start = Instant::now();
    let rows = run_jobs(a)?;
    let table = trials_table(&rows);
    let summary = summarize(&rows)?;
    let config = json!({
        "args": a,
        "cells": cells(a),
        "methods": methods(a).iter().map(|m| m.label()).collect::<Vec<_>>(),
        "trial_seeds": (0..a.trials).map(|t| trial_seed(a.seed, t)).collect::<Vec<_>>(),
    });
    let mut body = Map::new();
    body.insert("summary".into(), serde_json::to_value(&summary).expect("serializable"));
    body.insert("wall_time_s".into(), start.elapsed().as_secs_f64().into());
    let doc = envelope("bench", a.seed, &config, body);
    ensure_dir(&a.out)?;
    let files = vec![table.write(&a.out, "trials.csv")?, write_json(&a.out, "summary.json", &doc)?];
    Ok(Written { files, doc })
}
