//! Pooled OLS with HC3 errors per (condition, metric) over matched pairs,
//! plus an optional multinomial logit with likelihood-ratio tests.
//!
//! Inputs are long-format tables `(model_name, dataset, <name>, value)`,
//! such as the outputs of `metrics` and `graph-sig`. Empty values are
//! skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use latent_core::ingest::ModelRegistry;
use latent_core::pairing::{build_pairs, Condition, MatchedPair};
use latent_core::stats::{forest_row, lr_test, mnlogit_fit, ols_hc3, DesignBuilder, MnlogitOptions, StatsError};

use super::{load_registry, run_jobs, thread_pool, Outcome};
use crate::config::{JobConfig, MnlogitConfig};
use crate::output::{Cell, Table};

pub const TREATED: &str = "treated";

/// `(model, dataset, name) → value`.
pub type LongValues = BTreeMap<(String, String, String), f64>;

pub fn read_long(path: &Path, into: &mut LongValues) -> Result<(), String> {
    let ctx = |e: &dyn std::fmt::Display| format!("{}: {e}", path.display());
    let mut r = csv::Reader::from_path(path).map_err(|e| ctx(&e))?;
    if r.headers().map_err(|e| ctx(&e))?.len() < 4 {
        return Err(ctx(&"expected at least four columns (model_name, dataset, name, value)"));
    }
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| ctx(&e))?;
        let raw = rec[3].trim();
        if raw.is_empty() {
            continue;
        }
        let v: f64 = raw.parse().map_err(|_| ctx(&format!("row {}: value `{raw}` is not a number", line + 1)))?;
        let key = (rec[0].to_string(), rec[1].to_string(), rec[2].to_string());
        if let Some(old) = into.insert(key.clone(), v) {
            if old.to_bits() != v.to_bits() {
                return Err(ctx(&format!("conflicting values for {key:?}")));
            }
        }
    }
    Ok(())
}

fn metric_names(cfg: &JobConfig, values: &LongValues) -> Vec<String> {
    if !cfg.regress.metrics.is_empty() {
        return cfg.regress.metrics.clone();
    }
    values.keys().map(|(_, _, m)| m.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Observations for one metric: each pair contributes a control row and a
/// treatment row for every dataset where both models have a value.
#[derive(Debug, Default)]
struct Sample {
    y: Vec<f64>,
    treated: Vec<f64>,
    family: Vec<String>,
    dataset: Vec<String>,
}

fn collect(pairs: &[MatchedPair], metric: &str, values: &LongValues, datasets: &BTreeSet<String>) -> Sample {
    let mut s = Sample::default();
    for p in pairs {
        for d in datasets {
            let get = |m: &String| values.get(&(m.clone(), d.clone(), metric.to_string())).copied().filter(|v| v.is_finite());
            if let (Some(c), Some(t)) = (get(&p.control), get(&p.treatment)) {
                for (y, flag) in [(c, 0.0), (t, 1.0)] {
                    s.y.push(y);
                    s.treated.push(flag);
                    s.family.push(p.family.clone());
                    s.dataset.push(d.clone());
                }
            }
        }
    }
    s
}

fn fit_forest(c: Condition, metric: &str, s: &Sample) -> Result<Vec<Cell>, String> {
    let err = |e: StatsError| e.to_string();
    if s.y.is_empty() {
        return Err("no pair has values for both models".into());
    }
    let dm = DesignBuilder::new(s.y.len())
        .numeric(TREATED, &s.treated)
        .and_then(|b| b.categorical("family", &s.family))
        .and_then(|b| b.categorical("dataset", &s.dataset))
        .and_then(|b| b.continuous(&s.y))
        .map_err(err)?;
    let fit = ols_hc3(&dm).map_err(err)?;
    // one pooled control sd per (condition, metric)
    let control: Vec<f64> = s.y.iter().zip(&s.treated).filter(|(_, &t)| t == 0.0).map(|(&y, _)| y).collect();
    let row = forest_row(&fit, TREATED, &control, c.as_str(), metric).map_err(err)?;
    Ok(vec![
        Cell::text(row.condition),
        Cell::text(row.metric),
        Cell::Float(row.standardized_beta),
        Cell::Float(row.ci_low),
        Cell::Float(row.ci_high),
        Cell::Float(row.p),
        Cell::Int(s.y.len() as i64),
    ])
}

/// Rows of the logit: every (model, dataset) with a target class and all
/// predictors present.
struct LogitData {
    classes: Vec<String>,
    columns: Vec<(String, Vec<f64>)>,
}

fn logit_data(m: &MnlogitConfig, reg: &ModelRegistry, values: &LongValues) -> Result<LogitData, String> {
    let keys: BTreeSet<(String, String)> = values
        .keys()
        .filter(|(_, d, _)| m.dataset.as_ref().is_none_or(|want| want == d))
        .map(|(model, d, _)| (model.clone(), d.clone()))
        .collect();
    let names: Vec<String> = m.predictors.iter().chain(&m.registry_controls).cloned().collect();
    let mut data = LogitData { classes: Vec::new(), columns: names.iter().map(|n| (n.clone(), Vec::new())).collect() };
    for (model, d) in keys {
        let Some(entry) = reg.get(&model) else { continue };
        let Some(class) = entry.field(&m.target) else { continue };
        let mut row = Vec::with_capacity(names.len());
        for p in &m.predictors {
            row.push(values.get(&(model.clone(), d.clone(), p.clone())).copied());
        }
        for f in &m.registry_controls {
            row.push(entry.field(f).and_then(|v| v.parse::<f64>().ok()));
        }
        if row.iter().all(|v| v.is_some_and(f64::is_finite)) {
            data.classes.push(class);
            for ((_, col), v) in data.columns.iter_mut().zip(row) {
                col.push(v.expect("checked"));
            }
        }
    }
    if data.classes.is_empty() {
        return Err(format!("no model has `{}` and every predictor", m.target));
    }
    Ok(data)
}

fn mnlogit_tests(m: &MnlogitConfig, data: &LogitData) -> Result<Vec<Vec<Cell>>, String> {
    let err = |e: StatsError| e.to_string();
    let opts = MnlogitOptions { max_iter: m.max_iter, tol: m.tol, standardize: m.standardize };
    let n = data.classes.len();
    let fit_without = |skip: Option<&str>| {
        let mut b = DesignBuilder::new(n);
        for (name, col) in &data.columns {
            if Some(name.as_str()) != skip {
                b = b.numeric(name, col)?;
            }
        }
        mnlogit_fit(&b.classes(&data.classes)?, opts)
    };
    let full = fit_without(None).map_err(err)?;
    let k = full.classes.len() as i64;
    let mut rows = Vec::new();
    for (name, _) in &data.columns {
        let reduced = fit_without(Some(name)).map_err(|e| format!("without {name}: {e}"))?;
        let t = lr_test(name, &full, &reduced, k - 1).map_err(err)?;
        rows.push(vec![
            Cell::text(t.variable),
            Cell::Float(t.lr_stat),
            Cell::Int(t.df as i64),
            Cell::Float(t.p_value),
            Cell::Int(n as i64),
            Cell::Int(k),
        ]);
    }
    Ok(rows)
}

pub fn run(cfg: &JobConfig) -> Outcome {
    let mut out = Outcome::default();
    let mut forest = Table::new("forest", vec!["condition", "metric", "standardized_beta", "ci_low", "ci_high", "p", "n_obs"], 2);
    let mut lr = Table::new("lr_tests", vec!["variable", "lr_stat", "df", "p_value", "n_obs", "n_classes"], 1);
    let reg = match load_registry(cfg) {
        Ok(r) => r,
        Err(e) => {
            out.fail("registry", e);
            out.tables.push(forest);
            return out;
        }
    };
    let mut values = LongValues::new();
    for path in &cfg.regress.inputs {
        if let Err(e) = read_long(path, &mut values) {
            out.fail("inputs", e);
            out.tables.push(forest);
            return out;
        }
    }
    let datasets: BTreeSet<String> = match cfg.datasets.is_empty() {
        true => values.keys().map(|(_, d, _)| d.clone()).collect(),
        false => cfg.datasets.iter().cloned().collect(),
    };
    let metrics = metric_names(cfg, &values);

    let mut jobs = Vec::new();
    let mut pairs = BTreeMap::new();
    for &c in &cfg.regress.conditions {
        match build_pairs(&reg, &cfg.regress.spec_for(c)) {
            Ok(p) => {
                pairs.insert(c, p);
                jobs.extend(metrics.iter().map(|m| (c, m.clone())));
            }
            Err(e) => {
                for m in &metrics {
                    out.fail(format!("{c}/{m}"), &e);
                }
            }
        }
    }
    out.jobs_total = cfg.regress.conditions.len() * metrics.len();
    let results = run_jobs(&thread_pool(cfg), jobs, |(c, m)| fit_forest(*c, m, &collect(&pairs[c], m, &values, &datasets)));
    for ((c, m), r) in results {
        match r {
            Ok(row) => forest.push(row),
            Err(e) => out.fail(format!("{c}/{m}"), e),
        }
    }
    forest.sort();
    out.tables.push(forest);

    if let Some(m) = &cfg.regress.mnlogit {
        out.jobs_total += 1;
        match logit_data(m, &reg, &values).and_then(|d| mnlogit_tests(m, &d)) {
            Ok(rows) => rows.into_iter().for_each(|r| lr.push(r)),
            Err(e) => out.fail("mnlogit", e),
        }
        lr.sort();
        out.tables.push(lr);
    }
    out
}
