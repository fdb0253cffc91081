//! Native probe baseline: a probe trained and tested in each model's own
//! space. This is the accuracy an alignment into that space can approach.

use latent_core::eval::{fit_probe, probe_metrics};

use super::{model_jobs, run_jobs, thread_pool, Outcome, Store};
use crate::config::JobConfig;
use crate::output::{Cell, Table};

pub fn run(cfg: &JobConfig) -> Outcome {
    let mut out = Outcome::default();
    let store = Store::new(cfg);
    let jobs = model_jobs(cfg, &cfg.train_split);
    out.jobs_total = jobs.len();
    let results = run_jobs(&thread_pool(cfg), jobs, |(dataset, model)| -> Result<Vec<Cell>, String> {
        let train = store.cloud(model, dataset, &cfg.train_split)?;
        let test = store.cloud(model, dataset, &cfg.test_split)?;
        let probe = fit_probe(&train, &cfg.label_column).map_err(|e| e.to_string())?;
        let r = probe_metrics(&probe, &test, &cfg.label_column).map_err(|e| e.to_string())?;
        Ok(vec![
            Cell::text(dataset),
            Cell::text(model),
            Cell::Float(r.accuracy),
            Cell::Float(r.precision_macro),
            Cell::Float(r.recall_macro),
            Cell::Float(r.f1_macro),
            Cell::Int(r.n_test as i64),
        ])
    });
    let mut table = Table::new("eval", vec!["dataset", "model_name", "accuracy", "precision", "recall", "f1", "n_test"], 2);
    for ((dataset, model), r) in results {
        match r {
            Ok(row) => table.push(row),
            Err(e) => out.fail(format!("{dataset}/{model}"), e),
        }
    }
    table.sort();
    out.tables.push(table);
    out
}
