//! Geometry metrics per (model, dataset) in long format.

use latent_core::geometry::geometry_metrics;

use super::{model_jobs, run_jobs, thread_pool, Outcome, Store};
use crate::config::JobConfig;
use crate::output::{Cell, Table};

pub fn run(cfg: &JobConfig) -> Outcome {
    let mut out = Outcome::default();
    let store = Store::new(cfg);
    let jobs = model_jobs(cfg, &cfg.train_split);
    out.jobs_total = jobs.len();
    let results = run_jobs(&thread_pool(cfg), jobs, |(dataset, model)| {
        let cloud = store.cloud(model, dataset, &cfg.train_split)?;
        geometry_metrics(cloud.matrix()).map_err(|e| e.to_string())
    });
    let mut table = Table::new("metrics", vec!["model_name", "dataset", "metric", "value"], 3);
    for ((dataset, model), r) in results {
        match r {
            Ok(report) => {
                for (name, value) in report.metric_rows() {
                    table.push(vec![Cell::text(&model), Cell::text(&dataset), Cell::text(name), Cell::Float(value)]);
                }
            }
            Err(e) => out.fail(format!("{dataset}/{model}"), e),
        }
    }
    table.sort();
    out.tables.push(table);
    out
}
