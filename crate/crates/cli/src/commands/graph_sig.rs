//! kNN-graph signatures per (model, dataset) in long format.

use latent_core::graphs::{graph_signatures, knn_graph};

use super::{job_seed, model_jobs, run_jobs, thread_pool, Outcome, Store};
use crate::config::JobConfig;
use crate::output::{Cell, Table};

pub fn run(cfg: &JobConfig) -> Outcome {
    let mut out = Outcome::default();
    let store = Store::new(cfg);
    let jobs = model_jobs(cfg, &cfg.train_split);
    out.jobs_total = jobs.len();
    let results = run_jobs(&thread_pool(cfg), jobs, |(dataset, model)| {
        let cloud = store.cloud(model, dataset, &cfg.train_split)?;
        let g = knn_graph(cloud.matrix(), cfg.graph.k).map_err(|e| e.to_string())?;
        graph_signatures(&g, job_seed(cfg.seed, &[dataset, model, "tree"])).map_err(|e| e.to_string())
    });
    let mut table = Table::new("graph_signatures", vec!["model_name", "dataset", "signature", "value", "built_with_k"], 3);
    for ((dataset, model), r) in results {
        match r {
            Ok(report) => {
                let k = report.built_with_k.map_or(Cell::Missing, |k| Cell::Int(k as i64));
                for (name, value) in report.signature_rows() {
                    table.push(vec![Cell::text(&model), Cell::text(&dataset), Cell::text(name), Cell::opt_float(value), k.clone()]);
                }
            }
            Err(e) => out.fail(format!("{dataset}/{model}"), e),
        }
    }
    table.sort();
    out.tables.push(table);
    out
}
