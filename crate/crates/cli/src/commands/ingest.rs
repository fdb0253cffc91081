//! Read and validate every configured table; report shape and content hash.

use latent_core::ingest::{read_embedding_table, to_point_cloud, validate_against_registry, TableFormat};
use sha2::{Digest, Sha256};

use super::{load_registry, run_jobs, thread_pool, Outcome};
use crate::config::JobConfig;
use crate::output::{Cell, Table};

pub fn run(cfg: &JobConfig) -> Outcome {
    let mut out = Outcome::default();
    let registry = match cfg.registry {
        Some(_) => match load_registry(cfg) {
            Ok(r) => Some(r),
            Err(e) => {
                out.fail("registry", e);
                None
            }
        },
        None => None,
    };
    let jobs: Vec<(String, String, String)> = cfg.tables.iter().map(|t| (t.model.clone(), t.dataset.clone(), t.split.clone())).collect();
    out.jobs_total = jobs.len();
    let results = run_jobs(&thread_pool(cfg), jobs, |(model, dataset, split)| -> Result<Vec<Cell>, String> {
        let t = cfg.table(model, dataset, split).expect("job comes from the table list");
        let format = TableFormat::from_path(&t.path).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(&t.path).map_err(|e| format!("{}: {e}", t.path.display()))?;
        let table = read_embedding_table(&t.path, format).map_err(|e| e.to_string())?;
        if table.model_name() != Some(model.as_str()) {
            return Err(format!("file holds model `{}`, config says `{model}`", table.model_name().unwrap_or("")));
        }
        if let Some(reg) = &registry {
            validate_against_registry(&table, reg).map_err(|e| e.to_string())?;
        }
        let cloud = to_point_cloud(&table).map_err(|e| e.to_string())?;
        Ok(vec![
            Cell::text(model),
            Cell::text(dataset),
            Cell::text(split),
            Cell::Int(cloud.n() as i64),
            Cell::Int(cloud.dim() as i64),
            Cell::text(table.label_columns().join(";")),
            Cell::text(hex::encode(Sha256::digest(&bytes))),
        ])
    });
    let mut table = Table::new("ingest", vec!["model_name", "dataset", "split", "rows", "dim", "label_columns", "sha256"], 3);
    for ((model, dataset, split), r) in results {
        match r {
            Ok(row) => table.push(row),
            Err(e) => out.fail(format!("{model}/{dataset}/{split}"), e),
        }
    }
    table.sort();
    out.tables.push(table);
    out
}
