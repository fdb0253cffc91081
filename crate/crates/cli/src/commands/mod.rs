//! One module per subcommand plus the shared job machinery.
//!
//! Every command expands its configuration into independent jobs, runs them
//! on a bounded rayon pool, then sorts the collected rows by job key before
//! anything is written. Job seeds come from [`job_seed`], so results do not
//! depend on the worker count or completion order.

pub mod align_sweep;
pub mod eval;
pub mod graph_sig;
pub mod ingest;
pub mod matching;
pub mod metrics;
pub mod pairs;
pub mod regress;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

use latent_core::ingest::{read_embedding_table, to_point_cloud, ModelRegistry, PointCloud, TableFormat};
use rayon::prelude::*;

use crate::config::JobConfig;
use crate::output::{Failure, Table};

pub use crate::config::job_seed;

/// What a command produced: its tables plus per-job failures.
#[derive(Debug, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub jobs_total: usize,
    pub failures: Vec<Failure>,
}

impl Outcome {
    pub fn fail(&mut self, job: impl Into<String>, error: impl ToString) {
        self.failures.push(Failure { job: job.into(), error: error.to_string() });
    }
}

type CloudKey = (String, String, String);
type Slot = Arc<OnceLock<Result<Arc<PointCloud>, String>>>;

/// Lazily loaded point clouds, each file read at most once even when many
/// jobs ask for it concurrently.
pub struct Store<'a> {
    cfg: &'a JobConfig,
    slots: Mutex<BTreeMap<CloudKey, Slot>>,
}

impl<'a> Store<'a> {
    pub fn new(cfg: &'a JobConfig) -> Self {
        Store { cfg, slots: Mutex::new(BTreeMap::new()) }
    }

    pub fn cloud(&self, model: &str, dataset: &str, split: &str) -> Result<Arc<PointCloud>, String> {
        let key = (model.to_string(), dataset.to_string(), split.to_string());
        let slot = self.slots.lock().expect("store lock").entry(key).or_default().clone();
        slot.get_or_init(|| self.load(model, dataset, split)).clone()
    }

    fn load(&self, model: &str, dataset: &str, split: &str) -> Result<Arc<PointCloud>, String> {
        let t = self.cfg.table(model, dataset, split).ok_or_else(|| format!("no table configured for ({model}, {dataset}, {split})"))?;
        let format = TableFormat::from_path(&t.path).map_err(|e| e.to_string())?;
        let table = read_embedding_table(&t.path, format).map_err(|e| format!("{}: {e}", t.path.display()))?;
        to_point_cloud(&table).map(Arc::new).map_err(|e| format!("{}: {e}", t.path.display()))
    }
}

pub fn load_registry(cfg: &JobConfig) -> Result<ModelRegistry, String> {
    let path = cfg.registry.as_ref().ok_or("this command needs `registry` in the config")?;
    latent_core::ingest::load_registry(path).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn thread_pool(cfg: &JobConfig) -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.jobs {
        b = b.num_threads(n);
    }
    b.build().expect("thread pool")
}

/// Run `f` over `jobs` on `pool`. Output order follows the sorted job keys.
pub fn run_jobs<K, T, F>(pool: &rayon::ThreadPool, mut jobs: Vec<K>, f: F) -> Vec<(K, T)>
where
    K: Ord + Send + Sync,
    T: Send,
    F: Fn(&K) -> T + Sync + Send,
{
    jobs.sort();
    jobs.dedup();
    pool.install(|| jobs.into_par_iter().map(|k| {
        let out = f(&k);
        (k, out)
    }).collect())
}

/// `(dataset, source, target)` jobs for every configured pair and dataset.
pub fn pair_jobs(cfg: &JobConfig, pairs: &[[String; 2]]) -> Vec<(String, String, String)> {
    let mut jobs = Vec::new();
    for d in cfg.dataset_list() {
        for [a, b] in pairs {
            jobs.push((d.clone(), a.clone(), b.clone()));
        }
    }
    jobs
}

/// `(dataset, model)` jobs. Without an explicit model list only models that
/// have a table in the dataset are included; explicitly listed models are
/// always included, so a missing table surfaces as a job failure.
pub fn model_jobs(cfg: &JobConfig, split: &str) -> Vec<(String, String)> {
    let mut jobs = Vec::new();
    for d in cfg.dataset_list() {
        for m in cfg.model_list() {
            if !cfg.models.is_empty() || cfg.table(&m, &d, split).is_some() {
                jobs.push((d.clone(), m));
            }
        }
    }
    jobs
}
