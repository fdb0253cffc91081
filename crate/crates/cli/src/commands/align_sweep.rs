//! Fit every (pair, method, k) on the train split and score it on the test
//! split: reconstruction MSE against the true target embeddings plus the
//! metrics of a target-space probe applied to the transmitted embeddings.

use std::collections::BTreeSet;

use latent_core::align::{self, AlignmentMap, CcaSolution, Method};
use latent_core::eval::{evaluate_alignment, fit_probe, EvalReport, ProbeModel};
use latent_core::ingest::{pair_by_id, PairedClouds};

use super::{job_seed, pair_jobs, run_jobs, thread_pool, Outcome, Store};
use crate::config::JobConfig;
use crate::output::{Cell, Table};

pub const HEADER: [&str; 11] = ["dataset", "source", "target", "method", "k", "mse", "accuracy", "precision", "recall", "f1", "n_test"];

type CellResult = (Method, usize, Result<EvalReport, String>);

struct Prepared {
    train: PairedClouds,
    test: PairedClouds,
    probe: ProbeModel,
}

fn prepare(cfg: &JobConfig, store: &Store, dataset: &str, src: &str, tgt: &str) -> Result<Prepared, String> {
    let load = |m: &str, s: &str| store.cloud(m, dataset, s);
    let pair = |s: &str| -> Result<PairedClouds, String> {
        pair_by_id(&*load(src, s)?, &*load(tgt, s)?, cfg.pair_policy).map_err(|e| format!("{s} split: {e}"))
    };
    let train = pair(&cfg.train_split)?;
    let test = pair(&cfg.test_split)?;
    let probe = fit_probe(train.b(), &cfg.label_column).map_err(|e| format!("probe: {e}"))?;
    Ok(Prepared { train, test, probe })
}

fn sweep(cfg: &JobConfig, p: &Prepared, key: &(String, String, String), methods: &BTreeSet<Method>) -> Vec<CellResult> {
    let (dataset, src, tgt) = key;
    let score = |m: Result<AlignmentMap, String>| -> Result<EvalReport, String> {
        evaluate_alignment(&m?, &p.test, &p.probe, &cfg.label_column).map_err(|e| e.to_string())
    };
    let mut cells = Vec::new();
    for &method in methods {
        match method {
            Method::Linear => {
                let full = align::fit_linear(&p.train).map_err(|e| e.to_string());
                for &k in &cfg.align.k_grid {
                    let m = full.clone().and_then(|f| align::truncate_linear(&f, k).map_err(|e| e.to_string()));
                    cells.push((method, k, score(m)));
                }
            }
            Method::Cca => {
                let sol = CcaSolution::fit(&p.train, cfg.align.cca_epsilon).map_err(|e| e.to_string());
                for &k in &cfg.align.k_grid {
                    let m = sol.as_ref().map_err(Clone::clone).and_then(|s| s.map(k).map_err(|e| e.to_string()));
                    cells.push((method, k, score(m)));
                }
            }
            Method::Ppfe => {
                for &k in &cfg.align.k_grid {
                    let seed = job_seed(cfg.seed, &[dataset, src, tgt, method.as_str(), &k.to_string()]);
                    let m = align::fit_ppfe(&p.train, k, cfg.align.rho, seed).map_err(|e| e.to_string());
                    cells.push((method, k, score(m)));
                }
            }
        }
    }
    cells
}

pub fn run(cfg: &JobConfig) -> Outcome {
    let mut out = Outcome::default();
    let store = Store::new(cfg);
    let methods: BTreeSet<Method> = cfg.align.methods.iter().copied().collect();
    let jobs = pair_jobs(cfg, &cfg.align.pairs);
    let cells_per_job = methods.len() * cfg.align.k_grid.len();
    out.jobs_total = jobs.len() * cells_per_job;

    let results = run_jobs(&thread_pool(cfg), jobs, |key| {
        let (dataset, src, tgt) = key;
        prepare(cfg, &store, dataset, src, tgt).map(|p| sweep(cfg, &p, key, &methods))
    });

    let mut table = Table::new("align_sweep", HEADER.to_vec(), 5);
    for ((dataset, src, tgt), r) in results {
        let job = format!("{dataset}/{src}->{tgt}");
        let cells = match r {
            Ok(c) => c,
            Err(e) => {
                // every cell of this job is lost
                for method in &methods {
                    for k in &cfg.align.k_grid {
                        out.fail(format!("{job}/{method}/k={k}"), &e);
                    }
                }
                continue;
            }
        };
        for (method, k, rep) in cells {
            match rep {
                Ok(rep) => table.push(vec![
                    Cell::text(&dataset),
                    Cell::text(&src),
                    Cell::text(&tgt),
                    Cell::text(method.as_str()),
                    Cell::Int(k as i64),
                    Cell::opt_float(rep.mse),
                    Cell::Float(rep.accuracy),
                    Cell::Float(rep.precision_macro),
                    Cell::Float(rep.recall_macro),
                    Cell::Float(rep.f1_macro),
                    Cell::Int(rep.n_test as i64),
                ]),
                Err(e) => out.fail(format!("{job}/{method}/k={k}"), e),
            }
        }
    }
    table.sort();
    out.tables.push(table);
    out
}
