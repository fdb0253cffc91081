//! Concept matching between the prototype clusterings of each model pair,
//! computed on the train split over the samples both models share.

use latent_core::concepts::{hungarian_match, injected_match, jaccard_matrix, prototypical_anchors, spectral_match, MatchScheme, Matching};
use latent_core::ingest::pair_by_id;

use super::{job_seed, pair_jobs, run_jobs, thread_pool, Outcome, Store};
use crate::config::JobConfig;
use crate::output::{Cell, Table};

pub const HEADER: [&str; 10] =
    ["dataset", "source", "target", "scheme", "kappa", "mean_similarity", "total_similarity", "n_pairs", "n_groups", "k_est"];

fn scheme_name(s: MatchScheme) -> &'static str {
    match s {
        MatchScheme::Hungarian => "hungarian",
        MatchScheme::Injected => "injected",
        MatchScheme::Spectral => "spectral",
    }
}

fn match_pair(cfg: &JobConfig, store: &Store, (dataset, src, tgt): &(String, String, String)) -> Result<Vec<Matching>, String> {
    let split = &cfg.train_split;
    let pair = pair_by_id(&*store.cloud(src, dataset, split)?, &*store.cloud(tgt, dataset, split)?, cfg.pair_policy).map_err(|e| e.to_string())?;
    let (kappa, rho) = (cfg.matching.kappa, cfg.matching.rho);
    let seed = |side: &str| job_seed(cfg.seed, &[dataset, src, tgt, "match", side]);
    let pa = prototypical_anchors(pair.a().matrix(), kappa, rho, seed("a"), None).map_err(|e| format!("source clustering: {e}"))?;
    let pb = prototypical_anchors(pair.b().matrix(), kappa, rho, seed("b"), None).map_err(|e| format!("target clustering: {e}"))?;
    let j = jaccard_matrix(&pa.assignment, &pb.assignment).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for &scheme in &cfg.matching.schemes {
        let m = match scheme {
            MatchScheme::Hungarian => hungarian_match(&j),
            MatchScheme::Injected => Ok(injected_match(&pa.assignment)),
            MatchScheme::Spectral => spectral_match(&j, seed("spectral")),
        };
        out.push(m.map_err(|e| format!("{}: {e}", scheme_name(scheme)))?);
    }
    Ok(out)
}

pub fn run(cfg: &JobConfig) -> Outcome {
    let mut out = Outcome::default();
    let store = Store::new(cfg);
    let jobs = pair_jobs(cfg, &cfg.matching.pairs);
    out.jobs_total = jobs.len();
    let results = run_jobs(&thread_pool(cfg), jobs, |key| match_pair(cfg, &store, key));
    let mut table = Table::new("match", HEADER.to_vec(), 4);
    for ((dataset, src, tgt), r) in results {
        match r {
            Ok(matchings) => {
                for m in matchings {
                    table.push(vec![
                        Cell::text(&dataset),
                        Cell::text(&src),
                        Cell::text(&tgt),
                        Cell::text(scheme_name(m.scheme)),
                        Cell::Int(cfg.matching.kappa as i64),
                        Cell::opt_float(m.mean_similarity),
                        Cell::Float(m.total_similarity()),
                        Cell::Int(m.pairs.len() as i64),
                        Cell::Int(m.groups.len().max(m.sample_groups.len()) as i64),
                        m.k_est.map_or(Cell::Missing, |k| Cell::Int(k as i64)),
                    ]);
                }
            }
            Err(e) => out.fail(format!("{dataset}/{src}->{tgt}"), e),
        }
    }
    table.sort();
    out.tables.push(table);
    out
}
