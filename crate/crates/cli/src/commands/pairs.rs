//! Matched control/treatment pairs for each configured condition.

use latent_core::pairing::build_pairs;

use super::{load_registry, Outcome};
use crate::config::JobConfig;
use crate::output::{Cell, Table};

pub fn run(cfg: &JobConfig) -> Outcome {
    let mut out = Outcome::default();
    let mut table = Table::new("pairs", vec!["condition", "control", "treatment", "family"], 3);
    let reg = match load_registry(cfg) {
        Ok(r) => r,
        Err(e) => {
            out.fail("registry", e);
            out.tables.push(table);
            return out;
        }
    };
    out.jobs_total = cfg.regress.conditions.len();
    for &c in &cfg.regress.conditions {
        match build_pairs(&reg, &cfg.regress.spec_for(c)) {
            Ok(pairs) => {
                for p in pairs {
                    table.push(vec![Cell::text(c.as_str()), Cell::text(p.control), Cell::text(p.treatment), Cell::text(p.family)]);
                }
            }
            Err(e) => out.fail(c.as_str(), e),
        }
    }
    table.sort();
    out.tables.push(table);
    out
}
