//! Library side of the `latent` command-line tool: configuration, the
//! per-command job runners, and result/manifest writers.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use config::{ConfigError, JobConfig};
use output::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Ingest,
    AlignSweep,
    Eval,
    Match,
    Metrics,
    GraphSig,
    Pairs,
    Regress,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::AlignSweep => "align-sweep",
            Command::Eval => "eval",
            Command::Match => "match",
            Command::Metrics => "metrics",
            Command::GraphSig => "graph-sig",
            Command::Pairs => "pairs",
            Command::Regress => "regress",
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_JOB_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write to {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Write { .. } => EXIT_JOB_FAILED,
        }
    }
}

/// What a run wrote.
#[derive(Debug)]
pub struct Summary {
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub jobs_total: usize,
    pub jobs_failed: usize,
}

impl Summary {
    pub fn exit_code(&self) -> i32 {
        if self.jobs_failed == 0 {
            EXIT_OK
        } else {
            EXIT_JOB_FAILED
        }
    }
}

/// Validate `cfg`, run `cmd`, write its tables and manifest into `cfg.out`.
pub fn execute(cmd: Command, cfg: &JobConfig) -> Result<Summary, RunError> {
    cfg.validate()?;
    let outcome = match cmd {
        Command::Ingest => commands::ingest::run(cfg),
        Command::AlignSweep => commands::align_sweep::run(cfg),
        Command::Eval => commands::eval::run(cfg),
        Command::Match => commands::matching::run(cfg),
        Command::Metrics => commands::metrics::run(cfg),
        Command::GraphSig => commands::graph_sig::run(cfg),
        Command::Pairs => commands::pairs::run(cfg),
        Command::Regress => commands::regress::run(cfg),
    };
    let io = |path: &PathBuf| {
        let path = path.clone();
        move |source| RunError::Write { path, source }
    };
    std::fs::create_dir_all(&cfg.out).map_err(io(&cfg.out))?;
    let mut outputs = Vec::new();
    for t in &outcome.tables {
        outputs.push(t.write(&cfg.out, cfg.format).map_err(io(&cfg.out.join(t.file_name(cfg.format))))?);
    }
    let manifest = Manifest {
        command: cmd.as_str().to_string(),
        tool_version: env!("CARGO_PKG_VERSION"),
        alignment_format_version: latent_core::align::FORMAT_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        outputs: outcome.tables.iter().map(|t| t.file_name(cfg.format)).collect(),
        jobs_total: outcome.jobs_total,
        jobs_failed: outcome.failures.len(),
        failures: outcome.failures,
    };
    let manifest_path = manifest.write(&cfg.out).map_err(io(&cfg.out))?;
    Ok(Summary { outputs, manifest: manifest_path, jobs_total: manifest.jobs_total, jobs_failed: manifest.jobs_failed })
}
