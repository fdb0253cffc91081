use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use latent_cli::config::{JobConfig, OutputFormat};
use latent_cli::{execute, Command, EXIT_CONFIG};

/// Latent-space alignment, concept matching, geometry and regression reports.
#[derive(Debug, Parser)]
#[command(name = "latent", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Job configuration (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match JobConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    match execute(cli.command, &cfg) {
        Ok(summary) => {
            for p in &summary.outputs {
                println!("wrote {}", p.display());
            }
            println!("wrote {}", summary.manifest.display());
            if summary.jobs_failed > 0 {
                eprintln!("{} of {} jobs failed; see the manifest", summary.jobs_failed, summary.jobs_total);
            }
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
