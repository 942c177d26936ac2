use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};

use pfstab::config::RunConfig;
use pfstab::pipeline::{self, Stage};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Build,
    Solve,
    Extract,
    Certify,
    Verify,
    Report,
    /// Every stage in order.
    All,
}

/// Synthesizes and verifies stabilizing feedback for stochastic maps from
/// transfer-operator discretizations.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for sampling and verification (overrides `seeds`).
    #[arg(long)]
    seed: Option<u64>,
    /// Decay parameter (overrides `lp.gamma`).
    #[arg(long)]
    gamma: Option<f64>,
    /// Worker threads.
    #[arg(long, env = "PFSTAB_THREADS")]
    threads: Option<usize>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = cli.out {
        cfg.output.dir = dir;
    }
    if let Some(seed) = cli.seed {
        cfg.seeds.sampling = seed;
        cfg.seeds.verify = seed;
    }
    if let Some(g) = cli.gamma {
        cfg.lp.gamma = g;
    }
    cfg.validate()?;
    let stage = match cli.command {
        Command::All => {
            let summary = pipeline::run_all(&cfg)?;
            print!("{}", summary.to_text());
            return Ok(());
        }
        Command::Build => Stage::Build,
        Command::Solve => Stage::Solve,
        Command::Extract => Stage::Extract,
        Command::Certify => Stage::Certify,
        Command::Verify => Stage::Verify,
        Command::Report => Stage::Report,
    };
    pipeline::run_stage(&cfg, stage)?;
    if let Stage::Report = stage {
        let s = std::fs::read_to_string(cfg.output.dir.join("summary.txt"))?;
        print!("{s}");
    }
    Ok(())
}
