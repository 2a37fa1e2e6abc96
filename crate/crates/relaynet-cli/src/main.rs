//! `relaylab`: experiment orchestration for the relay-network toolkit.
//!
//! Exit codes: 0 on success, 2 on configuration/validation errors, 3 on
//! numerical failures.

mod config;
mod experiment;
mod model;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use experiment::OutDir;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "relaylab", about = "Relay-network simulation and rate-function lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory from the config file.
    #[arg(long, global = true)]
    out: Option<String>,

    /// Worker threads for replica fan-out (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation per configured intensity and dump traces.
    Simulate,
    /// Solve the limiting integral equation (scalar and spatial).
    Fluid,
    /// Evaluate the rate-function dynamic program and the event rate.
    Rate,
    /// Full study: probabilities per intensity, slope fit, comparisons.
    LdpStudy,
    /// Run the lemma inequality campaigns.
    CheckLemmas,
}

fn run(cli: Cli) -> Result<(), (u8, anyhow::Error)> {
    let path = cli
        .config
        .ok_or_else(|| (2, anyhow::anyhow!("--config is required")))?;
    let mut cfg = ExperimentConfig::load(&path).map_err(|e| (2, anyhow::anyhow!("{e}")))?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output = out;
    }
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| (2, anyhow::anyhow!("thread pool: {e}")))?;
    }
    let base_dir = path.parent().unwrap_or(std::path::Path::new(".")).to_path_buf();
    let cfg_bytes = std::fs::read(&path).map_err(|e| (2, anyhow::anyhow!("{e}")))?;

    let model = model::build(&cfg, &base_dir).map_err(|e| (2, e))?;
    let out = OutDir::create(&cfg.output).map_err(|e| (2, e))?;

    let numeric = |e: anyhow::Error| (3u8, e);
    match cli.command {
        Command::Simulate => experiment::cmd_simulate(&cfg, &model, &out).map_err(numeric),
        Command::Fluid => experiment::cmd_fluid(&cfg, &model, &out).map_err(numeric),
        Command::Rate => experiment::cmd_rate(&cfg, &model, &out).map_err(numeric),
        Command::LdpStudy => {
            experiment::cmd_ldp_study(&cfg, &model, &cfg_bytes, &out).map_err(numeric)
        }
        Command::CheckLemmas => experiment::cmd_check_lemmas(&cfg, &out).map_err(numeric),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
