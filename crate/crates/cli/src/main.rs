//! Command-line front end: train, validate, run the exact oracle, draw charts.
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use cmarl_core::io::{emit_report, output_dir, parse_config, run_experiment, validate_experiment};
use cmarl_core::oracle::suite::run_suite;

/// Cells allowed when materializing a game for validation or the oracle.
const CELL_BUDGET: u128 = 20_000_000;

#[derive(Parser)]
#[command(name = "cmarl", version, about = "Networked constrained actor-critic simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write metrics, checkpoints and a manifest
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides output_dir in the config)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory
        #[arg(long)]
        resume: bool,
    },
    /// Check the game, mixing matrix and step sizes without training
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Exact small-instance checks, printed as JSON
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Also write the report here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw SVG charts from a run directory
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, out, resume } => {
            let loaded = parse_config(&config)?;
            let dir = output_dir(&loaded.config, out.as_deref())?;
            let outcome = run_experiment(&loaded, &dir, resume)?;
            log::info!("manifest written to {}", outcome.manifest_path.display());
            let summary = outcome.result.context("training failed")?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Validate { config } => {
            let loaded = parse_config(&config)?;
            let summary = validate_experiment(&loaded.config, CELL_BUDGET)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if !summary.passed() {
                bail!("validation failed");
            }
        }
        Command::Oracle { config, out } => {
            let loaded = parse_config(&config)?;
            let built = loaded.config.build_environment()?;
            let table = match built.tabular(CELL_BUDGET) {
                Ok(t) => Some(t),
                Err(e) => {
                    log::warn!("configured game not analysed: {e}");
                    None
                }
            };
            let report = run_suite(loaded.config.seed, table.as_ref())?;
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(p) = out {
                std::fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?;
            }
            println!("{text}");
            let failures = report.failures();
            if !failures.is_empty() {
                bail!("oracle checks failed:\n  {}", failures.join("\n  "));
            }
        }
        Command::Report { input } => {
            for p in emit_report(&input)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
