//! Command-line entry point: run, validate, or print scenarios.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use deflect_opt::config::ScenarioConfig;
use deflect_opt::presets::{preset, PRESETS};
use deflect_opt::runner::run_scenario;

#[derive(Parser)]
#[command(
    name = "deflect-opt",
    version,
    about = "Power allocation for distributed detection over noisy reporting channels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file and write CSV tables.
    Run {
        /// Scenario config file.
        config: PathBuf,
        /// Override the seed from the [sim] section.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the CSV files.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker thread count (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and validate a config file without running it.
    Validate {
        /// Scenario config file.
        config: PathBuf,
    },
    /// Print a built-in scenario config, or list all of them.
    Preset {
        /// Preset name; omit to list the available presets.
        name: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out,
            threads,
        } => {
            let cfg = load(&config)?;
            let files = match threads {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .context("building worker thread pool")?
                    .install(|| run_scenario(&cfg, &out, seed)),
                None => run_scenario(&cfg, &out, seed),
            }?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!(
                "ok: {} sweep, {} sensors, {} output file(s)",
                cfg.sweep.kind.label(),
                cfg.sensors.len(),
                cfg.channels.len() * cfg.rho.len() * cfg.sweep.regimes.len()
            );
            Ok(())
        }
        Command::Preset { name: None } => {
            for (name, desc) in PRESETS {
                println!("{name}: {desc}");
            }
            Ok(())
        }
        Command::Preset { name: Some(n) } => {
            let text = preset(&n).ok_or_else(|| {
                anyhow!(
                    "unknown preset '{n}'; available: {}",
                    PRESETS
                        .iter()
                        .map(|(p, _)| *p)
                        .collect::<Vec<_>>()
                        .join(", ")
                )
            })?;
            print!("{text}");
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    ScenarioConfig::parse(&text).with_context(|| format!("in config {}", path.display()))
}
