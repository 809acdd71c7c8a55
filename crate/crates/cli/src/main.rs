//! `eio`: simulate instances, fit them, and run the Monte-Carlo studies.
//!
//! Exit status is 0 on success (an inapplicable verdict included), 1 on a
//! runtime failure and 2 when the input or config is invalid.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use eio_core::harness::{ExperimentSpec, RateSpec};
use eio_core::{EioError, Result};

use crate::config::{decode, load_object, resolve, EstimateConfig, Overrides, SimulateConfig};

#[derive(Parser)]
#[command(name = "eio", version, about = "Semiparametric estimation with a noisy operator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// JSON config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Confidence parameter of the deviation bounds.
    #[arg(long)]
    x: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            jobs: self.jobs,
            x: self.x,
            replicates: self.replicates,
        }
    }

    /// Overrides for single-threaded commands, where `--jobs` has nothing to do.
    fn sequential_overrides(&self) -> Overrides {
        Overrides {
            jobs: None,
            ..self.overrides()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw one instance and write Z.csv, A_hat.csv, meta.json and truth.json.
    Simulate(Common),
    /// Fit an instance directory and write fit.json.
    Estimate(Common),
    /// Monte-Carlo check of the expansion bounds; writes verify.json and
    /// verify_replicates.csv.
    Verify(Common),
    /// Risk against N1 with a fitted log-log slope; writes rate.json, rate.csv
    /// and rate.svg.
    RateStudy(Common),
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let mut map = load_object(c.config.as_deref(), SimulateConfig::default_value)?;
            c.sequential_overrides().apply(&mut map, "simulate", &["seed"])?;
            let cfg: SimulateConfig = decode(map, "simulate config")?;
            commands::simulate(&cfg, &c.out)
        }
        Command::Estimate(c) => {
            let Some(path) = c.config.as_deref() else {
                return Err(EioError::Invalid("estimate needs --config naming the instance directory".into()));
            };
            let mut map = load_object(Some(path), || unreachable!())?;
            c.sequential_overrides().apply(&mut map, "estimate", &[])?;
            let cfg: EstimateConfig = decode(map, "estimate config")?;
            let instance = resolve(&cfg.instance, Some(path));
            commands::estimate(&cfg, &instance, &c.out)
        }
        Command::Verify(c) => {
            let mut map = load_object(c.config.as_deref(), config::default_verify_value)?;
            c.overrides().apply(&mut map, "verify", &["seed", "jobs", "x", "replicates"])?;
            let spec: ExperimentSpec = decode(map, "verify config")?;
            commands::verify(&spec, &c.out)
        }
        Command::RateStudy(c) => {
            let mut map = load_object(c.config.as_deref(), config::default_rate_value)?;
            c.overrides().apply(&mut map, "rate-study", &["seed", "jobs", "replicates"])?;
            let spec: RateSpec = decode(map, "rate-study config")?;
            commands::rate_study(&spec, &c.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EIO_LOG", "warn")).init();
    let cli = Cli::parse();
    let started = Instant::now();
    let outcome = run(cli);
    // Timing goes to stderr only so output files stay reproducible.
    eprintln!("eio: finished in {:.2} s", started.elapsed().as_secs_f64());
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eio: error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
