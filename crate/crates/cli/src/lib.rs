//! Experiment runner behind the `maxent-hjb` binary.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::time::Instant;

use anyhow::{Context, Result};

pub use artifacts::Manifest;
pub use config::{parse_config, Command, ExperimentConfig};

/// Runs one experiment; on failure nothing is left in the output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<Manifest> {
    let start = Instant::now();
    let mut staging = artifacts::Staging::new(&cfg.out)?;
    let outcome = commands::dispatch(cfg, &mut staging)
        .and_then(|summary| staging.write_json("summary.json", &summary));
    match outcome {
        Ok(()) => staging
            .commit(cfg.echo(), start.elapsed().as_secs_f64())
            .context("stage `write artifacts` failed"),
        Err(e) => {
            staging.abandon();
            Err(e)
        }
    }
}

/// Applies `MAXENT_HJB_THREADS` to the global thread pool.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MAXENT_HJB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .with_context(|| format!("MAXENT_HJB_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")
}
