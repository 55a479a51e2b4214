//! Configuration-driven experiment harness.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::Path;
use std::time::Instant;

use config::ExperimentConfig;
use output::{ExperimentOutput, RunManifest};

/// Harness failure outside a replicate.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Library(#[from] silt_core::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

/// Runs an experiment on a dedicated pool of `cfg.threads` workers (0: all cores).
pub fn execute(cfg: &ExperimentConfig) -> Result<(RunManifest, ExperimentOutput), RunError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build()?;
    let threads = pool.current_num_threads();
    let start = Instant::now();
    let out = pool.install(|| experiments::run_experiment(cfg))?;
    let manifest = RunManifest {
        experiment: cfg.experiment,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        threads,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        summary: out.summary.clone(),
        assertions: out.assertions.clone(),
        failed_replicates: out.failed_replicates.clone(),
        notes: out.notes.clone(),
        all_pass: out.all_pass(),
    };
    Ok((manifest, out))
}

/// [`execute`] and write `results.csv`, `summary.json`, `manifest.json` to `cfg.out_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunManifest, RunError> {
    let (manifest, out) = execute(cfg)?;
    output::write_outputs(Path::new(&cfg.out_dir), &manifest, &out)?;
    Ok(manifest)
}
