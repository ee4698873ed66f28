//! Experiment front end: runs a configured scheme over its seeds, writing
//! one metrics file and one checkpoint directory per seed.

mod engine;

pub use engine::{Engine, RunOutput};

use std::path::PathBuf;

use crate::config::ExperimentConfig;
use crate::coordinator::CheckpointStore;
use crate::error::Result;
use crate::metrics;

/// Where one seed's outputs landed.
#[derive(Debug)]
pub struct RunArtifacts {
    pub seed: u64,
    pub metrics_path: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output: RunOutput,
}

/// File name for one run's metrics.
pub fn metrics_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out_dir
        .join(format!("metrics_{}_seed{}.csv", cfg.scheme.label(), seed))
}

pub fn checkpoint_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out_dir
        .join(format!("ckpt_{}_seed{}", cfg.scheme.label(), seed))
}

/// Runs one seed end to end, writing metrics and checkpoints.
pub fn run_single(cfg: &ExperimentConfig, seed: u64) -> Result<RunArtifacts> {
    cfg.validate()?;
    let ckpt_dir = checkpoint_dir(cfg, seed);
    let store = CheckpointStore::create(&ckpt_dir, cfg.digest())?;
    let engine = Engine::new(cfg, seed, Some(store))?;
    let output = engine.run()?;
    let path = metrics_path(cfg, seed);
    metrics::write_file(&path, &output.records)?;
    Ok(RunArtifacts {
        seed,
        metrics_path: path,
        checkpoint_dir: ckpt_dir,
        output,
    })
}

/// Runs every configured seed in order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunArtifacts>> {
    cfg.validate()?;
    let mut artifacts = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        artifacts.push(run_single(cfg, seed)?);
    }
    Ok(artifacts)
}

/// Runs one seed without touching the filesystem; used by tests and
/// comparisons that only need the in-memory outputs.
pub fn run_in_memory(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let engine = Engine::new(cfg, seed, None)?;
    engine.run()
}
