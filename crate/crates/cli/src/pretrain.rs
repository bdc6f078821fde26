//! Encoder pretraining from an expert pool.

use crate::csvio::{self, CsvLog};
use crate::{HarnessError, Result};
use deg_core::env::TaskSpec;
use deg_core::guidance::{ExpertPool, ProviderConfig};
use deg_core::latent::{pretrain_views, save_encoder, ContrastiveTrainConfig, PretrainOutcome};
use std::path::{Path, PathBuf};

/// Base seed of the pretraining pool's expert resets.
pub const POOL_BASE_SEED: u64 = 1;

/// Loads the task's expert clips from `pool_dir`, or generates them when
/// `generate` is set (saving them into `pool_dir` if one was given).
pub fn expert_pool(spec: &TaskSpec, provider: &ProviderConfig, pool_dir: Option<&Path>, generate: bool) -> Result<ExpertPool> {
    if let Some(dir) = pool_dir {
        if dir.is_dir() {
            if let Ok(pool) = ExpertPool::load_dir(dir, spec.kind) {
                return Ok(pool);
            }
        }
    }
    if !generate {
        let where_ = pool_dir.map(|d| d.display().to_string()).unwrap_or_else(|| "(no --pool given)".into());
        return Err(HarnessError::Runtime(format!(
            "missing expert clips for {} in {where_}; pass --generate to create them",
            spec.kind
        )));
    }
    let pool = ExpertPool::generate(spec, provider.pool_clips, provider.clip_len, POOL_BASE_SEED)?;
    if let Some(dir) = pool_dir {
        pool.save_dir(dir)?;
    }
    Ok(pool)
}

/// Trains on the pool's clean frames paired with their corrupted copies.
pub fn pretrain_on_pool(
    pool: &ExpertPool,
    provider: &ProviderConfig,
    config: &ContrastiveTrainConfig,
) -> Result<PretrainOutcome<f32>> {
    let views = pool.training_views(&provider.noise);
    Ok(pretrain_views::<f32>(&views, config)?)
}

pub struct PretrainArtifacts {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub outcome: PretrainOutcome<f32>,
}

/// Writes `encoder.dege` and `pretrain_loss.csv` into `out`.
pub fn run(pool: &ExpertPool, provider: &ProviderConfig, config: &ContrastiveTrainConfig, out: &Path) -> Result<PretrainArtifacts> {
    std::fs::create_dir_all(out)?;
    let outcome = pretrain_on_pool(pool, provider, config)?;
    let checkpoint = out.join("encoder.dege");
    save_encoder(&outcome.state.online, &checkpoint)?;
    let loss_csv = out.join("pretrain_loss.csv");
    let mut log = CsvLog::create(&loss_csv, &csvio::PRETRAIN_LOSS)?;
    for (i, l) in outcome.losses.iter().enumerate() {
        log.row([(i + 1).to_string(), l.to_string()])?;
    }
    log.sync()?;
    Ok(PretrainArtifacts { checkpoint, loss_csv, outcome })
}
