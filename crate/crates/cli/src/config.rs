use deg_core::agent::AgentConfig;
use deg_core::env::{TaskKind, TaskSpec};
use deg_core::error::DegError;
use deg_core::guidance::ProviderConfig;
use deg_core::latent::ContrastiveTrainConfig;
use deg_core::reward::RewardConfig;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    SparseOnly,
    CoarseOnly,
    FineOnly,
    Dual,
    DualPlusSparse,
}

impl RewardMode {
    pub const ALL: [RewardMode; 5] =
        [RewardMode::SparseOnly, RewardMode::CoarseOnly, RewardMode::FineOnly, RewardMode::Dual, RewardMode::DualPlusSparse];

    pub fn name(self) -> &'static str {
        match self {
            RewardMode::SparseOnly => "sparse_only",
            RewardMode::CoarseOnly => "coarse_only",
            RewardMode::FineOnly => "fine_only",
            RewardMode::Dual => "dual",
            RewardMode::DualPlusSparse => "dual_plus_sparse",
        }
    }

    /// Whether episodes need guidance clips and an encoder.
    pub fn uses_guidance(self) -> bool {
        self != RewardMode::SparseOnly
    }

    /// Zeroes the weights the mode switches off and sets the sparse flag.
    pub fn apply(self, base: &RewardConfig) -> RewardConfig {
        let mut c = base.clone();
        match self {
            RewardMode::SparseOnly => {
                c.alpha = 0.0;
                c.beta = 0.0;
                c.sparse_enabled = true;
            }
            RewardMode::CoarseOnly => {
                c.beta = 0.0;
                c.sparse_enabled = false;
            }
            RewardMode::FineOnly => {
                c.alpha = 0.0;
                c.sparse_enabled = false;
            }
            RewardMode::Dual => c.sparse_enabled = false,
            RewardMode::DualPlusSparse => c.sparse_enabled = true,
        }
        c
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardMode {
    type Err = DegError;

    fn from_str(s: &str) -> Result<Self, DegError> {
        let norm = s.replace('-', "_");
        RewardMode::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| DegError::config("reward_mode", format!("unknown reward mode `{s}`")))
    }
}

/// Everything a training run needs. Sections left out of the file take their
/// defaults; `[env]` and `[reward]` default to the task's preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub reward_mode: RewardMode,
    pub seeds: Vec<u64>,
    pub total_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Resume snapshots are written every this many steps (0 disables them).
    pub snapshot_every: usize,
    pub out_dir: PathBuf,
    /// Trained "DEGE" encoder; required by every mode except `sparse_only`.
    pub encoder_path: Option<PathBuf>,
    pub env: Option<TaskSpec>,
    pub guidance: ProviderConfig,
    pub reward: Option<RewardConfig>,
    pub agent: AgentConfig,
    pub encoder: ContrastiveTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Push,
            reward_mode: RewardMode::Dual,
            seeds: vec![0],
            total_steps: 150_000,
            eval_every: 2000,
            eval_episodes: 20,
            snapshot_every: 10_000,
            out_dir: PathBuf::from("runs"),
            encoder_path: None,
            env: None,
            guidance: ProviderConfig::default(),
            reward: None,
            agent: AgentConfig::default(),
            encoder: ContrastiveTrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn task_spec(&self) -> TaskSpec {
        self.env.clone().unwrap_or_else(|| TaskSpec::new(self.task))
    }

    /// Reward weights after the mode has been applied.
    pub fn reward_config(&self) -> RewardConfig {
        let base = self.reward.clone().unwrap_or_else(|| RewardConfig::for_task(self.task));
        self.reward_mode.apply(&base)
    }

    /// Fills every optional section so the written file pins the run exactly.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.env = Some(self.task_spec());
        c.reward = Some(self.reward_config());
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Checks every invariant before any compute starts.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.validate_settings()?;
        if self.reward_mode.uses_guidance() && self.encoder_path.is_none() {
            return Err(HarnessError::Config(format!("encoder_path: reward mode {} needs a trained encoder", self.reward_mode)));
        }
        Ok(())
    }

    /// [`RunConfig::validate`] without requiring an encoder checkpoint, for
    /// commands that do not train.
    pub fn validate_settings(&self) -> Result<(), HarnessError> {
        let cfg = |e: DegError| HarnessError::Config(e.to_string());
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds: need at least one seed".into()));
        }
        if self.total_steps == 0 {
            return Err(HarnessError::Config("total_steps: must be positive".into()));
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(HarnessError::Config("eval_every/eval_episodes: must be positive".into()));
        }
        let spec = self.task_spec();
        if spec.kind != self.task {
            return Err(HarnessError::Config(format!("env.kind `{}` disagrees with task `{}`", spec.kind, self.task)));
        }
        spec.validate().map_err(cfg)?;
        self.guidance.validate().map_err(cfg)?;
        self.agent.validate().map_err(cfg)?;
        self.encoder.validate().map_err(cfg)?;
        let reward = self.reward_config();
        if self.reward_mode.uses_guidance() {
            reward.validate().map_err(cfg)?;
        } else if !(reward.theta > 0.0) {
            return Err(HarnessError::Config("reward.theta: sparse_only needs a positive sparse weight".into()));
        }
        Ok(())
    }
}
