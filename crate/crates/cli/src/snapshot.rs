//! Resume snapshots for training runs.
//!
//! A snapshot directory holds `learner.bin` (policy plus optimizer state),
//! `replay.bin` (every stored transition, oldest first) and `state.json`
//! (loop counters, the in-flight episode, RNG position, reward scaler and the
//! CSV byte lengths at the moment of the snapshot).

use crate::{HarnessError, Result};
use deg_core::agent::{ReplayBuffer, RewardScaler, Transition, UpdateStats};
use deg_core::env::WorldState;
use deg_core::io::{ByteReader, ByteWriter};
use serde::{Deserialize, Serialize};
use std::path::Path;

const REPLAY_MAGIC: &[u8; 4] = b"DEGR";
const REPLAY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeProgress {
    pub index: u64,
    pub state: WorldState,
    pub ret: f64,
    pub coarse: f64,
    pub fine: f64,
    pub sparse_steps: usize,
    pub length: usize,
    /// `(i_target, i_reached, prev_sim, step_count)` of the reward engine.
    pub reward: Option<(usize, usize, f64, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotState {
    pub step: usize,
    pub episode: EpisodeProgress,
    pub rng_seed: u64,
    /// ChaCha word position, as a decimal string (it is a u128).
    pub rng_word_pos: String,
    pub scaler: RewardScaler,
    pub last_stats: Option<UpdateStats>,
    pub last_actor_loss: Option<f64>,
    pub pending_returns: Vec<f64>,
    pub curve: Vec<(usize, f64)>,
    pub training_csv_len: u64,
    pub episodes_csv_len: u64,
}

pub fn encode_replay(buf: &ReplayBuffer<f32>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.magic(REPLAY_MAGIC).u32(REPLAY_VERSION);
    w.u64(buf.capacity() as u64).u32(buf.obs_dim() as u32).u32(buf.act_dim() as u32).u64(buf.len() as u64);
    for t in buf.iter() {
        w.f32s(t.obs.iter().copied());
        w.f32s(t.action.iter().copied());
        w.f64(t.reward);
        w.f32s(t.next_obs.iter().copied());
        w.u32(u32::from(t.done) | (u32::from(t.last) << 1));
    }
    w.into_bytes()
}

pub fn decode_replay(bytes: &[u8]) -> Result<ReplayBuffer<f32>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(REPLAY_MAGIC)?;
    let version = r.u32("version")?;
    if version != REPLAY_VERSION {
        return Err(r.error(format!("unsupported replay version {version}")).into());
    }
    let capacity = r.u64("capacity")? as usize;
    let obs_dim = r.u32("obs_dim")? as usize;
    let act_dim = r.u32("act_dim")? as usize;
    let len = r.u64("len")? as usize;
    if capacity == 0 || len > capacity {
        return Err(r.error("bad replay header").into());
    }
    let mut buf = ReplayBuffer::new(capacity, obs_dim, act_dim);
    for _ in 0..len {
        let obs = r.f32s(obs_dim, "obs")?;
        let action = r.f32s(act_dim, "action")?;
        let reward = r.f64("reward")?;
        let next_obs = r.f32s(obs_dim, "next_obs")?;
        let flags = r.u32("flags")?;
        buf.push(Transition { obs, action, reward, next_obs, done: flags & 1 != 0, last: flags & 2 != 0 })?;
    }
    r.finish()?;
    Ok(buf)
}

/// Writes the three snapshot files into `dir`, replacing any previous
/// snapshot only once the new one is complete.
pub fn write(dir: &Path, learner: &[u8], replay: &[u8], state: &SnapshotState) -> Result<()> {
    let tmp = dir.with_extension("tmp");
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    std::fs::create_dir_all(&tmp)?;
    std::fs::write(tmp.join("learner.bin"), learner)?;
    std::fs::write(tmp.join("replay.bin"), replay)?;
    let json = serde_json::to_vec_pretty(state).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    std::fs::write(tmp.join("state.json"), json)?;
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::rename(&tmp, dir)?;
    Ok(())
}

pub struct Loaded {
    pub learner: Vec<u8>,
    pub replay: Vec<u8>,
    pub state: SnapshotState,
}

pub fn read(dir: &Path) -> Result<Loaded> {
    let state: SnapshotState = serde_json::from_slice(&std::fs::read(dir.join("state.json"))?)
        .map_err(|e| HarnessError::Runtime(format!("{}: {e}", dir.display())))?;
    Ok(Loaded { learner: std::fs::read(dir.join("learner.bin"))?, replay: std::fs::read(dir.join("replay.bin"))?, state })
}
