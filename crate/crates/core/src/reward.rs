//! Dual-granularity reward engine.
//!
//! Guidance frames are indexed `1..=l`; index `i` is `clip.frames[i - 1]`.

use crate::env::TaskKind;
use crate::error::{DegError, Result};
use crate::frame::Frame;
use crate::guidance::GuidanceClip;
use crate::latent::{EncoderParams, LatentVector};
use crate::scalar::{ops, Scalar};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub tau_coarse: f64,
    pub tau_fine: f64,
    pub step_s: usize,
    pub sparse_enabled: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { alpha: 100.0, beta: 1.0, theta: 10.0, tau_coarse: 0.85, tau_fine: 0.98, step_s: 4, sparse_enabled: false }
    }
}

impl RewardConfig {
    /// Defaults with per-task similarity thresholds.
    pub fn for_task(kind: TaskKind) -> Self {
        let (tau_coarse, tau_fine) = match kind {
            TaskKind::Reach => (0.65, 0.93),
            TaskKind::Push => (0.6, 0.93),
            TaskKind::PickLite => (0.55, 0.93),
        };
        Self { tau_coarse, tau_fine, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("alpha", self.alpha), ("beta", self.beta), ("theta", self.theta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DegError::config(field, "must be finite and non-negative"));
            }
        }
        if !(self.tau_coarse > 0.0 && self.tau_coarse < 1.0) {
            return Err(DegError::config("tau_coarse", "must lie in (0, 1)"));
        }
        if !(self.tau_fine > self.tau_coarse && self.tau_fine <= 1.0) {
            return Err(DegError::config("tau_fine", "must satisfy tau_coarse < tau_fine <= 1"));
        }
        if self.step_s == 0 {
            return Err(DegError::config("step_s", "must be at least 1"));
        }
        Ok(())
    }
}

/// Per-step reward decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<T> {
    pub coarse: T,
    pub fine: T,
    pub sparse: u8,
    pub combined: T,
    pub i_target: usize,
    pub i_reached: usize,
    pub best_index: usize,
    pub best_sim: T,
}

/// `⟨a,b⟩ / (‖a‖·‖b‖)`; a zero vector is an error.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(DegError::shape(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(DegError::NonFinite("latent"));
    }
    let (na, nb) = (ops::norm(a), ops::norm(b));
    if na == T::zero() || nb == T::zero() {
        return Err(DegError::ZeroNorm);
    }
    Ok((ops::dot(a, b) / (na * nb)).max(-T::one()).min(T::one()))
}

fn unit<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DegError::NonFinite("latent"));
    }
    let n = ops::norm(v);
    if n == T::zero() {
        return Err(DegError::ZeroNorm);
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

/// Unit-normalized guidance latents, `l × D` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceEmbeddings<T> {
    dim: usize,
    rows: Vec<T>,
}

impl<T: Scalar> GuidanceEmbeddings<T> {
    /// Needs at least two latents of equal, non-zero dimension.
    pub fn from_latents(latents: &[Vec<T>]) -> Result<Self> {
        if latents.len() < 2 {
            return Err(DegError::InvalidArgument(format!("guidance needs at least 2 frames, got {}", latents.len())));
        }
        let dim = latents[0].len();
        if dim == 0 {
            return Err(DegError::InvalidArgument("empty latent".into()));
        }
        let mut rows = Vec::with_capacity(dim * latents.len());
        for z in latents {
            if z.len() != dim {
                return Err(DegError::shape(dim, z.len()));
            }
            rows.extend(unit(z)?);
        }
        Ok(Self { dim, rows })
    }

    /// Encodes every clip frame once.
    pub fn encode<E: Scalar>(clip: &GuidanceClip, encoder: &EncoderParams<E>) -> Result<Self> {
        if clip.len() < 2 {
            return Err(DegError::InvalidArgument(format!("guidance needs at least 2 frames, got {}", clip.len())));
        }
        let refs: Vec<&Frame> = clip.frames.iter().collect();
        let flat = encoder.encode_batch(&refs)?;
        let latents: Vec<Vec<T>> =
            flat.chunks_exact(encoder.feature_dim()).map(|z| z.iter().map(|v| T::lit(v.as_f64())).collect()).collect();
        Self::from_latents(&latents)
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unit latent of guidance index `i` (1-based).
    pub fn get(&self, i: usize) -> &[T] {
        &self.rows[(i - 1) * self.dim..i * self.dim]
    }

    /// Cosine similarity of `obs` against every guidance frame; entry `k` is
    /// index `k + 1`.
    pub fn similarities(&self, obs: &[T]) -> Result<Vec<T>> {
        if obs.len() != self.dim {
            return Err(DegError::shape(self.dim, obs.len()));
        }
        let u = unit(obs)?;
        let l = self.len();
        let mut sims = vec![T::zero(); l];
        ops::matmul(&self.rows, &u, l, self.dim, 1, &mut sims, false);
        sims.iter_mut().for_each(|s| *s = s.max(-T::one()).min(T::one()));
        Ok(sims)
    }
}

/// Bookkeeping for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRewardState<T> {
    pub guidance: GuidanceEmbeddings<T>,
    pub i_target: usize,
    pub i_reached: usize,
    pub prev_sim: T,
    pub step_count: usize,
}

impl<T: Scalar> EpisodeRewardState<T> {
    /// Starts an episode from cached embeddings and the initial observation's
    /// latent.
    pub fn begin(guidance: GuidanceEmbeddings<T>, initial: &[T]) -> Result<Self> {
        let sims = guidance.similarities(initial)?;
        Ok(Self { prev_sim: sims[0], guidance, i_target: 1, i_reached: 0, step_count: 0 })
    }

    pub fn len(&self) -> usize {
        self.guidance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.guidance.is_empty()
    }
}

/// Encodes the clip and the initial observation and starts an episode.
pub fn begin_episode<T: Scalar, E: Scalar>(
    clip: &GuidanceClip,
    encoder: &EncoderParams<E>,
    initial_obs: &Frame,
    config: &RewardConfig,
) -> Result<EpisodeRewardState<T>> {
    config.validate()?;
    let guidance = GuidanceEmbeddings::encode(clip, encoder)?;
    let z0: LatentVector<T> = encoder.encode(initial_obs)?.cast();
    EpisodeRewardState::begin(guidance, &z0.0)
}

/// One reward evaluation. Order: coarse gain against the current target,
/// target advance (rebaselining `prev_sim` against the new target), fine
/// match against the frontier, then the weighted sum.
pub fn step_reward<T: Scalar>(
    state: &mut EpisodeRewardState<T>,
    obs: &[T],
    sparse: bool,
    config: &RewardConfig,
) -> Result<RewardBreakdown<T>> {
    let sims = state.guidance.similarities(obs)?;
    let l = sims.len();

    let s_cur = sims[state.i_target - 1];
    let coarse = s_cur - state.prev_sim;
    if s_cur > T::lit(config.tau_coarse) {
        state.i_target = (state.i_target + config.step_s).min(l);
        state.prev_sim = sims[state.i_target - 1];
    } else {
        state.prev_sim = s_cur;
    }

    let mut best = 0;
    for (k, &s) in sims.iter().enumerate().skip(1) {
        if s > sims[best] {
            best = k;
        }
    }
    let best_index = best + 1;
    let best_sim = sims[best];
    let mut fine = T::zero();
    if best_sim > T::lit(config.tau_fine) && best_index > state.i_reached {
        fine = T::lit(best_index as f64);
        state.i_reached = best_index;
    }

    let sparse_u8 = u8::from(sparse);
    let mut combined = T::lit(config.alpha) * coarse + T::lit(config.beta) * fine;
    if config.sparse_enabled {
        combined += T::lit(config.theta) * T::lit(sparse_u8 as f64);
    }
    state.step_count += 1;
    Ok(RewardBreakdown {
        coarse,
        fine,
        sparse: sparse_u8,
        combined,
        i_target: state.i_target,
        i_reached: state.i_reached,
        best_index,
        best_sim,
    })
}

/// Deliberately naive re-implementation used to cross-check [`step_reward`].
#[cfg(any(test, feature = "oracle"))]
pub mod oracle {
    use super::{RewardBreakdown, RewardConfig};
    use crate::error::{DegError, Result};
    use crate::frame::Frame;
    use crate::guidance::GuidanceClip;
    use crate::latent::EncoderParams;
    use crate::scalar::Scalar;

    fn cos(a: &[f64], b: &[f64]) -> Result<f64> {
        let mut ab = 0.0;
        let mut aa = 0.0;
        let mut bb = 0.0;
        for k in 0..a.len() {
            ab += a[k] * b[k];
            aa += a[k] * a[k];
            bb += b[k] * b[k];
        }
        if aa == 0.0 || bb == 0.0 {
            return Err(DegError::ZeroNorm);
        }
        let c = ab / (aa.sqrt() * bb.sqrt());
        Ok(if c > 1.0 {
            1.0
        } else if c < -1.0 {
            -1.0
        } else {
            c
        })
    }

    /// Replays an episode from raw latents. `guidance[0]` is index 1.
    pub fn oracle_episode_latents(
        guidance: &[Vec<f64>],
        initial: &[f64],
        observations: &[Vec<f64>],
        sparse: &[bool],
        config: &RewardConfig,
    ) -> Result<Vec<RewardBreakdown<f64>>> {
        if observations.len() != sparse.len() {
            return Err(DegError::InvalidArgument("observation and sparse sequences differ in length".into()));
        }
        let l = guidance.len();
        let mut target: usize = 1;
        let mut reached: usize = 0;
        let mut previous = cos(initial, &guidance[0])?;
        let mut out = Vec::new();
        for t in 0..observations.len() {
            let o = observations[t].clone();
            let mut all = Vec::new();
            for g in guidance {
                all.push(cos(&o, g)?);
            }
            let now = cos(&o, &guidance[target - 1])?;
            let coarse = now - previous;
            if now > config.tau_coarse {
                target += config.step_s;
                if target > l {
                    target = l;
                }
                previous = cos(&o, &guidance[target - 1])?;
            } else {
                previous = now;
            }
            let mut best_index = 1;
            let mut best_sim = all[0];
            let mut i = 2;
            while i <= l {
                if all[i - 1] > best_sim {
                    best_sim = all[i - 1];
                    best_index = i;
                }
                i += 1;
            }
            let fine = if best_sim > config.tau_fine && best_index > reached { best_index as f64 } else { 0.0 };
            if fine > 0.0 {
                reached = best_index;
            }
            let s = if sparse[t] { 1.0 } else { 0.0 };
            let combined =
                config.alpha * coarse + config.beta * fine + if config.sparse_enabled { config.theta * s } else { 0.0 };
            out.push(RewardBreakdown {
                coarse,
                fine,
                sparse: s as u8,
                combined,
                i_target: target,
                i_reached: reached,
                best_index,
                best_sim,
            });
        }
        Ok(out)
    }

    /// Frame-level oracle: encodes every frame on its own, then replays.
    pub fn oracle_episode<E: Scalar>(
        clip: &GuidanceClip,
        encoder: &EncoderParams<E>,
        initial_obs: &Frame,
        observations: &[Frame],
        sparse: &[bool],
        config: &RewardConfig,
    ) -> Result<Vec<RewardBreakdown<f64>>> {
        let enc = |f: &Frame| -> Result<Vec<f64>> { Ok(encoder.encode(f)?.0.iter().map(|v| v.as_f64()).collect()) };
        let mut guidance = Vec::new();
        for f in &clip.frames {
            guidance.push(enc(f)?);
        }
        let mut obs = Vec::new();
        for f in observations {
            obs.push(enc(f)?);
        }
        oracle_episode_latents(&guidance, &enc(initial_obs)?, &obs, sparse, config)
    }
}
