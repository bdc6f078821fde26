//! Per-episode guidance clips.
//!
//! A [`GuidanceProvider`] turns an episode's initial observation into an
//! ordered clip of frames showing the task being solved from that start. The
//! reference provider rolls out a scripted controller, renders and subsamples
//! the rollout, and then corrupts it with generation-style noise (pixel noise,
//! jitter, blur) so downstream matching has to cope with imperfect guidance.

use crate::env::{self, dist, Action, Policy, TaskKind, TaskSpec, Vec2, WorldState};
use crate::error::{DegError, Result};
use crate::frame::Frame;
use crate::io::{mix_seed, ByteReader, ByteWriter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClipSource {
    Expert,
    Corrupted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceClip {
    pub task: TaskKind,
    pub frames: Vec<Frame>,
    pub source: ClipSource,
    pub seed: u64,
    /// The rollout was shorter than the clip and its terminal frame repeats.
    pub padded: bool,
}

impl GuidanceClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width, channels)` of every frame.
    pub fn frame_shape(&self) -> Option<(usize, usize, usize)> {
        self.frames.first().map(Frame::shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(DegError::InvalidArgument(format!("guidance clip needs at least 2 frames, has {}", self.frames.len())));
        }
        let shape = self.frames[0].shape();
        if let Some(f) = self.frames.iter().find(|f| f.shape() != shape) {
            return Err(DegError::shape(shape, f.shape()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub gaussian_sigma: f32,
    pub jitter_bound: u32,
    pub blur_probability: f64,
    pub rng_seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { gaussian_sigma: 0.05, jitter_bound: 2, blur_probability: 0.3, rng_seed: 0 }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self { gaussian_sigma: 0.0, jitter_bound: 0, blur_probability: 0.0, rng_seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0) || !self.gaussian_sigma.is_finite() {
            return Err(DegError::config("guidance.noise.gaussian_sigma", "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.blur_probability) {
            return Err(DegError::config("guidance.noise.blur_probability", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn is_null(&self) -> bool {
        self.gaussian_sigma == 0.0 && self.jitter_bound == 0 && self.blur_probability == 0.0
    }
}

/// Parses the `sigma,jitter,blur_prob` command-line form.
impl FromStr for NoiseModel {
    type Err = DegError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || DegError::config("guidance-noise", format!("expected sigma,jitter,blur_prob, got `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let m = NoiseModel {
            gaussian_sigma: parts[0].parse().map_err(|_| bad())?,
            jitter_bound: parts[1].parse().map_err(|_| bad())?,
            blur_probability: parts[2].parse().map_err(|_| bad())?,
            rng_seed: 0,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Proportional waypoint controller that solves every task from in-distribution
/// resets. Stateless, so it doubles as an evaluation policy.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScriptedExpert;

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn add_scaled(a: Vec2, b: Vec2, s: f64) -> Vec2 {
    [a[0] + b[0] * s, a[1] + b[1] * s]
}

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

/// Shortest distance from `p` to segment `ab`.
fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, add_scaled(a, ab, t))
}

fn inside_canvas(p: Vec2) -> bool {
    p.iter().all(|v| (0.02..=0.98).contains(v))
}

/// Largest velocity command the expert issues.
pub const EXPERT_SPEED: f64 = 0.25;

fn steer(from: Vec2, to: Vec2, task: &TaskSpec) -> Vec2 {
    let mut v = [(to[0] - from[0]) / task.step_size, (to[1] - from[1]) / task.step_size];
    let m = v[0].abs().max(v[1].abs());
    if m > EXPERT_SPEED {
        v = [v[0] * EXPERT_SPEED / m, v[1] * EXPERT_SPEED / m];
    }
    v
}

impl ScriptedExpert {
    fn push_target(&self, s: &WorldState, task: &TaskSpec) -> Vec2 {
        let c = task.contact_distance();
        let to_goal = sub(s.goal, s.object);
        let dg = norm(to_goal);
        if dg < 1e-9 {
            return s.effector;
        }
        let d = [to_goal[0] / dg, to_goal[1] / dg];
        let perp = [-d[1], d[0]];
        let rel = sub(s.effector, s.object);
        let along = dot(rel, d);
        let lateral_signed = dot(rel, perp);
        if along <= -(c - 0.03) && lateral_signed.abs() <= 0.02 {
            // in position: aim slightly inside contact so the disk is shoved along d
            return add_scaled(s.object, d, -(c - 0.02));
        }
        let keep_out = c + 0.01;
        let behind = add_scaled(s.object, d, -(c + 0.03));
        if segment_distance(s.object, s.effector, behind) >= keep_out {
            return behind;
        }
        let mut side = if lateral_signed >= 0.0 { 1.0 } else { -1.0 };
        let corner = |side: f64| add_scaled(add_scaled(s.object, perp, side * (c + 0.04)), d, -0.05);
        if !inside_canvas(corner(side)) && inside_canvas(corner(-side)) {
            side = -side;
        }
        let corner = corner(side);
        if segment_distance(s.object, s.effector, corner) >= keep_out {
            return corner;
        }
        // step sideways out of the object's path first
        add_scaled(add_scaled(s.object, perp, side * (c + 0.04)), d, along)
    }
}

impl Policy for ScriptedExpert {
    fn action(&self, s: &WorldState, task: &TaskSpec) -> Action {
        match task.kind {
            TaskKind::Reach => Action { velocity: steer(s.effector, s.goal, task), grip: 0.0 },
            TaskKind::Push => Action { velocity: steer(s.effector, self.push_target(s, task), task), grip: 0.0 },
            TaskKind::PickLite => {
                if s.attached {
                    return Action { velocity: steer(s.effector, s.goal, task), grip: 1.0 };
                }
                let gap = dist(s.effector, s.object) - task.contact_distance();
                if gap <= task.grasp_gap - 0.01 {
                    return Action { velocity: [0.0, 0.0], grip: 1.0 };
                }
                let toward = sub(s.object, s.effector);
                let n = norm(toward).max(1e-12);
                let stop = add_scaled(s.object, [toward[0] / n, toward[1] / n], -(task.contact_distance() + 0.03));
                Action { velocity: steer(s.effector, stop, task), grip: -1.0 }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertRollout {
    /// Includes the start state; the last state satisfies the success predicate.
    pub states: Vec<WorldState>,
    pub actions: Vec<Action>,
}

impl ExpertRollout {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn effector_path(&self) -> Vec<Vec2> {
        self.states.iter().map(|s| s.effector).collect()
    }
}

/// Rolls the scripted expert out from `start` until success.
pub fn scripted_expert(task: &TaskSpec, start: &WorldState) -> Result<ExpertRollout> {
    let expert = ScriptedExpert;
    let mut states = vec![start.clone()];
    let mut actions = Vec::new();
    let mut s = start.clone();
    while !env::success(&s, task) {
        if s.t >= task.horizon {
            return Err(DegError::ExpertFailure(format!(
                "{} not solved within horizon {} from {:?}",
                task.kind, task.horizon, start
            )));
        }
        let a = expert.action(&s, task);
        s = env::transition(&s, &a, task).0;
        actions.push(a);
        states.push(s.clone());
    }
    Ok(ExpertRollout { states, actions })
}

/// Indices of `l` uniformly spaced samples over a rollout of `n` states
/// (first and last always kept), or `None` when the rollout is too short
/// and has to be padded.
pub fn subsample_indices(n: usize, l: usize) -> Option<Vec<usize>> {
    if n < l {
        return None;
    }
    if l == 1 {
        return Some(vec![0]);
    }
    Some((0..l).map(|k| ((k * (n - 1)) as f64 / (l - 1) as f64).round() as usize).collect())
}

/// Renders `l` frames from the rollout.
pub fn render_and_subsample(states: &[WorldState], task: &TaskSpec, l: usize, seed: u64) -> Result<GuidanceClip> {
    if states.is_empty() {
        return Err(DegError::InvalidArgument("empty trajectory".into()));
    }
    if l < 2 {
        return Err(DegError::InvalidArgument(format!("clip length must be at least 2, got {l}")));
    }
    let (indices, padded) = match subsample_indices(states.len(), l) {
        Some(ix) => (ix, false),
        None => ((0..l).map(|k| k.min(states.len() - 1)).collect(), true),
    };
    let frames = indices.iter().map(|&i| env::render(&states[i], task)).collect();
    Ok(GuidanceClip { task: task.kind, frames, source: ClipSource::Expert, seed, padded })
}

/// Applies generation-style noise frame by frame: Gaussian pixel noise, integer
/// jitter with replicate padding, then an occasional 3×3 box blur.
pub fn corrupt(clip: &GuidanceClip, noise: &NoiseModel) -> GuidanceClip {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(noise.rng_seed, clip.seed));
    let frames = clip
        .frames
        .iter()
        .map(|f| {
            let noisy = f.with_gaussian_noise(noise.gaussian_sigma, &mut rng);
            let (dx, dy) = crate::frame::sample_shift(noise.jitter_bound, &mut rng);
            let shifted = noisy.shifted(dx, dy);
            if noise.blur_probability > 0.0 && rng.random_bool(noise.blur_probability) {
                shifted.box_blurred()
            } else {
                shifted
            }
        })
        .collect();
    GuidanceClip { frames, source: ClipSource::Corrupted, ..clip.clone() }
}

/// What a provider gets to see about the episode it is guiding.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeStart<'a> {
    pub seed: u64,
    /// Reset metadata; a learned generator would ignore it and use `frame`.
    pub state: &'a WorldState,
    pub frame: &'a Frame,
}

pub trait GuidanceProvider: Send + Sync {
    fn provide(&self, task: &TaskSpec, start: &EpisodeStart<'_>) -> Result<GuidanceClip>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub clip_len: usize,
    pub noise: NoiseModel,
    /// Zero-noise expert clips per task used for encoder pretraining.
    pub pool_clips: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self { clip_len: 64, noise: NoiseModel::default(), pool_clips: 4 }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_len < 2 {
            return Err(DegError::config("guidance.clip_len", "must be at least 2"));
        }
        if self.pool_clips < 1 {
            return Err(DegError::config("guidance.pool_clips", "need at least one expert clip"));
        }
        self.noise.validate()
    }
}

/// Scripted expert + noise corruption.
#[derive(Clone, Debug, Default)]
pub struct ScriptedProvider {
    pub config: ProviderConfig,
}

impl ScriptedProvider {
    pub fn new(config: ProviderConfig) -> Self {
        Self { config }
    }
}

impl GuidanceProvider for ScriptedProvider {
    fn provide(&self, task: &TaskSpec, start: &EpisodeStart<'_>) -> Result<GuidanceClip> {
        let n = task.frame_size;
        if start.frame.shape() != (n, n, 1) {
            return Err(DegError::shape((n, n, 1), start.frame.shape()));
        }
        let rollout = scripted_expert(task, start.state)?;
        let clip = render_and_subsample(&rollout.states, task, self.config.clip_len, start.seed)?;
        if self.config.noise.is_null() {
            Ok(clip)
        } else {
            Ok(corrupt(&clip, &self.config.noise))
        }
    }
}

/// A handful of clean expert clips per task.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertPool {
    pub task: TaskKind,
    pub clips: Vec<GuidanceClip>,
}

/// Reset seeds for pool clips live far away from training and evaluation seeds.
pub const POOL_SEED_BASE: u64 = 0x00D0_0000_0000;

impl ExpertPool {
    pub fn generate(task: &TaskSpec, count: usize, clip_len: usize, base_seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(DegError::InvalidArgument("expert pool needs at least one clip".into()));
        }
        let clips = (0..count as u64)
            .map(|k| {
                let seed = POOL_SEED_BASE + mix_seed(base_seed, k) % 0x1_0000_0000;
                let start = env::reset_state(task, seed);
                let rollout = scripted_expert(task, &start)?;
                render_and_subsample(&rollout.states, task, clip_len, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { task: task.kind, clips })
    }

    /// Clean clips followed by one corrupted copy of each.
    pub fn with_corrupted_copies(&self, noise: &NoiseModel) -> Vec<GuidanceClip> {
        let mut out = self.clips.clone();
        out.extend(self.clips.iter().map(|c| corrupt(c, noise)));
        out
    }

    /// Encoder pretraining pool: one entry per expert frame holding its clean
    /// rendering and the matching frame of the corrupted copy.
    pub fn training_views(&self, noise: &NoiseModel) -> Vec<Vec<Frame>> {
        let mut views = Vec::new();
        for clip in &self.clips {
            let cor = corrupt(clip, noise);
            for (clean, noisy) in clip.frames.iter().zip(cor.frames) {
                views.push(vec![clean.clone(), noisy]);
            }
        }
        views
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, clip) in self.clips.iter().enumerate() {
            save_clip(clip, &dir.join(format!("{}_{k:02}.degc", self.task)))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path, task: TaskKind) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "degc"))
            .collect();
        paths.sort();
        let mut clips = Vec::new();
        for p in paths {
            let c = load_clip(&p)?;
            if c.task == task {
                clips.push(c);
            }
        }
        if clips.is_empty() {
            return Err(DegError::InvalidArgument(format!("no {task} expert clips in {}", dir.display())));
        }
        Ok(Self { task, clips })
    }
}

pub const CLIP_MAGIC: &[u8; 4] = b"DEGC";
pub const CLIP_VERSION: u32 = 1;
const FLAG_CORRUPTED: u32 = 1 << 16;
const FLAG_PADDED: u32 = 1 << 17;

/// Clip file layout (all little-endian):
/// `"DEGC"`, version u32, task word u32, l u32, width u32, height u32,
/// channels u32, `l·h·w·c` f32 pixels in frame order, seed u64.
///
/// The low 16 bits of the task word hold the task id; bit 16 marks a corrupted
/// clip and bit 17 a padded one.
pub fn encode_clip(clip: &GuidanceClip) -> Vec<u8> {
    let (h, w, c) = clip.frame_shape().unwrap_or((0, 0, 0));
    let mut word = clip.task.id();
    if clip.source == ClipSource::Corrupted {
        word |= FLAG_CORRUPTED;
    }
    if clip.padded {
        word |= FLAG_PADDED;
    }
    let mut out = ByteWriter::new();
    out.magic(CLIP_MAGIC)
        .u32(CLIP_VERSION)
        .u32(word)
        .u32(clip.frames.len() as u32)
        .u32(w as u32)
        .u32(h as u32)
        .u32(c as u32);
    for f in &clip.frames {
        out.f32s(f.data().iter().copied());
    }
    out.u64(clip.seed);
    out.into_bytes()
}

fn decode_frames(bytes: &[u8]) -> Result<(u32, Vec<Frame>, u64)> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CLIP_MAGIC)?;
    let version = r.u32("version")?;
    if version != CLIP_VERSION {
        return Err(DegError::UnsupportedVersion { format: "DEGC", found: version, expected: CLIP_VERSION });
    }
    let word = r.u32("task id")?;
    let l = r.u32("frame count")? as usize;
    let w = r.u32("width")? as usize;
    let h = r.u32("height")? as usize;
    let c = r.u32("channels")? as usize;
    let per = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| r.error("frame size overflows"))?;
    if per == 0 || !(c == 1 || c == 3) {
        return Err(r.error(format!("invalid frame shape {w}x{h}x{c}")));
    }
    if per.saturating_mul(l).saturating_mul(4) > r.remaining() {
        return Err(r.error(format!("truncated: {l} frames of {per} values do not fit in {} bytes", r.remaining())));
    }
    let mut frames = Vec::with_capacity(l);
    for k in 0..l {
        let at = r.offset();
        let data = r.f32s(per, "frame data")?;
        let frame = Frame::new(w, h, c, data)
            .map_err(|e| DegError::Parse { offset: at, reason: format!("frame {k}: {e}") })?;
        frames.push(frame);
    }
    let seed = r.u64("seed")?;
    r.finish()?;
    Ok((word, frames, seed))
}

pub fn decode_clip(bytes: &[u8]) -> Result<GuidanceClip> {
    let (word, frames, seed) = decode_frames(bytes)?;
    let task = TaskKind::from_id(word & 0xFFFF)
        .ok_or_else(|| DegError::Parse { offset: 8, reason: format!("unknown task id {}", word & 0xFFFF) })?;
    let source = if word & FLAG_CORRUPTED != 0 { ClipSource::Corrupted } else { ClipSource::Expert };
    Ok(GuidanceClip { task, frames, source, seed, padded: word & FLAG_PADDED != 0 })
}

/// One-frame clip record, used as the frame payload on the wire.
pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let (h, w, c) = frame.shape();
    let mut out = ByteWriter::new();
    out.magic(CLIP_MAGIC).u32(CLIP_VERSION).u32(0).u32(1).u32(w as u32).u32(h as u32).u32(c as u32);
    out.f32s(frame.data().iter().copied());
    out.u64(0);
    out.into_bytes()
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame> {
    let (_, mut frames, _) = decode_frames(bytes)?;
    if frames.len() != 1 {
        return Err(DegError::Parse { offset: 12, reason: format!("expected a single frame, found {}", frames.len()) });
    }
    Ok(frames.pop().expect("one frame"))
}

pub fn save_clip(clip: &GuidanceClip, path: &Path) -> Result<()> {
    std::fs::write(path, encode_clip(clip))?;
    Ok(())
}

pub fn load_clip(path: &Path) -> Result<GuidanceClip> {
    decode_clip(&std::fs::read(path)?)
}
