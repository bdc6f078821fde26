//! The seeded training loop: reset, guidance, reward engine, agent.

use crate::config::RunConfig;
use crate::csvio::{self, CsvLog};
use crate::snapshot::{self, EpisodeProgress, SnapshotState};
use crate::{HarnessError, Result};
use deg_core::agent::{
    self, agent_observation, decode_learner, encode_learner, observation_dim, random_action, save_policy, Greedy,
    Learner, PolicyParams, ReplayBuffer, RewardScaler, Transition, UpdateStats,
};
use deg_core::env::{self, TaskSpec, WorldState};
use deg_core::guidance::{EpisodeStart, GuidanceProvider, ScriptedProvider};
use deg_core::io::mix_seed;
use deg_core::latent::EncoderParams;
use deg_core::reward::{begin_episode, step_reward, EpisodeRewardState, RewardConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

const RESET_STREAM: u64 = 0x5EED_0001;
const ACT_STREAM: u64 = 0x5EED_0002;
const INIT_STREAM: u64 = 0x5EED_0003;
const EVAL_STREAM: u64 = 0x5EED_0004;

/// Reset seed of training episode `k` for a run seed. Shared by every reward
/// mode, so mode comparisons are paired.
pub fn episode_seed(seed: u64, k: u64) -> u64 {
    mix_seed(mix_seed(seed, RESET_STREAM), k)
}

/// Seed for the evaluation round at `step`.
pub fn eval_round_seed(seed: u64, step: usize) -> u64 {
    mix_seed(mix_seed(seed, EVAL_STREAM), step as u64)
}

/// Directory of one seed's run.
pub fn seed_dir(out: &Path, cfg: &RunConfig, seed: u64) -> PathBuf {
    mode_dir(out, cfg).join(format!("seed_{seed}"))
}

pub fn mode_dir(out: &Path, cfg: &RunConfig) -> PathBuf {
    out.join(cfg.task.name()).join(cfg.reward_mode.name())
}

/// Interruption and resumption controls.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Continue from `snapshot/` when present.
    pub resume: bool,
    /// Stop right after this step (and its snapshot, if one is due).
    pub stop_after: Option<usize>,
}

pub struct SeedOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    /// `(step, success_rate)` per evaluation round.
    pub curve: Vec<(usize, f64)>,
    pub params: PolicyParams<f32>,
    pub completed: bool,
}

impl SeedOutcome {
    pub fn final_success(&self) -> f64 {
        self.curve.last().map(|c| c.1).unwrap_or(0.0)
    }
}

/// Validated, resolved inputs shared by every seed of one run.
pub struct RunContext<'a> {
    pub cfg: RunConfig,
    pub spec: TaskSpec,
    pub reward: RewardConfig,
    pub encoder: Option<&'a EncoderParams<f32>>,
    pub provider: ScriptedProvider,
}

impl<'a> RunContext<'a> {
    pub fn new(cfg: &RunConfig, encoder: Option<&'a EncoderParams<f32>>) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.task_spec();
        if cfg.reward_mode.uses_guidance() {
            let enc = encoder.ok_or_else(|| {
                HarnessError::Config(format!("reward mode {} needs a trained encoder", cfg.reward_mode))
            })?;
            let n = spec.frame_size;
            let a = enc.arch();
            if (a.width, a.height, a.channels) != (n, n, 1) {
                return Err(HarnessError::Config(format!(
                    "encoder expects {}x{}x{} frames, task renders {n}x{n}x1",
                    a.width, a.height, a.channels
                )));
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            reward: cfg.reward_config(),
            provider: ScriptedProvider::new(cfg.guidance.clone()),
            encoder: if cfg.reward_mode.uses_guidance() { encoder } else { None },
            spec,
        })
    }

    fn obs_dim(&self) -> usize {
        observation_dim(&self.spec, self.cfg.agent.pixel_obs)
    }
}

struct Episode {
    progress: EpisodeProgress,
    frame: deg_core::frame::Frame,
    obs: Vec<f64>,
    engine: Option<EpisodeRewardState<f64>>,
}

fn start_episode(ctx: &RunContext<'_>, seed: u64, index: u64) -> Result<Episode> {
    let reset_seed = episode_seed(seed, index);
    let o = env::reset(&ctx.spec, reset_seed);
    let engine = match ctx.encoder {
        Some(enc) => {
            let start = EpisodeStart { seed: reset_seed, state: &o.state, frame: &o.frame };
            let clip = ctx.provider.provide(&ctx.spec, &start)?;
            Some(begin_episode::<f64, f32>(&clip, enc, &o.frame, &ctx.reward)?)
        }
        None => None,
    };
    Ok(Episode {
        obs: agent_observation(&o.state, &o.frame, ctx.cfg.agent.pixel_obs),
        progress: EpisodeProgress {
            index,
            state: o.state,
            ret: 0.0,
            coarse: 0.0,
            fine: 0.0,
            sparse_steps: 0,
            length: 0,
            reward: None,
        },
        frame: o.frame,
        engine,
    })
}

fn restore_episode(ctx: &RunContext<'_>, seed: u64, p: &EpisodeProgress) -> Result<Episode> {
    let mut ep = start_episode(ctx, seed, p.index)?;
    ep.progress = p.clone();
    ep.frame = env::render(&p.state, &ctx.spec);
    ep.obs = agent_observation(&p.state, &ep.frame, ctx.cfg.agent.pixel_obs);
    if let (Some(engine), Some((it, ir, prev, n))) = (ep.engine.as_mut(), p.reward) {
        engine.i_target = it;
        engine.i_reached = ir;
        engine.prev_sim = prev;
        engine.step_count = n;
    }
    Ok(ep)
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Evaluates the greedy policy on fresh resets; returns the success rate.
pub fn eval_policy(params: &PolicyParams<f32>, ctx: &RunContext<'_>, seed: u64, step: usize) -> Result<f64> {
    let mut policy = Greedy { params, pixel_obs: ctx.cfg.agent.pixel_obs };
    Ok(agent::evaluate(&mut policy, &ctx.spec, ctx.cfg.eval_episodes, eval_round_seed(seed, step))?)
}

/// Runs (or resumes) one seed and writes its artifacts into `dir`.
pub fn train_seed(ctx: &RunContext<'_>, seed: u64, dir: &Path, opts: TrainOptions) -> Result<SeedOutcome> {
    let cfg = &ctx.cfg;
    let a = &cfg.agent;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.resolved().to_toml())?;
    let kind = ctx.spec.kind;
    let snap_dir = dir.join("snapshot");
    let rng_seed = mix_seed(seed, ACT_STREAM);

    let (mut learner, mut buffer, mut scaler, mut rng, mut ep, mut step, mut training, mut episodes);
    let (mut last_stats, mut last_actor_loss, mut pending, mut curve): (Option<UpdateStats>, Option<f64>, Vec<f64>, Vec<(usize, f64)>);
    if opts.resume && snap_dir.join("state.json").exists() {
        let loaded = snapshot::read(&snap_dir)?;
        let s = loaded.state;
        learner = decode_learner::<f32>(&loaded.learner, a)?;
        buffer = snapshot::decode_replay(&loaded.replay)?;
        scaler = s.scaler;
        rng = ChaCha8Rng::seed_from_u64(s.rng_seed);
        let pos: u128 = s.rng_word_pos.parse().map_err(|_| HarnessError::Runtime("bad rng position".into()))?;
        rng.set_word_pos(pos);
        ep = restore_episode(ctx, seed, &s.episode)?;
        step = s.step;
        training = CsvLog::resume(&dir.join("training.csv"), s.training_csv_len)?;
        episodes = CsvLog::resume(&dir.join("episodes.csv"), s.episodes_csv_len)?;
        last_stats = s.last_stats;
        last_actor_loss = s.last_actor_loss;
        pending = s.pending_returns;
        curve = s.curve;
        log::info!("seed {seed}: resumed at step {step}");
    } else {
        let params = PolicyParams::init(ctx.obs_dim(), kind.action_dim(), a.hidden, mix_seed(seed, INIT_STREAM));
        learner = Learner::new(params, a);
        buffer = ReplayBuffer::new(a.replay_capacity, ctx.obs_dim(), kind.action_dim());
        scaler = RewardScaler::new(a);
        rng = ChaCha8Rng::seed_from_u64(rng_seed);
        ep = start_episode(ctx, seed, 0)?;
        step = 0;
        training = CsvLog::create(&dir.join("training.csv"), &csvio::TRAINING)?;
        episodes = CsvLog::create(&dir.join("episodes.csv"), &csvio::EPISODES)?;
        last_stats = None;
        last_actor_loss = None;
        pending = Vec::new();
        curve = Vec::new();
    }

    while step < cfg.total_steps {
        if opts.stop_after.is_some_and(|s| step >= s) {
            return Ok(SeedOutcome { seed, dir: dir.to_path_buf(), curve, params: learner.params, completed: false });
        }
        let action = if step < a.warmup_steps {
            random_action(kind, &mut rng)
        } else {
            agent::act(&learner.params, &ep.obs, a.noise_std(step), &mut rng)?
        };
        let out = env::step(&ep.progress.state, &action, &ctx.spec);
        let reward = match ep.engine.as_mut() {
            Some(engine) => {
                let z = ctx.encoder.expect("guidance modes carry an encoder").encode(&out.frame)?.cast::<f64>();
                let b = step_reward(engine, &z.0, out.sparse, &ctx.reward)?;
                ep.progress.coarse += b.coarse;
                ep.progress.fine += b.fine;
                b.combined
            }
            None => ctx.reward.theta * f64::from(u8::from(out.sparse)),
        };
        let next_obs = agent_observation(&out.state, &out.frame, a.pixel_obs);
        let last = out.done || out.truncated;
        buffer.push(Transition {
            obs: to_f32(&ep.obs),
            action: to_f32(&action.to_vec(kind.action_dim())),
            reward,
            next_obs: to_f32(&next_obs),
            done: out.done,
            last,
        })?;
        scaler.push(reward);
        ep.progress.ret += reward;
        ep.progress.length += 1;
        ep.progress.sparse_steps += usize::from(out.sparse);
        step += 1;

        if step >= a.warmup_steps && step % a.update_every == 0 && buffer.len() >= a.batch_size {
            let stats = agent::update(&mut learner, &buffer, a, scaler.scale(), &mut rng)?;
            if stats.actor_loss.is_some() {
                last_actor_loss = stats.actor_loss;
            }
            last_stats = Some(stats);
        }

        if last {
            let (it, ir) = ep.engine.as_ref().map(|e| (e.i_target, e.i_reached)).unwrap_or((0, 0));
            let p = &ep.progress;
            episodes.row([
                p.index.to_string(),
                step.to_string(),
                p.length.to_string(),
                p.ret.to_string(),
                p.coarse.to_string(),
                p.fine.to_string(),
                p.sparse_steps.to_string(),
                u8::from(out.done).to_string(),
                it.to_string(),
                ir.to_string(),
            ])?;
            pending.push(p.ret);
            ep = start_episode(ctx, seed, p.index + 1)?;
        } else {
            ep.progress.state = out.state;
            ep.frame = out.frame;
            ep.obs = next_obs;
        }

        if step % cfg.eval_every == 0 || step == cfg.total_steps {
            let success = eval_policy(&learner.params, ctx, seed, step)?;
            let mean_ret = (!pending.is_empty()).then(|| pending.iter().sum::<f64>() / pending.len() as f64);
            training.row([
                step.to_string(),
                csvio::opt(last_stats.map(|s| s.critic_loss)),
                csvio::opt(last_actor_loss),
                csvio::opt(last_stats.map(|s| s.mean_q)),
                csvio::opt(mean_ret),
                success.to_string(),
            ])?;
            pending.clear();
            curve.push((step, success));
            log::info!("seed {seed} step {step}: success {success:.2}");
        }

        if cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0 && step < cfg.total_steps {
            let mut progress = ep.progress.clone();
            progress.reward = ep.engine.as_ref().map(|e| (e.i_target, e.i_reached, e.prev_sim, e.step_count));
            let state = SnapshotState {
                step,
                episode: progress,
                rng_seed,
                rng_word_pos: rng.get_word_pos().to_string(),
                scaler: scaler.clone(),
                last_stats,
                last_actor_loss,
                pending_returns: pending.clone(),
                curve: curve.clone(),
                training_csv_len: training.sync()?,
                episodes_csv_len: episodes.sync()?,
            };
            snapshot::write(&snap_dir, &encode_learner(&learner), &snapshot::encode_replay(&buffer), &state)?;
        }
    }
    training.sync()?;
    episodes.sync()?;
    save_policy(&learner.params, &dir.join("policy.dega"))?;
    Ok(SeedOutcome { seed, dir: dir.to_path_buf(), curve, params: learner.params, completed: true })
}

/// Checks that every seed of a run resets identically: returns the first
/// `n` start states of `seed`.
pub fn reset_sequence(spec: &TaskSpec, seed: u64, n: u64) -> Vec<WorldState> {
    (0..n).map(|k| env::reset_state(spec, episode_seed(seed, k))).collect()
}
