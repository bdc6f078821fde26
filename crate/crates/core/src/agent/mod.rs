//! Twin-critic deterministic actor-critic with n-step returns.
//!
//! The actor maps an observation vector to a `tanh`-squashed action. Two
//! critics score `(obs, action)` pairs; TD targets bootstrap from the minimum
//! of two slowly tracking target critics evaluated at a smoothed actor action.
//! The actor is updated every `actor_delay` critic steps to maximize the
//! smaller of the two online critics.

mod checkpoint;
mod replay;

pub use checkpoint::{decode_learner, decode_policy, encode_learner, encode_policy, load_policy, save_policy, POLICY_MAGIC, POLICY_VERSION};
pub use replay::{Batch, NStep, ReplayBuffer, Transition};

use crate::env::{self, Action, Observation, TaskKind, TaskSpec, WorldState};
use crate::error::{DegError, Result};
use crate::frame::Frame;
use crate::io::mix_seed;
use crate::nn::{soft_update, Activation, Adam, Mlp, ParamLayout};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Exploration noise is clipped to this magnitude before the action clamp.
pub const EXPLORATION_CLIP: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub discount: f64,
    pub batch_size: usize,
    pub n_step: usize,
    pub replay_capacity: usize,
    /// Uniform random actions before the first update.
    pub warmup_steps: usize,
    pub noise_start: f64,
    pub noise_end: f64,
    pub noise_decay_steps: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub target_mix: f64,
    pub hidden: usize,
    pub actor_delay: usize,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    /// Environment steps per gradient update.
    pub update_every: usize,
    pub scale_window: usize,
    pub scale_refresh: usize,
    pub scale_quantile: f64,
    pub scale_floor: f64,
    /// Feed raw frame pixels to the networks instead of positions.
    pub pixel_obs: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            discount: 0.98,
            batch_size: 256,
            n_step: 3,
            replay_capacity: 100_000,
            warmup_steps: 4000,
            noise_start: 1.0,
            noise_end: 0.1,
            noise_decay_steps: 50_000,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            target_mix: 0.01,
            hidden: 128,
            actor_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            update_every: 2,
            scale_window: 10_000,
            scale_refresh: 1000,
            scale_quantile: 0.95,
            scale_floor: 1.0,
            pixel_obs: false,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: &str| Err(DegError::config(format!("agent.{f}"), r));
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("discount", "must lie in (0, 1)");
        }
        if self.n_step < 1 {
            return bad("n_step", "must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size", "must be at least 1");
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay_capacity", "must hold at least one batch");
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return bad("actor_lr", "learning rates must be positive");
        }
        if !(self.target_mix > 0.0 && self.target_mix <= 1.0) {
            return bad("target_mix", "must lie in (0, 1]");
        }
        if self.hidden < 1 {
            return bad("hidden", "must be at least 1");
        }
        if self.actor_delay < 1 || self.update_every < 1 {
            return bad("actor_delay", "update cadences must be at least 1");
        }
        if !(self.noise_start >= 0.0 && self.noise_end >= 0.0) || !(self.target_noise >= 0.0) {
            return bad("noise_start", "noise scales must be non-negative");
        }
        if !(self.target_noise_clip >= 0.0) {
            return bad("target_noise_clip", "must be non-negative");
        }
        if self.scale_window < 1 || self.scale_refresh < 1 {
            return bad("scale_window", "must be at least 1");
        }
        if !(self.scale_quantile > 0.0 && self.scale_quantile <= 1.0) {
            return bad("scale_quantile", "must lie in (0, 1]");
        }
        if !(self.scale_floor > 0.0) {
            return bad("scale_floor", "must be positive");
        }
        Ok(())
    }

    /// Exploration standard deviation after `step` environment steps.
    pub fn noise_std(&self, step: usize) -> f64 {
        if step >= self.noise_decay_steps {
            return self.noise_end;
        }
        let f = step as f64 / self.noise_decay_steps as f64;
        self.noise_start + (self.noise_end - self.noise_start) * f
    }
}

/// Observation width for a task.
pub fn observation_dim(task: &TaskSpec, pixel_obs: bool) -> usize {
    if pixel_obs {
        task.frame_size * task.frame_size + 1
    } else {
        11
    }
}

/// Network input for a state: positions mapped to `[-1, 1]`, the
/// effector→object and object→goal offsets, and the grasp flag. Pixel mode
/// uses the frame intensities and the grasp flag.
pub fn agent_observation(state: &WorldState, frame: &Frame, pixel_obs: bool) -> Vec<f64> {
    let attached = if state.attached { 1.0 } else { 0.0 };
    if pixel_obs {
        let mut v: Vec<f64> = frame.data().iter().map(|&p| p as f64).collect();
        v.push(attached);
        return v;
    }
    let (e, o, g) = (state.effector, state.object, state.goal);
    vec![
        2.0 * e[0] - 1.0,
        2.0 * e[1] - 1.0,
        2.0 * o[0] - 1.0,
        2.0 * o[1] - 1.0,
        2.0 * g[0] - 1.0,
        2.0 * g[1] - 1.0,
        2.0 * (o[0] - e[0]),
        2.0 * (o[1] - e[1]),
        2.0 * (g[0] - o[0]),
        2.0 * (g[1] - o[1]),
        attached,
    ]
}

/// Actor and twin critic architectures over their flat layouts.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentNet {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: usize,
    pub actor_layout: ParamLayout,
    pub actor: Mlp,
    pub critic_layout: ParamLayout,
    pub q1: Mlp,
    pub q2: Mlp,
}

impl AgentNet {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: usize) -> Self {
        let mut actor_layout = ParamLayout::new();
        let actor = Mlp::register(
            &mut actor_layout,
            "actor",
            &[obs_dim, hidden, hidden, act_dim],
            Activation::Relu,
            Activation::Tanh,
        );
        let mut critic_layout = ParamLayout::new();
        let dims = [obs_dim + act_dim, hidden, hidden, 1];
        let q1 = Mlp::register(&mut critic_layout, "q1", &dims, Activation::Relu, Activation::Identity);
        let q2 = Mlp::register(&mut critic_layout, "q2", &dims, Activation::Relu, Activation::Identity);
        Self { obs_dim, act_dim, hidden, actor_layout, actor, critic_layout, q1, q2 }
    }

    fn critic_input<T: Scalar>(&self, obs: &[T], actions: &[T], batch: usize) -> Vec<T> {
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut x = Vec::with_capacity(batch * (o + a));
        for r in 0..batch {
            x.extend_from_slice(&obs[r * o..(r + 1) * o]);
            x.extend_from_slice(&actions[r * a..(r + 1) * a]);
        }
        x
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<T> {
    pub net: AgentNet,
    pub actor: Vec<T>,
    pub critic: Vec<T>,
    pub target_critic: Vec<T>,
}

impl<T: Scalar> PolicyParams<T> {
    pub fn init(obs_dim: usize, act_dim: usize, hidden: usize, seed: u64) -> Self {
        let net = AgentNet::new(obs_dim, act_dim, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor = vec![T::zero(); net.actor_layout.len()];
        net.actor.init(&mut actor, &mut rng);
        let mut critic = vec![T::zero(); net.critic_layout.len()];
        net.q1.init(&mut critic, &mut rng);
        net.q2.init(&mut critic, &mut rng);
        let target_critic = critic.clone();
        Self { net, actor, critic, target_critic }
    }

    /// Deterministic actions for a batch of observations.
    pub fn actor_output(&self, obs: &[T], batch: usize) -> Vec<T> {
        self.net.actor.infer(&self.actor, obs, batch)
    }

    /// `(Q1, Q2)` from the online critics.
    pub fn q_values(&self, obs: &[T], actions: &[T], batch: usize) -> (Vec<T>, Vec<T>) {
        let x = self.net.critic_input(obs, actions, batch);
        (self.net.q1.infer(&self.critic, &x, batch), self.net.q2.infer(&self.critic, &x, batch))
    }

    pub fn is_finite(&self) -> bool {
        self.actor.iter().chain(&self.critic).chain(&self.target_critic).all(|v| v.is_finite())
    }
}

fn clipped_normal<R: Rng + ?Sized>(std: f64, clip: f64, rng: &mut R) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    (z * std).clamp(-clip, clip)
}

/// Actor output plus clipped Gaussian noise, clamped to `[-1, 1]`. With
/// `noise_std == 0` no random numbers are drawn.
pub fn act<T: Scalar, R: Rng + ?Sized>(params: &PolicyParams<T>, obs: &[f64], noise_std: f64, rng: &mut R) -> Result<Action> {
    if obs.len() != params.net.obs_dim {
        return Err(DegError::shape(params.net.obs_dim, obs.len()));
    }
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(DegError::NonFinite("observation"));
    }
    let x: Vec<T> = obs.iter().map(|&v| T::lit(v)).collect();
    let out = params.actor_output(&x, 1);
    let v: Vec<f64> = out
        .iter()
        .map(|&a| (a.as_f64() + clipped_normal(noise_std, EXPLORATION_CLIP, rng)).clamp(-1.0, 1.0))
        .collect();
    Ok(Action::from_slice(&v))
}

/// Uniform random action over the task's action dimensions.
pub fn random_action<R: Rng + ?Sized>(kind: TaskKind, rng: &mut R) -> Action {
    let v: Vec<f64> = (0..kind.action_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    Action::from_slice(&v)
}

/// n-step TD targets: scaled return plus the discounted minimum of the
/// target critics at a smoothed actor action.
pub fn td_targets<T: Scalar, R: Rng + ?Sized>(
    params: &PolicyParams<T>,
    batch: &Batch<T>,
    reward_scale: f64,
    config: &AgentConfig,
    rng: &mut R,
) -> Vec<T> {
    let n = batch.size;
    let mut next_a = params.actor_output(&batch.next_obs, n);
    for a in &mut next_a {
        let noise = clipped_normal(config.target_noise, config.target_noise_clip, rng);
        *a = T::lit((a.as_f64() + noise).clamp(-1.0, 1.0));
    }
    let x = params.net.critic_input(&batch.next_obs, &next_a, n);
    let q1 = params.net.q1.infer(&params.target_critic, &x, n);
    let q2 = params.net.q2.infer(&params.target_critic, &x, n);
    (0..n)
        .map(|i| {
            let boot = q1[i].min(q2[i]).as_f64();
            T::lit(batch.returns[i] / reward_scale + batch.discounts[i] * boot)
        })
        .collect()
}

/// Twin-critic loss `mean((Q1 − y)² + (Q2 − y)²)` and its gradient with
/// respect to the online critic parameters. Also returns mean Q1.
pub fn critic_loss_and_grad<T: Scalar>(
    params: &PolicyParams<T>,
    obs: &[T],
    actions: &[T],
    targets: &[T],
) -> (f64, Vec<T>, f64) {
    let n = targets.len();
    let net = &params.net;
    let x = net.critic_input(obs, actions, n);
    let c1 = net.q1.forward(&params.critic, &x, n);
    let c2 = net.q2.forward(&params.critic, &x, n);
    let inv = T::lit(1.0 / n as f64);
    let two = T::lit(2.0);
    let mut loss = 0.0;
    let mut d1 = vec![T::zero(); n];
    let mut d2 = vec![T::zero(); n];
    for i in 0..n {
        let (e1, e2) = (c1.out[i] - targets[i], c2.out[i] - targets[i]);
        loss += (e1 * e1 + e2 * e2).as_f64();
        d1[i] = two * e1 * inv;
        d2[i] = two * e2 * inv;
    }
    let mut grad = vec![T::zero(); params.critic.len()];
    net.q1.backward(&params.critic, &c1, &d1, &mut grad);
    net.q2.backward(&params.critic, &c2, &d2, &mut grad);
    let mean_q = c1.out.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
    (loss / n as f64, grad, mean_q)
}

/// Actor loss `−mean(min(Q1, Q2)(s, π(s)))` and its gradient with respect to
/// the actor parameters. Critic parameters are held fixed.
pub fn actor_loss_and_grad<T: Scalar>(params: &PolicyParams<T>, obs: &[T], batch: usize) -> (f64, Vec<T>) {
    let net = &params.net;
    let (o, a) = (net.obs_dim, net.act_dim);
    let ac = net.actor.forward(&params.actor, obs, batch);
    let x = net.critic_input(obs, &ac.out, batch);
    let c1 = net.q1.forward(&params.critic, &x, batch);
    let c2 = net.q2.forward(&params.critic, &x, batch);
    let neg = T::lit(-1.0 / batch as f64);
    let mut d1 = vec![T::zero(); batch];
    let mut d2 = vec![T::zero(); batch];
    let mut loss = 0.0;
    for i in 0..batch {
        if c1.out[i] <= c2.out[i] {
            d1[i] = neg;
            loss -= c1.out[i].as_f64();
        } else {
            d2[i] = neg;
            loss -= c2.out[i].as_f64();
        }
    }
    let mut scratch = vec![T::zero(); params.critic.len()];
    let dx1 = net.q1.backward(&params.critic, &c1, &d1, &mut scratch);
    let dx2 = net.q2.backward(&params.critic, &c2, &d2, &mut scratch);
    let mut da = vec![T::zero(); batch * a];
    for r in 0..batch {
        for j in 0..a {
            let k = r * (o + a) + o + j;
            da[r * a + j] = dx1[k] + dx2[k];
        }
    }
    let mut grad = vec![T::zero(); params.actor.len()];
    net.actor.backward(&params.actor, &ac, &da, &mut grad);
    (loss / batch as f64, grad)
}

/// Parameters plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Learner<T> {
    pub params: PolicyParams<T>,
    pub actor_opt: Adam<T>,
    pub critic_opt: Adam<T>,
    pub updates: u64,
}

impl<T: Scalar> Learner<T> {
    pub fn new(params: PolicyParams<T>, config: &AgentConfig) -> Self {
        let actor_opt = Adam::new(params.actor.len(), config.actor_lr);
        let critic_opt = Adam::new(params.critic.len(), config.critic_lr);
        Self { params, actor_opt, critic_opt, updates: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Present on updates that stepped the actor.
    pub actor_loss: Option<f64>,
    pub mean_q: f64,
}

/// One critic step, a delayed actor step, and a soft target update.
pub fn update<T: Scalar, R: Rng + ?Sized>(
    learner: &mut Learner<T>,
    buffer: &ReplayBuffer<T>,
    config: &AgentConfig,
    reward_scale: f64,
    rng: &mut R,
) -> Result<UpdateStats> {
    let batch = buffer.sample(config.batch_size, config.n_step, config.discount, rng)?;
    let targets = td_targets(&learner.params, &batch, reward_scale, config, rng);
    let (critic_loss, grad, mean_q) = critic_loss_and_grad(&learner.params, &batch.obs, &batch.actions, &targets);
    learner.critic_opt.step(&mut learner.params.critic, &grad);
    learner.updates += 1;
    let mut actor_loss = None;
    if learner.updates % config.actor_delay as u64 == 0 {
        let (loss, g) = actor_loss_and_grad(&learner.params, &batch.obs, batch.size);
        learner.actor_opt.step(&mut learner.params.actor, &g);
        actor_loss = Some(loss);
    }
    let p = &mut learner.params;
    soft_update(&mut p.target_critic, &p.critic, T::lit(config.target_mix));
    if !critic_loss.is_finite() {
        return Err(DegError::NonFinite("critic loss"));
    }
    Ok(UpdateStats { critic_loss, actor_loss, mean_q })
}

/// Running reward scale: a quantile of recent `|r|`, never below a floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardScaler {
    pub window: usize,
    pub refresh: usize,
    pub quantile: f64,
    pub floor: f64,
    recent: VecDeque<f64>,
    since_refresh: usize,
    scale: f64,
}

impl RewardScaler {
    pub fn new(config: &AgentConfig) -> Self {
        Self {
            window: config.scale_window,
            refresh: config.scale_refresh,
            quantile: config.scale_quantile,
            floor: config.scale_floor,
            recent: VecDeque::new(),
            since_refresh: 0,
            scale: config.scale_floor,
        }
    }

    pub fn push(&mut self, reward: f64) {
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(reward.abs());
        self.since_refresh += 1;
        if self.since_refresh >= self.refresh {
            self.since_refresh = 0;
            self.scale = quantile(self.recent.iter().copied().collect(), self.quantile).max(self.floor);
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Nearest-rank quantile.
pub fn quantile(mut values: Vec<f64>, q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

/// A controller that may keep per-episode state.
pub trait EpisodePolicy {
    fn begin(&mut self, _obs: &Observation, _task: &TaskSpec, _seed: u64) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, state: &WorldState, frame: &Frame, task: &TaskSpec) -> Result<Action>;
}

/// Adapts a stateless [`env::Policy`].
pub struct Stateless<P>(pub P);

impl<P: env::Policy> EpisodePolicy for Stateless<P> {
    fn act(&mut self, state: &WorldState, _frame: &Frame, task: &TaskSpec) -> Result<Action> {
        Ok(self.0.action(state, task))
    }
}

/// The learned actor without exploration noise.
pub struct Greedy<'a, T> {
    pub params: &'a PolicyParams<T>,
    pub pixel_obs: bool,
}

impl<T: Scalar> EpisodePolicy for Greedy<'_, T> {
    fn act(&mut self, state: &WorldState, frame: &Frame, _task: &TaskSpec) -> Result<Action> {
        let obs = agent_observation(state, frame, self.pixel_obs);
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        act(self.params, &obs, 0.0, &mut unused)
    }
}

impl<T: Scalar> env::Policy for Greedy<'_, T> {
    fn action(&self, state: &WorldState, task: &TaskSpec) -> Action {
        let frame = if self.pixel_obs { env::render(state, task) } else { Frame::filled(1, 1, 1, 0.0) };
        let obs = agent_observation(state, &frame, self.pixel_obs);
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        act(self.params, &obs, 0.0, &mut unused).unwrap_or(Action::ZERO)
    }
}

/// Stream tag separating evaluation resets from training resets.
pub const EVAL_STREAM: u64 = 0xE7A1;

/// Reset seed of evaluation episode `k` under `seed`.
pub fn eval_seed(seed: u64, k: usize) -> u64 {
    mix_seed(mix_seed(seed, EVAL_STREAM), k as u64)
}

/// One evaluation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub states: Vec<WorldState>,
    pub success: bool,
}

/// Runs one episode from `reset_seed` until success or the horizon.
pub fn run_episode<E: EpisodePolicy>(policy: &mut E, task: &TaskSpec, reset_seed: u64) -> Result<EpisodeTrace> {
    let obs = env::reset(task, reset_seed);
    policy.begin(&obs, task, reset_seed)?;
    let mut states = vec![obs.state.clone()];
    let (mut state, mut frame) = (obs.state, obs.frame);
    let mut success = false;
    loop {
        let a = policy.act(&state, &frame, task)?;
        let out = env::step(&state, &a, task);
        states.push(out.state.clone());
        if out.done {
            success = true;
            break;
        }
        if out.truncated {
            break;
        }
        state = out.state;
        frame = out.frame;
    }
    Ok(EpisodeTrace { seed: reset_seed, states, success })
}

/// Episodes from fresh evaluation seeds, with their state traces.
pub fn evaluate_traced<E: EpisodePolicy>(policy: &mut E, task: &TaskSpec, episodes: usize, seed: u64) -> Result<Vec<EpisodeTrace>> {
    if episodes == 0 {
        return Err(DegError::InvalidArgument("evaluation needs at least one episode".into()));
    }
    (0..episodes).map(|k| run_episode(policy, task, eval_seed(seed, k))).collect()
}

/// Fraction of evaluation episodes that reach success.
pub fn evaluate<E: EpisodePolicy>(policy: &mut E, task: &TaskSpec, episodes: usize, seed: u64) -> Result<f64> {
    let traces = evaluate_traced(policy, task, episodes, seed)?;
    Ok(traces.iter().filter(|t| t.success).count() as f64 / episodes as f64)
}
