use crate::error::{DegError, Result};
use crate::scalar::Scalar;
use rand::Rng;

/// One environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T> {
    pub obs: Vec<T>,
    pub action: Vec<T>,
    pub reward: f64,
    pub next_obs: Vec<T>,
    /// Terminal: no bootstrapping past this step.
    pub done: bool,
    /// Last step of its episode (terminal or cut by the horizon).
    pub last: bool,
}

/// An n-step target assembled from consecutive transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct NStep<T> {
    pub obs: Vec<T>,
    pub action: Vec<T>,
    /// `Σ γ^k r_k` over the window, unscaled.
    pub ret: f64,
    /// `γ^k` for the bootstrap state, or 0 after a terminal step.
    pub discount: f64,
    pub next_obs: Vec<T>,
}

/// Ring buffer of transitions; n-step windows are assembled at sample time.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<T>,
    actions: Vec<T>,
    rewards: Vec<f64>,
    next_obs: Vec<T>,
    done: Vec<bool>,
    last: Vec<bool>,
    len: usize,
    head: usize,
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            obs_dim,
            act_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            done: Vec::new(),
            last: Vec::new(),
            len: 0,
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn push(&mut self, t: Transition<T>) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim {
            return Err(DegError::shape(self.obs_dim, t.obs.len().max(t.next_obs.len())));
        }
        if t.action.len() != self.act_dim {
            return Err(DegError::shape(self.act_dim, t.action.len()));
        }
        if !t.reward.is_finite() || t.obs.iter().chain(&t.action).chain(&t.next_obs).any(|v| !v.is_finite()) {
            return Err(DegError::NonFinite("transition"));
        }
        let (o, a) = (self.obs_dim, self.act_dim);
        if self.rewards.len() < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.actions.extend_from_slice(&t.action);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.rewards.push(t.reward);
            self.done.push(t.done);
            self.last.push(t.last || t.done);
        } else {
            let h = self.head;
            self.obs[h * o..(h + 1) * o].copy_from_slice(&t.obs);
            self.actions[h * a..(h + 1) * a].copy_from_slice(&t.action);
            self.next_obs[h * o..(h + 1) * o].copy_from_slice(&t.next_obs);
            self.rewards[h] = t.reward;
            self.done[h] = t.done;
            self.last[h] = t.last || t.done;
        }
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Physical slot of the `j`-th oldest stored transition.
    fn slot(&self, j: usize) -> usize {
        if self.len < self.capacity {
            j
        } else {
            (self.head + j) % self.capacity
        }
    }

    /// The `j`-th oldest stored transition.
    pub fn get(&self, j: usize) -> Transition<T> {
        let s = self.slot(j);
        let (o, a) = (self.obs_dim, self.act_dim);
        Transition {
            obs: self.obs[s * o..(s + 1) * o].to_vec(),
            action: self.actions[s * a..(s + 1) * a].to_vec(),
            reward: self.rewards[s],
            next_obs: self.next_obs[s * o..(s + 1) * o].to_vec(),
            done: self.done[s],
            last: self.last[s],
        }
    }

    /// n-step window starting at the `j`-th oldest transition. The window
    /// stops early at the end of an episode (bootstrapping only if it was cut
    /// by the horizon) or at the newest stored transition.
    pub fn n_step(&self, j: usize, n: usize, gamma: f64) -> NStep<T> {
        let s0 = self.slot(j);
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut ret = 0.0;
        let mut g = 1.0;
        let mut k = 0;
        let end = loop {
            let s = self.slot(j + k);
            ret += g * self.rewards[s];
            g *= gamma;
            if self.done[s] {
                g = 0.0;
                break s;
            }
            if self.last[s] || k + 1 == n || j + k + 1 == self.len {
                break s;
            }
            k += 1;
        };
        NStep {
            obs: self.obs[s0 * o..(s0 + 1) * o].to_vec(),
            action: self.actions[s0 * a..(s0 + 1) * a].to_vec(),
            ret,
            discount: g,
            next_obs: self.next_obs[end * o..(end + 1) * o].to_vec(),
        }
    }

    /// `batch` uniformly drawn windows, packed row-major.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, n: usize, gamma: f64, rng: &mut R) -> Result<Batch<T>> {
        if self.len < batch || batch == 0 {
            return Err(DegError::Underfilled { have: self.len, need: batch.max(1) });
        }
        let mut out = Batch::with_capacity(batch, self.obs_dim, self.act_dim);
        for _ in 0..batch {
            let w = self.n_step(rng.random_range(0..self.len), n, gamma);
            out.obs.extend_from_slice(&w.obs);
            out.actions.extend_from_slice(&w.action);
            out.returns.push(w.ret);
            out.discounts.push(w.discount);
            out.next_obs.extend_from_slice(&w.next_obs);
        }
        Ok(out)
    }

    /// Raw storage in oldest-first order, for snapshots.
    pub fn iter(&self) -> impl Iterator<Item = Transition<T>> + '_ {
        (0..self.len).map(move |j| self.get(j))
    }
}

/// A sampled minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub size: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<T>,
    pub actions: Vec<T>,
    pub returns: Vec<f64>,
    pub discounts: Vec<f64>,
    pub next_obs: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn with_capacity(size: usize, obs_dim: usize, act_dim: usize) -> Self {
        Self {
            size,
            obs_dim,
            act_dim,
            obs: Vec::with_capacity(size * obs_dim),
            actions: Vec::with_capacity(size * act_dim),
            returns: Vec::with_capacity(size),
            discounts: Vec::with_capacity(size),
            next_obs: Vec::with_capacity(size * obs_dim),
        }
    }
}
