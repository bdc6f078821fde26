//! Planar point-mass manipulation tasks: reach, push and a grasp-and-carry
//! variant, each with a 32×32 grayscale renderer and a 0/1 success signal.

use crate::error::{DegError, Result};
use crate::frame::Frame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Reach,
    Push,
    PickLite,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Reach, TaskKind::Push, TaskKind::PickLite];

    pub fn id(self) -> u32 {
        match self {
            TaskKind::Reach => 0,
            TaskKind::Push => 1,
            TaskKind::PickLite => 2,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Reach => "reach",
            TaskKind::Push => "push",
            TaskKind::PickLite => "pick-lite",
        }
    }

    /// Velocity (2) plus a grip channel for the grasping task.
    pub fn action_dim(self) -> usize {
        match self {
            TaskKind::PickLite => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = DegError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reach" => Ok(TaskKind::Reach),
            "push" => Ok(TaskKind::Push),
            "pick-lite" | "pick_lite" => Ok(TaskKind::PickLite),
            other => Err(DegError::config("task", format!("unknown task `{other}`"))),
        }
    }
}

pub type Vec2 = [f64; 2];

/// Axis-aligned sampling box `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Vec2,
    pub hi: Vec2,
}

impl Bounds {
    fn sample<R: Rng>(&self, rng: &mut R) -> Vec2 {
        [rng.random_range(self.lo[0]..=self.hi[0]), rng.random_range(self.lo[1]..=self.hi[1])]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub horizon: usize,
    pub success_radius: f64,
    pub effector_radius: f64,
    pub object_radius: f64,
    /// Largest edge-to-edge gap at which a closing grip attaches the object.
    pub grasp_gap: f64,
    /// Effector displacement per unit velocity command.
    pub step_size: f64,
    pub min_separation: f64,
    pub effector_box: Bounds,
    pub object_box: Bounds,
    pub goal_box: Bounds,
    pub frame_size: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self::new(TaskKind::Push)
    }
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            horizon: 200,
            success_radius: if kind == TaskKind::Reach { 0.05 } else { 0.06 },
            effector_radius: 0.03,
            object_radius: 0.05,
            grasp_gap: 0.05,
            step_size: 0.03,
            min_separation: 0.15,
            effector_box: Bounds { lo: [0.1, 0.1], hi: [0.9, 0.9] },
            object_box: Bounds { lo: [0.25, 0.25], hi: [0.75, 0.75] },
            goal_box: Bounds { lo: [0.15, 0.15], hi: [0.85, 0.85] },
            frame_size: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(DegError::config("env.horizon", "must be at least 1"));
        }
        for (name, r) in [
            ("env.success_radius", self.success_radius),
            ("env.effector_radius", self.effector_radius),
            ("env.object_radius", self.object_radius),
            ("env.grasp_gap", self.grasp_gap),
        ] {
            if !(r > 0.0) {
                return Err(DegError::config(name, "radii must be positive"));
            }
        }
        if self.frame_size < 4 {
            return Err(DegError::config("env.frame_size", "must be at least 4"));
        }
        Ok(())
    }

    pub fn contact_distance(&self) -> f64 {
        self.effector_radius + self.object_radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub effector: Vec2,
    pub object: Vec2,
    pub goal: Vec2,
    pub attached: bool,
    pub t: usize,
}

impl WorldState {
    /// `(effector, object, goal)` flattened.
    pub fn low_dim(&self) -> [f64; 6] {
        [self.effector[0], self.effector[1], self.object[0], self.object[1], self.goal[0], self.goal[1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub velocity: Vec2,
    pub grip: f64,
}

impl Action {
    pub const ZERO: Action = Action { velocity: [0.0, 0.0], grip: 0.0 };

    /// Reads `[dx, dy]` or `[dx, dy, grip]`.
    pub fn from_slice(v: &[f64]) -> Self {
        Action { velocity: [v[0], v[1]], grip: v.get(2).copied().unwrap_or(0.0) }
    }

    pub fn to_vec(&self, dim: usize) -> Vec<f64> {
        let mut v = vec![self.velocity[0], self.velocity[1]];
        if dim > 2 {
            v.push(self.grip);
        }
        v
    }

    /// Clamps every component into `[-1, 1]`; reports whether anything moved.
    pub fn clamped(&self) -> (Action, bool) {
        let c = |x: f64| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
        let a = Action { velocity: [c(self.velocity[0]), c(self.velocity[1])], grip: c(self.grip) };
        let changed = a != *self;
        (a, changed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub state: WorldState,
    pub frame: Frame,
    pub low_dim: [f64; 6],
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: WorldState,
    pub frame: Frame,
    pub low_dim: [f64; 6],
    pub sparse: bool,
    /// Success reached: the episode ends without bootstrapping.
    pub done: bool,
    /// Horizon reached without success.
    pub truncated: bool,
    pub action_clamped: bool,
}

/// Anything that maps a world state to an action: the learned agent, or the
/// scripted expert.
pub trait Policy {
    fn action(&self, state: &WorldState, task: &TaskSpec) -> Action;
}

pub(crate) fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clamp_unit(p: Vec2) -> Vec2 {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

/// Samples a start configuration; every pair of placed entities ends up at
/// least `min_separation` apart.
pub fn reset_state(task: &TaskSpec, seed: u64) -> WorldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let effector = task.effector_box.sample(&mut rng);
        let goal = task.goal_box.sample(&mut rng);
        let object = if task.kind == TaskKind::Reach { goal } else { task.object_box.sample(&mut rng) };
        let sep = task.min_separation;
        let ok = if task.kind == TaskKind::Reach {
            dist(effector, goal) >= sep
        } else {
            dist(effector, goal) >= sep && dist(effector, object) >= sep && dist(object, goal) >= sep
        };
        if ok {
            return WorldState { effector, object, goal, attached: false, t: 0 };
        }
    }
}

pub fn reset(task: &TaskSpec, seed: u64) -> Observation {
    let state = reset_state(task, seed);
    let frame = render(&state, task);
    let low_dim = state.low_dim();
    Observation { state, frame, low_dim }
}

/// Pure transition function.
pub fn transition(state: &WorldState, action: &Action, task: &TaskSpec) -> (WorldState, bool) {
    let (a, clamped) = action.clamped();
    let mut s = state.clone();
    s.t += 1;
    s.effector = clamp_unit([
        s.effector[0] + task.step_size * a.velocity[0],
        s.effector[1] + task.step_size * a.velocity[1],
    ]);
    match task.kind {
        TaskKind::Reach => {}
        TaskKind::Push => push_contact(&mut s, task),
        TaskKind::PickLite => {
            if s.attached {
                if a.grip > 0.0 {
                    s.object = s.effector;
                } else {
                    s.attached = false;
                }
            } else if a.grip > 0.0 && dist(s.effector, s.object) - task.contact_distance() <= task.grasp_gap {
                s.attached = true;
                s.object = s.effector;
            } else {
                push_contact(&mut s, task);
            }
        }
    }
    (s, clamped)
}

fn push_contact(s: &mut WorldState, task: &TaskSpec) {
    let d = dist(s.effector, s.object);
    let overlap = task.contact_distance() - d;
    if overlap <= 0.0 {
        return;
    }
    let n = if d > 1e-12 {
        [(s.object[0] - s.effector[0]) / d, (s.object[1] - s.effector[1]) / d]
    } else {
        [1.0, 0.0]
    };
    s.object = clamp_unit([s.object[0] + n[0] * overlap, s.object[1] + n[1] * overlap]);
}

pub fn step(state: &WorldState, action: &Action, task: &TaskSpec) -> StepOutcome {
    let (next, action_clamped) = transition(state, action, task);
    let sparse = success(&next, task);
    let truncated = !sparse && next.t >= task.horizon;
    let frame = render(&next, task);
    let low_dim = next.low_dim();
    StepOutcome { state: next, frame, low_dim, sparse, done: sparse, truncated, action_clamped }
}

/// Closed-ball success predicates.
pub fn success(state: &WorldState, task: &TaskSpec) -> bool {
    match task.kind {
        TaskKind::Reach => dist(state.effector, state.goal) <= task.success_radius,
        TaskKind::Push => dist(state.object, state.goal) <= task.success_radius,
        TaskKind::PickLite => state.attached && dist(state.object, state.goal) <= task.success_radius,
    }
}

pub const GOAL_INTENSITY: f32 = 0.4;
pub const OBJECT_INTENSITY: f32 = 0.7;
pub const EFFECTOR_INTENSITY: f32 = 1.0;
pub const ATTACHED_INTENSITY: f32 = 0.85;

const GOAL_RING_RADIUS: f64 = 0.07;
const EFFECTOR_DRAW_RADIUS: f64 = 0.035;
const ATTACHED_DRAW_RADIUS: f64 = 0.065;

/// Anti-aliased grayscale raster, composited with `max`.
pub fn render(state: &WorldState, task: &TaskSpec) -> Frame {
    let n = task.frame_size;
    let mut frame = Frame::filled(n, n, 1, 0.0);
    let scale = n as f64;
    let mut paint = |center: Vec2, radius: f64, ring: bool, intensity: f32| {
        let (cx, cy) = (center[0] * scale, center[1] * scale);
        let r = radius * scale;
        let lo_y = ((cy - r - 2.0).floor().max(0.0)) as usize;
        let hi_y = ((cy + r + 2.0).ceil().min(scale - 1.0)) as usize;
        let lo_x = ((cx - r - 2.0).floor().max(0.0)) as usize;
        let hi_x = ((cx + r + 2.0).ceil().min(scale - 1.0)) as usize;
        for y in lo_y..=hi_y {
            for x in lo_x..=hi_x {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                let coverage = if ring { 1.0 - (d - r).abs() } else { r + 0.5 - d };
                let v = (coverage.clamp(0.0, 1.0) as f32) * intensity;
                if v > frame.get(y, x, 0) {
                    frame.set(y, x, 0, v);
                }
            }
        }
    };
    paint(state.goal, GOAL_RING_RADIUS, true, GOAL_INTENSITY);
    match task.kind {
        TaskKind::Reach => paint(state.effector, EFFECTOR_DRAW_RADIUS, false, EFFECTOR_INTENSITY),
        _ if state.attached => paint(state.effector, ATTACHED_DRAW_RADIUS, false, ATTACHED_INTENSITY),
        _ => {
            paint(state.object, task.object_radius, false, OBJECT_INTENSITY);
            paint(state.effector, EFFECTOR_DRAW_RADIUS, false, EFFECTOR_INTENSITY);
        }
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Weighted centroid of pixels brighter than `above`, optionally ignoring a
    /// disc around `exclude`.
    fn centroid(frame: &Frame, above: f32, exclude: Option<(f64, f64)>) -> (f64, f64) {
        let (mut sx, mut sy, mut w) = (0.0, 0.0, 0.0);
        for y in 0..frame.height() {
            for x in 0..frame.width() {
                let v = frame.get(y, x, 0);
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                if let Some((ex, ey)) = exclude {
                    if ((cx - ex).powi(2) + (cy - ey).powi(2)).sqrt() < 3.0 {
                        continue;
                    }
                }
                if v > above {
                    sx += v as f64 * cx;
                    sy += v as f64 * cy;
                    w += v as f64;
                }
            }
        }
        (sx / w, sy / w)
    }

    #[test]
    fn reset_is_deterministic_and_separated() {
        for kind in TaskKind::ALL {
            let task = TaskSpec::new(kind);
            assert_eq!(reset_state(&task, 42), reset_state(&task, 42));
            for seed in 0..1000 {
                let s = reset_state(&task, seed);
                assert!(dist(s.effector, s.goal) >= 0.15);
                if kind == TaskKind::Reach {
                    assert_eq!(s.object, s.goal);
                } else {
                    assert!(dist(s.effector, s.object) >= 0.15);
                    assert!(dist(s.object, s.goal) >= 0.15);
                }
            }
        }
    }

    #[test]
    fn zero_action_only_advances_time() {
        for kind in TaskKind::ALL {
            let task = TaskSpec::new(kind);
            let s = reset_state(&task, 3);
            let out = step(&s, &Action::ZERO, &task);
            let mut expect = s.clone();
            expect.t = 1;
            assert_eq!(out.state, expect);
        }
    }

    #[test]
    fn out_of_range_actions_are_clamped_and_flagged() {
        let task = TaskSpec::new(TaskKind::Reach);
        let mut s = reset_state(&task, 0);
        s.effector = [0.5, 0.5];
        let out = step(&s, &Action { velocity: [3.0, -0.5], grip: 0.0 }, &task);
        assert!(out.action_clamped);
        assert!((out.state.effector[0] - 0.53).abs() < 1e-12);
        assert!((out.state.effector[1] - 0.485).abs() < 1e-12);
    }

    #[test]
    fn success_is_a_closed_ball() {
        let task = TaskSpec::new(TaskKind::Reach);
        let mut s = reset_state(&task, 0);
        s.effector = s.goal;
        assert!(success(&s, &task));
        let wide = TaskSpec { success_radius: 0.25, ..task.clone() };
        s.goal = [0.5, 0.5];
        s.effector = [0.75, 0.5];
        assert!(success(&s, &wide));
        s.effector = [0.750001, 0.5];
        assert!(!success(&s, &wide));

        let push = TaskSpec::new(TaskKind::Push);
        let far = WorldState { effector: [0.1, 0.1], object: [0.2, 0.2], goal: [0.8, 0.8], attached: false, t: 0 };
        assert!(!success(&far, &push));
    }

    #[test]
    fn success_step_is_terminal_with_sparse_reward() {
        let task = TaskSpec::new(TaskKind::Reach);
        let s = WorldState { effector: [0.5, 0.5], object: [0.52, 0.5], goal: [0.52, 0.5], attached: false, t: 0 };
        let out = step(&s, &Action::ZERO, &task);
        assert!(out.sparse && out.done && !out.truncated);
    }

    #[test]
    fn object_moves_only_on_contact() {
        let task = TaskSpec::new(TaskKind::Push);
        let s = WorldState { effector: [0.2, 0.5], object: [0.4, 0.5], goal: [0.8, 0.8], attached: false, t: 0 };
        let out = step(&s, &Action { velocity: [1.0, 0.0], grip: 0.0 }, &task);
        assert_eq!(out.state.object, s.object);

        let s = WorldState { effector: [0.3, 0.5], object: [0.4, 0.5], goal: [0.8, 0.8], attached: false, t: 0 };
        let out = step(&s, &Action { velocity: [1.0, 0.0], grip: 0.0 }, &task);
        // effector at 0.33, contact distance 0.08 → object pushed to 0.41
        assert!((out.state.object[0] - 0.41).abs() < 1e-12);
        assert!((out.state.object[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grip_attaches_and_carries() {
        let task = TaskSpec::new(TaskKind::PickLite);
        let s = WorldState { effector: [0.3, 0.5], object: [0.42, 0.5], goal: [0.8, 0.8], attached: false, t: 0 };
        let out = step(&s, &Action { velocity: [0.0, 0.0], grip: 1.0 }, &task);
        assert!(out.state.attached);
        assert_eq!(out.state.object, out.state.effector);
        let out2 = step(&out.state, &Action { velocity: [1.0, 0.0], grip: 1.0 }, &task);
        assert_eq!(out2.state.object, out2.state.effector);
        let out3 = step(&out2.state, &Action { velocity: [1.0, 0.0], grip: -1.0 }, &task);
        assert!(!out3.state.attached);
        assert_eq!(out3.state.object, out2.state.object);

        // pressing without a grip pushes instead of grasping
        let s = WorldState { effector: [0.35, 0.5], object: [0.42, 0.5], goal: [0.8, 0.8], attached: false, t: 0 };
        let out = step(&s, &Action { velocity: [1.0, 0.0], grip: -1.0 }, &task);
        assert!(!out.state.attached);
        assert!(out.state.object[0] > 0.42);
    }

    #[test]
    fn render_is_deterministic_and_centered() {
        let task = TaskSpec::new(TaskKind::Reach);
        let s = WorldState { effector: [0.5, 0.5], object: [0.2, 0.2], goal: [0.2, 0.2], attached: false, t: 0 };
        let a = render(&s, &task);
        assert_eq!(a, render(&s, &task));
        let (mut best, mut at) = (-1.0, (0, 0));
        for y in 0..32 {
            for x in 0..32 {
                if a.get(y, x, 0) > best {
                    best = a.get(y, x, 0);
                    at = (x, y);
                }
            }
        }
        assert!((at.0 as i32 - 16).abs() <= 1 && (at.1 as i32 - 16).abs() <= 1, "{at:?}");
    }

    #[test]
    fn rendered_blobs_agree_with_low_dim_state() {
        let task = TaskSpec::new(TaskKind::Push);
        for seed in 0..50 {
            let mut s = reset_state(&task, seed);
            // keep blobs apart so each intensity band belongs to one entity
            if dist(s.effector, s.object) < 0.2 {
                continue;
            }
            s.goal = [2.0, 2.0];
            let f = render(&s, &task);
            let (ex, ey) = centroid(&f, 0.7, None);
            let (ox, oy) = centroid(&f, 0.45, Some((ex, ey)));
            let px = |v: f64| v * 32.0;
            assert!((ex - px(s.effector[0])).abs() <= 1.0 && (ey - px(s.effector[1])).abs() <= 1.0);
            assert!((ox - px(s.object[0])).abs() <= 1.0 && (oy - px(s.object[1])).abs() <= 1.0);
        }
    }

    #[test]
    fn positions_stay_on_canvas() {
        let task = TaskSpec::new(TaskKind::Push);
        let mut s = reset_state(&task, 9);
        for _ in 0..100 {
            s = step(&s, &Action { velocity: [1.0, 1.0], grip: 0.0 }, &task).state;
        }
        assert!(s.effector.iter().chain(&s.object).all(|v| (0.0..=1.0).contains(v)));
    }
}
