//! Curve and trace statistics.

use deg_core::agent::EpisodeTrace;
use deg_core::env::{TaskSpec, Vec2};
use deg_core::error::Result;
use deg_core::guidance::scripted_expert;

fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Mean distance from each visited effector position to the nearest effector
/// position of the scripted expert started from the same state.
pub fn path_deviation(trace: &EpisodeTrace, task: &TaskSpec) -> Result<f64> {
    let expert = scripted_expert(task, &trace.states[0])?.effector_path();
    let total: f64 = trace
        .states
        .iter()
        .map(|s| expert.iter().map(|&p| dist(s.effector, p)).fold(f64::INFINITY, f64::min))
        .sum();
    Ok(total / trace.states.len() as f64)
}

/// Smallest effector-to-object center distance over an episode.
pub fn closest_approach(trace: &EpisodeTrace) -> f64 {
    trace.states.iter().map(|s| dist(s.effector, s.object)).fold(f64::INFINITY, f64::min)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trailing moving average; early points average what is available.
pub fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..v.len()).map(|i| mean(&v[i.saturating_sub(w - 1)..=i])).collect()
}

/// Normalized area under a success curve (trapezoid rule over steps, from a
/// zero-success origin).
pub fn auc(curve: &[(usize, f64)]) -> f64 {
    let Some(&(last, _)) = curve.last() else { return 0.0 };
    if last == 0 {
        return 0.0;
    }
    let mut prev = (0usize, 0.0);
    let mut area = 0.0;
    for &(s, y) in curve {
        area += (s - prev.0) as f64 * (y + prev.1) / 2.0;
        prev = (s, y);
    }
    area / last as f64
}

/// Pointwise mean, min and max across seeds. Curves must share steps.
pub fn aggregate(curves: &[Vec<(usize, f64)>]) -> Vec<(usize, f64, f64, f64)> {
    let Some(first) = curves.first() else { return Vec::new() };
    (0..first.len())
        .map(|i| {
            let ys: Vec<f64> = curves.iter().filter_map(|c| c.get(i).map(|p| p.1)).collect();
            let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (first[i].0, mean(&ys), lo, hi)
        })
        .collect()
}

/// First step at which a curve reaches `level`.
pub fn first_reach(curve: &[(usize, f64)], level: f64) -> Option<usize> {
    curve.iter().find(|p| p.1 >= level).map(|p| p.0)
}
