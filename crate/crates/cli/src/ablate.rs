//! Multi-seed runs, reward-mode comparisons and their artifacts.

use crate::analysis::{self, aggregate, auc};
use crate::config::{RewardMode, RunConfig};
use crate::csvio::{self, CsvLog};
use crate::svg::{self, Series};
use crate::train::{self, eval_round_seed, mode_dir, seed_dir, RunContext, SeedOutcome, TrainOptions};
use crate::{HarnessError, Result};
use deg_core::agent::{evaluate_traced, Greedy, PolicyParams};
use deg_core::latent::EncoderParams;
use std::path::Path;

/// Reads `(step, success_rate)` from a training CSV.
pub fn read_curve(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |e: String| HarnessError::Runtime(format!("{}: {e}", path.display()));
        let step = rec[0].parse::<usize>().map_err(|e| bad(e.to_string()))?;
        let success = rec[5].parse::<f64>().map_err(|e| bad(e.to_string()))?;
        out.push((step, success));
    }
    Ok(out)
}

pub struct ModeRun {
    pub mode: RewardMode,
    pub seeds: Vec<SeedOutcome>,
}

impl ModeRun {
    pub fn curves(&self) -> Vec<Vec<(usize, f64)>> {
        self.seeds.iter().map(|s| s.curve.clone()).collect()
    }

    pub fn mean_final(&self) -> f64 {
        analysis::mean(&self.seeds.iter().map(|s| s.final_success()).collect::<Vec<_>>())
    }

    /// First step where the seed-mean success reaches `level`.
    pub fn mean_first_reach(&self, level: f64) -> Option<usize> {
        let agg: Vec<(usize, f64)> = aggregate(&self.curves()).into_iter().map(|p| (p.0, p.1)).collect();
        analysis::first_reach(&agg, level)
    }
}

/// Trains every seed of `cfg` and writes the mode's learning-curve SVG.
pub fn run_mode(cfg: &RunConfig, encoder: Option<&EncoderParams<f32>>, opts: TrainOptions) -> Result<ModeRun> {
    let ctx = RunContext::new(cfg, encoder)?;
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let dir = seed_dir(&cfg.out_dir, cfg, seed);
        seeds.push(train::train_seed(&ctx, seed, &dir, opts)?);
    }
    if seeds.iter().all(|s| s.completed) {
        write_mode_curve(cfg)?;
    }
    Ok(ModeRun { mode: cfg.reward_mode, seeds })
}

fn mode_series(cfg: &RunConfig) -> Result<Vec<(usize, f64, f64, f64)>> {
    let curves = cfg
        .seeds
        .iter()
        .map(|&s| read_curve(&seed_dir(&cfg.out_dir, cfg, s).join("training.csv")))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&curves))
}

/// `curve.svg` next to the seed directories, drawn from their CSVs.
pub fn write_mode_curve(cfg: &RunConfig) -> Result<()> {
    let pts = mode_series(cfg)?;
    let title = format!("{} / {}", cfg.task, cfg.reward_mode);
    let doc = svg::learning_curves(&title, &[Series { label: cfg.reward_mode.name(), points: &pts }]);
    std::fs::write(mode_dir(&cfg.out_dir, cfg).join("curve.svg"), doc)?;
    Ok(())
}

/// Every mode of a comparison on one plot.
pub fn write_comparison_curve(cfg: &RunConfig, modes: &[RewardMode], path: &Path) -> Result<()> {
    let mut all = Vec::new();
    for &m in modes {
        let c = RunConfig { reward_mode: m, ..cfg.clone() };
        all.push((m, mode_series(&c)?));
    }
    let series: Vec<Series<'_>> = all.iter().map(|(m, p)| Series { label: m.name(), points: p }).collect();
    std::fs::write(path, svg::learning_curves(&format!("{} reward modes", cfg.task), &series))?;
    Ok(())
}

/// Runs several reward modes with the same seeds.
pub fn run_modes(
    cfg: &RunConfig,
    modes: &[RewardMode],
    encoder: Option<&EncoderParams<f32>>,
    opts: TrainOptions,
) -> Result<Vec<ModeRun>> {
    for &m in modes {
        RunConfig { reward_mode: m, ..cfg.clone() }.validate()?;
    }
    let mut out = Vec::new();
    for &m in modes {
        let c = RunConfig { reward_mode: m, ..cfg.clone() };
        out.push(run_mode(&c, encoder, opts)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub mode: RewardMode,
    pub seed: u64,
    pub final_success: f64,
    pub auc: f64,
    /// Mean effector distance from the expert path over final evaluation
    /// episodes.
    pub path_deviation: f64,
    /// Mean over final evaluation episodes of the closest effector-object
    /// approach.
    pub closest_approach: f64,
}

/// Trace statistics of a trained policy on the final evaluation resets.
pub fn trace_metrics(params: &PolicyParams<f32>, cfg: &RunConfig, seed: u64) -> Result<(f64, f64)> {
    let spec = cfg.task_spec();
    let mut policy = Greedy { params, pixel_obs: cfg.agent.pixel_obs };
    let traces = evaluate_traced(&mut policy, &spec, cfg.eval_episodes, eval_round_seed(seed, cfg.total_steps))?;
    let mut dev = Vec::new();
    let mut close = Vec::new();
    for t in &traces {
        dev.push(analysis::path_deviation(t, &spec)?);
        close.push(analysis::closest_approach(t));
    }
    Ok((analysis::mean(&dev), analysis::mean(&close)))
}

pub fn ablation_rows(cfg: &RunConfig, runs: &[ModeRun]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for run in runs {
        let c = RunConfig { reward_mode: run.mode, ..cfg.clone() };
        for s in &run.seeds {
            let (path_deviation, closest_approach) = trace_metrics(&s.params, &c, s.seed)?;
            rows.push(AblationRow {
                mode: run.mode,
                seed: s.seed,
                final_success: s.final_success(),
                auc: auc(&s.curve),
                path_deviation,
                closest_approach,
            });
        }
    }
    Ok(rows)
}

pub const ABLATION_MODES: [RewardMode; 3] = [RewardMode::CoarseOnly, RewardMode::FineOnly, RewardMode::Dual];

/// Runs the coarse/fine/dual comparison and writes `ablation.csv` and
/// `ablation.svg` under `<out>/<task>/`.
pub fn run_ablation(cfg: &RunConfig, encoder: Option<&EncoderParams<f32>>, opts: TrainOptions) -> Result<Vec<AblationRow>> {
    let runs = run_modes(cfg, &ABLATION_MODES, encoder, opts)?;
    let rows = ablation_rows(cfg, &runs)?;
    let dir = cfg.out_dir.join(cfg.task.name());
    let mut log = CsvLog::create(&dir.join("ablation.csv"), &csvio::ABLATION)?;
    for r in &rows {
        log.row([
            r.mode.name().to_string(),
            r.seed.to_string(),
            r.final_success.to_string(),
            r.auc.to_string(),
            r.path_deviation.to_string(),
            r.closest_approach.to_string(),
        ])?;
    }
    log.sync()?;
    write_comparison_curve(cfg, &ABLATION_MODES, &dir.join("ablation.svg"))?;
    Ok(rows)
}

/// Per-mode means of the ablation table, in mode order.
pub fn summarize(rows: &[AblationRow]) -> Vec<(RewardMode, f64, f64, f64, f64)> {
    let mut modes: Vec<RewardMode> = Vec::new();
    for r in rows {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    modes
        .into_iter()
        .map(|m| {
            let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.mode == m).collect();
            let f = |g: fn(&AblationRow) -> f64| analysis::mean(&sel.iter().map(|r| g(r)).collect::<Vec<_>>());
            (m, f(|r| r.final_success), f(|r| r.auc), f(|r| r.path_deviation), f(|r| r.closest_approach))
        })
        .collect()
}
