//! Command-line surface of the `deg` binary.

use crate::ablate::{self, ABLATION_MODES};
use crate::config::{RewardMode, RunConfig};
use crate::train::TrainOptions;
use crate::{heatmap, pretrain, HarnessError, Result};
use clap::{Args, Parser, Subcommand};
use deg_core::agent::{evaluate, load_policy, Greedy};
use deg_core::env::TaskKind;
use deg_core::guidance::{corrupt, load_clip, save_clip, ExpertPool, NoiseModel};
use deg_core::latent::{load_encoder, EncoderParams};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "deg", version, about = "Dual-granularity guidance rewards: training and diagnostics")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seeds, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seed: Option<Vec<u64>>,

    /// Output root directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// reach, push or pick-lite.
    #[arg(long, global = true)]
    pub task: Option<String>,

    /// sparse_only, coarse_only, fine_only, dual or dual_plus_sparse.
    #[arg(long = "reward-mode", global = true)]
    pub reward_mode: Option<String>,

    /// Encoder checkpoint; overrides `encoder_path` in the config.
    #[arg(long, global = true)]
    pub encoder: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Contrastive encoder pretraining on the task's expert clips.
    PretrainEncoder {
        /// Directory holding the expert clips.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Generate the expert clips when the pool is missing.
        #[arg(long)]
        generate: bool,
    },
    /// Writes expert clips and their corrupted guidance copies.
    GenGuidance {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Trains every configured seed in one reward mode.
    Train {
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Coarse-only, fine-only and dual runs on shared seeds.
    Ablate {
        #[arg(long)]
        resume: bool,
    },
    /// Similarity heatmaps between two clips.
    Heatmap {
        #[arg(long)]
        clip_a: PathBuf,
        /// Defaults to a corrupted copy of clip A.
        #[arg(long)]
        clip_b: Option<PathBuf>,
    },
    /// Greedy evaluation of a saved policy.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Runs the reward service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Idle session timeout in seconds.
        #[arg(long)]
        idle_timeout: Option<u64>,
    },
}

/// Config file (or defaults) with the global flags applied, validated.
/// Training commands also require an encoder for guided modes.
pub fn load_config(g: &GlobalArgs, training: bool) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = &g.task {
        let kind: TaskKind = t.parse().map_err(|e: deg_core::error::DegError| HarnessError::Config(e.to_string()))?;
        if cfg.task != kind {
            cfg.task = kind;
            cfg.env = None;
            cfg.reward = None;
        }
    }
    if let Some(m) = &g.reward_mode {
        cfg.reward_mode = m.parse::<RewardMode>().map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    if let Some(s) = &g.seed {
        cfg.seeds = s.clone();
    }
    if let Some(o) = &g.out {
        cfg.out_dir = o.clone();
    }
    if let Some(e) = &g.encoder {
        cfg.encoder_path = Some(e.clone());
    }
    if training {
        cfg.validate()?;
    } else {
        cfg.validate_settings()?;
    }
    Ok(cfg)
}

fn encoder_for(cfg: &RunConfig, modes: &[RewardMode]) -> Result<Option<EncoderParams<f32>>> {
    if !modes.iter().any(|m| m.uses_guidance()) {
        return Ok(None);
    }
    let path = cfg.encoder_path.as_ref().ok_or_else(|| HarnessError::Config("encoder_path: required for guided reward modes".into()))?;
    Ok(Some(load_encoder(path)?))
}

fn task_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join(cfg.task.name())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Serve { port, idle_timeout } = cli.command {
        return serve(&cli.global, port, idle_timeout);
    }
    let training = matches!(cli.command, Command::Train { .. } | Command::Ablate { .. });
    let cfg = load_config(&cli.global, training)?;
    match cli.command {
        Command::PretrainEncoder { pool, generate } => {
            let spec = cfg.task_spec();
            let pool = pretrain::expert_pool(&spec, &cfg.guidance, pool.as_deref(), generate)?;
            let out = task_dir(&cfg).join("encoder");
            let art = pretrain::run(&pool, &cfg.guidance, &cfg.encoder, &out)?;
            println!("encoder: {}", art.checkpoint.display());
            println!("loss log: {}", art.loss_csv.display());
            if let Some(l) = art.outcome.final_loss(100) {
                println!("final loss (last 100 steps): {l:.4}");
            }
        }
        Command::GenGuidance { count } => {
            let spec = cfg.task_spec();
            let n = count.unwrap_or(cfg.guidance.pool_clips);
            let pool = ExpertPool::generate(&spec, n, cfg.guidance.clip_len, pretrain::POOL_BASE_SEED)?;
            let dir = task_dir(&cfg).join("pool");
            pool.save_dir(&dir)?;
            let noisy = dir.join("corrupted");
            std::fs::create_dir_all(&noisy)?;
            for (k, clip) in pool.clips.iter().enumerate() {
                let noise = NoiseModel { rng_seed: cfg.guidance.noise.rng_seed.wrapping_add(k as u64), ..cfg.guidance.noise.clone() };
                save_clip(&corrupt(clip, &noise), &noisy.join(format!("{}_{k:02}.degc", cfg.task)))?;
            }
            println!("{n} expert clips in {}", dir.display());
        }
        Command::Train { resume, stop_after } => {
            let encoder = encoder_for(&cfg, &[cfg.reward_mode])?;
            let run = ablate::run_mode(&cfg, encoder.as_ref(), TrainOptions { resume, stop_after })?;
            for s in &run.seeds {
                let state = if s.completed { "done" } else { "stopped" };
                println!("seed {} {state}: final success {:.3} ({})", s.seed, s.final_success(), s.dir.display());
            }
        }
        Command::Ablate { resume } => {
            let encoder = encoder_for(&cfg, &ABLATION_MODES)?;
            let rows = ablate::run_ablation(&cfg, encoder.as_ref(), TrainOptions { resume, stop_after: None })?;
            println!("{:<12} {:>8} {:>8} {:>10} {:>10}", "mode", "final", "auc", "path_dev", "closest");
            for (m, f, a, d, c) in ablate::summarize(&rows) {
                println!("{:<12} {f:>8.3} {a:>8.3} {d:>10.4} {c:>10.4}", m.name());
            }
            println!("table: {}", task_dir(&cfg).join("ablation.csv").display());
        }
        Command::Heatmap { clip_a, clip_b } => {
            let path = cfg.encoder_path.as_ref().ok_or_else(|| HarnessError::Config("heatmap needs --encoder".into()))?;
            let enc: EncoderParams<f32> = load_encoder(path)?;
            let a = load_clip(&clip_a)?;
            let b = match clip_b {
                Some(p) => load_clip(&p)?,
                None => corrupt(&a, &cfg.guidance.noise),
            };
            let out = task_dir(&cfg).join("heatmap");
            for s in heatmap::run(&enc, &a, &b, &out)? {
                println!("{:<8} interval {} frames {:>3}: diagonal {:.3}, margin {:.3}", s.encoder, s.interval, s.frames, s.diag_mean, s.margin);
            }
            println!("written to {}", out.display());
        }
        Command::Eval { policy, episodes } => {
            let params = load_policy::<f32>(&policy)?;
            let spec = cfg.task_spec();
            let mut greedy = Greedy { params: &params, pixel_obs: cfg.agent.pixel_obs };
            let n = episodes.unwrap_or(cfg.eval_episodes);
            for &seed in &cfg.seeds {
                let rate = evaluate(&mut greedy, &spec, n, seed)?;
                println!("seed {seed}: success {rate:.3} over {n} episodes");
            }
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn serve(g: &GlobalArgs, port: u16, idle_timeout: Option<u64>) -> Result<()> {
    use deg_server::{ServerError, DEFAULT_IDLE_TIMEOUT};
    let srv = |e: ServerError| match e {
        ServerError::MissingEncoder => HarnessError::Config(e.to_string()),
        other => HarnessError::Runtime(other.to_string()),
    };
    let path = deg_server::encoder_path(g.encoder.clone()).map_err(srv)?;
    let encoder = deg_server::load_service_encoder(&path).map_err(srv)?;
    let idle = idle_timeout.map(std::time::Duration::from_secs).unwrap_or(DEFAULT_IDLE_TIMEOUT);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = deg_server::bind(port).await?;
        log::info!("listening on {}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        deg_server::serve(listener, deg_server::AppState::new(encoder, idle), shutdown).await
    })
    .map_err(srv)
}
