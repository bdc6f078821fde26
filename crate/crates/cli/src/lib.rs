//! Experiment harness: configuration, seeded training runs, ablations,
//! encoder diagnostics and CSV/SVG artifacts.

pub mod ablate;
pub mod analysis;
pub mod cmd;
pub mod config;
pub mod csvio;
pub mod heatmap;
pub mod pretrain;
pub mod snapshot;
pub mod svg;
pub mod train;

pub use config::{RewardMode, RunConfig};

use deg_core::error::DegError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] DegError),

    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for anything that
    /// failed at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Core(DegError::InvalidConfig { .. }) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
