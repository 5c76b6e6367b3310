//! Run configuration, manifests, analysis artifacts, ablation sweeps, and
//! the command implementations behind the `bst` binary.

mod ablation;
mod analysis;
mod commands;
mod config;
mod heatmap;
mod manifest;

pub use ablation::{
    ablate_cdq, ablate_critics, ablate_lambda, ablate_temperature, run_ablation, AblationSpec, ArmResult, CdqArm,
    Sweep, SweepResult, SweepRow,
};
pub use analysis::{analyze_morse, CertaintyAnalysis, CertaintySample, Population};
pub use commands::{
    run_ablate, run_analyze_morse, run_evaluate, run_gen_data, run_train_agent, run_train_morse, Baseline,
};
pub use config::{DatasetConfig, InputPaths, PhaseSeeds, RunConfig};
pub use heatmap::{emit_heatmap, emit_heatmap_with_axis, encode_pgm};
pub use manifest::{input_hash, PhaseTiming, RunManifest, MANIFEST_FILE};

use std::path::{Path, PathBuf};

use crate::agent::AgentError;
use crate::envdata::EnvError;
use crate::morse::MorseError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Morse(#[from] MorseError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Whether the failure comes from the configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::Env(EnvError::Config(_))
                | HarnessError::Morse(MorseError::Config(_))
                | HarnessError::Agent(AgentError::Config(_))
        )
    }

    /// Process exit status: 1 for configuration errors, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        if self.is_config() {
            1
        } else {
            2
        }
    }
}

/// Worker cap from `BST_THREADS`, default 1.
pub fn thread_cap() -> usize {
    std::env::var("BST_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}
