use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AblationSpec, HarnessError, Result};
use crate::agent::{AgentConfig, BcConfig};
use crate::envdata::{derive_seed, EnvSpec, MazeDataConfig};
use crate::morse::MorseConfig;

/// One run, as read from a JSON document. Unknown keys are rejected at every
/// level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub dataset: DatasetConfig,
    pub morse: MorseConfig,
    pub agent: AgentConfig,
    /// Cloning baselines.
    pub bc: BcConfig,
    pub ablation: Option<AblationSpec>,
    pub inputs: InputPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Points drawn for the four-mode bandit.
    pub bandit_points: usize,
    pub maze: MazeDataConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            bandit_points: 128,
            maze: MazeDataConfig::default(),
        }
    }
}

/// Artifacts from earlier runs. Relative paths resolve against the
/// directory holding the config file. Anything missing is regenerated from
/// the config and seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputPaths {
    pub dataset: Option<PathBuf>,
    pub morse: Option<PathBuf>,
    pub agent: Option<PathBuf>,
}

/// Seeds for each phase, split from the master seed by `derive_seed(master, i)`
/// with `i` = 1 (data), 2 (Morse), 3 (agent), 4 (evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSeeds {
    pub master: u64,
    pub data: u64,
    pub morse: u64,
    pub agent: u64,
    pub eval: u64,
}

impl PhaseSeeds {
    pub fn split(master: u64) -> Self {
        Self {
            master,
            data: derive_seed(master, 1),
            morse: derive_seed(master, 2),
            agent: derive_seed(master, 3),
            eval: derive_seed(master, 4),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.inputs.dataset);
        fix(&mut self.inputs.morse);
        fix(&mut self.inputs.agent);
        if let EnvSpec::PointMaze(spec) = &mut self.env {
            fix(&mut spec.maze_file);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if self.dataset.bandit_points < 4 {
            return Err(HarnessError::Config("dataset.bandit_points must be at least 4".into()));
        }
        if self.morse.hidden.contains(&0) || self.agent.actor_hidden.contains(&0) || self.agent.critic_hidden.contains(&0) {
            return Err(HarnessError::Config("hidden layer widths must be positive".into()));
        }
        if let Some(a) = &self.ablation {
            a.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
