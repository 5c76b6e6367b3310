//! Toy environments, behavior data generation, and the offline dataset.

mod bandit;
mod dataset;
mod format;
mod generate;
mod maze;

pub use bandit::{four_mode_dataset, FourModeBandit, MODE_CENTERS, MODE_REWARDS, MODE_STD};
pub use dataset::{permuted_actions, ReplayDataset, StateNormalizer, Transition, TransitionBatch};
pub use format::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use generate::{generate_maze_dataset, rollout_waypoints, GenerationReport, MazeDataConfig};
pub use maze::{Cell, GoalOracle, MazeLayout, PointMaze, PointMazeSpec};

use rand::RngCore;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EnvError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

/// A deterministic environment over continuous states and actions in
/// `[-1, 1]^k`.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    /// Writes the successor into `next` and returns reward and termination.
    fn step(&self, state: &[f64], action: &[f64], next: &mut Vec<f64>) -> Result<StepOutcome>;
    /// Whether a transition with this outcome counts as task success.
    fn is_success(&self, outcome: &StepOutcome) -> bool;
}

/// Environment selection as it appears in run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    FourModeBandit {
        #[serde(default = "bandit::default_reward_radius")]
        reward_radius: f64,
    },
    PointMaze(PointMazeSpec),
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::FourModeBandit {
            reward_radius: bandit::default_reward_radius(),
        }
    }
}

impl EnvSpec {
    pub fn build(&self) -> Result<Env> {
        match self {
            EnvSpec::FourModeBandit { reward_radius } => Ok(Env::Bandit(FourModeBandit::new(*reward_radius)?)),
            EnvSpec::PointMaze(spec) => Ok(Env::Maze(PointMaze::from_spec(spec)?)),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Env {
    Bandit(FourModeBandit),
    Maze(PointMaze),
}

impl Env {
    pub fn as_maze(&self) -> Option<&PointMaze> {
        match self {
            Env::Maze(m) => Some(m),
            Env::Bandit(_) => None,
        }
    }
}

impl Environment for Env {
    fn state_dim(&self) -> usize {
        match self {
            Env::Bandit(e) => e.state_dim(),
            Env::Maze(e) => e.state_dim(),
        }
    }

    fn action_dim(&self) -> usize {
        match self {
            Env::Bandit(e) => e.action_dim(),
            Env::Maze(e) => e.action_dim(),
        }
    }

    fn horizon(&self) -> usize {
        match self {
            Env::Bandit(e) => e.horizon(),
            Env::Maze(e) => e.horizon(),
        }
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        match self {
            Env::Bandit(e) => e.reset(rng),
            Env::Maze(e) => e.reset(rng),
        }
    }

    fn step(&self, state: &[f64], action: &[f64], next: &mut Vec<f64>) -> Result<StepOutcome> {
        match self {
            Env::Bandit(e) => e.step(state, action, next),
            Env::Maze(e) => e.step(state, action, next),
        }
    }

    fn is_success(&self, outcome: &StepOutcome) -> bool {
        match self {
            Env::Bandit(e) => e.is_success(outcome),
            Env::Maze(e) => e.is_success(outcome),
        }
    }
}

/// Deterministic per-item seed derived from a base seed (SplitMix64 finaliser).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
