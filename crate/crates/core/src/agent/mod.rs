//! TD3 with a Morse behavioral supervisor, plus cloning and TD3 baselines.
//!
//! Critics regress toward smoothed target-policy bootstraps. The actor
//! ascends a batch-normalized Q estimate while a cloning penalty, scaled by
//! `w = e^(C/μ) − 1` with `C = 1 − M(s, π(s))`, pulls it back toward the data
//! wherever the Morse model is uncertain about the policy's action.

mod bc;
mod checkpoint;
mod eval;
mod train;
mod update;

pub use bc::{train_bc, BcConfig, BcWeighting};
pub use checkpoint::{load_agent, read_agent, save_agent, write_agent, AgentCheckpoint, AGENT_MAGIC, AGENT_VERSION};
pub use eval::{deviation_stats, evaluate, DeviationStats, EvalStats, OraclePolicy, Policy, UniformPolicy};
pub use train::{train_td3bst, MetricRow, TrainOutcome, UpdateAudit, UpdateEvent};
pub use update::{
    bst_policy_update, critic_update, disadvantage_weight, policy_gradient, q_normalizer, td_targets, AgentBatch,
    BstDiagnostics, CriticStats, PolicyStep,
};

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envdata::{EnvError, StateNormalizer};
use crate::morse::MorseError;
use crate::nn::{AdamConfig, DenseNet, NnError};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("non-finite values in {0}")]
    Numeric(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Morse(#[from] MorseError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AgentError> = std::result::Result<T, E>;

/// How critics bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Every critic regresses toward the minimum over all target critics;
    /// the actor ascends critic 0.
    ClippedDouble,
    /// Each critic regresses toward its own target; the actor ascends the
    /// ensemble mean.
    Independent,
}

/// Actor objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    /// Normalized Q ascent plus the Morse-weighted cloning penalty.
    Bst,
    /// Normalized Q ascent scaled by `alpha` plus an unweighted cloning penalty.
    Td3Bc { alpha: f64 },
    /// Normalized Q ascent alone.
    Td3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    /// μ
    pub temperature: f64,
    /// γ
    pub discount: f64,
    /// ρ
    pub target_rate: f64,
    /// m: critic updates per policy update.
    pub policy_delay: usize,
    pub batch_size: usize,
    /// T_AC
    pub steps: usize,
    pub noise_std: f64,
    pub noise_clip: f64,
    pub critics: usize,
    pub target_mode: TargetMode,
    pub objective: Objective,
    /// Let the actor gradient flow through `w` into the Morse model's action
    /// input instead of treating `w` as a constant.
    pub weight_gradient: bool,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_optimizer: AdamConfig,
    pub critic_optimizer: AdamConfig,
    /// Learner steps between evaluations; `0` disables periodic evaluation.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub final_eval_episodes: usize,
    /// Learner steps between metric rows.
    pub log_every: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            discount: 0.99,
            target_rate: 0.005,
            policy_delay: 2,
            batch_size: 256,
            steps: 200_000,
            noise_std: 0.2,
            noise_clip: 0.5,
            critics: 2,
            target_mode: TargetMode::ClippedDouble,
            objective: Objective::Bst,
            weight_gradient: false,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            actor_optimizer: AdamConfig::default(),
            critic_optimizer: AdamConfig::default(),
            eval_every: 5_000,
            eval_episodes: 20,
            final_eval_episodes: 100,
            log_every: 1_000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(AgentError::Config(m));
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return fail(format!("discount must lie in [0, 1), got {}", self.discount));
        }
        if !(0.0..=1.0).contains(&self.target_rate) {
            return fail(format!("target rate must lie in [0, 1], got {}", self.target_rate));
        }
        if self.policy_delay == 0 {
            return fail("policy delay must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if self.critics == 0 {
            return fail("need at least one critic".into());
        }
        if self.noise_std < 0.0 || self.noise_clip < 0.0 {
            return fail("target smoothing noise must be non-negative".into());
        }
        if let Objective::Td3Bc { alpha } = self.objective {
            if !(alpha > 0.0) {
                return fail(format!("TD3-BC alpha must be positive, got {alpha}"));
            }
        }
        if self.log_every == 0 {
            return fail("log interval must be positive".into());
        }
        Ok(())
    }

    /// Largest admissible disadvantage weight, `e^(1/μ) − 1`.
    pub fn max_weight(&self) -> f64 {
        (1.0 / self.temperature).exp_m1()
    }
}

/// Deterministic squashed policy with a target copy. Raw environment states
/// go in; normalization happens inside.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub online: DenseNet,
    pub target: DenseNet,
    normalizer: StateNormalizer,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        normalizer: StateNormalizer,
        rng: &mut R,
    ) -> Result<Self> {
        let online = DenseNet::mlp(state_dim, hidden, action_dim, true, rng);
        Self::from_parts(online.clone(), online, normalizer)
    }

    pub fn from_parts(online: DenseNet, target: DenseNet, normalizer: StateNormalizer) -> Result<Self> {
        if !online.squashed() {
            return Err(AgentError::Config("policy output must be squashed".into()));
        }
        if !online.same_architecture(&target) {
            return Err(AgentError::Config("policy and target architectures differ".into()));
        }
        if normalizer.dim() != online.input_width() {
            return Err(AgentError::Config(format!(
                "normalizer has {} dims, policy expects {}",
                normalizer.dim(),
                online.input_width()
            )));
        }
        Ok(Self {
            online,
            target,
            normalizer,
        })
    }

    pub fn normalizer(&self) -> &StateNormalizer {
        &self.normalizer
    }

    pub fn state_dim(&self) -> usize {
        self.online.input_width()
    }

    pub fn action_dim(&self) -> usize {
        self.online.output_width()
    }

    /// Online actions for raw states.
    pub fn act_batch(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        let normed = self.normalizer.apply(&states.to_owned());
        Ok(self.online.forward_batch(normed.view())?)
    }

    pub fn action(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.online.forward(&self.normalizer.apply_one(state))?)
    }
}

/// Q networks over normalized state ⊕ action, each with a target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticEnsemble {
    pub online: Vec<DenseNet>,
    pub target: Vec<DenseNet>,
    pub mode: TargetMode,
}

impl CriticEnsemble {
    pub fn new<R: Rng + ?Sized>(
        count: usize,
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        mode: TargetMode,
        rng: &mut R,
    ) -> Result<Self> {
        if count == 0 {
            return Err(AgentError::Config("need at least one critic".into()));
        }
        let online: Vec<DenseNet> = (0..count)
            .map(|_| DenseNet::mlp(state_dim + action_dim, hidden, 1, false, rng))
            .collect();
        Ok(Self {
            target: online.clone(),
            online,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.online.len()
    }

    pub fn is_empty(&self) -> bool {
        self.online.is_empty()
    }

    /// Indices of the critics whose mean forms the actor's Q estimate.
    pub fn actor_critics(&self) -> std::ops::Range<usize> {
        match self.mode {
            TargetMode::ClippedDouble => 0..1,
            TargetMode::Independent => 0..self.online.len(),
        }
    }
}

pub(crate) fn state_action(states: &Array2<f64>, actions: &Array2<f64>) -> Array2<f64> {
    concatenate![Axis(1), states.view(), actions.view()]
}
