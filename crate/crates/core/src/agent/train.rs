use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    bst_policy_update, critic_update, evaluate, AgentBatch, AgentCheckpoint, AgentConfig, AgentError, BstDiagnostics, CriticEnsemble,
    EvalStats, Objective, PolicyNet, Result,
};
use crate::envdata::{derive_seed, Env, Environment, ReplayDataset, StateNormalizer};
use crate::morse::MorseModel;
use crate::nn::{soft_update, Adam};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateEvent {
    Critic,
    Policy,
    SoftUpdate,
}

/// Ordered record of every update the learner performed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateAudit {
    pub events: Vec<UpdateEvent>,
}

impl UpdateAudit {
    pub fn count(&self, kind: UpdateEvent) -> usize {
        self.events.iter().filter(|e| **e == kind).count()
    }

    /// Checks the schedule: a policy update after every `delay`-th critic
    /// update and nowhere else, each followed immediately by one soft update.
    pub fn verify(&self, delay: usize) -> std::result::Result<(), String> {
        let mut critics = 0;
        let mut i = 0;
        while i < self.events.len() {
            match self.events[i] {
                UpdateEvent::Critic => {
                    critics += 1;
                    let due = critics % delay == 0;
                    let next = self.events.get(i + 1);
                    if due && next != Some(&UpdateEvent::Policy) {
                        return Err(format!("critic update {critics} not followed by a policy update"));
                    }
                    if !due && next == Some(&UpdateEvent::Policy) {
                        return Err(format!("policy update after critic update {critics}"));
                    }
                }
                UpdateEvent::Policy => {
                    if self.events.get(i + 1) != Some(&UpdateEvent::SoftUpdate) {
                        return Err(format!("policy update at event {i} not followed by a soft update"));
                    }
                    i += 1;
                }
                UpdateEvent::SoftUpdate => return Err(format!("soft update at event {i} without a policy update")),
            }
            i += 1;
        }
        Ok(())
    }
}

/// Averages over one logging interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub mean_w: f64,
    pub mean_c: f64,
    pub z_q: f64,
    pub eval_return: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyNet,
    pub critics: CriticEnsemble,
    pub actor_optimizer: Adam,
    pub critic_optimizers: Vec<Adam>,
    pub audit: UpdateAudit,
    pub metrics: Vec<MetricRow>,
    /// One entry per policy update.
    pub diagnostics: Vec<BstDiagnostics>,
    pub evaluations: Vec<(usize, EvalStats)>,
    pub final_eval: Option<EvalStats>,
    pub warnings: Vec<String>,
}

impl TrainOutcome {
    pub fn violations(&self) -> usize {
        self.diagnostics.iter().map(|d| d.violations).sum()
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            policy: self.policy.clone(),
            critics: self.critics.clone(),
            optimizers: Some((self.actor_optimizer.clone(), self.critic_optimizers.clone())),
        }
    }
}

#[derive(Default)]
struct Accumulator {
    critic: f64,
    critic_n: usize,
    policy: f64,
    w: f64,
    c: f64,
    z: f64,
    policy_n: usize,
}

impl Accumulator {
    fn row(&mut self, step: usize, eval_return: Option<f64>) -> MetricRow {
        let avg = |v: f64, n: usize| if n == 0 { f64::NAN } else { v / n as f64 };
        let row = MetricRow {
            step,
            critic_loss: avg(self.critic, self.critic_n),
            policy_loss: avg(self.policy, self.policy_n),
            mean_w: avg(self.w, self.policy_n),
            mean_c: avg(self.c, self.policy_n),
            z_q: avg(self.z, self.policy_n),
            eval_return,
        };
        *self = Self::default();
        row
    }
}

/// Offline actor-critic training.
///
/// Each learner step performs one critic update; every `policy_delay`-th
/// step additionally updates the actor and then soft-updates all targets.
/// `env` enables periodic and final evaluation.
pub fn train_td3bst(
    dataset: &ReplayDataset,
    env: Option<&Env>,
    morse: Option<&MorseModel>,
    cfg: &AgentConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(AgentError::Config("dataset is empty".into()));
    }
    let (sd, ad) = (dataset.state_dim(), dataset.action_dim());
    if let Some(env) = env {
        if env.state_dim() != sd || env.action_dim() != ad {
            return Err(AgentError::Config(format!(
                "environment dims ({}, {}) do not match dataset dims ({sd}, {ad})",
                env.state_dim(),
                env.action_dim()
            )));
        }
    }
    match (cfg.objective, morse) {
        (Objective::Bst, None) => return Err(AgentError::Config("BST objective needs a Morse model".into())),
        (_, Some(m)) if m.state_dim() != sd || m.action_dim() != ad => {
            return Err(AgentError::Config(format!(
                "Morse model dims ({}, {}) do not match dataset dims ({sd}, {ad})",
                m.state_dim(),
                m.action_dim()
            )))
        }
        _ => {}
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normalizer = StateNormalizer::from_dataset(dataset);
    let mut policy = PolicyNet::new(sd, ad, &cfg.actor_hidden, normalizer.clone(), &mut rng)?;
    let mut critics = CriticEnsemble::new(cfg.critics, sd, ad, &cfg.critic_hidden, cfg.target_mode, &mut rng)?;
    let mut actor_opt = Adam::new(&policy.online, cfg.actor_optimizer);
    let mut critic_opts: Vec<Adam> = critics.online.iter().map(|c| Adam::new(c, cfg.critic_optimizer)).collect();

    let eval_seed = derive_seed(seed, 0xE7A1);
    let mut audit = UpdateAudit::default();
    let mut metrics = Vec::new();
    let mut diagnostics = Vec::new();
    let mut evaluations = Vec::new();
    let mut warnings = Vec::new();
    let mut acc = Accumulator::default();

    for step in 1..=cfg.steps {
        let batch = AgentBatch::new(dataset.sample(cfg.batch_size, &mut rng), &normalizer);
        let stats = critic_update(&mut critics, &mut critic_opts, &policy, &batch, cfg, &mut rng)?;
        audit.events.push(UpdateEvent::Critic);
        acc.critic += stats.mean_loss();
        acc.critic_n += 1;

        if step % cfg.policy_delay == 0 {
            let out = bst_policy_update(&mut policy, &mut actor_opt, &critics, morse, &batch, cfg)?;
            audit.events.push(UpdateEvent::Policy);
            let d = out.diagnostics;
            if d.z_q_clamped && warnings.len() < 100 {
                warnings.push(format!("step {step}: Q normalizer clamped to its floor"));
            }
            acc.policy += out.loss;
            acc.w += d.w_mean;
            acc.c += d.c_mean;
            acc.z += d.z_q;
            acc.policy_n += 1;
            diagnostics.push(d);

            soft_update(&mut policy.target, &policy.online, cfg.target_rate)?;
            for (t, o) in critics.target.iter_mut().zip(&critics.online) {
                soft_update(t, o, cfg.target_rate)?;
            }
            audit.events.push(UpdateEvent::SoftUpdate);
        }

        let mut eval_return = None;
        if let Some(env) = env {
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 && cfg.eval_episodes > 0 {
                let stats = evaluate(&mut policy.clone(), env, cfg.eval_episodes, derive_seed(eval_seed, step as u64))?;
                eval_return = Some(stats.mean_return);
                evaluations.push((step, stats));
            }
        }
        if step % cfg.log_every == 0 || eval_return.is_some() || step == cfg.steps {
            metrics.push(acc.row(step, eval_return));
        }
    }

    let final_eval = match env {
        Some(env) if cfg.final_eval_episodes > 0 => {
            Some(evaluate(&mut policy.clone(), env, cfg.final_eval_episodes, eval_seed)?)
        }
        _ => None,
    };
    Ok(TrainOutcome {
        policy,
        critics,
        actor_optimizer: actor_opt,
        critic_optimizers: critic_opts,
        audit,
        metrics,
        diagnostics,
        evaluations,
        final_eval,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_detects_schedule_errors() {
        use UpdateEvent::*;
        let good = UpdateAudit {
            events: vec![Critic, Critic, Policy, SoftUpdate, Critic],
        };
        assert!(good.verify(2).is_ok());
        let early = UpdateAudit {
            events: vec![Critic, Policy, SoftUpdate],
        };
        assert!(early.verify(2).is_err());
        let missing_soft = UpdateAudit {
            events: vec![Critic, Critic, Policy, Critic],
        };
        assert!(missing_soft.verify(2).is_err());
        let stray_soft = UpdateAudit {
            events: vec![Critic, SoftUpdate],
        };
        assert!(stray_soft.verify(2).is_err());
    }
}
