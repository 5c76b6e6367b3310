use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{disadvantage_weight, AgentError, PolicyNet, Result};
use crate::envdata::{ReplayDataset, StateNormalizer};
use crate::morse::MorseModel;
use crate::nn::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub optimizer: AdamConfig,
    /// μ for the Morse-weighted variant.
    pub temperature: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 256,
            hidden: vec![256, 256],
            optimizer: AdamConfig::default(),
            temperature: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BcWeighting<'a> {
    /// Plain mean squared error to the dataset action.
    Uniform,
    /// `mean[(e^(C(s, π(s))/μ) − 1) · ‖π(s) − a‖²]` with `C = 1 − M`.
    ///
    /// Unlike the actor update, the weight stays differentiable: with Q
    /// ascent switched off it is the only force that can pull the policy
    /// out of the averaged action and into a single mode.
    Morse(&'a MorseModel),
}

/// Behavioral cloning with an optional Morse weight.
pub fn train_bc(dataset: &ReplayDataset, cfg: &BcConfig, weighting: BcWeighting<'_>, seed: u64) -> Result<PolicyNet> {
    if dataset.is_empty() {
        return Err(AgentError::Argument("cannot clone an empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(AgentError::Config("batch size must be positive".into()));
    }
    if let BcWeighting::Morse(m) = weighting {
        if m.state_dim() != dataset.state_dim() || m.action_dim() != dataset.action_dim() {
            return Err(AgentError::Config("Morse model dims do not match the dataset".into()));
        }
        if !(cfg.temperature > 0.0) {
            return Err(AgentError::Config(format!("temperature must be positive, got {}", cfg.temperature)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normalizer = StateNormalizer::from_dataset(dataset);
    let mut policy = PolicyNet::new(
        dataset.state_dim(),
        dataset.action_dim(),
        &cfg.hidden,
        normalizer,
        &mut rng,
    )?;
    let mut opt = Adam::new(&policy.online, cfg.optimizer);
    for _ in 0..cfg.steps {
        let batch = dataset.sample(cfg.batch_size, &mut rng);
        let n = batch.len() as f64;
        let states = policy.normalizer().apply(&batch.states);
        let trace = policy.online.forward_trace(states.view())?;
        let actions = trace.output().expect("recorded").clone();
        let gaps = &actions - &batch.actions;
        let mut seed = &gaps * (2.0 / n);
        if let BcWeighting::Morse(morse) = weighting {
            let (m, dm_da) = morse.certainty_with_action_gradient(batch.states.view(), actions.view())?;
            let sq = gaps.map_axis(Axis(1), |r| r.dot(&r));
            for (i, (mut row, dm)) in seed.rows_mut().into_iter().zip(dm_da.rows()).enumerate() {
                let c = 1.0 - m[i];
                let w = disadvantage_weight(c, cfg.temperature);
                // ∂w/∂a = −e^(C/μ)/μ · ∂M/∂a
                let dw = -(c / cfg.temperature).exp() / cfg.temperature;
                row *= w;
                row.scaled_add(sq[i] * dw / n, &dm);
            }
        }
        let (grads, _) = policy.online.backward(&trace, seed.view())?;
        opt.step(&mut policy.online, &grads)?;
    }
    policy.target = policy.online.clone();
    Ok(policy)
}
