//! Single-state, four-mode bandit over 2-D actions.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{EnvError, Environment, ReplayDataset, Result, StepOutcome, Transition};

/// Mode centers, clockwise from the top.
pub const MODE_CENTERS: [[f64; 2]; 4] = [[0.0, 0.8], [0.8, 0.0], [0.0, -0.8], [-0.8, 0.0]];
/// Reward attached to each mode in [`MODE_CENTERS`]; the last mode is optimal.
pub const MODE_REWARDS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const MODE_STD: f64 = 0.05;

pub(super) fn default_reward_radius() -> f64 {
    0.2
}

/// Pays a mode's reward when the action lands within `reward_radius` of its
/// center, nothing otherwise. Every episode is one step.
#[derive(Debug, Clone)]
pub struct FourModeBandit {
    pub reward_radius: f64,
}

impl FourModeBandit {
    pub fn new(reward_radius: f64) -> Result<Self> {
        if !(reward_radius > 0.0) {
            return Err(EnvError::Config(format!("reward radius must be positive, got {reward_radius}")));
        }
        Ok(Self { reward_radius })
    }

    pub fn reward(&self, action: &[f64]) -> f64 {
        MODE_CENTERS
            .iter()
            .zip(MODE_REWARDS)
            .find(|(c, _)| distance(c.as_slice(), action) <= self.reward_radius)
            .map_or(0.0, |(_, r)| r)
    }

    pub fn best_mode() -> [f64; 2] {
        MODE_CENTERS[3]
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl Environment for FourModeBandit {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        1
    }

    fn reset(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn step(&self, state: &[f64], action: &[f64], next: &mut Vec<f64>) -> Result<StepOutcome> {
        if state.len() != 2 || action.len() != 2 {
            return Err(EnvError::Argument("bandit states and actions are 2-D".into()));
        }
        next.clear();
        next.extend_from_slice(state);
        Ok(StepOutcome {
            reward: self.reward(action),
            done: true,
        })
    }

    fn is_success(&self, outcome: &StepOutcome) -> bool {
        outcome.reward >= MODE_REWARDS[3]
    }
}

/// `n` one-step transitions from the fixed zero state, actions split evenly
/// across the four modes. Gaussian draws farther than 4σ from their center
/// are redrawn.
pub fn four_mode_dataset(n: usize, seed: u64) -> Result<ReplayDataset> {
    if n < 4 {
        return Err(EnvError::Argument(format!("four-mode dataset needs n >= 4, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, MODE_STD).expect("valid std");
    let mut d = ReplayDataset::new(2, 2);
    for i in 0..n {
        let mode = i % 4;
        let center = MODE_CENTERS[mode];
        let action = loop {
            let a = [center[0] + noise.sample(&mut rng), center[1] + noise.sample(&mut rng)];
            if distance(&a, &center) <= 4.0 * MODE_STD {
                break [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
            }
        };
        d.begin_episode();
        d.push(&Transition {
            state: vec![0.0, 0.0],
            action: action.to_vec(),
            reward: MODE_REWARDS[mode],
            next_state: vec![0.0, 0.0],
            done: true,
        })?;
    }
    d.source = Some(serde_json::json!({
        "generator": "four_mode",
        "n": n,
        "seed": seed,
        "std": MODE_STD,
    }));
    Ok(d)
}
