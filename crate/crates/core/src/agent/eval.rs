use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentError, PolicyNet, Result};
use crate::envdata::{derive_seed, Env, Environment, GoalOracle, PointMaze, ReplayDataset};

/// Anything that maps a state to an action in `[-1, 1]^k`.
pub trait Policy {
    fn act(&mut self, state: &[f64]) -> Result<Vec<f64>>;
}

impl Policy for PolicyNet {
    fn act(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        self.action(state)
    }
}

/// Noiseless shortest-path controller for the point maze.
pub struct OraclePolicy<'a>(pub GoalOracle<'a>);

impl<'a> OraclePolicy<'a> {
    pub fn new(maze: &'a PointMaze) -> Self {
        Self(GoalOracle::new(maze))
    }
}

impl Policy for OraclePolicy<'_> {
    fn act(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.action(state).to_vec())
    }
}

/// Independent uniform actions.
pub struct UniformPolicy {
    rng: ChaCha8Rng,
    action_dim: usize,
}

impl UniformPolicy {
    pub fn new(action_dim: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            action_dim,
        }
    }
}

impl Policy for UniformPolicy {
    fn act(&mut self, _state: &[f64]) -> Result<Vec<f64>> {
        Ok((0..self.action_dim).map(|_| self.rng.random_range(-1.0..=1.0)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
}

/// Rolls the policy out for `episodes` episodes of at most the horizon.
/// Episode `i` resets with a seed derived from `seed` and `i`.
pub fn evaluate(policy: &mut dyn Policy, env: &Env, episodes: usize, seed: u64) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(AgentError::Argument("need at least one evaluation episode".into()));
    }
    let mut total = 0.0;
    let mut successes = 0;
    let mut next = Vec::with_capacity(env.state_dim());
    for ep in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ep as u64));
        let mut s = env.reset(&mut rng);
        let mut succeeded = false;
        for _ in 0..env.horizon() {
            let a = policy.act(&s)?;
            let out = env.step(&s, &a, &mut next)?;
            total += out.reward;
            succeeded |= env.is_success(&out);
            if out.done {
                break;
            }
            std::mem::swap(&mut s, &mut next);
        }
        successes += usize::from(succeeded);
    }
    Ok(EvalStats {
        episodes,
        mean_return: total / episodes as f64,
        success_rate: successes as f64 / episodes as f64,
    })
}

/// Distribution of `‖π(s) − a‖` over dataset pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationStats {
    pub mean: f64,
    pub max: f64,
    /// Histogram edges are `i · bin_width` for `i = 0..=counts.len()`.
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

/// Histogram over `[0, 2√k]`, the largest possible deviation in the action box.
pub fn deviation_stats(policy: &PolicyNet, dataset: &ReplayDataset, bins: usize) -> Result<DeviationStats> {
    if bins == 0 || dataset.is_empty() {
        return Err(AgentError::Argument("deviation histogram needs bins and data".into()));
    }
    let actions = policy.act_batch(dataset.states_matrix().view())?;
    let data = dataset.actions_matrix();
    let width = 2.0 * (dataset.action_dim() as f64).sqrt() / bins as f64;
    let mut counts = vec![0; bins];
    let (mut sum, mut max) = (0.0, 0.0f64);
    for (p, a) in actions.rows().into_iter().zip(data.rows()) {
        let d = (&p - &a).mapv(|v| v * v).sum().sqrt();
        sum += d;
        max = max.max(d);
        counts[((d / width) as usize).min(bins - 1)] += 1;
    }
    Ok(DeviationStats {
        mean: sum / dataset.len() as f64,
        max,
        bin_width: width,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envdata::{MazeLayout, PointMaze};

    fn maze(name: &str) -> Env {
        Env::Maze(PointMaze::new(MazeLayout::builtin(name).unwrap(), 0.15, 0.3, 300).unwrap())
    }

    #[test]
    fn oracle_always_succeeds() {
        let env = maze("medium");
        let mut p = OraclePolicy::new(env.as_maze().unwrap());
        let stats = evaluate(&mut p, &env, 10, 3).unwrap();
        assert_eq!(stats.success_rate, 1.0);
        assert_eq!(stats.mean_return, 1.0);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let env = maze("umaze");
        let a = evaluate(&mut UniformPolicy::new(2, 9), &env, 5, 1).unwrap();
        let b = evaluate(&mut UniformPolicy::new(2, 9), &env, 5, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_episodes_rejected() {
        let env = maze("umaze");
        assert!(evaluate(&mut UniformPolicy::new(2, 0), &env, 0, 0).is_err());
    }
}
