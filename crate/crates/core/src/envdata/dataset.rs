use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, Result};

/// Values are stored at `f32` precision so that the on-disk format
/// round-trips exactly.
fn storage(v: f64) -> f64 {
    v as f32 as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Static offline dataset in structure-of-arrays layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayDataset {
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    dones: Vec<bool>,
    episode_starts: Vec<u64>,
    /// Generator configuration and seed, as JSON.
    pub source: Option<serde_json::Value>,
}

/// A minibatch, one row per transition.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Array1<f64>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ReplayDataset {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            ..Default::default()
        }
    }

    pub(crate) fn from_parts(
        state_dim: usize,
        action_dim: usize,
        states: Vec<f64>,
        actions: Vec<f64>,
        rewards: Vec<f64>,
        next_states: Vec<f64>,
        dones: Vec<bool>,
        episode_starts: Vec<u64>,
    ) -> Self {
        Self {
            state_dim,
            action_dim,
            states,
            actions,
            rewards,
            next_states,
            dones,
            episode_starts,
            source: None,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Marks the next pushed transition as the first of a new episode.
    pub fn begin_episode(&mut self) {
        let at = self.len() as u64;
        if self.episode_starts.last() != Some(&at) {
            self.episode_starts.push(at);
        }
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim {
            return Err(EnvError::Argument(format!(
                "state width {} / {} does not match dataset state dim {}",
                t.state.len(),
                t.next_state.len(),
                self.state_dim
            )));
        }
        if t.action.len() != self.action_dim {
            return Err(EnvError::Argument(format!(
                "action width {} does not match dataset action dim {}",
                t.action.len(),
                self.action_dim
            )));
        }
        if t.action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(EnvError::Argument(format!("action {:?} outside [-1, 1]", t.action)));
        }
        if !t.reward.is_finite() || t.state.iter().chain(&t.next_state).any(|v| !v.is_finite()) {
            return Err(EnvError::Argument("non-finite transition".into()));
        }
        if self.episode_starts.is_empty() {
            self.episode_starts.push(0);
        }
        self.states.extend(t.state.iter().map(|v| storage(*v)));
        self.actions.extend(t.action.iter().map(|v| storage(*v)));
        self.rewards.push(storage(t.reward));
        self.next_states.extend(t.next_state.iter().map(|v| storage(*v)));
        self.dones.push(t.done);
        Ok(())
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn next_state(&self, i: usize) -> &[f64] {
        &self.next_states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn reward(&self, i: usize) -> f64 {
        self.rewards[i]
    }

    pub fn done(&self, i: usize) -> bool {
        self.dones[i]
    }

    pub fn transition(&self, i: usize) -> Transition {
        Transition {
            state: self.state(i).to_vec(),
            action: self.action(i).to_vec(),
            reward: self.reward(i),
            next_state: self.next_state(i).to_vec(),
            done: self.done(i),
        }
    }

    pub fn states_flat(&self) -> &[f64] {
        &self.states
    }

    pub fn actions_flat(&self) -> &[f64] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn next_states_flat(&self) -> &[f64] {
        &self.next_states
    }

    pub fn dones(&self) -> &[bool] {
        &self.dones
    }

    pub fn episode_starts(&self) -> &[u64] {
        &self.episode_starts
    }

    pub fn states_matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.len(), self.state_dim), self.states.clone()).expect("sized")
    }

    pub fn actions_matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.len(), self.action_dim), self.actions.clone()).expect("sized")
    }

    /// Gathers the listed transitions into a batch.
    pub fn gather(&self, indices: &[usize]) -> TransitionBatch {
        let n = indices.len();
        let mut states = Array2::zeros((n, self.state_dim));
        let mut actions = Array2::zeros((n, self.action_dim));
        let mut next_states = Array2::zeros((n, self.state_dim));
        let mut rewards = Array1::zeros(n);
        let mut dones = Array1::zeros(n);
        for (row, &i) in indices.iter().enumerate() {
            for (d, v) in self.state(i).iter().enumerate() {
                states[[row, d]] = *v;
            }
            for (d, v) in self.action(i).iter().enumerate() {
                actions[[row, d]] = *v;
            }
            for (d, v) in self.next_state(i).iter().enumerate() {
                next_states[[row, d]] = *v;
            }
            rewards[row] = self.rewards[i];
            dones[row] = if self.dones[i] { 1.0 } else { 0.0 };
        }
        TransitionBatch {
            states,
            actions,
            rewards,
            next_states,
            dones,
        }
    }

    /// Uniform sampling with replacement over transitions.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> TransitionBatch {
        let indices: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len())).collect();
        self.gather(&indices)
    }

    pub(crate) fn validate(&self) -> std::result::Result<(), String> {
        let n = self.len();
        if self.states.len() != n * self.state_dim
            || self.next_states.len() != n * self.state_dim
            || self.actions.len() != n * self.action_dim
            || self.dones.len() != n
        {
            return Err("array lengths disagree".into());
        }
        if self.episode_starts.windows(2).any(|w| w[0] >= w[1]) {
            return Err("episode boundaries not strictly increasing".into());
        }
        if self.episode_starts.iter().any(|&b| b as usize >= n.max(1)) {
            return Err("episode boundary out of range".into());
        }
        Ok(())
    }
}

/// Per-dimension state statistics over a dataset; dimensions with
/// near-zero spread use unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StateNormalizer {
    const MIN_STD: f64 = 1e-3;

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn from_dataset(d: &ReplayDataset) -> Self {
        let dim = d.state_dim();
        let n = d.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for i in 0..d.len() {
            for (m, v) in mean.iter_mut().zip(d.state(i)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for i in 0..d.len() {
            for ((s, v), m) in var.iter_mut().zip(d.state(i)).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = v.sqrt();
                if s < Self::MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, states: &Array2<f64>) -> Array2<f64> {
        let mut out = states.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn apply_one(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Dataset actions reordered by a uniformly random cyclic permutation
/// (Sattolo), so no transition keeps its own action.
pub fn permuted_actions<R: Rng + ?Sized>(d: &ReplayDataset, rng: &mut R) -> Result<Array2<f64>> {
    let n = d.len();
    if n < 2 {
        return Err(EnvError::Argument(format!("need at least 2 transitions to permute, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        order.swap(i, j);
    }
    let mut out = Array2::zeros((n, d.action_dim()));
    for (row, &src) in order.iter().enumerate() {
        for (k, v) in d.action(src).iter().enumerate() {
            out[[row, k]] = *v;
        }
    }
    Ok(out)
}
