use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::envdata::{derive_seed, permuted_actions, ReplayDataset};
use crate::morse::MorseModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Population {
    /// Dataset pairs.
    #[serde(rename = "D")]
    Data,
    /// Dataset states paired with other states' actions.
    #[serde(rename = "D_perm")]
    Permuted,
    /// Dataset states paired with uniform actions.
    #[serde(rename = "D_uni")]
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertaintySample {
    pub population: Population,
    pub state_index: usize,
    pub certainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertaintyAnalysis {
    pub samples: Vec<CertaintySample>,
    pub mean_data: f64,
    pub mean_permuted: f64,
    pub mean_uniform: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    samples_per_state: usize,
    mean_d: f64,
    mean_d_perm: f64,
    mean_d_uni: f64,
    separation: f64,
}

impl CertaintyAnalysis {
    /// `mean(D) − max(mean(D_perm), mean(D_uni))`.
    pub fn separation(&self) -> f64 {
        self.mean_data - self.mean_permuted.max(self.mean_uniform)
    }

    pub fn write_samples(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))
    }

    pub fn write_summary(&self, path: &Path, samples_per_state: usize) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.serialize(SummaryRow {
            samples_per_state,
            mean_d: self.mean_data,
            mean_d_perm: self.mean_permuted,
            mean_d_uni: self.mean_uniform,
            separation: self.separation(),
        })?;
        w.flush().map_err(|e| HarnessError::io(path, e))
    }
}

/// Certainty of the model on dataset pairs, on `samples_per_state`
/// permuted-action pairs per state, and on as many uniform actions per state.
pub fn analyze_morse(
    model: &MorseModel,
    dataset: &ReplayDataset,
    samples_per_state: usize,
    seed: u64,
) -> Result<CertaintyAnalysis> {
    if model.state_dim() != dataset.state_dim() || model.action_dim() != dataset.action_dim() {
        return Err(HarnessError::Config(format!(
            "Morse model dims ({}, {}) do not match dataset dims ({}, {})",
            model.state_dim(),
            model.action_dim(),
            dataset.state_dim(),
            dataset.action_dim()
        )));
    }
    if samples_per_state == 0 {
        return Err(HarnessError::Argument("need at least one sample per state".into()));
    }
    let n = dataset.len();
    let states = dataset.states_matrix();
    let mut samples = Vec::with_capacity(n * (1 + 2 * samples_per_state));
    let mut push = |pop: Population, values: ndarray::Array1<f64>| {
        let mean = values.mean().unwrap_or(f64::NAN);
        samples.extend(values.iter().enumerate().map(|(i, &c)| CertaintySample {
            population: pop,
            state_index: i,
            certainty: c,
        }));
        mean
    };

    let mean_data = push(Population::Data, model.certainty_batch(states.view(), dataset.actions_matrix().view())?);

    let mut perm_sum = 0.0;
    let mut uni_sum = 0.0;
    for k in 0..samples_per_state {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 * k as u64));
        let perm = permuted_actions(dataset, &mut rng)?;
        perm_sum += push(Population::Permuted, model.certainty_batch(states.view(), perm.view())?);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 * k as u64 + 1));
        let uni = Array2::from_shape_fn((n, dataset.action_dim()), |_| rng.random_range(-1.0..=1.0));
        uni_sum += push(Population::Uniform, model.certainty_batch(states.view(), uni.view())?);
    }
    // population order in the output: D, then D_perm, then D_uni
    samples.sort_by_key(|s| match s.population {
        Population::Data => 0,
        Population::Permuted => 1,
        Population::Uniform => 2,
    });
    Ok(CertaintyAnalysis {
        samples,
        mean_data,
        mean_permuted: perm_sum / samples_per_state as f64,
        mean_uniform: uni_sum / samples_per_state as f64,
    })
}
