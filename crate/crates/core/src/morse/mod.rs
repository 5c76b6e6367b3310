//! Morse neural networks used as a perturbation model.
//!
//! A network `f(s, a)` maps a state-action pair back into action space and
//! the certainty is `M(s, a) = K(f(s, a), a)` for a Morse kernel `K`.
//! Training pushes `f(s, a)` onto `a` for dataset pairs and away from `a`
//! for uniformly drawn actions, so `M ≈ 1` on the data support and decays
//! off it.

mod checkpoint;
mod kernel;

pub use checkpoint::{load_morse, read_morse, save_morse, write_morse, MORSE_MAGIC, MORSE_VERSION};
pub use kernel::{squared_distance, KernelKind, KernelSpec};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envdata::{ReplayDataset, StateNormalizer};
use crate::nn::{Adam, AdamConfig, DenseNet, Gradients, NnError};

/// Certainty floor used when converting a raw certainty value to an energy.
pub const CERTAINTY_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum MorseError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MorseError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct MorseModel {
    net: DenseNet,
    kernel: KernelSpec,
    state_dim: usize,
    action_dim: usize,
    normalizer: StateNormalizer,
}

impl MorseModel {
    /// `bounded` squashes `f` into the open action box.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        bounded: bool,
        kernel: KernelSpec,
        normalizer: StateNormalizer,
        rng: &mut R,
    ) -> Result<Self> {
        let net = DenseNet::mlp(state_dim + action_dim, hidden, action_dim, bounded, rng);
        Self::from_parts(net, kernel, state_dim, action_dim, normalizer)
    }

    pub fn from_parts(
        net: DenseNet,
        kernel: KernelSpec,
        state_dim: usize,
        action_dim: usize,
        normalizer: StateNormalizer,
    ) -> Result<Self> {
        kernel.validate()?;
        if net.input_width() != state_dim + action_dim {
            return Err(MorseError::Dimension {
                context: "perturbation network input",
                expected: state_dim + action_dim,
                got: net.input_width(),
            });
        }
        if net.output_width() != action_dim {
            return Err(MorseError::Dimension {
                context: "perturbation network output",
                expected: action_dim,
                got: net.output_width(),
            });
        }
        if normalizer.dim() != state_dim {
            return Err(MorseError::Dimension {
                context: "state normalizer",
                expected: state_dim,
                got: normalizer.dim(),
            });
        }
        Ok(Self {
            net,
            kernel,
            state_dim,
            action_dim,
            normalizer,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn normalizer(&self) -> &StateNormalizer {
        &self.normalizer
    }

    fn inputs(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        if states.ncols() != self.state_dim {
            return Err(MorseError::Dimension {
                context: "state width",
                expected: self.state_dim,
                got: states.ncols(),
            });
        }
        if actions.ncols() != self.action_dim {
            return Err(MorseError::Dimension {
                context: "action width",
                expected: self.action_dim,
                got: actions.ncols(),
            });
        }
        if states.nrows() != actions.nrows() {
            return Err(MorseError::Dimension {
                context: "state/action batch",
                expected: states.nrows(),
                got: actions.nrows(),
            });
        }
        let normed = self.normalizer.apply(&states.to_owned());
        Ok(concatenate![Axis(1), normed, actions])
    }

    /// `f(s, a)` for every row.
    pub fn perturb_batch(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        let x = self.inputs(states, actions)?;
        Ok(self.net.forward_batch(x.view())?)
    }

    /// Squared distances `‖f(s, a) − a‖²`.
    pub fn squared_gaps(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        let f = self.perturb_batch(states, actions)?;
        Ok(row_squared_gaps(&f, &actions))
    }

    pub fn certainty_batch(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.squared_gaps(states, actions)?.mapv(|d2| self.kernel.value(d2)))
    }

    pub fn certainty(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let (s, a) = single_rows(state, action)?;
        Ok(self.certainty_batch(s, a)?[0])
    }

    pub fn uncertainty(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(1.0 - self.certainty(state, action)?)
    }

    pub fn uncertainty_batch(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.certainty_batch(states, actions)?.mapv(|m| 1.0 - m))
    }

    /// `−log M(s, a)`, evaluated from the closed-form log-kernel so it stays
    /// exact where `M` itself underflows.
    pub fn energy_batch(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self
            .squared_gaps(states, actions)?
            .mapv(|d2| if d2 == 0.0 { 0.0 } else { -self.kernel.log_value(d2) }))
    }

    pub fn energy(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let (s, a) = single_rows(state, action)?;
        Ok(self.energy_batch(s, a)?[0])
    }

    /// Certainty together with `∂M/∂a` (the state is held fixed).
    pub fn certainty_with_action_gradient(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let x = self.inputs(states, actions)?;
        let trace = self.net.forward_trace(x.view())?;
        let f = trace.output().expect("recorded");
        let gaps = f - &actions;
        let d2 = gaps.map_axis(Axis(1), |r| r.dot(&r));
        let certainty = d2.mapv(|v| self.kernel.value(v));
        // ∂M/∂f = K'(d²)·2(f − a); ∂M/∂a = (∂M/∂f)·(∂f/∂a − I)
        let mut seed = gaps;
        for (mut row, &v) in seed.rows_mut().into_iter().zip(&d2) {
            row *= 2.0 * self.kernel.dvalue_dd2(v);
        }
        let through_net = self.net.input_gradient(&trace, seed.view())?;
        let grad = &through_net.slice(s![.., self.state_dim..]) - &seed;
        Ok((certainty, grad))
    }

    /// Replaces the network's parameters, keeping the kernel and dims.
    pub fn set_net(&mut self, net: DenseNet) -> Result<()> {
        *self = Self::from_parts(net, self.kernel, self.state_dim, self.action_dim, self.normalizer.clone())?;
        Ok(())
    }
}

/// Energy from a raw certainty value, floored at [`CERTAINTY_FLOOR`].
pub fn energy_from_certainty(certainty: f64) -> f64 {
    let m = certainty.clamp(CERTAINTY_FLOOR, 1.0);
    if m == 1.0 {
        0.0
    } else {
        -m.ln()
    }
}

fn row_squared_gaps(f: &Array2<f64>, actions: &ArrayView2<f64>) -> Array1<f64> {
    let gaps = f - actions;
    gaps.map_axis(Axis(1), |r| r.dot(&r))
}

fn single_rows<'a>(state: &'a [f64], action: &'a [f64]) -> Result<(ArrayView2<'a, f64>, ArrayView2<'a, f64>)> {
    let s = ArrayView2::from_shape((1, state.len()), state).map_err(|e| MorseError::Argument(e.to_string()))?;
    let a = ArrayView2::from_shape((1, action.len()), action).map_err(|e| MorseError::Argument(e.to_string()))?;
    Ok((s, a))
}

/// One training minibatch: dataset pairs plus uniform actions for the same
/// states (`uniform_states` repeats each state once per uniform draw).
#[derive(Debug, Clone)]
pub struct MorseBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub uniform_states: Array2<f64>,
    pub uniform_actions: Array2<f64>,
}

impl MorseBatch {
    pub fn sample<R: Rng + ?Sized>(
        dataset: &ReplayDataset,
        batch_size: usize,
        uniform_per_state: usize,
        rng: &mut R,
    ) -> Self {
        let batch = dataset.sample(batch_size, rng);
        Self::with_uniform(batch.states, batch.actions, uniform_per_state, rng)
    }

    pub fn with_uniform<R: Rng + ?Sized>(
        states: Array2<f64>,
        actions: Array2<f64>,
        uniform_per_state: usize,
        rng: &mut R,
    ) -> Self {
        let n = states.nrows();
        let k = actions.ncols();
        let mut uniform_states = Array2::zeros((n * uniform_per_state, states.ncols()));
        for (i, row) in states.rows().into_iter().enumerate() {
            for u in 0..uniform_per_state {
                uniform_states.row_mut(i * uniform_per_state + u).assign(&row);
            }
        }
        let uniform_actions = Array2::from_shape_fn((n * uniform_per_state, k), |_| rng.random_range(-1.0..=1.0));
        Self {
            states,
            actions,
            uniform_states,
            uniform_actions,
        }
    }
}

/// Empirical objective
/// `−mean log K(f(s,a), a) + mean K(f(s,a_u), a_u)` and its parameter
/// gradient. The second mean runs over all uniform draws.
pub fn morse_loss(model: &MorseModel, batch: &MorseBatch) -> Result<(f64, Gradients)> {
    let n = batch.states.nrows();
    let m = batch.uniform_states.nrows();
    if n == 0 {
        return Err(MorseError::Argument("empty Morse batch".into()));
    }
    let data_x = model.inputs(batch.states.view(), batch.actions.view())?;
    let targets = if m > 0 {
        let uni_x = model.inputs(batch.uniform_states.view(), batch.uniform_actions.view())?;
        let x = concatenate![Axis(0), data_x, uni_x];
        (x, concatenate![Axis(0), batch.actions, batch.uniform_actions])
    } else {
        (data_x, batch.actions.clone())
    };
    let (x, a) = targets;
    let trace = model.net.forward_trace(x.view())?;
    let f = trace.output().expect("recorded");
    let mut seed = f - &a;
    let kernel = model.kernel;
    let mut loss = 0.0;
    for (i, mut row) in seed.rows_mut().into_iter().enumerate() {
        let d2 = row.dot(&row);
        if i < n {
            loss -= kernel.log_value(d2) / n as f64;
            row *= -2.0 * kernel.dlog_dd2(d2) / n as f64;
        } else {
            loss += kernel.value(d2) / m as f64;
            row *= 2.0 * kernel.dvalue_dd2(d2) / m as f64;
        }
    }
    let (grads, _) = model.net.backward(&trace, seed.view())?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MorseConfig {
    pub kernel: KernelKind,
    /// λ; `None` means `k/2` for action dimension `k`.
    pub scale: Option<f64>,
    /// κ for the rational-quadratic kernel.
    pub mixture: f64,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub uniform_per_state: usize,
    pub optimizer: AdamConfig,
    /// Normalize states with dataset statistics before they enter `f`.
    pub normalize_states: bool,
    /// Squash `f` into the action box so it always proposes a valid action.
    pub bounded_output: bool,
    /// Anneal the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
}

impl Default for MorseConfig {
    fn default() -> Self {
        Self {
            kernel: KernelKind::RationalQuadratic,
            scale: None,
            mixture: 1.0,
            hidden: vec![256; 4],
            steps: 20_000,
            batch_size: 256,
            uniform_per_state: 1,
            optimizer: AdamConfig::default(),
            normalize_states: true,
            bounded_output: true,
            cosine_decay: true,
        }
    }
}

impl MorseConfig {
    pub fn kernel_spec(&self, action_dim: usize) -> KernelSpec {
        KernelSpec {
            kind: self.kernel,
            scale: self.scale.unwrap_or(action_dim as f64 / 2.0),
            mixture: self.mixture,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub losses: Vec<f64>,
}

/// Fits a Morse model to the dataset's state-action pairs.
pub fn train_morse(dataset: &ReplayDataset, cfg: &MorseConfig, seed: u64) -> Result<(MorseModel, TrainingHistory)> {
    if dataset.is_empty() {
        return Err(MorseError::Argument("cannot train on an empty dataset".into()));
    }
    if cfg.steps == 0 {
        return Err(MorseError::Argument("Morse training needs at least one step".into()));
    }
    if cfg.batch_size == 0 {
        return Err(MorseError::Argument("batch size must be positive".into()));
    }
    let kernel = cfg.kernel_spec(dataset.action_dim());
    kernel.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normalizer = if cfg.normalize_states {
        StateNormalizer::from_dataset(dataset)
    } else {
        StateNormalizer::identity(dataset.state_dim())
    };
    let mut model = MorseModel::new(
        dataset.state_dim(),
        dataset.action_dim(),
        &cfg.hidden,
        cfg.bounded_output,
        kernel,
        normalizer,
        &mut rng,
    )?;
    let mut adam = Adam::new(&model.net, cfg.optimizer);
    let mut history = TrainingHistory {
        losses: Vec::with_capacity(cfg.steps),
    };
    let base_lr = cfg.optimizer.learning_rate;
    for step in 0..cfg.steps {
        if cfg.cosine_decay {
            let progress = step as f64 / cfg.steps as f64;
            adam.config.learning_rate = 0.5 * base_lr * (1.0 + (std::f64::consts::PI * progress).cos());
        }
        let batch = MorseBatch::sample(dataset, cfg.batch_size, cfg.uniform_per_state, &mut rng);
        let (loss, grads) = morse_loss(&model, &batch)?;
        adam.step(&mut model.net, &grads)?;
        history.losses.push(loss);
    }
    Ok((model, history))
}

/// Grid coordinates used by [`density_grid`]: `resolution` evenly spaced
/// points covering `[-1, 1]`.
pub fn grid_axis(resolution: usize) -> Vec<f64> {
    (0..resolution)
        .map(|i| -1.0 + 2.0 * i as f64 / (resolution - 1) as f64)
        .collect()
}

/// Certainty over the 2-D action box at a fixed state. Entry `[i, j]` is
/// `M(s, [x_j, y_i])` with both axes from [`grid_axis`].
pub fn density_grid(model: &MorseModel, state: &[f64], resolution: usize) -> Result<Array2<f64>> {
    if model.action_dim() != 2 {
        return Err(MorseError::Unsupported(format!(
            "density grids need 2-D actions, model has {}",
            model.action_dim()
        )));
    }
    if resolution < 2 {
        return Err(MorseError::Argument("grid resolution must be at least 2".into()));
    }
    if state.len() != model.state_dim() {
        return Err(MorseError::Dimension {
            context: "grid state",
            expected: model.state_dim(),
            got: state.len(),
        });
    }
    let axis = grid_axis(resolution);
    let count = resolution * resolution;
    let states = Array2::from_shape_fn((count, state.len()), |(_, d)| state[d]);
    let actions = Array2::from_shape_fn((count, 2), |(idx, d)| {
        let (i, j) = (idx / resolution, idx % resolution);
        if d == 0 {
            axis[j]
        } else {
            axis[i]
        }
    });
    let m = model.certainty_batch(states.view(), actions.view())?;
    Ok(m.into_shape_with_order((resolution, resolution)).expect("square"))
}

/// Action coordinates of the grid maximum.
pub fn grid_argmax(grid: &Array2<f64>) -> [f64; 2] {
    let res = grid.nrows();
    let axis = grid_axis(res);
    let (mut best, mut at) = (f64::NEG_INFINITY, (0, 0));
    for ((i, j), &v) in grid.indexed_iter() {
        if v > best {
            best = v;
            at = (i, j);
        }
    }
    [axis[at.1], axis[at.0]]
}

/// Fraction of grid cells whose certainty exceeds `threshold`.
pub fn grid_fraction_above(grid: &Array2<f64>, threshold: f64) -> f64 {
    grid.iter().filter(|&&v| v > threshold).count() as f64 / grid.len() as f64
}
