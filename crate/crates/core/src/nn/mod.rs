//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Everything is batched: inputs are `(batch, width)` matrices, one row per
//! sample. A forward pass that will be differentiated returns a [`Trace`]
//! holding the per-layer activations, which [`DenseNet::backward`] consumes.

mod checkpoint;
mod optim;

pub use checkpoint::{read_net, write_net, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{soft_update, Adam, AdamConfig};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid state: {0}")]
    State(&'static str),
    #[error("non-finite gradient in layer {layer}")]
    Numeric { layer: usize },
    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` by the activation derivative, expressed through the
    /// activation output `out`.
    fn backprop(self, out: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Relu => Zip::from(grad).and(out).for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(grad).and(out).for_each(|g, &y| *g *= 1.0 - y * y),
            Activation::Identity => {}
        }
    }
}

/// One affine layer followed by an activation. `weight` is `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    /// Uniform fan-in initialisation in `±1/sqrt(input)`.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut layer = Self::zeros(input, output, activation);
        layer.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
        layer.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        layer
    }

    pub fn input_width(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.ncols()
    }
}

/// Largest magnitude a squashed output may take; `tanh` rounds to ±1 for
/// pre-activations beyond ~19, and squashed outputs must stay in (−1, 1).
pub const SQUASH_LIMIT: f64 = 1.0 - 1e-12;

fn squash(v: f64) -> f64 {
    v.tanh().clamp(-SQUASH_LIMIT, SQUASH_LIMIT)
}

/// A stack of dense layers with an optional `tanh` squash on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
    squash: bool,
}

/// Activations recorded by [`DenseNet::forward_trace`].
///
/// `activations[0]` is the input batch and `activations[i + 1]` is the output
/// of layer `i`. Squashed networks append the squashed output, so the last
/// entry is always the network output.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    activations: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> Option<&Array2<f64>> {
        self.activations.last()
    }

    pub fn batch_size(&self) -> usize {
        self.activations.first().map_or(0, |a| a.nrows())
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Dense>, squash: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::State("a network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(NnError::Dimension {
                    context: "adjacent layer widths",
                    expected: pair[0].output_width(),
                    got: pair[1].input_width(),
                });
            }
            if pair[0].bias.len() != pair[0].output_width() {
                return Err(NnError::Dimension {
                    context: "bias width",
                    expected: pair[0].output_width(),
                    got: pair[0].bias.len(),
                });
            }
        }
        let last = layers.last().expect("non-empty");
        if last.bias.len() != last.output_width() {
            return Err(NnError::Dimension {
                context: "bias width",
                expected: last.output_width(),
                got: last.bias.len(),
            });
        }
        Ok(Self { layers, squash })
    }

    /// ReLU hidden layers and a linear output layer.
    pub fn mlp<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, squash: bool, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = input;
        for &h in hidden {
            layers.push(Dense::init(width, h, Activation::Relu, rng));
            width = h;
        }
        layers.push(Dense::init(width, output, Activation::Identity, rng));
        Self { layers, squash }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn squashed(&self) -> bool {
        self.squash
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn same_architecture(&self, other: &DenseNet) -> bool {
        self.squash == other.squash
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len() && a.activation == b.activation
            })
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_width() {
            return Err(NnError::Dimension {
                context: "network input",
                expected: self.input_width(),
                got: input.ncols(),
            });
        }
        Ok(())
    }

    fn layer_forward(layer: &Dense, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&layer.weight);
        z += &layer.bias;
        layer.activation.apply(&mut z);
        z
    }

    /// Batched forward pass without recording.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let mut x = Self::layer_forward(&self.layers[0], &input);
        for layer in &self.layers[1..] {
            x = Self::layer_forward(layer, &x.view());
        }
        if self.squash {
            x.mapv_inplace(squash);
        }
        Ok(x)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass that records everything [`DenseNet::backward`] needs.
    pub fn forward_trace(&self, input: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(&input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        for layer in &self.layers {
            let next = Self::layer_forward(layer, &activations.last().expect("input").view());
            activations.push(next);
        }
        if self.squash {
            let out = activations.last().expect("output").mapv(squash);
            activations.push(out);
        }
        Ok(Trace { activations })
    }

    fn check_trace(&self, trace: &Trace, seed: &ArrayView2<f64>) -> Result<()> {
        if trace.activations.is_empty() {
            return Err(NnError::State("backward called without a recorded forward pass"));
        }
        if trace.activations.len() != self.layers.len() + 1 + usize::from(self.squash) {
            return Err(NnError::State("trace was recorded on a different architecture"));
        }
        if seed.ncols() != self.output_width() {
            return Err(NnError::Dimension {
                context: "loss seed width",
                expected: self.output_width(),
                got: seed.ncols(),
            });
        }
        if seed.nrows() != trace.batch_size() {
            return Err(NnError::Dimension {
                context: "loss seed batch",
                expected: trace.batch_size(),
                got: seed.nrows(),
            });
        }
        Ok(())
    }

    fn seed_gradient(&self, trace: &Trace, seed: ArrayView2<f64>) -> Array2<f64> {
        let mut grad = seed.to_owned();
        if self.squash {
            let out = trace.activations.last().expect("output");
            Zip::from(&mut grad).and(out).for_each(|g, &y| *g *= 1.0 - y * y);
        }
        grad
    }

    /// Reverse pass. `seed` is ∂loss/∂output, shape `(batch, output_width)`.
    /// Returns parameter gradients and ∂loss/∂input.
    pub fn backward(&self, trace: &Trace, seed: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        self.check_trace(trace, &seed)?;
        let mut grad = self.seed_gradient(trace, seed);
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backprop(&trace.activations[i + 1], &mut grad);
            let d_weight = trace.activations[i].t().dot(&grad);
            let d_bias = grad.sum_axis(Axis(0));
            layers.push((d_weight, d_bias));
            grad = grad.dot(&layer.weight.t());
        }
        layers.reverse();
        Ok((Gradients { layers }, grad))
    }

    /// Reverse pass that only produces ∂loss/∂input.
    pub fn input_gradient(&self, trace: &Trace, seed: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_trace(trace, &seed)?;
        let mut grad = self.seed_gradient(trace, seed);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backprop(&trace.activations[i + 1], &mut grad);
            grad = grad.dot(&layer.weight.t());
        }
        Ok(grad)
    }

    /// Zero-filled gradient buffers laid out like this network's parameters.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    /// Multiplies the output layer by `factor`. For a linear output layer
    /// this scales the network output by exactly `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight *= factor;
        last.bias *= factor;
    }
}

/// Per-parameter gradient buffers, shape-aligned with a [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn layers(&self) -> &[(Array2<f64>, Array1<f64>)] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [(Array2<f64>, Array1<f64>)] {
        &mut self.layers
    }

    pub fn matches(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|((w, b), l)| w.dim() == l.weight.dim() && b.len() == l.bias.len())
    }

    pub fn zero(&mut self) {
        for (w, b) in &mut self.layers {
            w.fill(0.0);
            b.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            *w *= factor;
            *b *= factor;
        }
    }

    /// Index of the first layer holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|(w, b)| !w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }

    /// All entries in layer order (weights row-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

/// Flattened parameters in the same order as [`Gradients::flatten`].
pub fn flatten_params(net: &DenseNet) -> Vec<f64> {
    let mut out = Vec::with_capacity(net.parameter_count());
    for l in &net.layers {
        out.extend(l.weight.iter().copied());
        out.extend(l.bias.iter().copied());
    }
    out
}

/// Visits every parameter mutably in [`flatten_params`] order.
pub fn for_each_param_mut(net: &mut DenseNet, mut f: impl FnMut(usize, &mut f64)) {
    let mut idx = 0;
    for l in &mut net.layers {
        for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            f(idx, v);
            idx += 1;
        }
    }
}
