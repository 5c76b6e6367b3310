//! Test-only oracles, independent of the code paths they check.
#![allow(dead_code)]

use bst_core::nn::{flatten_params, for_each_param_mut, Activation, Dense, DenseNet};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central finite differences of `loss` with respect to every parameter.
pub fn finite_difference<F>(net: &DenseNet, h: f64, loss: F) -> Vec<f64>
where
    F: Fn(&DenseNet) -> f64,
{
    let n = flatten_params(net).len();
    let mut out = Vec::with_capacity(n);
    let mut probe = net.clone();
    for i in 0..n {
        let mut orig = 0.0;
        for_each_param_mut(&mut probe, |j, v| {
            if j == i {
                orig = *v;
                *v = orig + h;
            }
        });
        let up = loss(&probe);
        for_each_param_mut(&mut probe, |j, v| {
            if j == i {
                *v = orig - h;
            }
        });
        let down = loss(&probe);
        for_each_param_mut(&mut probe, |j, v| {
            if j == i {
                *v = orig;
            }
        });
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// |a − b| relative to the larger magnitude, floored at 1e-4.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// A random net with 1..=3 layers and at most 64 units per layer, mixing
/// all activation kinds.
pub fn random_net(rng: &mut ChaCha8Rng) -> DenseNet {
    let depth = rng.random_range(1..=3);
    let input = rng.random_range(1..=6);
    let mut width = input;
    let mut layers = Vec::new();
    for i in 0..depth {
        let out = if i + 1 == depth {
            rng.random_range(1..=3)
        } else {
            rng.random_range(2..=64)
        };
        let act = match rng.random_range(0..3) {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            _ => Activation::Identity,
        };
        layers.push(Dense::init(width, out, act, rng));
        width = out;
    }
    DenseNet::new(layers, rng.random_bool(0.5)).unwrap()
}

/// Smallest |pre-activation| over ReLU units, computed by a plain loop.
pub fn relu_margin(net: &DenseNet, input: &Array2<f64>) -> f64 {
    let mut margin = f64::INFINITY;
    for row in input.rows() {
        let mut x: Vec<f64> = row.to_vec();
        for layer in net.layers() {
            let mut z = vec![0.0; layer.output_width()];
            for (j, zj) in z.iter_mut().enumerate() {
                let mut acc = layer.bias[j];
                for (i, xi) in x.iter().enumerate() {
                    acc += xi * layer.weight[[i, j]];
                }
                *zj = acc;
            }
            if layer.activation == Activation::Relu {
                margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            }
            x = z
                .into_iter()
                .map(|v| match layer.activation {
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                    Activation::Identity => v,
                })
                .collect();
        }
    }
    margin
}

/// Checks backward against finite differences for one seeded random net.
/// Returns the worst relative error.
pub fn gradient_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = random_net(&mut rng);
    let batch = 2;
    let mut input = Array2::zeros((batch, net.input_width()));
    // resample until no ReLU unit sits near its kink
    loop {
        input.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        if relu_margin(&net, &input) > 1e-3 {
            break;
        }
    }
    let seed_grad = Array2::from_shape_fn((batch, net.output_width()), |_| rng.random_range(-1.0..1.0));
    let loss = |n: &DenseNet| -> f64 {
        let y = n.forward_batch(input.view()).unwrap();
        (&y * &seed_grad).sum()
    };
    let trace = net.forward_trace(input.view()).unwrap();
    let (grads, _) = net.backward(&trace, seed_grad.view()).unwrap();
    let analytic = grads.flatten();
    let numeric = finite_difference(&net, 1e-5, loss);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, f)| relative_error(*a, *f))
        .fold(0.0, f64::max)
}
