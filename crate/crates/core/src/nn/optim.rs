use serde::{Deserialize, Serialize};

use super::{DenseNet, Gradients, NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(net: &DenseNet, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: net.zero_gradients(),
            second: net.zero_gradients(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&Gradients, &Gradients) {
        (&self.first, &self.second)
    }

    /// Restores a checkpointed state.
    pub fn from_parts(config: AdamConfig, step: u64, first: Gradients, second: Gradients) -> Result<Self> {
        if first.layers().len() != second.layers().len()
            || first
                .layers()
                .iter()
                .zip(second.layers())
                .any(|(a, b)| a.0.dim() != b.0.dim() || a.1.len() != b.1.len())
        {
            return Err(NnError::State("moment buffers disagree in shape"));
        }
        Ok(Self {
            config,
            step,
            first,
            second,
        })
    }

    /// Applies one bias-corrected update. Rejects non-finite gradients before
    /// touching any parameter.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if !grads.matches(net) || !self.first.matches(net) {
            return Err(NnError::State("gradient layout does not match the network"));
        }
        if let Some(layer) = grads.first_non_finite() {
            return Err(NnError::Numeric { layer });
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);

        for (layer_idx, layer) in net.layers_mut().iter_mut().enumerate() {
            let (gw, gb) = &grads.layers()[layer_idx];
            let (mw, mb) = &mut self.first.layers_mut()[layer_idx];
            let (vw, vb) = &mut self.second.layers_mut()[layer_idx];
            let params = layer.weight.iter_mut().chain(layer.bias.iter_mut());
            let g = gw.iter().chain(gb.iter());
            let m = mw.iter_mut().chain(mb.iter_mut());
            let v = vw.iter_mut().chain(vb.iter_mut());
            for (((p, &g), m), v) in params.zip(g).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Polyak averaging: `target ← rho·online + (1 − rho)·target`.
pub fn soft_update(target: &mut DenseNet, online: &DenseNet, rho: f64) -> Result<()> {
    if !target.same_architecture(online) {
        return Err(NnError::State("soft update between different architectures"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(NnError::State("soft update rate outside [0, 1]"));
    }
    for (t, o) in target.layers_mut().iter_mut().zip(online.layers()) {
        t.weight.zip_mut_with(&o.weight, |t, &o| *t = rho * o + (1.0 - rho) * *t);
        t.bias.zip_mut_with(&o.bias, |t, &o| *t = rho * o + (1.0 - rho) * *t);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten_params, Activation, Dense};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_net(value: f64) -> DenseNet {
        let mut layer = Dense::zeros(1, 1, Activation::Identity);
        layer.weight[[0, 0]] = value;
        DenseNet::new(vec![layer], false).unwrap()
    }

    fn scalar_grad(net: &DenseNet, g: f64) -> Gradients {
        let mut grads = net.zero_gradients();
        grads.layers_mut()[0].0[[0, 0]] = g;
        grads
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = DenseNet::mlp(3, &[4], 2, false, &mut rng);
        let before = net.clone();
        let mut adam = Adam::new(&net, AdamConfig::default());
        let zeros = net.zero_gradients();
        adam.step(&mut net, &zeros).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn constant_positive_gradient_decreases_parameter() {
        let mut net = scalar_net(0.0);
        let mut adam = Adam::new(&net, AdamConfig::default());
        let mut last = 0.0;
        for _ in 0..200 {
            let g = scalar_grad(&net, 1.0);
            adam.step(&mut net, &g).unwrap();
            let w = net.layers()[0].weight[[0, 0]];
            assert!(w < last);
            last = w;
        }
    }

    #[test]
    fn cold_start_step_matches_closed_form() {
        // t = 1: m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + ε).
        let g = 0.37;
        let cfg = AdamConfig::default();
        let mut net = scalar_net(1.5);
        let mut adam = Adam::new(&net, cfg);
        let grads = scalar_grad(&net, g);
        adam.step(&mut net, &grads).unwrap();
        let m = (1.0 - cfg.beta1) * g;
        let v = (1.0 - cfg.beta2) * g * g;
        let m_hat = m / (1.0 - cfg.beta1);
        let v_hat = v / (1.0 - cfg.beta2);
        let expected = 1.5 - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        assert!((net.layers()[0].weight[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_reports_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = DenseNet::mlp(2, &[3], 1, false, &mut rng);
        let mut adam = Adam::new(&net, AdamConfig::default());
        let mut g = net.zero_gradients();
        g.layers_mut()[1].1[0] = f64::NAN;
        let before = net.clone();
        match adam.step(&mut net, &g) {
            Err(NnError::Numeric { layer }) => assert_eq!(layer, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(net, before);
    }

    #[test]
    fn soft_update_endpoints_and_value() {
        let online = scalar_net(1.0);
        let mut target = scalar_net(0.0);
        soft_update(&mut target, &online, 0.005).unwrap();
        assert!((target.layers()[0].weight[[0, 0]] - 0.005).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let online = DenseNet::mlp(2, &[3], 2, true, &mut rng);
        let mut t1 = DenseNet::mlp(2, &[3], 2, true, &mut rng);
        let t0 = t1.clone();
        soft_update(&mut t1, &online, 1.0).unwrap();
        assert_eq!(t1, online);
        let mut t2 = t0.clone();
        soft_update(&mut t2, &online, 0.0).unwrap();
        assert_eq!(t2, t0);
    }

    #[test]
    fn soft_update_rejects_architecture_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let online = DenseNet::mlp(2, &[3], 2, true, &mut rng);
        let mut other = DenseNet::mlp(2, &[4], 2, true, &mut rng);
        assert!(soft_update(&mut other, &online, 0.5).is_err());
    }

    #[test]
    fn soft_update_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let online = DenseNet::mlp(3, &[5], 2, false, &mut rng);
            let mut target = DenseNet::mlp(3, &[5], 2, false, &mut rng);
            let before = flatten_params(&target);
            let rho = rand::Rng::random_range(&mut rng, 0.0..=1.0);
            soft_update(&mut target, &online, rho).unwrap();
            for ((t, b), o) in flatten_params(&target).iter().zip(&before).zip(flatten_params(&online)) {
                let (lo, hi) = if *b < o { (*b, o) } else { (o, *b) };
                assert!(*t >= lo - 1e-15 && *t <= hi + 1e-15);
            }
        }
    }
}
