use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{state_action, AgentConfig, AgentError, CriticEnsemble, Objective, PolicyNet, Result, TargetMode};
use crate::envdata::{StateNormalizer, TransitionBatch};
use crate::morse::MorseModel;
use crate::nn::{Adam, Gradients};

/// Floor for the Q normalizer.
pub const Z_Q_FLOOR: f64 = 1e-6;

/// A minibatch in the form the learner consumes: raw states for the Morse
/// model, normalized states for the actor and critics.
#[derive(Debug, Clone)]
pub struct AgentBatch {
    pub raw_states: Array2<f64>,
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Array1<f64>,
}

impl AgentBatch {
    pub fn new(batch: TransitionBatch, normalizer: &StateNormalizer) -> Self {
        Self {
            states: normalizer.apply(&batch.states),
            next_states: normalizer.apply(&batch.next_states),
            raw_states: batch.states,
            actions: batch.actions,
            rewards: batch.rewards,
            dones: batch.dones,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bootstrapped regression targets, one vector per critic.
///
/// `target_q[j]` holds target critic `j` evaluated at the smoothed next
/// action. With clipped double Q every critic shares the elementwise minimum.
pub fn td_targets(
    rewards: ArrayView1<f64>,
    dones: ArrayView1<f64>,
    target_q: &[Array1<f64>],
    discount: f64,
    mode: TargetMode,
) -> Vec<Array1<f64>> {
    let bootstrap = |q: &Array1<f64>| -> Array1<f64> {
        let mut y = rewards.to_owned();
        Zip::from(&mut y).and(&dones).and(q).for_each(|y, &d, &q| {
            if d == 0.0 {
                *y += discount * q;
            }
        });
        y
    };
    match mode {
        TargetMode::ClippedDouble => {
            let mut min = target_q[0].clone();
            for q in &target_q[1..] {
                Zip::from(&mut min).and(q).for_each(|m, &v| *m = m.min(v));
            }
            vec![bootstrap(&min); target_q.len()]
        }
        TargetMode::Independent => target_q.iter().map(bootstrap).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticStats {
    /// Mean squared TD error per critic, measured before the step.
    pub losses: Vec<f64>,
    pub mean_target: f64,
}

impl CriticStats {
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

/// One optimizer step on every online critic.
pub fn critic_update<R: Rng + ?Sized>(
    critics: &mut CriticEnsemble,
    optimizers: &mut [Adam],
    policy: &PolicyNet,
    batch: &AgentBatch,
    cfg: &AgentConfig,
    rng: &mut R,
) -> Result<CriticStats> {
    let n = batch.len();
    if n == 0 {
        return Err(AgentError::Argument("empty batch".into()));
    }
    let mut next_actions = policy.target.forward_batch(batch.next_states.view())?;
    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| AgentError::Config(e.to_string()))?;
        next_actions.mapv_inplace(|a| {
            let eps = noise.sample(rng).clamp(-cfg.noise_clip, cfg.noise_clip);
            (a + eps).clamp(-1.0, 1.0)
        });
    }
    let next_x = state_action(&batch.next_states, &next_actions);
    let target_q = critics
        .target
        .iter()
        .map(|net| Ok(net.forward_batch(next_x.view())?.column(0).to_owned()))
        .collect::<Result<Vec<_>>>()?;
    let targets = td_targets(batch.rewards.view(), batch.dones.view(), &target_q, cfg.discount, critics.mode);
    if targets.iter().any(|y| y.iter().any(|v| !v.is_finite())) {
        return Err(AgentError::Numeric("critic targets".into()));
    }
    let x = state_action(&batch.states, &batch.actions);
    let mut losses = Vec::with_capacity(critics.len());
    for ((net, opt), y) in critics.online.iter_mut().zip(optimizers.iter_mut()).zip(&targets) {
        let trace = net.forward_trace(x.view())?;
        let q = trace.output().expect("recorded").column(0).to_owned();
        let err = &q - y;
        losses.push(err.dot(&err) / n as f64);
        let seed = (err * (2.0 / n as f64)).insert_axis(Axis(1));
        let (grads, _) = net.backward(&trace, seed.view())?;
        opt.step(net, &grads)?;
    }
    let mean_target = targets.iter().map(|y| y.mean().unwrap_or(0.0)).sum::<f64>() / targets.len() as f64;
    Ok(CriticStats { losses, mean_target })
}

/// `e^(C/μ) − 1`.
pub fn disadvantage_weight(uncertainty: f64, temperature: f64) -> f64 {
    (uncertainty / temperature).exp_m1()
}

/// Batch mean of `|Q|`, floored at [`Z_Q_FLOOR`]. The flag reports whether
/// the floor was applied.
pub fn q_normalizer(q: ArrayView1<f64>) -> (f64, bool) {
    let z = q.iter().map(|v| v.abs()).sum::<f64>() / q.len().max(1) as f64;
    if z < Z_Q_FLOOR {
        (Z_Q_FLOOR, true)
    } else {
        (z, false)
    }
}

/// Summary of one actor update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BstDiagnostics {
    pub c_min: f64,
    pub c_max: f64,
    pub c_mean: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub w_mean: f64,
    pub z_q: f64,
    pub z_q_clamped: bool,
    /// `mean(w · ‖π(s) − a‖²)`
    pub bc_term: f64,
    /// `mean(Q) / Z_Q`
    pub q_term: f64,
    /// Samples with `C ∉ [0, 1]` or `w ∉ [0, e^(1/μ) − 1]`.
    pub violations: usize,
}

#[derive(Debug, Clone)]
pub struct PolicyStep {
    pub loss: f64,
    pub grads: Gradients,
    pub diagnostics: BstDiagnostics,
}

/// Actor loss and its gradient, without stepping.
///
/// `morse` is required for [`Objective::Bst`]. Unless
/// [`AgentConfig::weight_gradient`] is set, `w` is treated as a constant and
/// no gradient reaches the policy through the Morse model.
pub fn policy_gradient(
    policy: &PolicyNet,
    critics: &CriticEnsemble,
    morse: Option<&MorseModel>,
    batch: &AgentBatch,
    cfg: &AgentConfig,
) -> Result<PolicyStep> {
    let n = batch.len();
    if n == 0 {
        return Err(AgentError::Argument("empty batch".into()));
    }
    let trace = policy.online.forward_trace(batch.states.view())?;
    let actions = trace.output().expect("recorded").clone();
    let x = state_action(&batch.states, &actions);

    let used = critics.actor_critics();
    let share = 1.0 / used.len() as f64;
    let mut q = Array1::zeros(n);
    let mut dq_da = Array2::zeros(actions.raw_dim());
    let ones = Array2::from_elem((n, 1), share);
    let state_dim = batch.states.ncols();
    for net in &critics.online[used] {
        let ct = net.forward_trace(x.view())?;
        q.scaled_add(share, &ct.output().expect("recorded").column(0));
        let g = net.input_gradient(&ct, ones.view())?;
        dq_da += &g.slice(s![.., state_dim..]);
    }
    let (z_q, z_q_clamped) = q_normalizer(q.view());

    let mut weight_grad = None;
    let (q_scale, weights) = match cfg.objective {
        Objective::Bst => {
            let morse = morse.ok_or_else(|| AgentError::Config("BST objective needs a Morse model".into()))?;
            let m = if cfg.weight_gradient {
                let (m, dm_da) = morse.certainty_with_action_gradient(batch.raw_states.view(), actions.view())?;
                weight_grad = Some(dm_da);
                m
            } else {
                morse.certainty_batch(batch.raw_states.view(), actions.view())?
            };
            let w = m.mapv(|m| disadvantage_weight(1.0 - m, cfg.temperature));
            (1.0, Some((m.mapv(|m| 1.0 - m), w)))
        }
        Objective::Td3Bc { alpha } => (alpha, Some((Array1::zeros(n), Array1::ones(n)))),
        Objective::Td3 => (1.0, None),
    };

    let gaps = &actions - &batch.actions;
    let sq = gaps.map_axis(Axis(1), |r| r.dot(&r));
    let q_term = q_scale * q.sum() / (n as f64 * z_q);
    // ∂loss/∂a_π = −q_scale·∂Q/∂a/(N·Z_Q) + 2·w·(a_π − a)/N
    let mut seed = dq_da * (-q_scale / (n as f64 * z_q));
    let mut diag = BstDiagnostics {
        c_min: 0.0,
        c_max: 0.0,
        c_mean: 0.0,
        w_min: 0.0,
        w_max: 0.0,
        w_mean: 0.0,
        z_q,
        z_q_clamped,
        bc_term: 0.0,
        q_term,
        violations: 0,
    };
    if let Some((c, w)) = &weights {
        diag.bc_term = (w * &sq).sum() / n as f64;
        for (mut row, (gap, &wi)) in seed.rows_mut().into_iter().zip(gaps.rows().into_iter().zip(w)) {
            row.scaled_add(2.0 * wi / n as f64, &gap);
        }
        if let Some(dm_da) = &weight_grad {
            // ∂w/∂a_π = −e^(C/μ)/μ · ∂M/∂a_π
            for (i, (mut row, dm)) in seed.rows_mut().into_iter().zip(dm_da.rows()).enumerate() {
                let dw = -(c[i] / cfg.temperature).exp() / cfg.temperature;
                row.scaled_add(sq[i] * dw / n as f64, &dm);
            }
        }
        if cfg.objective == Objective::Bst {
            let w_cap = cfg.max_weight();
            diag.c_min = c.fold(f64::INFINITY, |a, &b| a.min(b));
            diag.c_max = c.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            diag.c_mean = c.sum() / n as f64;
            diag.w_min = w.fold(f64::INFINITY, |a, &b| a.min(b));
            diag.w_max = w.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            diag.w_mean = w.sum() / n as f64;
            diag.violations = c
                .iter()
                .zip(w)
                .filter(|(&c, &w)| !(0.0..=1.0).contains(&c) || !(0.0..=w_cap).contains(&w))
                .count();
        } else {
            diag.w_min = 1.0;
            diag.w_max = 1.0;
            diag.w_mean = 1.0;
        }
    }
    let loss = -q_term + diag.bc_term;
    let (grads, _) = policy.online.backward(&trace, seed.view())?;
    Ok(PolicyStep {
        loss,
        grads,
        diagnostics: diag,
    })
}

/// One optimizer step on the online policy.
pub fn bst_policy_update(
    policy: &mut PolicyNet,
    optimizer: &mut Adam,
    critics: &CriticEnsemble,
    morse: Option<&MorseModel>,
    batch: &AgentBatch,
    cfg: &AgentConfig,
) -> Result<PolicyStep> {
    let step = policy_gradient(policy, critics, morse, batch, cfg)?;
    optimizer.step(&mut policy.online, &step.grads)?;
    Ok(step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn terminal_and_myopic_targets() {
        let r = array![1.0, 0.5];
        let d = array![1.0, 0.0];
        let q = vec![array![100.0, 100.0]];
        let y = td_targets(r.view(), d.view(), &q, 0.99, TargetMode::ClippedDouble);
        assert_eq!(y[0][0], 1.0);
        let y0 = td_targets(r.view(), d.view(), &q, 0.0, TargetMode::ClippedDouble);
        assert_eq!(y0[0], r);
    }

    #[test]
    fn clipped_double_takes_minimum() {
        let y = td_targets(
            array![0.0].view(),
            array![0.0].view(),
            &[array![2.0], array![3.0]],
            0.99,
            TargetMode::ClippedDouble,
        );
        assert!((y[0][0] - 1.98).abs() < 1e-15);
        assert_eq!(y[0], y[1]);
        let ind = td_targets(
            array![0.0].view(),
            array![0.0].view(),
            &[array![2.0], array![3.0]],
            0.99,
            TargetMode::Independent,
        );
        assert!((ind[1][0] - 2.97).abs() < 1e-15);
    }

    #[test]
    fn weight_values() {
        assert_eq!(disadvantage_weight(0.0, 0.5), 0.0);
        assert!((disadvantage_weight(1.0, 0.5) - 6.389_056_098_930_65).abs() < 1e-12);
    }

    #[test]
    fn normalizer_by_hand() {
        assert_eq!(q_normalizer(array![1.0, -2.0, 3.0].view()), (2.0, false));
        assert_eq!(q_normalizer(array![0.0, 0.0].view()), (Z_Q_FLOOR, true));
    }
}
