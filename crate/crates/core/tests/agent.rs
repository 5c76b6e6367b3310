use bst_core::agent::*;
use bst_core::envdata::*;
use bst_core::morse::{KernelSpec, MorseModel};
use bst_core::nn::{flatten_params, AdamConfig};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(n: usize, rng: &mut ChaCha8Rng) -> AgentBatch {
    let states = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
    let next = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
    AgentBatch {
        raw_states: states.clone(),
        states,
        actions: Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0)),
        rewards: Array1::from_shape_fn(n, |_| rng.random_range(0.0..1.0)),
        next_states: next,
        dones: Array1::from_shape_fn(n, |i| (i % 5 == 0) as u8 as f64),
    }
}

fn setup(mode: TargetMode, critics: usize) -> (PolicyNet, CriticEnsemble, MorseModel, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let policy = PolicyNet::new(2, 2, &[16, 16], StateNormalizer::identity(2), &mut rng).unwrap();
    let ens = CriticEnsemble::new(critics, 2, 2, &[16, 16], mode, &mut rng).unwrap();
    let morse = MorseModel::new(
        2,
        2,
        &[16, 16],
        true,
        KernelSpec::rational_quadratic(1.0, 1.0),
        StateNormalizer::identity(2),
        &mut rng,
    )
    .unwrap();
    (policy, ens, morse, rng)
}

fn relative_change(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

#[test]
fn q_ascent_gradient_is_invariant_to_critic_scale() {
    for mode in [TargetMode::ClippedDouble, TargetMode::Independent] {
        for objective in [Objective::Td3, Objective::Bst] {
            let (policy, critics, morse, mut rng) = setup(mode, 3);
            let batch = random_batch(64, &mut rng);
            let cfg = AgentConfig {
                objective,
                ..Default::default()
            };
            let base = policy_gradient(&policy, &critics, Some(&morse), &batch, &cfg).unwrap();
            for c in [0.1, 10.0] {
                let mut scaled = critics.clone();
                for net in &mut scaled.online {
                    net.scale_output_layer(c);
                }
                let out = policy_gradient(&policy, &scaled, Some(&morse), &batch, &cfg).unwrap();
                assert!((out.diagnostics.z_q / base.diagnostics.z_q - c).abs() < 1e-12);
                let rel = relative_change(&base.grads.flatten(), &out.grads.flatten());
                assert!(rel <= 1e-9, "{mode:?} {objective:?} c={c}: {rel}");
            }
        }
    }
}

#[test]
fn zero_uncertainty_leaves_pure_q_ascent() {
    // a Morse model that certifies every action: f(s, a) = a
    let (policy, critics, _, mut rng) = setup(TargetMode::ClippedDouble, 2);
    let mut layer = bst_core::nn::Dense::zeros(4, 2, bst_core::nn::Activation::Identity);
    layer.weight[[2, 0]] = 1.0;
    layer.weight[[3, 1]] = 1.0;
    let net = bst_core::nn::DenseNet::new(vec![layer], false).unwrap();
    let certain =
        MorseModel::from_parts(net, KernelSpec::rbf(1.0), 2, 2, StateNormalizer::identity(2)).unwrap();
    let batch = random_batch(32, &mut rng);
    let bst = AgentConfig::default();
    let td3 = AgentConfig {
        objective: Objective::Td3,
        ..Default::default()
    };
    let a = policy_gradient(&policy, &critics, Some(&certain), &batch, &bst).unwrap();
    let b = policy_gradient(&policy, &critics, None, &batch, &td3).unwrap();
    assert_eq!(a.diagnostics.w_max, 0.0);
    assert_eq!(a.diagnostics.c_max, 0.0);
    assert_eq!(a.grads.flatten(), b.grads.flatten());
}

#[test]
fn bst_objective_requires_morse() {
    let (policy, critics, _, mut rng) = setup(TargetMode::ClippedDouble, 2);
    let batch = random_batch(4, &mut rng);
    assert!(matches!(
        policy_gradient(&policy, &critics, None, &batch, &AgentConfig::default()),
        Err(AgentError::Config(_))
    ));
}

#[test]
fn fixed_batch_td_error_vanishes() {
    let (policy, mut critics, _, mut rng) = setup(TargetMode::ClippedDouble, 2);
    let batch = random_batch(16, &mut rng);
    let cfg = AgentConfig {
        noise_std: 0.0,
        critic_optimizer: AdamConfig {
            learning_rate: 1e-3,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut opts: Vec<_> = critics.online.iter().map(|c| bst_core::nn::Adam::new(c, cfg.critic_optimizer)).collect();
    let mut last = f64::INFINITY;
    for _ in 0..5_000 {
        last = critic_update(&mut critics, &mut opts, &policy, &batch, &cfg, &mut rng).unwrap().mean_loss();
        if last < 1e-3 {
            break;
        }
    }
    assert!(last < 1e-3, "{last}");
}

#[test]
fn zero_steps_returns_initial_policy() {
    let d = four_mode_dataset(16, 0).unwrap();
    let morse = bst_core::morse::train_morse(
        &d,
        &bst_core::morse::MorseConfig {
            hidden: vec![8],
            steps: 1,
            ..Default::default()
        },
        0,
    )
    .unwrap()
    .0;
    let cfg = AgentConfig {
        steps: 0,
        actor_hidden: vec![8],
        critic_hidden: vec![8],
        ..Default::default()
    };
    let out = train_td3bst(&d, None, Some(&morse), &cfg, 4).unwrap();
    assert!(out.audit.events.is_empty());
    assert!(out.diagnostics.is_empty());
    assert_eq!(flatten_params(&out.policy.online), flatten_params(&out.policy.target));
}

#[test]
fn dimension_mismatch_is_config_error() {
    let d = four_mode_dataset(16, 0).unwrap();
    let env = EnvSpec::PointMaze(PointMazeSpec::default()).build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let wrong = MorseModel::new(3, 2, &[4], true, KernelSpec::rbf(1.0), StateNormalizer::identity(3), &mut rng).unwrap();
    let cfg = AgentConfig {
        steps: 10,
        ..Default::default()
    };
    assert!(matches!(train_td3bst(&d, None, Some(&wrong), &cfg, 0), Err(AgentError::Config(_))));
    let mut maze_data = ReplayDataset::new(3, 2);
    maze_data
        .push(&Transition {
            state: vec![0.0; 3],
            action: vec![0.0; 2],
            reward: 0.0,
            next_state: vec![0.0; 3],
            done: false,
        })
        .unwrap();
    let td3 = AgentConfig {
        objective: Objective::Td3,
        ..cfg
    };
    assert!(matches!(train_td3bst(&maze_data, Some(&env), None, &td3, 0), Err(AgentError::Config(_))));
}

#[test]
fn both_cloning_variants_recover_a_single_action() {
    let mut d = ReplayDataset::new(2, 2);
    let target = [0.3, -0.6];
    for _ in 0..64 {
        d.push(&Transition {
            state: vec![0.0, 0.0],
            action: target.to_vec(),
            reward: 0.0,
            next_state: vec![0.0, 0.0],
            done: true,
        })
        .unwrap();
    }
    let morse = bst_core::morse::train_morse(
        &d,
        &bst_core::morse::MorseConfig {
            hidden: vec![32, 32],
            steps: 1_500,
            batch_size: 64,
            optimizer: AdamConfig {
                learning_rate: 1e-3,
                ..Default::default()
            },
            ..Default::default()
        },
        1,
    )
    .unwrap()
    .0;
    let cfg = BcConfig {
        steps: 1_500,
        batch_size: 32,
        hidden: vec![16],
        optimizer: AdamConfig {
            learning_rate: 3e-3,
            ..Default::default()
        },
        ..Default::default()
    };
    for weighting in [BcWeighting::Uniform, BcWeighting::Morse(&morse)] {
        let p = train_bc(&d, &cfg, weighting, 2).unwrap();
        let a = p.action(&[0.0, 0.0]).unwrap();
        let err = ((a[0] - target[0]).powi(2) + (a[1] - target[1]).powi(2)).sqrt();
        assert!(err < 0.02, "{weighting:?}: {a:?}");
    }
}

#[test]
fn uniform_policy_rarely_solves_the_large_maze() {
    let env = EnvSpec::PointMaze(PointMazeSpec {
        maze: "large".into(),
        ..Default::default()
    })
    .build()
    .unwrap();
    let stats = evaluate(&mut UniformPolicy::new(2, 5), &env, 100, 8).unwrap();
    assert!(stats.success_rate <= 0.05, "{stats:?}");
}

#[test]
fn deviation_histogram_counts_every_pair() {
    let d = four_mode_dataset(40, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = PolicyNet::new(2, 2, &[8], StateNormalizer::identity(2), &mut rng).unwrap();
    let stats = deviation_stats(&p, &d, 10).unwrap();
    assert_eq!(stats.counts.iter().sum::<usize>(), 40);
    assert!(stats.mean <= stats.max);
    assert!((stats.bin_width * 10.0 - 2.0 * 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn clipped_double_targets_by_hand() {
    let y = td_targets(
        array![0.0].view(),
        array![0.0].view(),
        &[array![2.0], array![3.0]],
        0.99,
        TargetMode::ClippedDouble,
    );
    assert!((y[0][0] - 1.98).abs() < 1e-15);
}

proptest! {
    #[test]
    fn weight_is_monotone(c1 in 0.0f64..1.0, dc in 1e-6f64..0.5, mu in 0.05f64..5.0, dmu in 1e-3f64..1.0) {
        let c2 = (c1 + dc).min(1.0);
        prop_assume!(c2 > c1);
        prop_assert!(disadvantage_weight(c2, mu) > disadvantage_weight(c1, mu));
        if c1 > 0.0 {
            prop_assert!(disadvantage_weight(c1, mu) > disadvantage_weight(c1, mu + dmu));
        }
        let w = disadvantage_weight(c1, mu);
        prop_assert!(w >= 0.0 && w <= (1.0 / mu).exp_m1());
    }

    #[test]
    fn clipped_double_is_conservative(
        qs in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 2..6),
        rewards in proptest::collection::vec(-1.0f64..1.0, 4),
        dones in proptest::collection::vec(any::<bool>(), 4),
        gamma in 0.0f64..0.999,
    ) {
        let q: Vec<Array1<f64>> = qs.into_iter().map(Array1::from).collect();
        let r = Array1::from(rewards);
        let d = Array1::from_iter(dones.into_iter().map(|b| b as u8 as f64));
        let cdq = td_targets(r.view(), d.view(), &q, gamma, TargetMode::ClippedDouble);
        let ind = td_targets(r.view(), d.view(), &q, gamma, TargetMode::Independent);
        for (c, i) in cdq.iter().zip(&ind) {
            for (a, b) in c.iter().zip(i) {
                prop_assert!(a <= b);
            }
        }
    }
}
