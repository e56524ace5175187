use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn randomize(net: &mut Net<f64>, scale: f64, rng: &mut ChaCha8Rng) {
    for p in net.params_mut() {
        *p = rng.random_range(-scale..scale);
    }
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn transition(rng: &mut ChaCha8Rng, reward: f64) -> Transition<f64> {
    Transition {
        state: random_vec(3, rng),
        action: random_vec(2, rng),
        reward,
        next_state: random_vec(3, rng),
        goal: random_vec(2, rng),
        achieved_goal: random_vec(2, rng),
        done: false,
        relabeled: false,
    }
}

fn agent(config: AgentConfig<f64>, seed: u64) -> Agent<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Agent::new(config, 3, 2, 2, 1.0, &mut rng).unwrap()
}

fn small_config() -> AgentConfig<f64> {
    AgentConfig {
        hidden: vec![8],
        ..AgentConfig::default()
    }
}

#[test]
fn forward_matches_hand_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Net::new(&[2, 2, 1], OutputActivation::Identity, &mut rng).unwrap();
    // w1 = [[1, 2], [3, 4]] input-major, b1 = [0.5, -0.5], w2 = [1, -1], b2 = 0.25
    net.params_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 0.5, -0.5, 1.0, -1.0, 0.25]);
    let y = net.predict(&[0.1, -0.2], 1).unwrap();
    let h0 = (0.1 * 1.0 - 0.2 * 3.0 + 0.5f64).tanh();
    let h1 = (0.1 * 2.0 - 0.2 * 4.0 - 0.5f64).tanh();
    assert!((y[0] - (h0 - h1 + 0.25)).abs() < 1e-15);
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let h = 1e-5;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut critic = Net::new(&[7, 6, 1], OutputActivation::Identity, &mut rng).unwrap();
        randomize(&mut critic, 0.7, &mut rng);
        let batch = 5;
        let inputs = random_vec(batch * 7, &mut rng);
        let targets = random_vec(batch, &mut rng);
        let weights: Vec<f64> = (0..batch).map(|_| rng.random_range(0.1..1.0)).collect();
        for w in [None, Some(weights.as_slice())] {
            let (_, grads, _) = critic_loss_grad(&critic, &inputs, &targets, w).unwrap();
            for _ in 0..10 {
                let k = rng.random_range(0..critic.param_count());
                let mut plus = critic.clone();
                plus.params_mut()[k] += h;
                let mut minus = critic.clone();
                minus.params_mut()[k] -= h;
                let lp = critic_loss_grad(&plus, &inputs, &targets, w).unwrap().0;
                let lm = critic_loss_grad(&minus, &inputs, &targets, w).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                assert!(rel_err(grads[k], fd) < 1e-4, "param {k}: {} vs {fd}", grads[k]);
            }
        }
    }
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let h = 1e-5;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut actor = Net::new(&[5, 6, 2], OutputActivation::ScaledTanh(2.0), &mut rng).unwrap();
        let mut critic = Net::new(&[7, 6, 1], OutputActivation::Identity, &mut rng).unwrap();
        randomize(&mut actor, 0.7, &mut rng);
        randomize(&mut critic, 0.7, &mut rng);
        let batch = 4;
        let obs = random_vec(batch * 5, &mut rng);
        let cases = [
            (0.0, ActionKind::Continuous),
            (0.5, ActionKind::Continuous),
            (0.0, ActionKind::Argmax),
            (0.5, ActionKind::Argmax),
        ];
        for (l2, kind) in cases {
            let (_, grads) = actor_loss_grad(&actor, &critic, &obs, batch, l2, kind, 3.0).unwrap();
            for _ in 0..10 {
                let k = rng.random_range(0..actor.param_count());
                let mut plus = actor.clone();
                plus.params_mut()[k] += h;
                let mut minus = actor.clone();
                minus.params_mut()[k] -= h;
                let lp = actor_loss_grad(&plus, &critic, &obs, batch, l2, kind, 3.0).unwrap().0;
                let lm = actor_loss_grad(&minus, &critic, &obs, batch, l2, kind, 3.0).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                assert!(rel_err(grads[k], fd) < 1e-4, "{kind:?} param {k}: {} vs {fd}", grads[k]);
            }
        }
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = Net::new(&[4, 5, 5, 3], OutputActivation::ScaledTanh(1.5), &mut rng).unwrap();
    randomize(&mut net, 0.8, &mut rng);
    let x = random_vec(4, &mut rng);
    let upstream = random_vec(3, &mut rng);
    let f = |x: &[f64]| -> f64 { net.predict(x, 1).unwrap().iter().zip(&upstream).map(|(a, b)| a * b).sum() };
    let mut cache = ForwardCache::new();
    net.forward(&x, 1, &mut cache).unwrap();
    let mut gin = Vec::new();
    net.backward(&cache, &upstream, None, Some(&mut gin)).unwrap();
    for j in 0..4 {
        let mut p = x.clone();
        p[j] += 1e-5;
        let mut m = x.clone();
        m[j] -= 1e-5;
        let fd = (f(&p) - f(&m)) / 2e-5;
        assert!(rel_err(gin[j], fd) < 1e-6);
    }
}

#[test]
fn duplicated_batch_gives_identical_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let critic = Net::new(&[4, 5, 1], OutputActivation::Identity, &mut rng).unwrap();
    let inputs = random_vec(3 * 4, &mut rng);
    let targets = random_vec(3, &mut rng);
    let (l1, g1, _) = critic_loss_grad(&critic, &inputs, &targets, None).unwrap();
    let inputs2 = [inputs.clone(), inputs].concat();
    let targets2 = [targets.clone(), targets].concat();
    let (l2, g2, _) = critic_loss_grad(&critic, &inputs2, &targets2, None).unwrap();
    assert!((l1 - l2).abs() < 1e-14);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let mut a = agent(
        AgentConfig {
            actor_lr: 0.0,
            critic_lr: 0.0,
            ..small_config()
        },
        1,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch: Vec<_> = (0..16).map(|_| transition(&mut rng, -1.0)).collect();
    let before = a.nets().clone();
    a.train_step(&batch, None).unwrap();
    assert_eq!(a.nets(), &before);
}

#[test]
fn actor_update_leaves_critic_bitwise() {
    let mut a = agent(small_config(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch: Vec<_> = (0..16).map(|_| transition(&mut rng, -1.0)).collect();
    let critic = a.nets().critic.clone();
    let actor = a.nets().actor.clone();
    a.actor_update(&batch).unwrap();
    assert_eq!(a.nets().critic, critic);
    assert_ne!(a.nets().actor, actor);
}

#[test]
fn td_target_examples() {
    let mut a = agent(small_config(), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    a.nets_mut().target_critic.params_mut().iter_mut().for_each(|p| *p = 0.0);
    let zero = transition(&mut rng, 0.0);
    assert_eq!(a.td_target(&[zero]).unwrap(), vec![0.0]);

    let last = a.nets().target_critic.param_count() - 1;
    a.nets_mut().target_critic.params_mut()[last] = -10.0;
    let y = a.td_target(&[transition(&mut rng, -1.0)]).unwrap();
    assert!((y[0] + 10.8).abs() < 1e-12);

    a.nets_mut().target_critic.params_mut()[last] = -80.0;
    let y = a.td_target(&[transition(&mut rng, -1.0)]).unwrap();
    assert!((y[0] + 50.0).abs() < 1e-9, "clipped to the feasible range");
    a.nets_mut().target_critic.params_mut()[last] = 3.0;
    assert_eq!(a.td_target(&[transition(&mut rng, 0.0)]).unwrap(), vec![0.0]);

    let mut b = agent(
        AgentConfig {
            gamma: 0.0,
            ..small_config()
        },
        4,
    );
    let last = b.nets().target_critic.param_count() - 1;
    b.nets_mut().target_critic.params_mut()[last] = -7.0;
    assert_eq!(b.td_target(&[transition(&mut rng, -1.0)]).unwrap(), vec![-1.0]);
    assert!(b.td_target(&[]).is_err());
}

#[test]
fn polyak_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut nets = AgentNets::<f64>::new(3, 2, 1.0, &[4], &mut rng).unwrap();
    assert_eq!(nets.actor, nets.target_actor);
    assert_eq!(nets.critic, nets.target_critic);

    nets.target_actor.params_mut().iter_mut().for_each(|p| *p = 0.0);
    nets.actor.params_mut().iter_mut().for_each(|p| *p = 2.0);
    nets.polyak_update(0.5).unwrap();
    assert!(nets.target_actor.params().iter().all(|&p| p == 1.0));

    randomize(&mut nets.critic, 1.0, &mut rng);
    let gap0: Vec<f64> = nets.critic.params().iter().zip(nets.target_critic.params()).map(|(s, t)| s - t).collect();
    let tau = 0.1;
    for _ in 0..7 {
        nets.polyak_update(tau).unwrap();
    }
    for ((s, t), g) in nets.critic.params().iter().zip(nets.target_critic.params()).zip(&gap0) {
        assert!(((s - t) - g * 0.9f64.powi(7)).abs() < 1e-12);
    }

    nets.polyak_update(1.0).unwrap();
    assert_eq!(nets.actor, nets.target_actor);
    assert_eq!(nets.critic, nets.target_critic);
    assert!(nets.polyak_update(0.0).is_err());
}

#[test]
fn greedy_action_is_deterministic_and_bounded() {
    let a = agent(small_config(), 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = random_vec(3, &mut rng);
    let g = random_vec(2, &mut rng);
    assert_eq!(a.act(&s, &g, false, &mut rng).unwrap(), a.act(&s, &g, false, &mut rng).unwrap());
    for _ in 0..10_000 {
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-100.0..100.0)).collect();
        let act = a.act(&s, &g, true, &mut rng).unwrap();
        assert!(act.iter().all(|v| v.abs() <= 1.0));
    }
    assert!(matches!(a.act(&[0.0], &g, false, &mut rng), Err(CdpError::DimensionMismatch { .. })));
}

#[test]
fn full_epsilon_gives_uniform_actions() {
    let a = agent(
        AgentConfig {
            random_action_prob: 1.0,
            ..small_config()
        },
        9,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut bins = [[0usize; 4]; 2];
    let n = 10_000;
    for _ in 0..n {
        let act = a.act(&[0.0; 3], &[0.0; 2], true, &mut rng).unwrap();
        for (c, &v) in act.iter().enumerate() {
            bins[c][(((v + 1.0) / 2.0 * 4.0) as usize).min(3)] += 1;
        }
    }
    for comp in bins {
        for count in comp {
            assert!((count as f64 / n as f64 - 0.25).abs() < 0.02, "{comp:?}");
        }
    }
}

#[test]
fn training_keeps_parameters_finite_and_fits_constant_target() {
    let mut a = agent(
        AgentConfig {
            critic_lr: 1e-2,
            ..small_config()
        },
        11,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let batch: Vec<_> = (0..32).map(|_| transition(&mut rng, -1.0)).collect();
    let targets = vec![-3.0; 32];
    let first = a.critic_update(&batch, &targets, None).unwrap().loss;
    let mut last = first;
    for _ in 0..300 {
        last = a.critic_update(&batch, &targets, None).unwrap().loss;
        a.actor_update(&batch).unwrap();
    }
    assert!(a.nets().is_finite());
    assert!(last < first * 0.01, "{first} -> {last}");
}

#[test]
fn checkpoint_round_trip_restores_behavior() {
    let mut a = agent(small_config(), 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let batch: Vec<_> = (0..8).map(|_| transition(&mut rng, -1.0)).collect();
    a.train_step(&batch, None).unwrap();
    let traj = Trajectory::new(&[0.0, 0.0], batch.clone(), 8).unwrap();
    a.observe_trajectory(&traj).unwrap();
    let json = a.to_json().unwrap();
    let b = Agent::<f64>::from_json(&json).unwrap();
    assert_eq!(a, b);
    let s = random_vec(3, &mut rng);
    let g = random_vec(2, &mut rng);
    assert_eq!(a.act(&s, &g, false, &mut rng).unwrap(), b.act(&s, &g, false, &mut rng).unwrap());
    let bumped = json.replacen("\"version\":1", "\"version\":9", 1);
    assert!(matches!(Agent::<f64>::from_json(&bumped), Err(CdpError::UnsupportedVersion(9))));
}

#[test]
fn config_validation() {
    assert!(AgentConfig::<f64>::default().validate().is_ok());
    for bad in [
        AgentConfig { gamma: 1.0, ..AgentConfig::default() },
        AgentConfig { tau: 0.0, ..AgentConfig::default() },
        AgentConfig { random_action_prob: 1.5, ..AgentConfig::default() },
        AgentConfig { batch_size: 0, ..AgentConfig::default() },
        AgentConfig { grad_clip: 0.0, ..AgentConfig::default() },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn f32_agent_trains() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut a = Agent::<f32>::new(AgentConfig { hidden: vec![8], ..AgentConfig::default() }, 2, 2, 2, 1.0, &mut rng).unwrap();
    let batch: Vec<Transition<f32>> = (0..8)
        .map(|i| Transition {
            state: vec![i as f32, 0.0],
            action: vec![0.5, -0.5],
            reward: -1.0,
            next_state: vec![i as f32 + 1.0, 0.0],
            goal: vec![1.0, 1.0],
            achieved_goal: vec![i as f32 + 1.0, 0.0],
            done: false,
            relabeled: false,
        })
        .collect();
    let step = a.train_step(&batch, None).unwrap();
    assert!(step.critic_loss.is_finite() && step.actor_loss.is_finite());
    assert_eq!(step.abs_td.len(), 8);
}
