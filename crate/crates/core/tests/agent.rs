use deg_core::agent::*;
use deg_core::env::{self, TaskKind, TaskSpec};
use deg_core::guidance::ScriptedExpert;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tr(obs: f32, reward: f64, done: bool, last: bool) -> Transition<f64> {
    Transition {
        obs: vec![obs as f64],
        action: vec![0.0, 0.0],
        reward,
        next_obs: vec![obs as f64 + 1.0],
        done,
        last,
    }
}

#[test]
fn ring_evicts_oldest() {
    let mut b = ReplayBuffer::<f64>::new(2, 1, 2);
    for i in 0..3 {
        b.push(tr(i as f32, i as f64, false, false)).unwrap();
    }
    assert_eq!(b.len(), 2);
    assert_eq!(b.get(0).obs, vec![1.0]);
    assert_eq!(b.get(1).obs, vec![2.0]);
}

#[test]
fn n_step_mid_episode_bootstraps_from_third_successor() {
    let mut b = ReplayBuffer::<f64>::new(16, 1, 2);
    for (i, r) in [1.0, 2.0, 4.0, 8.0, 16.0].into_iter().enumerate() {
        b.push(tr(i as f32, r, false, false)).unwrap();
    }
    let g = 0.9;
    let w = b.n_step(0, 3, g);
    assert_eq!(w.ret, 1.0 + g * 2.0 + g * g * 4.0);
    assert_eq!(w.discount, g * g * g);
    // next_obs of the third transition is obs_3.
    assert_eq!(w.next_obs, vec![3.0]);
}

#[test]
fn n_step_stops_at_terminal_without_bootstrap() {
    let mut b = ReplayBuffer::<f64>::new(16, 1, 2);
    b.push(tr(0.0, 1.0, false, false)).unwrap();
    b.push(tr(1.0, 2.0, true, true)).unwrap();
    b.push(tr(10.0, 100.0, false, false)).unwrap();
    let w = b.n_step(0, 3, 0.5);
    assert_eq!(w.ret, 1.0 + 0.5 * 2.0);
    assert_eq!(w.discount, 0.0);
}

#[test]
fn n_step_at_horizon_cut_still_bootstraps() {
    let mut b = ReplayBuffer::<f64>::new(16, 1, 2);
    b.push(tr(0.0, 1.0, false, false)).unwrap();
    b.push(tr(1.0, 1.0, false, true)).unwrap();
    b.push(tr(10.0, 100.0, false, false)).unwrap();
    let w = b.n_step(0, 3, 0.5);
    assert_eq!(w.ret, 1.5);
    assert_eq!(w.discount, 0.25);
    assert_eq!(w.next_obs, vec![2.0]);
}

/// Episode logs kept separately from the buffer, recomputed naively.
#[test]
fn n_step_matches_brute_force_on_random_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cap = 300;
    let mut b = ReplayBuffer::<f64>::new(cap, 1, 2);
    let mut log: Vec<(f64, bool, bool, f64)> = Vec::new();
    let mut t = 0.0f64;
    for _ in 0..1000 {
        let done = rng.random_bool(0.03);
        let last = done || rng.random_bool(0.03);
        let r: f64 = rng.random_range(-5.0..5.0);
        b.push(Transition { obs: vec![t], action: vec![0.0, 0.0], reward: r, next_obs: vec![t + 0.5], done, last })
            .unwrap();
        log.push((r, done, last, t + 0.5));
        t += 1.0;
    }
    let stored = &log[log.len() - cap..];
    let (n, g) = (3, 0.97);
    for _ in 0..100 {
        let j = rng.random_range(0..cap);
        let w = b.n_step(j, n, g);
        let mut ret = 0.0;
        let mut disc = 1.0;
        let mut next = 0.0;
        for k in 0..n {
            if j + k >= cap {
                break;
            }
            let (r, done, last, nx) = stored[j + k];
            ret += g.powi(k as i32) * r;
            disc = g.powi(k as i32 + 1);
            next = nx;
            if done {
                disc = 0.0;
                break;
            }
            if last {
                break;
            }
        }
        assert!((w.ret - ret).abs() < 1e-12, "window {j}: {} vs {ret}", w.ret);
        assert_eq!(w.discount, disc);
        assert_eq!(w.next_obs, vec![next]);
    }
}

#[test]
fn underfilled_buffer_is_rejected() {
    let cfg = AgentConfig { batch_size: 8, ..Default::default() };
    let mut l = Learner::new(PolicyParams::<f64>::init(1, 2, 8, 0), &cfg);
    let mut b = ReplayBuffer::<f64>::new(16, 1, 2);
    b.push(tr(0.0, 1.0, false, false)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(update(&mut l, &b, &cfg, 1.0, &mut rng).is_err());
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let (o, a, n) = (5, 3, 6);
    let p = PolicyParams::<f64>::init(o, a, 16, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let obs: Vec<f64> = (0..n * o).map(|_| rng.random_range(-1.0..1.0)).collect();
    let act: Vec<f64> = (0..n * a).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (_, grad, _) = critic_loss_and_grad(&p, &obs, &act, &y);
    let h = 1e-5;
    let mut checked = 0;
    for spec in p.net.critic_layout.tensors() {
        for _ in 0..20 {
            let k = spec.offset + rng.random_range(0..spec.len());
            let mut plus = p.clone();
            plus.critic[k] += h;
            let mut minus = p.clone();
            minus.critic[k] -= h;
            let fd = (critic_loss_and_grad(&plus, &obs, &act, &y).0 - critic_loss_and_grad(&minus, &obs, &act, &y).0)
                / (2.0 * h);
            let denom = fd.abs().max(grad[k].abs()).max(1e-6);
            assert!((fd - grad[k]).abs() / denom < 1e-3, "{} [{k}]: fd {fd} vs {}", spec.name, grad[k]);
            checked += 1;
        }
    }
    assert!(checked >= 20);
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let (o, a, n) = (4, 2, 5);
    let p = PolicyParams::<f64>::init(o, a, 12, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let obs: Vec<f64> = (0..n * o).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, grad) = actor_loss_and_grad(&p, &obs, n);
    let h = 1e-6;
    for _ in 0..40 {
        let k = rng.random_range(0..p.actor.len());
        let mut plus = p.clone();
        plus.actor[k] += h;
        let mut minus = p.clone();
        minus.actor[k] -= h;
        let fd = (actor_loss_and_grad(&plus, &obs, n).0 - actor_loss_and_grad(&minus, &obs, n).0) / (2.0 * h);
        let denom = fd.abs().max(grad[k].abs()).max(1e-6);
        assert!((fd - grad[k]).abs() / denom < 1e-3, "[{k}] fd {fd} vs {}", grad[k]);
    }
}

#[test]
fn zero_rewards_drive_q_toward_zero() {
    let cfg = AgentConfig { batch_size: 64, hidden: 32, ..Default::default() };
    let mut p = PolicyParams::<f32>::init(3, 2, 32, 5);
    // Start both critics well above the zero fixed point.
    for mlp in [p.net.q1.clone(), p.net.q2.clone()] {
        let last = mlp.layers.last().unwrap();
        p.critic[last.bias] = 5.0;
    }
    p.target_critic = p.critic.clone();
    let mut l = Learner::new(p, &cfg);
    let mut b = ReplayBuffer::<f32>::new(1000, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..1000 {
        let obs: Vec<f32> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let next: Vec<f32> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let action: Vec<f32> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        b.push(Transition { obs, action, reward: 0.0, next_obs: next, done: false, last: i % 50 == 49 }).unwrap();
    }
    let first = update(&mut l, &b, &cfg, 1.0, &mut rng).unwrap().mean_q;
    let mut last = first;
    for _ in 0..999 {
        last = update(&mut l, &b, &cfg, 1.0, &mut rng).unwrap().mean_q;
    }
    // Lagged targets contract by about mix * (1 - gamma^n) per update.
    let rate = cfg.target_mix * (1.0 - cfg.discount.powi(cfg.n_step as i32));
    let predicted = first * (-1000.0 * rate).exp();
    assert!(first > 4.0, "start {first}");
    assert!(last > 0.0 && last < 0.7 * first, "mean Q {first} -> {last}");
    assert!((last - predicted).abs() < 0.15 * first, "mean Q {last}, predicted {predicted}");
}

#[test]
fn seeded_update_is_bit_identical() {
    let run = || {
        let cfg = AgentConfig { batch_size: 32, hidden: 16, ..Default::default() };
        let mut l = Learner::new(PolicyParams::<f32>::init(4, 3, 16, 1), &cfg);
        let mut b = ReplayBuffer::<f32>::new(200, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..200 {
            let v: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            b.push(Transition {
                obs: v.clone(),
                action: vec![0.1, -0.2, 0.3],
                reward: i as f64 * 0.01,
                next_obs: v,
                done: i % 37 == 0,
                last: i % 37 == 0,
            })
            .unwrap();
        }
        for _ in 0..10 {
            update(&mut l, &b, &cfg, 1.0, &mut rng).unwrap();
        }
        l
    };
    let (a, b) = (run(), run());
    assert_eq!(a.params.actor, b.params.actor);
    assert_eq!(a.params.critic, b.params.critic);
    assert_eq!(a.params.target_critic, b.params.target_critic);
}

#[test]
fn noiseless_act_is_deterministic() {
    let p = PolicyParams::<f32>::init(11, 2, 32, 3);
    let obs = vec![0.3; 11];
    let mut r1 = ChaCha8Rng::seed_from_u64(1);
    let mut r2 = ChaCha8Rng::seed_from_u64(99);
    assert_eq!(act(&p, &obs, 0.0, &mut r1).unwrap(), act(&p, &obs, 0.0, &mut r2).unwrap());
}

#[test]
fn actions_stay_in_bounds() {
    let p = PolicyParams::<f32>::init(11, 3, 32, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let obs: Vec<f64> = (0..11).map(|_| rng.random_range(-3.0..3.0)).collect();
        let std = rng.random_range(0.0..2.0);
        let a = act(&p, &obs, std, &mut rng).unwrap();
        for v in [a.velocity[0], a.velocity[1], a.grip] {
            assert!((-1.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn zero_actor_weights_give_zero_action() {
    let mut p = PolicyParams::<f64>::init(11, 3, 16, 4);
    p.actor.iter_mut().for_each(|w| *w = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = act(&p, &[0.7; 11], 0.0, &mut rng).unwrap();
    assert_eq!(a, env::Action::ZERO);
}

#[test]
fn act_rejects_bad_observations() {
    let p = PolicyParams::<f64>::init(11, 2, 8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(act(&p, &[0.0; 10], 0.0, &mut rng).is_err());
    let mut obs = vec![0.0; 11];
    obs[3] = f64::NAN;
    assert!(act(&p, &obs, 0.0, &mut rng).is_err());
}

#[test]
fn scripted_expert_evaluates_to_full_success() {
    for kind in TaskKind::ALL {
        let task = TaskSpec::new(kind);
        let rate = evaluate(&mut Stateless(ScriptedExpert), &task, 30, 17).unwrap();
        assert_eq!(rate, 1.0, "{kind}");
    }
}

#[test]
fn untrained_policy_rarely_pushes_to_goal() {
    let task = TaskSpec::new(TaskKind::Push);
    let p = PolicyParams::<f32>::init(observation_dim(&task, false), 2, 128, 21);
    let rate = evaluate(&mut Greedy { params: &p, pixel_obs: false }, &task, 50, 3).unwrap();
    assert!(rate <= 0.1, "untrained success {rate}");
}

#[test]
fn zero_episodes_rejected() {
    let task = TaskSpec::new(TaskKind::Reach);
    assert!(evaluate(&mut Stateless(ScriptedExpert), &task, 0, 1).is_err());
}

#[test]
fn evaluation_seeds_are_fresh() {
    let a: Vec<u64> = (0..20).map(|k| eval_seed(1, k)).collect();
    let mut dedup = a.clone();
    dedup.sort();
    dedup.dedup();
    assert_eq!(dedup.len(), a.len());
    assert_ne!(eval_seed(1, 0), eval_seed(2, 0));
}

#[test]
fn reward_scaler_tracks_quantile_with_floor() {
    let cfg = AgentConfig { scale_window: 100, scale_refresh: 10, ..Default::default() };
    let mut s = RewardScaler::new(&cfg);
    assert_eq!(s.scale(), 1.0);
    for i in 0..100 {
        s.push(if i % 2 == 0 { -(i as f64) } else { 0.0 });
    }
    // |r| values: 50 zeros and 0, 2, ..., 98; the 95th percentile is rank 95.
    assert_eq!(s.scale(), 88.0);
    for _ in 0..100 {
        s.push(0.0);
    }
    assert_eq!(s.scale(), 1.0);
}

#[test]
fn policy_checkpoint_round_trips() {
    let cfg = AgentConfig::default();
    let mut l = Learner::new(PolicyParams::<f32>::init(11, 3, 16, 9), &cfg);
    l.updates = 7;
    l.actor_opt.t = 3;
    l.critic_opt.m[5] = 0.25;
    let back = decode_learner::<f32>(&encode_learner(&l), &cfg).unwrap();
    assert_eq!(back, l);
    let p = decode_policy::<f32>(&encode_policy(&l.params)).unwrap();
    assert_eq!(p, l.params);
    let mut bytes = encode_policy(&l.params);
    bytes[0] = b'X';
    assert!(decode_policy::<f32>(&bytes).is_err());
    let bytes = encode_policy(&l.params);
    assert!(decode_policy::<f32>(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn agent_config_validation() {
    assert!(AgentConfig::default().validate().is_ok());
    assert!(AgentConfig { discount: 1.0, ..Default::default() }.validate().is_err());
    assert!(AgentConfig { n_step: 0, ..Default::default() }.validate().is_err());
    let c = AgentConfig::default();
    assert_eq!(c.noise_std(0), 1.0);
    assert!((c.noise_std(25_000) - 0.55).abs() < 1e-12);
    assert_eq!(c.noise_std(1_000_000), 0.1);
}
