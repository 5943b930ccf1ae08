use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Gradients, Tensor};
use crate::policy::{
    forward_policy, masked_distribution, ArchConfig, PolicyOutput, PolicyParams,
};
use crate::scenario::{GroupId, NUM_LOGITS};

fn dummy_obs() -> Observation {
    BanditEnv::default().observation()
}

fn step(reward: f64, value: f64, done: bool) -> Transition {
    Transition {
        obs: dummy_obs(),
        action: FactoredAction::NO_OP,
        head_log_probs: [-0.5, 0.0, 0.0],
        value,
        reward,
        done,
    }
}

fn traj(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64) -> Trajectory {
    Trajectory {
        steps: rewards
            .iter()
            .zip(values)
            .zip(dones)
            .map(|((&r, &v), &d)| step(r, v, d))
            .collect(),
        bootstrap_value: bootstrap,
    }
}

/// Direct double sum: A_t = sum_l (gamma lambda)^l delta_{t+l}, cut at the
/// first terminal step.
fn brute_force_gae(t: &Trajectory, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = t.steps.len();
    let value_after = |k: usize| -> f64 {
        if t.steps[k].done {
            0.0
        } else if k + 1 < n {
            t.steps[k + 1].value
        } else {
            t.bootstrap_value
        }
    };
    (0..n)
        .map(|s| {
            let mut total = 0.0;
            for l in 0..(n - s) {
                let k = s + l;
                let delta = t.steps[k].reward + gamma * value_after(k) - t.steps[k].value;
                total += (gamma * lambda).powi(l as i32) * delta;
                if t.steps[k].done {
                    break;
                }
            }
            total
        })
        .collect()
}

#[test]
fn gae_lambda_zero_is_one_step_td() {
    let t = traj(&[1.0, 2.0, 3.0], &[0.5, 0.25, 1.0], &[false, false, false], 2.0);
    let (adv, ret) = compute_advantages(&t, 0.9, 0.0).unwrap();
    assert_eq!(adv, vec![1.0 + 0.9 * 0.25 - 0.5, 2.0 + 0.9 * 1.0 - 0.25, 3.0 + 0.9 * 2.0 - 1.0]);
    for i in 0..3 {
        assert_eq!(ret[i], adv[i] + t.steps[i].value);
    }
}

#[test]
fn gae_undiscounted_zero_values_is_suffix_sum() {
    let t = traj(&[1.0, -2.0, 5.0, 0.5], &[0.0; 4], &[false, false, false, true], 99.0);
    let (adv, _) = compute_advantages(&t, 1.0, 1.0).unwrap();
    assert_eq!(adv, vec![4.5, 3.5, 5.5, 0.5]);
}

#[test]
fn gae_rejects_bad_input() {
    assert_eq!(
        compute_advantages(&Trajectory::default(), 0.99, 0.95),
        Err(TrainError::EmptyTrajectory)
    );
    let t = traj(&[1.0], &[0.0], &[true], 0.0);
    assert!(compute_advantages(&t, 0.0, 0.5).is_err());
    assert!(compute_advantages(&t, 0.9, 1.5).is_err());
}

#[test]
fn gae_matches_brute_force_on_random_trajectories() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let n = 10;
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
        let t = traj(&r, &v, &d, rng.random_range(-5.0..5.0));
        let gamma = rng.random_range(0.5..=1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let (adv, _) = compute_advantages(&t, gamma, lambda).unwrap();
        for (a, b) in adv.iter().zip(brute_force_gae(&t, gamma, lambda)) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

fn sample<'a>(obs: &'a Observation, action: FactoredAction, old: f64, adv: f64, ret: f64) -> Sample<'a> {
    Sample {
        obs,
        action,
        old_log_prob: old,
        advantage: adv,
        ret,
    }
}

#[test]
fn ppo_loss_seeds_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut obs = crate::scenario::Scenario::new(crate::scenario::ScenarioConfig::tigerclaw())
        .unwrap()
        .observation(GroupId::blue(0));
    obs.action_mask[4] = false;
    let cfg = PpoConfig {
        entropy_coef: 0.05,
        ..PpoConfig::default()
    };
    for _ in 0..20 {
        let outs: Vec<PolicyOutput> = (0..4)
            .map(|_| {
                let l: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
                PolicyOutput::from_logits(&l, rng.random_range(-1.0..1.0))
            })
            .collect();
        let samples: Vec<Sample> = outs
            .iter()
            .map(|o| {
                let a = FactoredAction::from_indices(
                    rng.random_range(0..2),
                    rng.random_range(0..2),
                    rng.random_range(0..3),
                )
                .unwrap();
                let d = masked_distribution(o, &obs.action_mask).unwrap();
                // Old log-prob near the current one so some ratios sit
                // inside and some outside the clip range.
                let old = d.log_prob(a) + rng.random_range(-0.4..0.4);
                sample(&obs, a, old, rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0))
            })
            .collect();
        let (_, _, seeds) = ppo_loss_and_seeds(&outs, &samples, &cfg).unwrap();
        let loss_at = |o: &[PolicyOutput]| ppo_loss_and_seeds(o, &samples, &cfg).unwrap().0;
        let h = 1e-6;
        for i in 0..outs.len() {
            for j in 0..NUM_LOGITS {
                if !obs.action_mask[j] {
                    assert_eq!(seeds.logits[i * NUM_LOGITS + j], 0.0);
                    continue;
                }
                let bump = |delta: f64| {
                    let mut o = outs.clone();
                    let mut l = o[i].logits();
                    l[j] += delta;
                    o[i] = PolicyOutput::from_logits(&l, o[i].value);
                    loss_at(&o)
                };
                let numeric = (bump(h) - bump(-h)) / (2.0 * h);
                let analytic = seeds.logits[i * NUM_LOGITS + j];
                assert!((numeric - analytic).abs() < 1e-6, "logit {i},{j}: {numeric} vs {analytic}");
            }
            let mut o = outs.clone();
            o[i].value += h;
            let plus = loss_at(&o);
            o[i].value -= 2.0 * h;
            let minus = loss_at(&o);
            let numeric = (plus - minus) / (2.0 * h);
            assert!((numeric - seeds.value.as_ref().unwrap()[i]).abs() < 1e-6);
        }
    }
}

#[test]
fn clipped_ratio_has_zero_surrogate_gradient() {
    let obs = dummy_obs();
    let out = PolicyOutput::from_logits(&[0.2, -0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0);
    let d = masked_distribution(&out, &obs.action_mask).unwrap();
    let a = FactoredAction::NO_OP;
    let old = d.log_prob(a) - 1.3f64.ln();
    let cfg = PpoConfig {
        entropy_coef: 0.0,
        ..PpoConfig::default()
    };
    let s = [sample(&obs, a, old, 1.0, 0.0)];
    let (_, st, seeds) = ppo_loss_and_seeds(&[out], &s, &cfg).unwrap();
    assert_eq!(st.clip_fraction, 1.0);
    assert!(seeds.logits.iter().all(|&g| g == 0.0));
    // Same ratio with a negative advantage is not clipped.
    let s = [sample(&obs, a, old, -1.0, 0.0)];
    let (_, st, seeds) = ppo_loss_and_seeds(&[out], &s, &cfg).unwrap();
    assert_eq!(st.clip_fraction, 0.0);
    assert!(seeds.logits.iter().any(|&g| g != 0.0));
}

fn bandit_params(seed: u64) -> PolicyParams {
    PolicyParams::init(&BanditEnv::arch(), seed).unwrap()
}

fn p_noop(p: &PolicyParams) -> f64 {
    let o = forward_policy(p, &dummy_obs()).unwrap();
    masked_distribution(&o, &dummy_obs().action_mask).unwrap().probs[0]
}

#[test]
fn zero_advantage_update_leaves_params_unchanged() {
    let p = bandit_params(0);
    let obs = dummy_obs();
    let v = forward_policy(&p, &obs).unwrap().value;
    // reward == value on a terminal step: advantage 0, return == value.
    let t = Trajectory {
        steps: vec![Transition {
            obs,
            action: FactoredAction::NO_OP,
            head_log_probs: [-0.7, 0.0, 0.0],
            value: v,
            reward: v,
            done: true,
        }],
        bootstrap_value: 0.0,
    };
    let cfg = PpoConfig {
        entropy_coef: 0.0,
        ..PpoConfig::default()
    };
    let store = ParameterStore::new(p.clone(), AdamConfig::with_lr(0.1));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let st = ppo_update(&store, &[t.clone(), t], &cfg, &mut rng).unwrap();
    assert!(st.updates > 0);
    assert_eq!(store.snapshot().tensors(), p.tensors());
    assert_eq!(store.updates(), st.updates as u64);
}

#[test]
fn one_bandit_update_raises_optimal_probability() {
    let p = bandit_params(1);
    let before = p_noop(&p);
    let store = ParameterStore::new(p.clone(), AdamConfig::with_lr(0.01));
    let mut env = BanditEnv::default();
    let mut batch = Vec::new();
    for i in 0..32 {
        let mut rng = episode_rng(5, i);
        batch.extend(collect_episode(&mut env, &p, i, &mut rng).unwrap().trajectories);
    }
    let cfg = PpoConfig {
        epochs: 1,
        minibatch_size: 64,
        ..PpoConfig::default()
    };
    ppo_update(&store, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(p_noop(&store.snapshot()) > before);
}

fn bandit_train_cfg(algo: Algo, budget: u64) -> TrainConfig {
    TrainConfig {
        algo,
        budget,
        ppo: PpoConfig {
            lr: 0.01,
            episodes_per_batch: 64,
            minibatch_size: 64,
            ..PpoConfig::default()
        },
        a3c: A3cConfig {
            lr: 0.01,
            ..A3cConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn ppo_bandit_training_is_deterministic_and_learns() {
    let cfg = bandit_train_cfg(Algo::Ppo, 2_000);
    let a = train(BanditEnv::default, bandit_params(2), &cfg, 9).unwrap();
    let b = train(BanditEnv::default, bandit_params(2), &cfg, 9).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.curve, b.curve);
    assert!(p_noop(&a.params) > 0.9, "{}", p_noop(&a.params));
    assert_eq!(a.curve.last().unwrap().global_step, 2_048);
    assert!(a.partial.version < a.params.version);
}

#[test]
fn zero_budget_returns_init() {
    let init = bandit_params(4);
    for algo in [Algo::Ppo, Algo::A3c] {
        let out = train(BanditEnv::default, init.clone(), &bandit_train_cfg(algo, 0), 1).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.partial, init);
        assert!(out.curve.is_empty());
    }
}

#[test]
fn single_worker_a3c_is_reproducible() {
    let mut cfg = bandit_train_cfg(Algo::A3c, 400);
    cfg.a3c.workers = 1;
    let a = train(BanditEnv::default, bandit_params(3), &cfg, 2).unwrap();
    let b = train(BanditEnv::default, bandit_params(3), &cfg, 2).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.workers[0].updates_applied, a.params.version);
}

#[test]
fn a3c_worker_updates_sum_to_store_counter() {
    let cfg = bandit_train_cfg(Algo::A3c, 2_000);
    let out = train(BanditEnv::default, bandit_params(3), &cfg, 2).unwrap();
    assert_eq!(out.workers.len(), 4);
    let total: u64 = out.workers.iter().map(|w| w.updates_applied).sum();
    assert_eq!(total, out.params.version);
    assert!(out.worker_failures.is_empty());
}

/// Environment whose `step_env` panics on the given worker's first step.
struct PanickyEnv {
    inner: BanditEnv,
    panic: bool,
}

impl Environment for PanickyEnv {
    fn reset_env(&mut self, seed: u64) {
        self.inner.reset_env(seed)
    }
    fn observations(&self) -> Vec<(GroupId, Observation)> {
        self.inner.observations()
    }
    fn step_env(&mut self, a: &[(GroupId, FactoredAction)]) -> Result<crate::scenario::StepOutcome, ScenarioError> {
        if self.panic {
            panic!("sensor fault");
        }
        self.inner.step_env(a)
    }
    fn done(&self) -> bool {
        self.inner.done()
    }
}

#[test]
fn crashed_worker_is_isolated() {
    let cfg = bandit_train_cfg(Algo::A3c, 500);
    let made = std::sync::atomic::AtomicUsize::new(0);
    let out = train(
        || PanickyEnv {
            inner: BanditEnv::default(),
            panic: made.fetch_add(1, std::sync::atomic::Ordering::SeqCst) == 0,
        },
        bandit_params(0),
        &cfg,
        0,
    )
    .unwrap();
    assert_eq!(out.worker_failures.len(), 1);
    assert!(out.worker_failures[0].contains("sensor fault"));
    assert_eq!(out.workers.len(), 3);
    assert!(out.params.version > 0);
}

fn uniform_grads(p: &PolicyParams, v: f64) -> Gradients {
    p.tensors()
        .iter()
        .map(|(k, t)| (k.clone(), Tensor::full(t.shape(), v)))
        .collect()
}

#[test]
fn store_rejects_nan_gradients() {
    let p = PolicyParams::zeros(&BanditEnv::arch()).unwrap();
    let store = ParameterStore::new(p.clone(), AdamConfig::with_lr(0.1));
    let mut g = uniform_grads(&p, 1.0);
    g.get_mut("value.b").unwrap().data_mut()[0] = f64::NAN;
    assert!(matches!(store.apply(&g), Err(TrainError::NonFiniteGradient(_))));
    assert_eq!(store.updates(), 0);
    assert_eq!(*store.snapshot(), p);
}

#[test]
fn snapshots_are_never_torn() {
    // Every parameter receives the same gradient, so every entry of a
    // consistent snapshot holds the same value.
    let p = PolicyParams::zeros(&BanditEnv::arch()).unwrap();
    let grads = uniform_grads(&p, 1.0);
    let store = Arc::new(ParameterStore::new(
        p,
        AdamConfig {
            max_grad_norm: None,
            ..AdamConfig::with_lr(0.01)
        },
    ));
    std::thread::scope(|s| {
        for _ in 0..2 {
            let store = store.clone();
            let grads = grads.clone();
            s.spawn(move || {
                for _ in 0..200 {
                    store.apply(&grads).unwrap();
                }
            });
        }
        for _ in 0..2 {
            let store = store.clone();
            s.spawn(move || {
                let mut last = 0;
                for _ in 0..500 {
                    let snap = store.snapshot();
                    assert!(snap.version >= last);
                    last = snap.version;
                    let first = snap.tensors().values().next().unwrap().data()[0];
                    for t in snap.tensors().values() {
                        assert!(t.data().iter().all(|&v| v == first));
                    }
                }
            });
        }
    });
    assert_eq!(store.updates(), 400);
    assert_eq!(store.snapshot().version, 400);
}

#[test]
fn trajectory_validation() {
    let mut t = traj(&[1.0], &[0.0], &[true], 0.0);
    assert!(t.validate().is_ok());
    t.steps[0].head_log_probs[1] = 0.1;
    assert!(t.validate().is_err());
    t.steps[0].head_log_probs[1] = 0.0;
    t.steps[0].reward = f64::INFINITY;
    assert!(t.validate().is_err());
}

#[test]
fn curve_csv_layout() {
    let mut buf = Vec::new();
    write_curve_csv(
        &mut buf,
        &["digest abc".into()],
        &[CurvePoint {
            global_step: 10,
            episodes: 2,
            mean_reward: 1.5,
            entropy: 0.25,
        }],
    )
    .unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "# digest abc\nglobal_step,episodes,mean_reward,entropy\n10,2,1.5,0.25\n"
    );
}

#[test]
fn scenario_episode_collection_tracks_group_deaths() {
    let cfg = crate::scenario::ScenarioConfig::tigerclaw_mini();
    let arch = ArchConfig::for_scenario(&cfg);
    let p = PolicyParams::init(&arch, 0).unwrap();
    let mut env = crate::scenario::Scenario::new(cfg).unwrap();
    let mut rng = episode_rng(0, 0);
    let ep = collect_episode(&mut env, &p, 0, &mut rng).unwrap();
    assert!(ep.length > 0);
    for t in &ep.trajectories {
        t.validate().unwrap();
        assert!(t.steps.last().unwrap().done);
        assert!(t.steps[..t.steps.len() - 1].iter().all(|s| !s.done));
    }
    let group_steps: usize = ep.trajectories.iter().map(|t| t.steps.len()).sum();
    assert!(group_steps <= 5 * ep.length);
    assert_eq!(env.cumulative_reward() as f64, ep.total_reward);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn head_entropy_bounds(logits in prop::array::uniform8(-20.0f64..20.0)) {
        let d = masked_distribution(&PolicyOutput::from_logits(&logits, 0.0), &[true; 8]).unwrap();
        let e = d.head_entropies();
        for (h, k) in [2usize, 3, 3].iter().enumerate() {
            prop_assert!(e[h] >= 0.0);
            prop_assert!(e[h] <= (*k as f64).ln() + 1e-12);
        }
    }
}
