use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::rollout::{decide, derive_seed, episode_rng};
use super::{compute_advantages, ParameterStore, TrainError, Trajectory, Transition};
use crate::env::Environment;
use crate::policy::{
    forward_backward, forward_batch, masked_distribution, BatchInput, GradTarget, OutputSeeds,
};
use crate::scenario::{GroupId, Observation, HEAD_OFFSETS, HEAD_SIZES, NUM_LOGITS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct A3cConfig {
    pub gamma: f64,
    /// Environment steps per worker segment (one gradient submission).
    pub n_steps: usize,
    pub lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: Option<f64>,
    pub workers: usize,
}

impl Default for A3cConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            n_steps: 20,
            lr: 1e-4,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: Some(0.5),
            workers: 4,
        }
    }
}

/// A finished episode as seen by a worker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLog {
    pub worker: usize,
    pub global_step: u64,
    pub reward: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorkerReport {
    pub worker: usize,
    pub updates_applied: u64,
    pub rejected: u64,
    pub env_steps: u64,
}

/// Actor-critic loss gradient for one segment batch:
/// `L = mean(-log pi(a) A - c_e H + c_v (V - R)^2)`.
fn a3c_seeds(
    outs: &[crate::policy::PolicyOutput],
    steps: &[(&Transition, f64, f64)],
    cfg: &A3cConfig,
) -> Result<OutputSeeds, TrainError> {
    let b = steps.len() as f64;
    let mut logits = vec![0.0; steps.len() * NUM_LOGITS];
    let mut value = vec![0.0; steps.len()];
    for (i, (out, (t, adv, ret))) in outs.iter().zip(steps).enumerate() {
        let d = masked_distribution(out, &t.obs.action_mask)?;
        let heads = d.head_entropies();
        let chosen = t.action.indices();
        let seed = &mut logits[i * NUM_LOGITS..(i + 1) * NUM_LOGITS];
        for h in 0..3 {
            for k in 0..HEAD_SIZES[h] {
                let j = HEAD_OFFSETS[h] + k;
                let p = d.probs[j];
                if p == 0.0 {
                    continue;
                }
                let onehot = if chosen[h] == k { 1.0 } else { 0.0 };
                seed[j] = (-adv * (onehot - p) + cfg.entropy_coef * p * (p.ln() + heads[h])) / b;
            }
        }
        value[i] = 2.0 * cfg.value_coef * (out.value - ret) / b;
    }
    Ok(OutputSeeds {
        logits,
        value: Some(value),
    })
}

/// One asynchronous worker: sync a snapshot, roll out up to `n_steps`
/// environment steps, compute the actor-critic gradient against that
/// snapshot and submit it. Runs until the store has counted `budget`
/// environment steps.
#[allow(clippy::too_many_arguments)]
pub fn a3c_worker_loop<E: Environment + ?Sized>(
    worker: usize,
    env: &mut E,
    store: &ParameterStore,
    cfg: &A3cConfig,
    budget: u64,
    seed: u64,
    episodes: &Mutex<Vec<EpisodeLog>>,
) -> Result<WorkerReport, TrainError> {
    let mut report = WorkerReport {
        worker,
        ..Default::default()
    };
    let mut episode_idx = 0u64;
    let mut rng = episode_rng(derive_seed(seed, 10, worker as u64), 0);
    let mut need_reset = true;
    let (mut ep_reward, mut ep_ent, mut ep_dec) = (0.0, 0.0, 0usize);
    while store.env_steps() < budget {
        if need_reset {
            env.reset_env(derive_seed(seed, 11 + worker as u64, episode_idx));
            episode_idx += 1;
            need_reset = false;
            (ep_reward, ep_ent, ep_dec) = (0.0, 0.0, 0);
        }
        let params = store.snapshot();
        let mut open: BTreeMap<GroupId, Trajectory> = BTreeMap::new();
        let mut segment: Vec<Trajectory> = Vec::new();
        let mut obs = env.observations();
        let mut taken = 0u64;
        for _ in 0..cfg.n_steps {
            if env.done() || obs.is_empty() {
                break;
            }
            let decisions = decide(&params, &obs, &mut rng)?;
            let actions: Vec<_> = decisions.iter().map(|d| (d.group, d.action)).collect();
            let outcome = env.step_env(&actions)?;
            taken += 1;
            ep_reward += outcome.reward;
            let next = env.observations();
            for ((g, o), d) in obs.into_iter().zip(&decisions) {
                ep_ent += d.dists.entropy();
                ep_dec += 1;
                let done = outcome.done || !next.iter().any(|(ng, _)| *ng == g);
                let traj = open.entry(g).or_default();
                traj.steps.push(Transition {
                    obs: o,
                    action: d.action,
                    head_log_probs: d.dists.head_log_probs(d.action),
                    value: d.output.value,
                    reward: outcome.reward,
                    done,
                });
                if done {
                    segment.push(open.remove(&g).unwrap());
                }
            }
            obs = next;
            if outcome.done {
                break;
            }
        }
        let global = store.add_env_steps(taken);
        report.env_steps += taken;
        if env.done() || obs.is_empty() {
            episodes.lock().unwrap_or_else(|e| e.into_inner()).push(EpisodeLog {
                worker,
                global_step: global,
                reward: ep_reward,
                entropy: if ep_dec > 0 { ep_ent / ep_dec as f64 } else { 0.0 },
            });
            need_reset = true;
        }
        // Bootstrap the still-running group trajectories from V(next obs).
        if !open.is_empty() {
            let live: Vec<(GroupId, Observation)> =
                obs.into_iter().filter(|(g, _)| open.contains_key(g)).collect();
            let refs: Vec<&Observation> = live.iter().map(|(_, o)| o).collect();
            let input = BatchInput::new(&params.arch, &refs, true)?;
            let values = forward_batch(&params, &input)?;
            for ((g, _), v) in live.iter().zip(values) {
                let mut t = open.remove(g).unwrap();
                t.bootstrap_value = v.value;
                segment.push(t);
            }
            segment.extend(open.into_values());
        }
        if segment.is_empty() {
            continue;
        }
        let mut steps: Vec<(&Transition, f64, f64)> = Vec::new();
        for t in &segment {
            let (adv, ret) = compute_advantages(t, cfg.gamma, 1.0)?;
            for ((s, a), r) in t.steps.iter().zip(adv).zip(ret) {
                steps.push((s, a, r));
            }
        }
        let obs_refs: Vec<&Observation> = steps.iter().map(|(t, _, _)| &t.obs).collect();
        let input = BatchInput::new(&params.arch, &obs_refs, true)?;
        let (_, grads) = forward_backward(&params, &input, GradTarget::Params, |outs| {
            a3c_seeds(outs, &steps, cfg)
        })?;
        match store.apply(&grads) {
            Ok(_) => report.updates_applied += 1,
            Err(TrainError::NonFiniteGradient(msg)) => {
                log::warn!("worker {worker}: gradient rejected: {msg}");
                report.rejected += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}
