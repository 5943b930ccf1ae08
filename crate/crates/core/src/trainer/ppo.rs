use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_advantages, ParameterStore, TrainError, Trajectory};
use crate::policy::{
    forward_backward, masked_distribution, BatchInput, GradTarget, OutputSeeds, PolicyOutput,
};
use crate::scenario::{FactoredAction, Observation, HEAD_OFFSETS, HEAD_SIZES, NUM_LOGITS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    /// Samples (group-steps) per gradient step.
    pub minibatch_size: usize,
    pub lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: Option<f64>,
    /// Episodes collected (in parallel) per update phase.
    pub episodes_per_batch: usize,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch_size: 512,
            lr: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: Some(0.5),
            episodes_per_batch: 8,
            normalize_advantages: true,
        }
    }
}

/// One training sample: a group-step with its targets.
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    pub obs: &'a Observation,
    pub action: FactoredAction,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio was clipped.
    pub clip_fraction: f64,
}

/// Loss and its gradient w.r.t. the logits and value of each sample:
/// `L = -mean(min(rho A, clip(rho) A)) + c_v mean((V - R)^2) - c_e mean(H)`,
/// with `rho = exp(sum_h log p_h - old_log_prob)`.
pub fn ppo_loss_and_seeds(
    outputs: &[PolicyOutput],
    samples: &[Sample],
    cfg: &PpoConfig,
) -> Result<(f64, LossStats, OutputSeeds), TrainError> {
    let b = samples.len() as f64;
    let mut logits_seed = vec![0.0; samples.len() * NUM_LOGITS];
    let mut value_seed = vec![0.0; samples.len()];
    let mut st = LossStats::default();
    let mut clipped = 0usize;
    for (i, (out, s)) in outputs.iter().zip(samples).enumerate() {
        let d = masked_distribution(out, &s.obs.action_mask)?;
        let logp = d.log_prob(s.action);
        let rho = (logp - s.old_log_prob).exp();
        let a = s.advantage;
        let unclipped = rho * a;
        let clipped_term = rho.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
        st.surrogate += unclipped.min(clipped_term);
        let clip_active = clipped_term < unclipped;
        if clip_active {
            clipped += 1;
        }
        let heads = d.head_entropies();
        st.entropy += heads.iter().sum::<f64>();
        let seed = &mut logits_seed[i * NUM_LOGITS..(i + 1) * NUM_LOGITS];
        let chosen = s.action.indices();
        for h in 0..3 {
            for k in 0..HEAD_SIZES[h] {
                let j = HEAD_OFFSETS[h] + k;
                let p = d.probs[j];
                if p == 0.0 {
                    continue;
                }
                let onehot = if chosen[h] == k { 1.0 } else { 0.0 };
                if !clip_active {
                    seed[j] -= a * rho * (onehot - p) / b;
                }
                seed[j] += cfg.entropy_coef * p * (p.ln() + heads[h]) / b;
            }
        }
        let dv = out.value - s.ret;
        st.value_loss += dv * dv;
        value_seed[i] = 2.0 * cfg.value_coef * dv / b;
    }
    st.surrogate /= b;
    st.value_loss /= b;
    st.entropy /= b;
    st.clip_fraction = clipped as f64 / b;
    let loss = -st.surrogate + cfg.value_coef * st.value_loss - cfg.entropy_coef * st.entropy;
    Ok((
        loss,
        st,
        OutputSeeds {
            logits: logits_seed,
            value: Some(value_seed),
        },
    ))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub updates: usize,
    pub samples: usize,
    pub loss: f64,
    pub stats: LossStats,
}

/// Clipped-surrogate update on a batch of trajectories: GAE targets, then
/// `epochs` passes of shuffled minibatch gradient steps through `store`.
pub fn ppo_update(
    store: &ParameterStore,
    batch: &[Trajectory],
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyTrajectory);
    }
    let mut samples = Vec::new();
    for traj in batch {
        let (adv, ret) = compute_advantages(traj, cfg.gamma, cfg.lambda)?;
        for ((s, a), r) in traj.steps.iter().zip(adv).zip(ret) {
            samples.push(Sample {
                obs: &s.obs,
                action: s.action,
                old_log_prob: s.log_prob(),
                advantage: a,
                ret: r,
            });
        }
    }
    if cfg.normalize_advantages {
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        for s in &mut samples {
            s.advantage -= mean;
            if std > 1e-8 {
                s.advantage /= std;
            }
        }
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mb = cfg.minibatch_size.max(1);
    let mut out = UpdateStats {
        samples: samples.len(),
        ..Default::default()
    };
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            let mut chunk = chunk.to_vec();
            // Sorting keeps samples of one timestep adjacent so their shared
            // screen is evaluated once.
            chunk.sort_unstable();
            let mini: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let obs: Vec<&Observation> = mini.iter().map(|s| s.obs).collect();
            let params = store.snapshot();
            let input = BatchInput::new(&params.arch, &obs, true)?;
            let mut loss_out = None;
            let (_, grads) = forward_backward(&params, &input, GradTarget::Params, |outs| {
                let (loss, st, seeds) = ppo_loss_and_seeds(outs, &mini, cfg)?;
                loss_out = Some((loss, st));
                Ok::<_, TrainError>(seeds)
            })?;
            store.apply(&grads).map_err(|e| match e {
                TrainError::NonFiniteGradient(msg) => TrainError::NonFiniteGradient(format!(
                    "{msg} (PPO minibatch of {} samples, params version {})",
                    mini.len(),
                    params.version
                )),
                other => other,
            })?;
            let (loss, st) = loss_out.expect("seed closure ran");
            out.updates += 1;
            out.loss = loss;
            out.stats = st;
        }
    }
    Ok(out)
}
