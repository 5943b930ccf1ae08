use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{mean, Histogram};
use super::EvalError;
use crate::attack::{attack_loss, AttackTargets, DegenerateTarget};
use crate::autodiff::Tensor;
use crate::policy::{
    forward_batch, forward_policy, masked_distribution, sample_action, BatchInput, PolicyParams,
};
use crate::scenario::{
    FactoredAction, GroupId, Observation, Scenario, ScenarioConfig, GROUPS_PER_SIDE,
};
use crate::trainer::derive_seed;

const CHUNK: usize = 64;

/// Identifies the probe observation: reset the scenario with `seed`, let
/// Blue hold (NO_OP) for `timestep` steps, then observe `group`. The driver
/// does not depend on any agent, so every agent is probed at the same state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsSource {
    pub seed: u64,
    pub timestep: u32,
    pub group: usize,
}

impl Default for ObsSource {
    fn default() -> Self {
        Self {
            seed: 0,
            timestep: 5,
            group: 0,
        }
    }
}

pub fn probe_observation(scenario: &ScenarioConfig, src: &ObsSource) -> Result<Observation, EvalError> {
    if src.group >= GROUPS_PER_SIDE {
        return Err(EvalError::InvalidInput(format!("group {} out of range", src.group)));
    }
    let mut env = Scenario::new(scenario.clone())?;
    env.reset(src.seed);
    for t in 0..src.timestep {
        if env.is_done() {
            return Err(EvalError::InvalidInput(format!(
                "episode ended at step {t}, before probe timestep {}",
                src.timestep
            )));
        }
        let hold: BTreeMap<GroupId, FactoredAction> = env
            .blue_observations()
            .into_iter()
            .map(|(g, _)| (g, FactoredAction::NO_OP))
            .collect();
        env.step(&hold)?;
    }
    let g = GroupId::blue(src.group);
    if !env.group_alive(g) {
        return Err(EvalError::InvalidInput(format!(
            "group {} is destroyed at probe timestep {}",
            g.name(),
            src.timestep
        )));
    }
    Ok(env.observation(g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epsilon: f64,
    pub n_samples: usize,
    pub targets: AttackTargets,
    pub clamp: bool,
    pub bins: usize,
    /// Fixed histogram range; defaults to the sampled range.
    pub range: Option<(f64, f64)>,
    /// Losses below this count as "near zero".
    pub low_loss_threshold: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            n_samples: 10_000,
            targets: AttackTargets::Both,
            clamp: true,
            bins: 50,
            range: None,
            low_loss_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub epsilon: f64,
    pub n_samples: usize,
    /// The benign action sampled at the probe observation (flat index).
    pub taken_action: usize,
    pub benign_loss: f64,
    pub mean_loss: f64,
    pub min_loss: f64,
    pub max_loss: f64,
    /// Fraction of samples with loss below the threshold.
    pub low_loss_mass: f64,
    pub low_loss_threshold: f64,
    /// Largest coordinate perturbation over all samples.
    pub max_linf: f64,
    pub histogram: Histogram,
    #[serde(skip)]
    pub losses: Vec<f64>,
}

/// Action the agent takes on the benign probe observation.
pub fn probe_action(params: &PolicyParams, obs: &Observation, seed: u64) -> Result<FactoredAction, EvalError> {
    let out = forward_policy(params, obs)?;
    let d = masked_distribution(&out, &obs.action_mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 5, 0));
    Ok(sample_action(&d, &mut rng))
}

fn noisy(x: &[f64], eps: f64, clamp: bool, rng: &mut ChaCha8Rng, linf: &mut f64) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let d = if eps == 0.0 { 0.0 } else { rng.random_range(-eps..=eps) };
            let y = if clamp { (v + d).clamp(0.0, 1.0) } else { v + d };
            *linf = linf.max((y - v).abs());
            y
        })
        .collect()
}

/// Loss values at uniform random points of the l-infinity ball around `obs`.
/// The loss is the per-head cross-entropy sum against the one-hot of the
/// action the agent took on `obs`.
pub fn loss_landscape_probe(
    params: &PolicyParams,
    obs: &Observation,
    taken: FactoredAction,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult, EvalError> {
    if cfg.n_samples == 0 {
        return Err(EvalError::InvalidInput("probe needs at least one sample".into()));
    }
    if !(cfg.epsilon.is_finite() && cfg.epsilon >= 0.0) {
        return Err(EvalError::InvalidInput(format!("bad probe epsilon {}", cfg.epsilon)));
    }
    let target = DegenerateTarget::from_action(taken);
    let benign_loss = attack_loss(&forward_policy(params, obs)?, &target);
    let sensed = obs.one_hot_offset();
    let chunks = cfg.n_samples.div_ceil(CHUNK);
    let parts: Vec<(Vec<f64>, f64)> = (0..chunks as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 6, c));
            let count = CHUNK.min(cfg.n_samples - c as usize * CHUNK);
            let mut linf = 0.0f64;
            let samples: Vec<Observation> = (0..count)
                .map(|_| {
                    let mut o = obs.clone();
                    if cfg.targets.screen() {
                        let data = noisy(obs.screen.data(), cfg.epsilon, cfg.clamp, &mut rng, &mut linf);
                        o.screen = Arc::new(
                            Tensor::new(obs.screen.shape().to_vec(), data).expect("same shape"),
                        );
                    }
                    if cfg.targets.nonspatial() {
                        let ns = noisy(&obs.nonspatial[..sensed], cfg.epsilon, cfg.clamp, &mut rng, &mut linf);
                        o.nonspatial[..sensed].copy_from_slice(&ns);
                    }
                    o
                })
                .collect();
            let refs: Vec<&Observation> = samples.iter().collect();
            let outs = forward_batch(params, &BatchInput::new(&params.arch, &refs, true)?)?;
            Ok((outs.iter().map(|o| attack_loss(o, &target)).collect(), linf))
        })
        .collect::<Result<_, EvalError>>()?;
    let max_linf = parts.iter().map(|p| p.1).fold(0.0, f64::max);
    let losses: Vec<f64> = parts.into_iter().flat_map(|p| p.0).collect();
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(EvalError::InvalidInput("non-finite probe loss".into()));
    }
    let histogram = Histogram::build(&losses, cfg.bins, cfg.range)?;
    let low = losses.iter().filter(|&&l| l < cfg.low_loss_threshold).count();
    Ok(ProbeResult {
        epsilon: cfg.epsilon,
        n_samples: cfg.n_samples,
        taken_action: taken.flat_index(),
        benign_loss,
        mean_loss: mean(&losses),
        min_loss: losses.iter().copied().fold(f64::INFINITY, f64::min),
        max_loss: losses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        low_loss_mass: low as f64 / losses.len() as f64,
        low_loss_threshold: cfg.low_loss_threshold,
        max_linf,
        histogram,
        losses,
    })
}
