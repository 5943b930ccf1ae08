//! Benign-agent training: synchronous PPO (parallel episode collection,
//! single updater) and asynchronous A3C (workers submitting gradients to a
//! central parameter store).

mod a3c;
mod bandit;
mod gae;
mod ppo;
pub mod rollout;
mod store;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Environment;
use crate::policy::{PolicyError, PolicyParams};
use crate::scenario::{FactoredAction, Observation, ScenarioError};

pub use a3c::{a3c_worker_loop, A3cConfig, EpisodeLog, WorkerReport};
pub use bandit::BanditEnv;
pub use gae::compute_advantages;
pub use ppo::{ppo_loss_and_seeds, ppo_update, LossStats, PpoConfig, Sample, UpdateStats};
pub use rollout::{collect_episode, decide, derive_seed, episode_rng, Decision, EpisodeRollout};
pub use store::{check_finite, global_norm, Adam, AdamConfig, ParameterStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),
    #[error("non-finite parameters in `{0}` after update")]
    NonFiniteParams(String),
    #[error("all workers failed: {0}")]
    WorkersFailed(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// One group-step of experience.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Observation,
    pub action: FactoredAction,
    /// Log-probability of the chosen entry of each head under the acting policy.
    pub head_log_probs: [f64; 3],
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

impl Transition {
    /// Joint log-probability of the factored action.
    pub fn log_prob(&self) -> f64 {
        self.head_log_probs.iter().sum()
    }
}

/// Consecutive experience of one control group.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
    /// V(s) after the last step; ignored when that step is terminal.
    pub bootstrap_value: f64,
}

impl Trajectory {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps.is_empty() {
            return Err(TrainError::EmptyTrajectory);
        }
        for (i, s) in self.steps.iter().enumerate() {
            if !s.reward.is_finite() || s.head_log_probs.iter().any(|&l| !(l <= 0.0)) {
                return Err(TrainError::InvalidConfig(format!(
                    "step {i}: reward {} / log-probs {:?}",
                    s.reward, s.head_log_probs
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Ppo,
    A3c,
}

impl std::str::FromStr for Algo {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ppo" => Ok(Algo::Ppo),
            "a3c" => Ok(Algo::A3c),
            _ => Err(TrainError::InvalidConfig(format!("unknown algorithm `{s}`"))),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algo::Ppo => "ppo",
            Algo::A3c => "a3c",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub algo: Algo,
    /// Environment steps.
    pub budget: u64,
    pub ppo: PpoConfig,
    pub a3c: A3cConfig,
    /// The partial checkpoint is taken once this fraction of the budget is used...
    pub partial_fraction: f64,
    /// ...unless the batch mean episode reward reaches this level first.
    pub partial_reward_target: Option<f64>,
    /// Episodes averaged per A3C curve point.
    pub curve_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Ppo,
            budget: 100_000,
            ppo: PpoConfig::default(),
            a3c: A3cConfig::default(),
            partial_fraction: 0.1,
            partial_reward_target: None,
            curve_window: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub global_step: u64,
    pub episodes: u64,
    pub mean_reward: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub partial: PolicyParams,
    pub curve: Vec<CurvePoint>,
    /// A3C only: per-worker reports and isolated worker failures.
    pub workers: Vec<WorkerReport>,
    pub worker_failures: Vec<String>,
}

/// Trains from `init` until `cfg.budget` environment steps are consumed.
/// PPO runs are deterministic given `seed`.
pub fn train<E, F>(
    make_env: F,
    init: PolicyParams,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError>
where
    E: Environment,
    F: Fn() -> E + Sync,
{
    if !(0.0..=1.0).contains(&cfg.partial_fraction) {
        return Err(TrainError::InvalidConfig("partial_fraction must be in [0, 1]".into()));
    }
    match cfg.algo {
        Algo::Ppo => train_ppo(make_env, init, cfg, seed),
        Algo::A3c => train_a3c(make_env, init, cfg, seed),
    }
}

fn train_ppo<E, F>(
    make_env: F,
    init: PolicyParams,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError>
where
    E: Environment,
    F: Fn() -> E + Sync,
{
    let p = cfg.ppo;
    if p.episodes_per_batch == 0 || p.epochs == 0 {
        return Err(TrainError::InvalidConfig("episodes_per_batch and epochs must be positive".into()));
    }
    let store = ParameterStore::new(
        init,
        AdamConfig {
            max_grad_norm: p.max_grad_norm,
            ..AdamConfig::with_lr(p.lr)
        },
    );
    let mut update_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, 0));
    let mut curve = Vec::new();
    let mut episodes = 0u64;
    let mut steps = 0u64;
    let mut by_target: Option<PolicyParams> = None;
    let mut by_fraction: Option<PolicyParams> = None;
    let fraction_step = (cfg.partial_fraction * cfg.budget as f64).ceil() as u64;
    if fraction_step == 0 {
        by_fraction = Some((*store.snapshot()).clone());
    }
    while steps < cfg.budget {
        let params = store.snapshot();
        let rollouts: Vec<EpisodeRollout> = (0..p.episodes_per_batch as u64)
            .into_par_iter()
            .map(|k| {
                let idx = episodes + k;
                let mut env = make_env();
                let mut rng = episode_rng(seed, idx);
                collect_episode(&mut env, &params, derive_seed(seed, 0, idx), &mut rng)
            })
            .collect::<Result<_, _>>()?;
        let n = rollouts.len() as f64;
        let batch_steps: u64 = rollouts.iter().map(|r| r.length as u64).sum();
        steps += batch_steps;
        episodes += rollouts.len() as u64;
        store.add_env_steps(batch_steps);
        let mean_reward = rollouts.iter().map(|r| r.total_reward).sum::<f64>() / n;
        let entropy = rollouts.iter().map(|r| r.mean_entropy).sum::<f64>() / n;
        curve.push(CurvePoint {
            global_step: steps,
            episodes,
            mean_reward,
            entropy,
        });
        log::info!("ppo step {steps} episodes {episodes} mean reward {mean_reward:.2} entropy {entropy:.3}");
        if let Some(target) = cfg.partial_reward_target {
            if by_target.is_none() && mean_reward >= target {
                by_target = Some((*params).clone());
            }
        }
        let batch: Vec<Trajectory> = rollouts.into_iter().flat_map(|r| r.trajectories).collect();
        ppo_update(&store, &batch, &p, &mut update_rng)?;
        if by_fraction.is_none() && steps >= fraction_step {
            by_fraction = Some((*store.snapshot()).clone());
        }
    }
    let params = store.into_params();
    let partial = by_target.or(by_fraction).unwrap_or_else(|| params.clone());
    Ok(TrainOutcome {
        params,
        partial,
        curve,
        workers: Vec::new(),
        worker_failures: Vec::new(),
    })
}

fn train_a3c<E, F>(
    make_env: F,
    init: PolicyParams,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError>
where
    E: Environment,
    F: Fn() -> E + Sync,
{
    let a = cfg.a3c;
    if a.workers == 0 || a.n_steps == 0 {
        return Err(TrainError::InvalidConfig("workers and n_steps must be positive".into()));
    }
    let init_copy = init.clone();
    let store = ParameterStore::new(
        init,
        AdamConfig {
            max_grad_norm: a.max_grad_norm,
            ..AdamConfig::with_lr(a.lr)
        },
    );
    let logs = Mutex::new(Vec::new());
    let fraction_step = (cfg.partial_fraction * cfg.budget as f64).ceil() as u64;
    let results: Vec<Result<WorkerReport, String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..a.workers)
            .map(|w| {
                let (store, logs, make_env) = (&store, &logs, &make_env);
                scope.spawn(move || {
                    catch_unwind(AssertUnwindSafe(|| {
                        let mut env = make_env();
                        a3c_worker_loop(w, &mut env, store, &a, cfg.budget, seed, logs)
                    }))
                    .map_err(|p| {
                        let msg = p
                            .downcast_ref::<&str>()
                            .map(|s| s.to_string())
                            .or_else(|| p.downcast_ref::<String>().cloned())
                            .unwrap_or_else(|| "panic".into());
                        format!("worker {w} panicked: {msg}")
                    })
                    .and_then(|r| r.map_err(|e| format!("worker {w} failed: {e}")))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("worker thread lost".into())))
            .collect()
    });
    let mut workers = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rep) => workers.push(rep),
            Err(e) => {
                log::error!("{e}");
                failures.push(e);
            }
        }
    }
    if workers.is_empty() && cfg.budget > 0 {
        return Err(TrainError::WorkersFailed(failures.join("; ")));
    }
    let logs = logs.into_inner().unwrap_or_else(|e| e.into_inner());
    let window = cfg.curve_window.max(1);
    let curve = logs
        .chunks(window)
        .enumerate()
        .map(|(i, c)| CurvePoint {
            global_step: c.last().unwrap().global_step,
            episodes: (i * window + c.len()) as u64,
            mean_reward: c.iter().map(|e| e.reward).sum::<f64>() / c.len() as f64,
            entropy: c.iter().map(|e| e.entropy).sum::<f64>() / c.len() as f64,
        })
        .collect();
    let params = store.into_params();
    // A3C keeps no snapshot history; the partial agent is the final one
    // unless the budget fraction is zero.
    let partial = if fraction_step == 0 { init_copy } else { params.clone() };
    Ok(TrainOutcome {
        params,
        partial,
        curve,
        workers,
        worker_failures: failures,
    })
}

/// Writes `global_step,episodes,mean_reward,entropy` rows after `#`-prefixed
/// header lines.
pub fn write_curve_csv<W: Write>(mut w: W, header: &[String], curve: &[CurvePoint]) -> std::io::Result<()> {
    for h in header {
        writeln!(w, "# {h}")?;
    }
    writeln!(w, "global_step,episodes,mean_reward,entropy")?;
    for p in curve {
        writeln!(w, "{},{},{},{}", p.global_step, p.episodes, p.mean_reward, p.entropy)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
