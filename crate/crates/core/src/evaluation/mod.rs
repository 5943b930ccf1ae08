//! Rollout harness and metrics: reward statistics against the perturbation
//! budget, action-shift tables, casualty and partial-win rates, relative
//! reward, and the loss-landscape probe.

mod output;
mod probe;
mod rollout;
mod stats;
mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{AttackConfig, AttackError};
use crate::policy::{PolicyError, PolicyParams};
use crate::scenario::{Observation, ScenarioConfig, ScenarioError};

pub use output::{csv_header, write_actions_csv, write_comparison_csv, write_probe_csv, write_sweep_csv};
pub use probe::{
    loss_landscape_probe, probe_action, probe_observation, ObsSource, ProbeConfig, ProbeResult,
};
pub use rollout::{
    action_shift, check_compatible, run_episode, run_rollouts, ActionShift, Controller,
    EpisodeRecord, GroupDecision, RolloutMode, StepRecord,
};
pub use stats::{
    ema_smooth, mann_whitney_less, mean, quantile_sorted, relative_reward, sample_std, std_error,
    BoxStats, Histogram, MannWhitney,
};
pub use sweep::{epsilon_sweep, EpsilonCell, SweepResult};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty series")]
    EmptySeries,
    #[error("checkpoint does not fit the scenario: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One agent's row of a robustness comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentComparison {
    pub name: String,
    pub mean_reward: Vec<f64>,
    pub relative_reward: Vec<Option<f64>>,
    pub probe: ProbeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub eps_list: Vec<f64>,
    pub attack: AttackConfig,
    pub agents: Vec<AgentComparison>,
}

/// Relative-reward curves and loss-landscape probes for several agents. All
/// agents share the rollout seeds and the probe observation, and their probe
/// histograms share one range so they can be compared bin by bin.
#[allow(clippy::too_many_arguments)]
pub fn compare_agents(
    agents: &[(String, &PolicyParams)],
    scenario: &ScenarioConfig,
    attack: &AttackConfig,
    eps_list: &[f64],
    n: usize,
    seed: u64,
    probe_obs: &Observation,
    probe_cfg: &ProbeConfig,
) -> Result<Comparison, EvalError> {
    if agents.len() < 2 {
        return Err(EvalError::InvalidInput("comparison needs at least two agents".into()));
    }
    let mut rows = Vec::with_capacity(agents.len());
    for (name, params) in agents {
        let sweep = epsilon_sweep(params, scenario, attack, eps_list, n, seed)?;
        let taken = probe_action(params, probe_obs, seed)?;
        let probe = loss_landscape_probe(params, probe_obs, taken, probe_cfg, seed)?;
        rows.push(AgentComparison {
            name: name.clone(),
            mean_reward: sweep.cells.iter().map(|c| c.reward.mean).collect(),
            relative_reward: sweep.cells.iter().map(|c| c.relative_reward).collect(),
            probe,
        });
    }
    if probe_cfg.range.is_none() {
        let hi = rows.iter().map(|r| r.probe.max_loss).fold(0.0, f64::max);
        for r in &mut rows {
            r.probe.histogram = Histogram::build(&r.probe.losses, probe_cfg.bins, Some((0.0, hi)))?;
        }
    }
    Ok(Comparison {
        eps_list: eps_list.to_vec(),
        attack: *attack,
        agents: rows,
    })
}

#[cfg(test)]
mod tests;
