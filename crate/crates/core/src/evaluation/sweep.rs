use serde::{Deserialize, Serialize};

use super::rollout::{action_shift, run_rollouts, Controller, EpisodeRecord, RolloutMode};
use super::stats::{mann_whitney_less, mean, relative_reward, std_error, BoxStats, MannWhitney};
use super::EvalError;
use crate::attack::AttackConfig;
use crate::policy::PolicyParams;
use crate::scenario::ScenarioConfig;

/// Aggregates of the episodes played at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonCell {
    pub epsilon: f64,
    pub reward: BoxStats,
    pub reward_std_error: f64,
    pub partial_win_rate: f64,
    pub mean_casualties_blue: f64,
    pub mean_casualties_red: f64,
    /// Mean attacked reward over mean benign reward; None when the benign
    /// mean is not positive.
    pub relative_reward: Option<f64>,
    /// One-sided test that attacked rewards are lower than benign ones
    /// (None for the benign cell itself).
    pub vs_benign: Option<MannWhitney>,
    pub flip_rate: f64,
    pub action_tv_distance: f64,
    #[serde(skip)]
    pub episodes: Vec<EpisodeRecord>,
}

impl EpsilonCell {
    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.cumulative_reward).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub attack: AttackConfig,
    pub episodes_per_cell: usize,
    pub seed: u64,
    pub benign_mean: f64,
    pub cells: Vec<EpsilonCell>,
}

impl SweepResult {
    pub fn cell(&self, epsilon: f64) -> Option<&EpsilonCell> {
        self.cells.iter().find(|c| c.epsilon == epsilon)
    }
}

/// Runs `n` attacked episodes at every budget in `eps_list` (same seeds at
/// every budget; the 0.0 cell is the benign baseline).
pub fn epsilon_sweep(
    params: &PolicyParams,
    scenario: &ScenarioConfig,
    attack: &AttackConfig,
    eps_list: &[f64],
    n: usize,
    seed: u64,
) -> Result<SweepResult, EvalError> {
    if !eps_list.contains(&0.0) {
        return Err(EvalError::InvalidInput(
            "epsilon list must include 0.0 (the benign baseline)".into(),
        ));
    }
    let mut runs = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let cfg = attack.with_epsilon(eps);
        cfg.validate()?;
        let controller = Controller::Policy {
            params,
            mode: RolloutMode::Attacked(cfg),
        };
        runs.push((eps, run_rollouts(scenario, &controller, n, seed)?));
    }
    let benign: Vec<f64> = runs
        .iter()
        .find(|(e, _)| *e == 0.0)
        .map(|(_, r)| r.iter().map(|e| e.cumulative_reward).collect())
        .expect("checked above");
    let benign_mean = mean(&benign);
    let cells = runs
        .into_iter()
        .map(|(eps, episodes)| {
            let rewards: Vec<f64> = episodes.iter().map(|e| e.cumulative_reward).collect();
            let stats = BoxStats::from_samples(&rewards)?;
            let k = episodes.len() as f64;
            let decisions: usize = episodes
                .iter()
                .map(|e| e.steps.iter().map(|s| s.decisions.len()).sum::<usize>())
                .sum();
            let flips: usize = episodes.iter().map(EpisodeRecord::flips).sum();
            Ok(EpsilonCell {
                epsilon: eps,
                reward_std_error: std_error(&rewards),
                partial_win_rate: episodes.iter().filter(|e| e.partial_win).count() as f64 / k,
                mean_casualties_blue: episodes.iter().map(|e| e.blue.casualties as f64).sum::<f64>() / k,
                mean_casualties_red: episodes.iter().map(|e| e.red.casualties as f64).sum::<f64>() / k,
                relative_reward: relative_reward(stats.mean, benign_mean),
                vs_benign: if eps == 0.0 {
                    None
                } else {
                    Some(mann_whitney_less(&rewards, &benign)?)
                },
                flip_rate: if decisions > 0 {
                    flips as f64 / decisions as f64
                } else {
                    0.0
                },
                action_tv_distance: action_shift(&episodes).tv_distance,
                reward: stats,
                episodes,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(SweepResult {
        attack: *attack,
        episodes_per_cell: n,
        seed,
        benign_mean,
        cells,
    })
}
