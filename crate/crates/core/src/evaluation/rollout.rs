use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::attack::{attacked_decide, AttackConfig};
use crate::policy::PolicyParams;
use crate::scenario::{
    reward_from_events, FactoredAction, GroupId, HealthReport, Observation, Scenario,
    ScenarioConfig, Side, HEAD_OFFSETS, HEAD_SIZES, NUM_FACTORED_ACTIONS,
};
use crate::trainer::derive_seed;

/// How a checkpoint is driven during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RolloutMode {
    /// Benign observations; the recorded subverted action equals the benign one.
    Benign,
    /// Perturbed observations drive the agent; the benign action is recorded
    /// alongside.
    Attacked(AttackConfig),
    /// Benign observations drive the agent; the action the agent would take on
    /// perturbed observations is recorded alongside.
    Shadow(AttackConfig),
}

/// Who commands Blue.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Policy {
        params: &'a PolicyParams,
        mode: RolloutMode,
    },
    /// Uniformly random allowed action per head.
    Uniform,
}

/// One group's decision at one step. Actions are flat indices into the 18
/// factored actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupDecision {
    pub group: usize,
    pub benign: usize,
    pub subverted: usize,
    pub benign_argmax: usize,
    pub subverted_argmax: usize,
    pub screen_linf: f64,
    pub nonspatial_linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub reward: f64,
    pub decisions: Vec<GroupDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub env_seed: u64,
    pub steps: Vec<StepRecord>,
    pub cumulative_reward: f64,
    /// Reward recomputed from the step event logs.
    pub event_reward: i64,
    pub blue: HealthReport,
    pub red: HealthReport,
    /// Blue ends with a higher total remaining-health percentage than Red.
    pub partial_win: bool,
    pub length: usize,
}

impl EpisodeRecord {
    /// Steps whose most likely action changed under attack.
    pub fn flips(&self) -> usize {
        self.steps
            .iter()
            .flat_map(|s| &s.decisions)
            .filter(|d| d.benign_argmax != d.subverted_argmax)
            .count()
    }

    /// Benign and subverted action sequences of one group.
    pub fn paired_sequence(&self, group: usize) -> (Vec<usize>, Vec<usize>) {
        self.steps
            .iter()
            .flat_map(|s| s.decisions.iter().filter(|d| d.group == group))
            .map(|d| (d.benign, d.subverted))
            .unzip()
    }
}

fn uniform_action<R: Rng + ?Sized>(obs: &Observation, rng: &mut R) -> FactoredAction {
    let mut idx = [0usize; 3];
    for h in 0..3 {
        let allowed: Vec<usize> = (0..HEAD_SIZES[h])
            .filter(|&k| obs.action_mask[HEAD_OFFSETS[h] + k])
            .collect();
        idx[h] = allowed[rng.random_range(0..allowed.len())];
    }
    FactoredAction::from_indices(idx[0], idx[1], idx[2]).expect("indices within head sizes")
}

fn decide_step(
    controller: &Controller,
    obs: &[(GroupId, Observation)],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<(GroupId, FactoredAction)>, Vec<GroupDecision>), EvalError> {
    match controller {
        Controller::Uniform => {
            let mut actions = Vec::new();
            let mut decisions = Vec::new();
            for (g, o) in obs {
                let a = uniform_action(o, rng).flat_index();
                actions.push((*g, FactoredAction::from_flat_index(a)?));
                decisions.push(GroupDecision {
                    group: g.index,
                    benign: a,
                    subverted: a,
                    benign_argmax: a,
                    subverted_argmax: a,
                    screen_linf: 0.0,
                    nonspatial_linf: 0.0,
                });
            }
            Ok((actions, decisions))
        }
        Controller::Policy { params, mode } => {
            let (cfg, attacked_drives) = match mode {
                RolloutMode::Benign => (AttackConfig::default(), false),
                RolloutMode::Attacked(c) => (*c, true),
                RolloutMode::Shadow(c) => (*c, false),
            };
            let ds = attacked_decide(params, obs, &cfg, rng)?;
            let actions = ds
                .iter()
                .map(|d| (d.group, if attacked_drives { d.action } else { d.benign_action }))
                .collect();
            let decisions = ds
                .iter()
                .map(|d| GroupDecision {
                    group: d.group.index,
                    benign: d.benign_action.flat_index(),
                    subverted: d.action.flat_index(),
                    benign_argmax: d.diagnostics.benign_argmax.flat_index(),
                    subverted_argmax: d.diagnostics.attacked_argmax.flat_index(),
                    screen_linf: d.diagnostics.screen_linf,
                    nonspatial_linf: d.diagnostics.nonspatial_linf,
                })
                .collect();
            Ok((actions, decisions))
        }
    }
}

/// Checks that a checkpoint's input layout fits the scenario.
pub fn check_compatible(params: &PolicyParams, cfg: &ScenarioConfig) -> Result<(), EvalError> {
    let a = &params.arch;
    let ch = crate::scenario::SCREEN_CHANNELS;
    if a.screen_size != cfg.map_size || a.screen_channels != ch || a.nonspatial_len != cfg.nonspatial_len() {
        return Err(EvalError::Mismatch(format!(
            "checkpoint expects {}x{}x{} screens and {} nonspatial features; scenario {} provides {}x{}x{} and {}",
            a.screen_channels,
            a.screen_size,
            a.screen_size,
            a.nonspatial_len,
            cfg.name.name(),
            ch,
            cfg.map_size,
            cfg.map_size,
            cfg.nonspatial_len()
        )));
    }
    Ok(())
}

/// Plays one episode from `env_seed`, drawing sampling randomness from `rng`.
pub fn run_episode(
    scenario: &ScenarioConfig,
    controller: &Controller,
    env_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeRecord, EvalError> {
    let mut env = Scenario::new(scenario.clone())?;
    env.reset(env_seed);
    let mut steps = Vec::new();
    let mut total = 0.0;
    let mut event_reward = 0i64;
    while !env.is_done() {
        let obs = env.blue_observations();
        if obs.is_empty() {
            break;
        }
        let (actions, decisions) = decide_step(controller, &obs, rng)?;
        let map: BTreeMap<GroupId, FactoredAction> = actions.into_iter().collect();
        let (_, outcome) = env.step(&map)?;
        total += outcome.reward;
        event_reward += reward_from_events(&outcome.events);
        steps.push(StepRecord {
            reward: outcome.reward,
            decisions,
        });
    }
    let blue = env.health(Side::Blue);
    let red = env.health(Side::Red);
    Ok(EpisodeRecord {
        env_seed,
        length: steps.len(),
        steps,
        cumulative_reward: total,
        event_reward,
        partial_win: blue.total_pct > red.total_pct,
        blue,
        red,
    })
}

/// `n` seeded episodes, run in parallel. Episode `i` uses environment seed
/// and sampling stream derived from (`seed`, `i`) only, so the result does
/// not depend on scheduling, and different controllers or attack budgets
/// evaluated with the same seed see the same starts and uniforms.
pub fn run_rollouts(
    scenario: &ScenarioConfig,
    controller: &Controller,
    n: usize,
    seed: u64,
) -> Result<Vec<EpisodeRecord>, EvalError> {
    if n == 0 {
        return Err(EvalError::InvalidInput("need at least one episode".into()));
    }
    if let Controller::Policy { params, .. } = controller {
        check_compatible(params, scenario)?;
    }
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, i));
            run_episode(scenario, controller, derive_seed(seed, 3, i), &mut rng)
        })
        .collect()
}

/// Normalized frequencies of the benign and subverted action streams over
/// the 18 factored actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionShift {
    pub benign: Vec<f64>,
    pub subverted: Vec<f64>,
    /// Total-variation distance between the two tables.
    pub tv_distance: f64,
    /// Fraction of decisions whose sampled action changed.
    pub changed_fraction: f64,
    pub decisions: usize,
}

pub fn action_shift(records: &[EpisodeRecord]) -> ActionShift {
    let mut b = vec![0.0; NUM_FACTORED_ACTIONS];
    let mut s = vec![0.0; NUM_FACTORED_ACTIONS];
    let mut n = 0usize;
    let mut changed = 0usize;
    for d in records.iter().flat_map(|r| &r.steps).flat_map(|s| &s.decisions) {
        b[d.benign] += 1.0;
        s[d.subverted] += 1.0;
        n += 1;
        changed += (d.benign != d.subverted) as usize;
    }
    if n > 0 {
        for v in b.iter_mut().chain(s.iter_mut()) {
            *v /= n as f64;
        }
    }
    let tv = 0.5 * b.iter().zip(&s).map(|(x, y)| (x - y).abs()).sum::<f64>();
    ActionShift {
        benign: b,
        subverted: s,
        tv_distance: tv,
        changed_fraction: if n > 0 { changed as f64 / n as f64 } else { 0.0 },
        decisions: n,
    }
}
