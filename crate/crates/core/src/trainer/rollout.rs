use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{TrainError, Trajectory, Transition};
use crate::env::Environment;
use crate::policy::{
    draw_uniforms, forward_batch, masked_distribution, BatchInput, HeadDistributions,
    PolicyOutput, PolicyParams,
};
use crate::scenario::{FactoredAction, GroupId, Observation};

/// SplitMix64 finalizer; derives independent stream seeds from a base seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One group's decision at one step.
#[derive(Debug, Clone)]
pub struct Decision {
    pub group: GroupId,
    pub output: PolicyOutput,
    pub dists: HeadDistributions,
    pub uniforms: [f64; 3],
    pub action: FactoredAction,
}

/// Evaluates all groups of one timestep in a single batch (equivalent to one
/// forward pass per group in roster order) and samples each group's action
/// from its own three uniforms.
pub fn decide(
    params: &PolicyParams,
    obs: &[(GroupId, Observation)],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Decision>, TrainError> {
    let refs: Vec<&Observation> = obs.iter().map(|(_, o)| o).collect();
    let input = BatchInput::new(&params.arch, &refs, true)?;
    let outputs = forward_batch(params, &input)?;
    obs.iter()
        .zip(outputs)
        .map(|((g, o), output)| {
            let dists = masked_distribution(&output, &o.action_mask)?;
            let uniforms = draw_uniforms(rng);
            Ok(Decision {
                group: *g,
                output,
                dists,
                uniforms,
                action: dists.sample_with_uniforms(uniforms),
            })
        })
        .collect()
}

/// Per-group trajectories of one finished episode.
pub struct EpisodeRollout {
    pub trajectories: Vec<Trajectory>,
    pub total_reward: f64,
    pub length: usize,
    pub mean_entropy: f64,
}

/// Plays one full episode with `params`. Each group's trajectory ends when
/// the group is destroyed or the episode ends.
pub fn collect_episode<E: Environment + ?Sized>(
    env: &mut E,
    params: &PolicyParams,
    env_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeRollout, TrainError> {
    env.reset_env(env_seed);
    let mut open: BTreeMap<GroupId, Trajectory> = BTreeMap::new();
    let mut closed = Vec::new();
    let mut total = 0.0;
    let mut length = 0;
    let (mut ent_sum, mut ent_n) = (0.0, 0usize);
    let mut obs = env.observations();
    while !env.done() && !obs.is_empty() {
        let decisions = decide(params, &obs, rng)?;
        let actions: Vec<(GroupId, FactoredAction)> =
            decisions.iter().map(|d| (d.group, d.action)).collect();
        let outcome = env.step_env(&actions)?;
        total += outcome.reward;
        length += 1;
        let next = env.observations();
        for ((g, o), d) in obs.into_iter().zip(&decisions) {
            ent_sum += d.dists.entropy();
            ent_n += 1;
            let alive = next.iter().any(|(ng, _)| *ng == g);
            let done = outcome.done || !alive;
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
                closed.push(open.remove(&g).unwrap());
            }
        }
        obs = next;
    }
    closed.extend(open.into_values());
    Ok(EpisodeRollout {
        trajectories: closed,
        total_reward: total,
        length,
        mean_entropy: if ent_n > 0 { ent_sum / ent_n as f64 } else { 0.0 },
    })
}

pub fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, episode))
}
