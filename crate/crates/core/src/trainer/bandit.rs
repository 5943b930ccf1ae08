use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::env::Environment;
use crate::policy::ArchConfig;
use crate::scenario::{
    FactoredAction, GroupId, Observation, ScenarioError, StepOutcome, Verb, GROUPS_PER_SIDE,
    NUM_LOGITS,
};

const SCREEN: usize = 4;

/// One-state, two-action bandit: a single group chooses a verb, NO_OP pays 1
/// and ATTACK pays 0; every episode lasts one step. The quadrant heads are
/// masked down to a single option.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    done: bool,
    screen: Arc<Tensor>,
}

impl Default for BanditEnv {
    fn default() -> Self {
        Self {
            done: false,
            screen: Arc::new(Tensor::zeros(&[1, SCREEN, SCREEN])),
        }
    }
}

impl BanditEnv {
    pub fn arch() -> ArchConfig {
        ArchConfig::small(1, SCREEN, 1 + GROUPS_PER_SIDE)
    }

    pub fn observation(&self) -> Observation {
        let mut control_group = [0.0; GROUPS_PER_SIDE];
        control_group[0] = 1.0;
        let mut nonspatial = vec![1.0];
        nonspatial.extend_from_slice(&control_group);
        let mut action_mask = [false; NUM_LOGITS];
        action_mask[..3].fill(true);
        action_mask[5] = true;
        Observation {
            screen: self.screen.clone(),
            nonspatial,
            action_mask,
            control_group,
        }
    }
}

impl Environment for BanditEnv {
    fn reset_env(&mut self, _seed: u64) {
        self.done = false;
    }

    fn observations(&self) -> Vec<(GroupId, Observation)> {
        if self.done {
            Vec::new()
        } else {
            vec![(GroupId::blue(0), self.observation())]
        }
    }

    fn step_env(&mut self, actions: &[(GroupId, FactoredAction)]) -> Result<StepOutcome, ScenarioError> {
        if self.done {
            return Err(ScenarioError::EpisodeDone);
        }
        let [(g, a)] = actions else {
            return Err(ScenarioError::MalformedAction(format!(
                "bandit takes exactly one action, got {}",
                actions.len()
            )));
        };
        if *g != GroupId::blue(0) {
            return Err(ScenarioError::MalformedAction(format!("{g:?}")));
        }
        self.done = true;
        Ok(StepOutcome {
            reward: if a.verb == Verb::NoOp { 1.0 } else { 0.0 },
            done: true,
            events: Vec::new(),
        })
    }

    fn done(&self) -> bool {
        self.done
    }
}
