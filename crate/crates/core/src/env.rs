//! Multi-group environment interface shared by the trainers and the
//! evaluation harness.

use crate::scenario::{FactoredAction, GroupId, Observation, ScenarioError, StepOutcome};

/// An episodic environment in which every living control group receives its
/// own observation and is commanded with one factored action per step. The
/// reward is shared by all groups.
pub trait Environment: Send {
    fn reset_env(&mut self, seed: u64);

    /// Observations of the living controllable groups, in roster order.
    fn observations(&self) -> Vec<(GroupId, Observation)>;

    fn step_env(&mut self, actions: &[(GroupId, FactoredAction)]) -> Result<StepOutcome, ScenarioError>;

    fn done(&self) -> bool;
}
