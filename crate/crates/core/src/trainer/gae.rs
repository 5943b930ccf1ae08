use super::{TrainError, Trajectory};

/// Generalized advantage estimation over one trajectory.
///
/// `delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t`, with
/// `V_T = traj.bootstrap_value` after the last step, and
/// `A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}`.
/// Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn compute_advantages(
    traj: &Trajectory,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    if traj.steps.is_empty() {
        return Err(TrainError::EmptyTrajectory);
    }
    if !(gamma > 0.0 && gamma <= 1.0) || !(0.0..=1.0).contains(&lambda) {
        return Err(TrainError::InvalidConfig(format!(
            "need 0 < gamma <= 1 and 0 <= lambda <= 1, got gamma={gamma}, lambda={lambda}"
        )));
    }
    let n = traj.steps.len();
    let mut adv = vec![0.0; n];
    let mut next_value = traj.bootstrap_value;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let s = &traj.steps[t];
        let live = if s.done { 0.0 } else { 1.0 };
        let delta = s.reward + gamma * next_value * live - s.value;
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = s.value;
    }
    let returns = adv
        .iter()
        .zip(&traj.steps)
        .map(|(a, s)| a + s.value)
        .collect();
    Ok((adv, returns))
}
