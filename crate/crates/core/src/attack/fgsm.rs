use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{attack_loss, attack_loss_grad, degenerate_target, AttackConfig, AttackError};
use crate::autodiff::Tensor;
use crate::policy::{
    draw_uniforms, forward_backward, forward_batch, masked_distribution, BatchInput, GradTarget,
    HeadDistributions, OutputSeeds, PolicyOutput, PolicyParams, NONSPATIAL_LEAF, SCREEN_LEAF,
};
use crate::scenario::{FactoredAction, GroupId, Observation, GROUPS_PER_SIDE, NUM_LOGITS};

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn step(x: f64, g: f64, eps: f64, clamp: bool) -> f64 {
    let v = x + eps * sgn(g);
    if clamp {
        v.clamp(0.0, 1.0)
    } else {
        v
    }
}

/// Perturbs every observation independently (one FGSM step each) and also
/// returns the benign network outputs. Rows of the batch never interact, so
/// one backward pass of the summed loss yields each row's own gradient.
pub fn fgsm_perturb_batch(
    params: &PolicyParams,
    obs: &[&Observation],
    cfg: &AttackConfig,
) -> Result<(Vec<Observation>, Vec<PolicyOutput>), AttackError> {
    cfg.validate()?;
    if cfg.epsilon == 0.0 {
        let input = BatchInput::new(&params.arch, obs, true)?;
        let outs = forward_batch(params, &input)?;
        return Ok((obs.iter().map(|o| (*o).clone()).collect(), outs));
    }
    let input = BatchInput::new(&params.arch, obs, false)?;
    let (outs, grads) =
        forward_backward::<_, AttackError>(params, &input, GradTarget::Inputs, |outs| {
            let mut logits = Vec::with_capacity(outs.len() * NUM_LOGITS);
            for o in outs {
                if !o.is_finite() {
                    return Err(AttackError::Policy(crate::policy::PolicyError::NonFinite(
                        "policy logits".into(),
                    )));
                }
                let t = degenerate_target(o, cfg.variant);
                logits.extend_from_slice(&attack_loss_grad(o, &t));
            }
            Ok(OutputSeeds {
                logits,
                value: None,
            })
        })?;
    let zeros_like = |t: &Tensor| Tensor::zeros(t.shape());
    let g_screen = grads
        .get(SCREEN_LEAF)
        .cloned()
        .unwrap_or_else(|| zeros_like(&input.screens));
    let g_ns = grads
        .get(NONSPATIAL_LEAF)
        .cloned()
        .unwrap_or_else(|| zeros_like(&input.nonspatial));
    if !g_screen.is_finite() || !g_ns.is_finite() {
        return Err(AttackError::NonFiniteGradient(format!(
            "batch of {} observations, params version {}",
            obs.len(),
            params.version
        )));
    }
    let screen_len = input.screens.len() / obs.len();
    let d = params.arch.nonspatial_len;
    let perturbed = obs
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut out = (*o).clone();
            if cfg.targets.screen() {
                let g = &g_screen.data()[i * screen_len..(i + 1) * screen_len];
                let data: Vec<f64> = o
                    .screen
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &g)| step(x, g, cfg.epsilon, cfg.clamp))
                    .collect();
                out.screen = Arc::new(
                    Tensor::new(o.screen.shape().to_vec(), data).expect("same shape"),
                );
            }
            if cfg.targets.nonspatial() {
                let g = &g_ns.data()[i * d..(i + 1) * d];
                // The control-group one-hot is agent-internal, not sensor data.
                let sensed = d - GROUPS_PER_SIDE;
                for (k, x) in out.nonspatial[..sensed].iter_mut().enumerate() {
                    *x = step(*x, g[k], cfg.epsilon, cfg.clamp);
                }
            }
            out
        })
        .collect();
    Ok((perturbed, outs))
}

/// FGSM on one observation.
pub fn fgsm_perturb(
    params: &PolicyParams,
    obs: &Observation,
    cfg: &AttackConfig,
) -> Result<Observation, AttackError> {
    Ok(fgsm_perturb_batch(params, &[obs], cfg)?.0.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackDiagnostics {
    pub benign_argmax: FactoredAction,
    pub attacked_argmax: FactoredAction,
    /// The most likely action changed under attack.
    pub flip: bool,
    pub benign_loss: f64,
    pub attacked_loss: f64,
    pub screen_linf: f64,
    pub nonspatial_linf: f64,
}

/// One group's decision under attack, paired with the benign counterfactual
/// sampled from the same uniforms.
#[derive(Debug, Clone)]
pub struct AttackedDecision {
    pub group: GroupId,
    /// Action sampled from the perturbed observation (the one executed).
    pub action: FactoredAction,
    pub benign_action: FactoredAction,
    pub benign_output: PolicyOutput,
    pub benign_dists: HeadDistributions,
    pub attacked_dists: HeadDistributions,
    pub uniforms: [f64; 3],
    pub perturbed: Observation,
    pub diagnostics: AttackDiagnostics,
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Attacks every group of one timestep (each with its own perturbation) and
/// samples benign and attacked actions with shared uniforms, drawn in roster
/// order exactly like benign inference.
pub fn attacked_decide<R: Rng + ?Sized>(
    params: &PolicyParams,
    obs: &[(GroupId, Observation)],
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Vec<AttackedDecision>, AttackError> {
    let refs: Vec<&Observation> = obs.iter().map(|(_, o)| o).collect();
    let (perturbed, benign_outs) = fgsm_perturb_batch(params, &refs, cfg)?;
    let attacked_outs = if cfg.epsilon == 0.0 {
        benign_outs.clone()
    } else {
        let prefs: Vec<&Observation> = perturbed.iter().collect();
        forward_batch(params, &BatchInput::new(&params.arch, &prefs, true)?)?
    };
    obs.iter()
        .zip(perturbed)
        .zip(benign_outs.into_iter().zip(attacked_outs))
        .map(|(((g, o), p), (bo, ao))| {
            let benign_dists = masked_distribution(&bo, &o.action_mask)?;
            let attacked_dists = masked_distribution(&ao, &p.action_mask)?;
            let uniforms = draw_uniforms(rng);
            let target = degenerate_target(&bo, cfg.variant);
            let benign_argmax = benign_dists.argmax();
            let attacked_argmax = attacked_dists.argmax();
            Ok(AttackedDecision {
                group: *g,
                action: attacked_dists.sample_with_uniforms(uniforms),
                benign_action: benign_dists.sample_with_uniforms(uniforms),
                benign_output: bo,
                benign_dists,
                attacked_dists,
                uniforms,
                diagnostics: AttackDiagnostics {
                    benign_argmax,
                    attacked_argmax,
                    flip: benign_argmax != attacked_argmax,
                    benign_loss: attack_loss(&bo, &target),
                    attacked_loss: attack_loss(&ao, &target),
                    screen_linf: linf(o.screen.data(), p.screen.data()),
                    nonspatial_linf: linf(&o.nonspatial, &p.nonspatial),
                },
                perturbed: p,
            })
        })
        .collect()
}

/// Single-observation attacked inference: the sampled action and its
/// diagnostics.
pub fn attacked_inference<R: Rng + ?Sized>(
    params: &PolicyParams,
    obs: &Observation,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<(FactoredAction, AttackDiagnostics), AttackError> {
    let d = attacked_decide(params, &[(GroupId::blue(obs.group_index()), obs.clone())], cfg, rng)?
        .remove(0);
    Ok((d.action, d.diagnostics))
}
