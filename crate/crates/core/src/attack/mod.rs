//! Inference-time FGSM attacker. The ground truth is a degenerate (one-hot)
//! distribution at the policy's own argmax, and the perturbation is the sign
//! of the cross-entropy input gradient scaled by the budget.

mod fgsm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{argmax_lowest, PolicyError, PolicyOutput};
use crate::scenario::{FactoredAction, HEAD_OFFSETS, HEAD_SIZES, NUM_LOGITS};

pub use fgsm::{
    attacked_decide, attacked_inference, fgsm_perturb, fgsm_perturb_batch, AttackDiagnostics,
    AttackedDecision,
};

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("non-finite input gradient: {0}")]
    NonFiniteGradient(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// How the three output heads are turned into a cross-entropy target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackVariant {
    /// One one-hot per head; the loss sums the three head cross-entropies.
    PerComponent,
    /// A single one-hot over the concatenated 8 logits, scored by one softmax.
    WholeVector,
}

impl FromStr for AttackVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per_component" => Ok(Self::PerComponent),
            "whole_vector" => Ok(Self::WholeVector),
            _ => Err(format!("unknown attack variant {s:?} (per_component | whole_vector)")),
        }
    }
}

impl fmt::Display for AttackVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerComponent => "per_component",
            Self::WholeVector => "whole_vector",
        })
    }
}

/// Observation components the attacker may modify. The action mask is never
/// a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTargets {
    Screen,
    Nonspatial,
    Both,
}

impl AttackTargets {
    pub fn screen(self) -> bool {
        matches!(self, Self::Screen | Self::Both)
    }

    pub fn nonspatial(self) -> bool {
        matches!(self, Self::Nonspatial | Self::Both)
    }
}

impl FromStr for AttackTargets {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "screen" => Ok(Self::Screen),
            "nonspatial" => Ok(Self::Nonspatial),
            "both" => Ok(Self::Both),
            _ => Err(format!("unknown attack targets {s:?} (screen | nonspatial | both)")),
        }
    }
}

impl fmt::Display for AttackTargets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Screen => "screen",
            Self::Nonspatial => "nonspatial",
            Self::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// l-infinity budget in observation units.
    pub epsilon: f64,
    pub variant: AttackVariant,
    pub targets: AttackTargets,
    /// Clip perturbed values back into [0, 1].
    pub clamp: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            variant: AttackVariant::WholeVector,
            targets: AttackTargets::Both,
            clamp: true,
        }
    }
}

impl AttackConfig {
    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(AttackError::InvalidConfig(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// One-hot ground truth laid out like the logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegenerateTarget {
    pub variant: AttackVariant,
    pub onehot: [f64; NUM_LOGITS],
}

impl DegenerateTarget {
    /// Hot indices: three (one per head) or one.
    pub fn hot(&self) -> Vec<usize> {
        (0..NUM_LOGITS).filter(|&i| self.onehot[i] == 1.0).collect()
    }

    /// Per-component target placing weight 1 on each head's entry of `a`.
    pub fn from_action(a: FactoredAction) -> Self {
        let mut onehot = [0.0; NUM_LOGITS];
        for (h, i) in a.indices().into_iter().enumerate() {
            onehot[HEAD_OFFSETS[h] + i] = 1.0;
        }
        Self {
            variant: AttackVariant::PerComponent,
            onehot,
        }
    }
}

/// One-hot at the argmax of each head (or of the whole logit vector); ties go
/// to the lowest index.
pub fn degenerate_target(out: &PolicyOutput, variant: AttackVariant) -> DegenerateTarget {
    let logits = out.logits();
    let mut onehot = [0.0; NUM_LOGITS];
    match variant {
        AttackVariant::PerComponent => {
            for h in 0..3 {
                let r = HEAD_OFFSETS[h]..HEAD_OFFSETS[h] + HEAD_SIZES[h];
                onehot[HEAD_OFFSETS[h] + argmax_lowest(&logits[r])] = 1.0;
            }
        }
        AttackVariant::WholeVector => onehot[argmax_lowest(&logits)] = 1.0,
    }
    DegenerateTarget { variant, onehot }
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

fn segments(variant: AttackVariant) -> Vec<std::ops::Range<usize>> {
    match variant {
        AttackVariant::PerComponent => (0..3)
            .map(|h| HEAD_OFFSETS[h]..HEAD_OFFSETS[h] + HEAD_SIZES[h])
            .collect(),
        AttackVariant::WholeVector => vec![0..NUM_LOGITS],
    }
}

/// Cross-entropy of the (unmasked) softmax against the target; summed over
/// heads for the per-component variant.
pub fn attack_loss(out: &PolicyOutput, target: &DegenerateTarget) -> f64 {
    let logits = out.logits();
    segments(target.variant)
        .into_iter()
        .map(|r| {
            let lp = log_softmax(&logits[r.clone()]);
            -r.zip(lp).map(|(i, l)| target.onehot[i] * l).sum::<f64>()
        })
        .sum()
}

/// Gradient of [`attack_loss`] with respect to the 8 logits: softmax minus
/// target on each segment.
pub fn attack_loss_grad(out: &PolicyOutput, target: &DegenerateTarget) -> [f64; NUM_LOGITS] {
    let logits = out.logits();
    let mut g = [0.0; NUM_LOGITS];
    for r in segments(target.variant) {
        let lp = log_softmax(&logits[r.clone()]);
        for (i, l) in r.zip(lp) {
            g[i] = l.exp() - target.onehot[i];
        }
    }
    g
}
