//! Actor-critic policy: conv screen trunk plus dense nonspatial trunk,
//! merged into a shared layer feeding an 8-logit factored action head
//! (verb, x-quadrant, y-quadrant) and a scalar value head.

mod arch;
pub mod checkpoint;
mod distribution;
mod network;
mod params;

use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId};
use crate::scenario::{ScenarioError, HEAD_OFFSETS, HEAD_SIZES};

pub use arch::{ArchConfig, ConvLayer};
pub use distribution::{
    argmax_lowest, decode_action, draw_uniforms, masked_distribution, sample_action,
    HeadDistributions,
};
pub use network::{
    forward_backward, forward_batch, forward_policy, BatchInput, GradTarget, OutputSeeds,
    PolicyGraph, PolicyOutput, NONSPATIAL_LEAF, SCREEN_LEAF,
};
pub use params::PolicyParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("non-finite values in `{0}`")]
    NonFinite(String),
    #[error("input shape: {0}")]
    InputShape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("every entry of action head {0} is masked")]
    FullyMaskedHead(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint architecture digest {found} does not match config digest {expected}")]
    DigestMismatch { expected: String, found: String },
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

impl PolicyGraph {
    /// The policy graph extended with a scalar loss for gradient checks:
    /// per-head cross-entropy of the logits against leaf `target` [N, 8],
    /// plus the summed squared value.
    pub fn with_check_loss(arch: &ArchConfig, rows: Vec<usize>) -> (Self, NodeId) {
        let mut pg = Self::build(arch, rows);
        let g = &mut pg.graph;
        let target = g.leaf("target");
        let mut terms = Vec::new();
        for h in 0..3 {
            let (a, b) = (HEAD_OFFSETS[h], HEAD_OFFSETS[h] + HEAD_SIZES[h]);
            let z = g.slice(pg.logits, a, b);
            let t = g.slice(target, a, b);
            let ce = g.softmax_cross_entropy(z, t);
            terms.push(g.sum(ce));
        }
        let v2 = g.mul(pg.value, pg.value);
        let v2 = g.sum(v2);
        let v2 = g.scale(v2, 0.5);
        let mut loss = v2;
        for t in terms {
            loss = g.add(loss, t);
        }
        g.output("loss", loss);
        (pg, loss)
    }
}

#[cfg(test)]
mod tests;
