//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is built once, then evaluated any number of times through an
//! [`Executor`], which owns all per-call state. Gradients can be taken with
//! respect to any subset of leaves, so the same graph serves parameter
//! updates (training) and input gradients (attacks).

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{backward, forward, Bindings, Executor, Gradients, Graph, Node, NodeId, Op};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("tensor of shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("leaf `{0}` is not bound")]
    UnboundLeaf(String),
    #[error("leaf `{0}` does not exist in the graph")]
    UnknownLeaf(String),
    #[error("leaf `{0}` contains a non-finite value")]
    NonFiniteInput(String),
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
}
