use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, PolicyError, PolicyParams};
use crate::autodiff::{Bindings, Executor, Gradients, Graph, NodeId, Tensor};
use crate::scenario::{Observation, NUM_LOGITS};

/// Raw network output for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub action_logits: [f64; 2],
    pub x_logits: [f64; 3],
    pub y_logits: [f64; 3],
    pub value: f64,
}

impl PolicyOutput {
    pub fn from_logits(logits: &[f64], value: f64) -> Self {
        Self {
            action_logits: [logits[0], logits[1]],
            x_logits: [logits[2], logits[3], logits[4]],
            y_logits: [logits[5], logits[6], logits[7]],
            value,
        }
    }

    /// Concatenated (action, x, y) logits.
    pub fn logits(&self) -> [f64; NUM_LOGITS] {
        let mut out = [0.0; NUM_LOGITS];
        out[..2].copy_from_slice(&self.action_logits);
        out[2..5].copy_from_slice(&self.x_logits);
        out[5..].copy_from_slice(&self.y_logits);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.logits().iter().all(|v| v.is_finite()) && self.value.is_finite()
    }
}

/// Stacked network inputs. Groups that observe the same screen share one
/// screen row; `rows[i]` is the screen row used by observation `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInput {
    /// [U, C, S, S]
    pub screens: Tensor,
    /// [N, D]
    pub nonspatial: Tensor,
    pub rows: Vec<usize>,
}

impl BatchInput {
    /// With `share_screens`, observations holding the same `Arc` screen use
    /// one screen row.
    pub fn new(
        arch: &ArchConfig,
        obs: &[&Observation],
        share_screens: bool,
    ) -> Result<Self, PolicyError> {
        let c = arch.screen_channels;
        let s = arch.screen_size;
        let d = arch.nonspatial_len;
        if obs.is_empty() {
            return Err(PolicyError::EmptyBatch);
        }
        let mut unique: Vec<&Arc<Tensor>> = Vec::new();
        let mut rows = Vec::with_capacity(obs.len());
        let mut nonspatial = Vec::with_capacity(obs.len() * d);
        for o in obs {
            if o.screen.shape() != [c, s, s] {
                return Err(PolicyError::InputShape(format!(
                    "screen {:?}, expected {:?}",
                    o.screen.shape(),
                    [c, s, s]
                )));
            }
            if o.nonspatial.len() != d {
                return Err(PolicyError::InputShape(format!(
                    "nonspatial length {}, expected {d}",
                    o.nonspatial.len()
                )));
            }
            let found = if share_screens {
                unique.iter().position(|u| Arc::ptr_eq(u, &o.screen))
            } else {
                None
            };
            rows.push(found.unwrap_or_else(|| {
                unique.push(&o.screen);
                unique.len() - 1
            }));
            nonspatial.extend_from_slice(&o.nonspatial);
        }
        let mut screens = Vec::with_capacity(unique.len() * c * s * s);
        for u in &unique {
            screens.extend_from_slice(u.data());
        }
        Ok(Self {
            screens: Tensor::new(vec![unique.len(), c, s, s], screens)?,
            nonspatial: Tensor::new(vec![obs.len(), d], nonspatial)?,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// The actor-critic computational graph for one batch layout.
pub struct PolicyGraph {
    pub graph: Graph,
    pub logits: NodeId,
    pub value: NodeId,
}

pub const SCREEN_LEAF: &str = "screen";
pub const NONSPATIAL_LEAF: &str = "nonspatial";

impl PolicyGraph {
    pub fn build(arch: &ArchConfig, rows: Vec<usize>) -> Self {
        let mut g = Graph::new();
        let screen = g.leaf(SCREEN_LEAF);
        let nonspatial = g.leaf(NONSPATIAL_LEAF);

        let mut h = screen;
        for (i, c) in arch.conv.iter().enumerate() {
            let w = g.leaf(&format!("conv{}.w", i + 1));
            let b = g.leaf(&format!("conv{}.b", i + 1));
            h = g.conv2d(h, w, b, c.stride);
            h = g.relu(h);
        }
        h = g.flatten(h);
        let w = g.leaf("screen_fc.w");
        let b = g.leaf("screen_fc.b");
        h = g.dense(h, w, b);
        let screen_feat = g.gather(h, rows);

        let w = g.leaf("nonspatial_fc.w");
        let b = g.leaf("nonspatial_fc.b");
        let ns = g.dense(nonspatial, w, b);
        let ns = g.relu(ns);

        let joint = g.concat(&[screen_feat, ns]);
        let w = g.leaf("trunk_fc.w");
        let b = g.leaf("trunk_fc.b");
        let t = g.dense(joint, w, b);
        let t = g.relu(t);

        let w = g.leaf("logits.w");
        let b = g.leaf("logits.b");
        let logits = g.dense(t, w, b);
        let w = g.leaf("value.w");
        let b = g.leaf("value.b");
        let value = g.dense(t, w, b);
        g.output("logits", logits);
        g.output("value", value);
        Self {
            graph: g,
            logits,
            value,
        }
    }
}

/// Which leaves receive gradients in [`forward_backward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    Params,
    Inputs,
}

/// Seed gradients for the logits ([N, 8], row-major) and value ([N]) nodes.
pub struct OutputSeeds {
    pub logits: Vec<f64>,
    pub value: Option<Vec<f64>>,
}

fn bindings<'a>(params: &'a PolicyParams, input: &'a BatchInput) -> Bindings<'a, 'a> {
    let mut b: Bindings = params.tensors().iter().map(|(k, v)| (k.as_str(), v)).collect();
    b.insert(SCREEN_LEAF, &input.screens);
    b.insert(NONSPATIAL_LEAF, &input.nonspatial);
    b
}

fn collect_outputs(pg: &PolicyGraph, exec: &Executor) -> Vec<PolicyOutput> {
    let logits = exec.value(pg.logits).expect("forward ran");
    let value = exec.value(pg.value).expect("forward ran");
    logits
        .data()
        .chunks(NUM_LOGITS)
        .zip(value.data())
        .map(|(l, &v)| PolicyOutput::from_logits(l, v))
        .collect()
}

fn check_arch(params: &PolicyParams, input: &BatchInput) -> Result<(), PolicyError> {
    let a = &params.arch;
    let s = input.screens.shape();
    if s[1..] != [a.screen_channels, a.screen_size, a.screen_size]
        || input.nonspatial.shape()[1] != a.nonspatial_len
    {
        return Err(PolicyError::InputShape(format!(
            "batch screens {:?} / nonspatial {:?} do not match the architecture",
            s,
            input.nonspatial.shape()
        )));
    }
    Ok(())
}

pub fn forward_batch(
    params: &PolicyParams,
    input: &BatchInput,
) -> Result<Vec<PolicyOutput>, PolicyError> {
    check_arch(params, input)?;
    let pg = PolicyGraph::build(&params.arch, input.rows.clone());
    let mut exec = Executor::new(&pg.graph);
    exec.run(&bindings(params, input))?;
    Ok(collect_outputs(&pg, &exec))
}

/// Runs the network, asks `seeds` for the output gradients given the
/// outputs, and back-propagates them to either the parameters or the inputs.
pub fn forward_backward<F, E>(
    params: &PolicyParams,
    input: &BatchInput,
    target: GradTarget,
    seeds: F,
) -> Result<(Vec<PolicyOutput>, Gradients), E>
where
    F: FnOnce(&[PolicyOutput]) -> Result<OutputSeeds, E>,
    E: From<PolicyError>,
{
    check_arch(params, input)?;
    let pg = PolicyGraph::build(&params.arch, input.rows.clone());
    let mut exec = Executor::new(&pg.graph);
    exec.run(&bindings(params, input)).map_err(PolicyError::from)?;
    let outputs = collect_outputs(&pg, &exec);
    let n = outputs.len();
    let s = seeds(&outputs)?;
    let tensor = |shape: Vec<usize>, data| Tensor::new(shape, data).map_err(PolicyError::from);
    let mut seed_list = vec![(pg.logits, tensor(vec![n, NUM_LOGITS], s.logits)?)];
    if let Some(v) = s.value {
        seed_list.push((pg.value, tensor(vec![n, 1], v)?));
    }
    let wrt: Vec<&str> = match target {
        GradTarget::Params => params.names().collect(),
        GradTarget::Inputs => vec![SCREEN_LEAF, NONSPATIAL_LEAF],
    };
    let grads = exec
        .backward_seeded(&seed_list, &wrt)
        .map_err(PolicyError::from)?;
    Ok((outputs, grads))
}

pub fn forward_policy(
    params: &PolicyParams,
    obs: &Observation,
) -> Result<PolicyOutput, PolicyError> {
    let input = BatchInput::new(&params.arch, &[obs], true)?;
    Ok(forward_batch(params, &input)?[0])
}
