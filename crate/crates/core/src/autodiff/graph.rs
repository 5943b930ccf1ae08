use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use super::kernels::{self, ConvGeom};
use super::{AutodiffError, Tensor};

/// Handle to a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf(String),
    /// input [N,C,H,W], weight [F,C,K,K], bias [F]; valid padding.
    Conv2d { stride: usize },
    MaxPool2d { size: usize, stride: usize },
    /// input [N,D], weight [D,O], bias [O].
    Dense,
    Relu,
    /// Softmax along the last axis.
    Softmax,
    /// Concatenation along the last axis.
    Concat,
    Add,
    Mul,
    Scale(f64),
    /// Fused softmax + cross-entropy along the last axis: (logits, target) -> loss per row.
    SoftmaxCrossEntropy,
    Sum,
    Mean,
    /// [N, ...] -> [N, prod(...)]
    Flatten,
    /// Columns `start..end` of the last axis.
    Slice { start: usize, end: usize },
    /// Rows of the leading axis, by index (rows may repeat).
    Gather(Vec<usize>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::Dense => "dense",
            Op::Relu => "relu",
            Op::Softmax => "softmax",
            Op::Concat => "concat",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::SoftmaxCrossEntropy => "softmax_cross_entropy",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Flatten => "flatten",
            Op::Slice { .. } => "slice",
            Op::Gather(_) => "gather",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

/// Immutable computation graph. Nodes are stored in construction order, which
/// is a topological order: every input id is smaller than its consumer's id.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: BTreeMap<String, NodeId>,
    outputs: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs });
        id
    }

    /// Declares (or returns the existing) named leaf.
    pub fn leaf(&mut self, name: &str) -> NodeId {
        if let Some(id) = self.leaves.get(name) {
            return *id;
        }
        let id = self.push(Op::Leaf(name.to_string()), Vec::new());
        self.leaves.insert(name.to_string(), id);
        id
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> NodeId {
        self.push(Op::Conv2d { stride }, vec![x, w, b])
    }

    pub fn max_pool2d(&mut self, x: NodeId, size: usize, stride: usize) -> NodeId {
        self.push(Op::MaxPool2d { size, stride }, vec![x])
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Dense, vec![x, w, b])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu, vec![x])
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Softmax, vec![x])
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        self.push(Op::Concat, xs.to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul, vec![a, b])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(c), vec![x])
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: NodeId) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy, vec![logits, target])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum, vec![x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean, vec![x])
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Flatten, vec![x])
    }

    pub fn slice(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        self.push(Op::Slice { start, end }, vec![x])
    }

    pub fn gather(&mut self, x: NodeId, rows: Vec<usize>) -> NodeId {
        self.push(Op::Gather(rows), vec![x])
    }

    /// Registers `node` as a named output returned by [`forward`].
    pub fn output(&mut self, name: &str, node: NodeId) {
        self.outputs.insert(name.to_string(), node);
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_id(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    pub fn leaf_names(&self) -> impl Iterator<Item = &str> {
        self.leaves.keys().map(String::as_str)
    }

    pub fn output_id(&self, name: &str) -> Option<NodeId> {
        self.outputs.get(name).copied()
    }
}

/// Leaf bindings for a forward pass.
pub type Bindings<'k, 'a> = HashMap<&'k str, &'a Tensor>;

/// Per-call evaluation state of a graph. Holds node values after
/// [`Executor::run`] so gradients can be taken afterwards.
pub struct Executor<'g, 'a> {
    graph: &'g Graph,
    values: Option<Vec<Cow<'a, Tensor>>>,
    argmax: HashMap<usize, Vec<usize>>,
}

#[cfg(test)]
thread_local! {
    /// Mutation hook for gradient-check tests: doubles the relu backward rule.
    pub(crate) static CORRUPT_RELU_BACKWARD: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Gradients keyed by leaf name.
pub type Gradients = BTreeMap<String, Tensor>;

fn mismatch(node: usize, op: &Op, detail: impl Into<String>) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        node,
        op: op.name(),
        detail: detail.into(),
    }
}

impl<'g, 'a> Executor<'g, 'a> {
    pub fn new(graph: &'g Graph) -> Self {
        Self {
            graph,
            values: None,
            argmax: HashMap::new(),
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// Evaluates every node.
    pub fn run(&mut self, leaves: &Bindings<'_, 'a>) -> Result<(), AutodiffError> {
        let mut values: Vec<Cow<'a, Tensor>> = Vec::with_capacity(self.graph.nodes.len());
        self.argmax.clear();
        for (idx, node) in self.graph.nodes.iter().enumerate() {
            let value = match &node.op {
                Op::Leaf(name) => {
                    let t = leaves
                        .get(name.as_str())
                        .ok_or_else(|| AutodiffError::UnboundLeaf(name.clone()))?;
                    if !t.is_finite() {
                        return Err(AutodiffError::NonFiniteInput(name.clone()));
                    }
                    Cow::Borrowed(*t)
                }
                op => {
                    let inputs: Vec<&Tensor> =
                        node.inputs.iter().map(|i| values[i.0].as_ref()).collect();
                    Cow::Owned(self.eval_op(idx, op, &inputs)?)
                }
            };
            values.push(value);
        }
        self.values = Some(values);
        Ok(())
    }

    fn eval_op(&mut self, idx: usize, op: &Op, x: &[&Tensor]) -> Result<Tensor, AutodiffError> {
        let out = match op {
            Op::Leaf(_) => unreachable!(),
            Op::Conv2d { stride } => {
                let (g, batch, filters) = conv_geom(idx, op, x[0], x[1], *stride)?;
                if x[2].shape() != [filters] {
                    return Err(mismatch(idx, op, format!("bias {:?}", x[2].shape())));
                }
                let data = kernels::conv2d_forward(
                    x[0].data(),
                    x[1].data(),
                    x[2].data(),
                    batch,
                    filters,
                    &g,
                );
                Tensor::new(vec![batch, filters, g.out_h, g.out_w], data)?
            }
            Op::MaxPool2d { size, stride } => {
                let g = pool_geom(idx, op, x[0], *size, *stride)?;
                let s = x[0].shape();
                let (data, arg) = kernels::maxpool_forward(x[0].data(), s[0] * s[1], &g);
                self.argmax.insert(idx, arg);
                Tensor::new(vec![s[0], s[1], g.out_h, g.out_w], data)?
            }
            Op::Dense => {
                let (batch, d_in, d_out) = dense_dims(idx, op, x)?;
                let data =
                    kernels::dense_forward(x[0].data(), x[1].data(), x[2].data(), batch, d_in, d_out);
                Tensor::new(vec![batch, d_out], data)?
            }
            Op::Relu => {
                let data = x[0].data().iter().map(|v| v.max(0.0)).collect();
                Tensor::new(x[0].shape().to_vec(), data)?
            }
            Op::Softmax => {
                let k = last_dim(idx, op, x[0])?;
                Tensor::new(x[0].shape().to_vec(), kernels::softmax_rows(x[0].data(), k))?
            }
            Op::Concat => concat_forward(idx, op, x)?,
            Op::Add | Op::Mul => {
                if x[0].shape() != x[1].shape() {
                    return Err(mismatch(
                        idx,
                        op,
                        format!("{:?} vs {:?}", x[0].shape(), x[1].shape()),
                    ));
                }
                let data = x[0]
                    .data()
                    .iter()
                    .zip(x[1].data())
                    .map(|(a, b)| if matches!(op, Op::Add) { a + b } else { a * b })
                    .collect();
                Tensor::new(x[0].shape().to_vec(), data)?
            }
            Op::Scale(c) => {
                let data = x[0].data().iter().map(|v| v * c).collect();
                Tensor::new(x[0].shape().to_vec(), data)?
            }
            Op::SoftmaxCrossEntropy => {
                if x[0].shape() != x[1].shape() {
                    return Err(mismatch(
                        idx,
                        op,
                        format!("logits {:?} vs target {:?}", x[0].shape(), x[1].shape()),
                    ));
                }
                let k = last_dim(idx, op, x[0])?;
                let data = x[0]
                    .data()
                    .chunks(k)
                    .zip(x[1].data().chunks(k))
                    .map(|(z, t)| {
                        let lse = kernels::log_sum_exp(z);
                        -z.iter().zip(t).map(|(zv, tv)| tv * (zv - lse)).sum::<f64>()
                    })
                    .collect();
                let s = x[0].shape();
                Tensor::new(s[..s.len() - 1].to_vec(), data)?
            }
            Op::Sum => Tensor::scalar(x[0].data().iter().sum()),
            Op::Mean => {
                if x[0].is_empty() {
                    return Err(mismatch(idx, op, "mean of empty tensor"));
                }
                Tensor::scalar(x[0].data().iter().sum::<f64>() / x[0].len() as f64)
            }
            Op::Flatten => {
                let s = x[0].shape();
                if s.is_empty() {
                    return Err(mismatch(idx, op, "flatten of scalar"));
                }
                let rest = s[1..].iter().product();
                x[0].clone().reshape(vec![s[0], rest])?
            }
            Op::Slice { start, end } => {
                let k = last_dim(idx, op, x[0])?;
                if start >= end || *end > k {
                    return Err(mismatch(idx, op, format!("slice {start}..{end} of {k}")));
                }
                let w = end - start;
                let data: Vec<f64> = x[0]
                    .data()
                    .chunks(k)
                    .flat_map(|r| r[*start..*end].iter().copied())
                    .collect();
                let mut shape = x[0].shape().to_vec();
                *shape.last_mut().unwrap() = w;
                Tensor::new(shape, data)?
            }
            Op::Gather(rows) => {
                let s = x[0].shape();
                if s.is_empty() {
                    return Err(mismatch(idx, op, "gather of scalar"));
                }
                let row_len: usize = s[1..].iter().product();
                let mut data = Vec::with_capacity(rows.len() * row_len);
                for &r in rows {
                    if r >= s[0] {
                        return Err(mismatch(idx, op, format!("row {r} of {}", s[0])));
                    }
                    data.extend_from_slice(&x[0].data()[r * row_len..(r + 1) * row_len]);
                }
                let mut shape = s.to_vec();
                shape[0] = rows.len();
                Tensor::new(shape, data)?
            }
        };
        Ok(out)
    }

    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        self.values.as_ref().map(|v| v[node.0].as_ref())
    }

    pub fn output(&self, name: &str) -> Option<&Tensor> {
        self.graph.output_id(name).and_then(|id| self.value(id))
    }

    /// Gradient of a scalar node with respect to every leaf. Leaves with no
    /// path to `output` receive zeros.
    pub fn backward(&self, output: NodeId) -> Result<Gradients, AutodiffError> {
        let names: Vec<&str> = self.graph.leaf_names().collect();
        self.backward_leaves(output, &names)
    }

    /// Gradient of a scalar node with respect to the named leaves only.
    pub fn backward_leaves(
        &self,
        output: NodeId,
        wrt: &[&str],
    ) -> Result<Gradients, AutodiffError> {
        let values = self.values.as_ref().ok_or(AutodiffError::BackwardBeforeForward)?;
        let shape = values[output.0].shape();
        if !shape.is_empty() {
            return Err(AutodiffError::NonScalarOutput(shape.to_vec()));
        }
        self.backward_seeded(&[(output, Tensor::scalar(1.0))], wrt)
    }

    /// Vector-Jacobian product: propagates the given seed gradients (one per
    /// seeded node, same shape as that node) back to the named leaves.
    pub fn backward_seeded(
        &self,
        seeds: &[(NodeId, Tensor)],
        wrt: &[&str],
    ) -> Result<Gradients, AutodiffError> {
        let values = self.values.as_ref().ok_or(AutodiffError::BackwardBeforeForward)?;
        let nodes = &self.graph.nodes;
        let mut needs = vec![false; nodes.len()];
        for name in wrt {
            let id = self
                .graph
                .leaf_id(name)
                .ok_or_else(|| AutodiffError::UnknownLeaf(name.to_string()))?;
            needs[id.0] = true;
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.inputs.iter().any(|j| needs[j.0]) {
                needs[i] = true;
            }
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        for (id, seed) in seeds {
            if seed.shape() != values[id.0].shape() {
                return Err(mismatch(id.0, &nodes[id.0].op, "seed shape"));
            }
            accumulate(&mut grads[id.0], seed.clone());
        }
        for idx in (0..nodes.len()).rev() {
            if !needs[idx] {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if matches!(node.op, Op::Leaf(_)) {
                grads[idx] = Some(g);
                continue;
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|i| values[i.0].as_ref()).collect();
            let need: Vec<bool> = node.inputs.iter().map(|i| needs[i.0]).collect();
            let input_grads = self.backward_op(idx, &node.op, &inputs, &values[idx], &g, &need)?;
            for (inp, ig) in node.inputs.iter().zip(input_grads) {
                if let Some(ig) = ig {
                    accumulate(&mut grads[inp.0], ig);
                }
            }
        }
        let mut out = Gradients::new();
        for name in wrt {
            let id = self.graph.leaf_id(name).unwrap();
            let g = grads[id.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(values[id.0].shape()));
            out.insert(name.to_string(), g);
        }
        Ok(out)
    }

    fn backward_op(
        &self,
        idx: usize,
        op: &Op,
        x: &[&Tensor],
        y: &Tensor,
        g: &Tensor,
        need: &[bool],
    ) -> Result<Vec<Option<Tensor>>, AutodiffError> {
        let res = match op {
            Op::Leaf(_) => unreachable!(),
            Op::Conv2d { stride } => {
                let (geom, batch, filters) = conv_geom(idx, op, x[0], x[1], *stride)?;
                let cg = kernels::conv2d_backward(
                    x[0].data(),
                    x[1].data(),
                    g.data(),
                    batch,
                    filters,
                    &geom,
                    [need[0], need[1], need[2]],
                );
                vec![
                    cg.dx.map(|d| Tensor::new(x[0].shape().to_vec(), d)).transpose()?,
                    cg.dw.map(|d| Tensor::new(x[1].shape().to_vec(), d)).transpose()?,
                    cg.db.map(|d| Tensor::new(x[2].shape().to_vec(), d)).transpose()?,
                ]
            }
            Op::MaxPool2d { .. } => {
                let arg = &self.argmax[&idx];
                let mut dx = Tensor::zeros(x[0].shape());
                for (o, &src) in arg.iter().enumerate() {
                    dx.data_mut()[src] += g.data()[o];
                }
                vec![Some(dx)]
            }
            Op::Dense => {
                let (batch, d_in, d_out) = dense_dims(idx, op, x)?;
                let dg = kernels::dense_backward(
                    x[0].data(),
                    x[1].data(),
                    g.data(),
                    batch,
                    d_in,
                    d_out,
                    [need[0], need[1], need[2]],
                );
                vec![
                    dg.dx.map(|d| Tensor::new(x[0].shape().to_vec(), d)).transpose()?,
                    dg.dw.map(|d| Tensor::new(x[1].shape().to_vec(), d)).transpose()?,
                    dg.db.map(|d| Tensor::new(x[2].shape().to_vec(), d)).transpose()?,
                ]
            }
            Op::Relu => {
                #[cfg(test)]
                let factor = if CORRUPT_RELU_BACKWARD.with(|c| c.get()) { 2.0 } else { 1.0 };
                #[cfg(not(test))]
                let factor = 1.0;
                let data = x[0]
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(v, gv)| if *v > 0.0 { gv * factor } else { 0.0 })
                    .collect();
                vec![Some(Tensor::new(x[0].shape().to_vec(), data)?)]
            }
            Op::Softmax => {
                let k = last_dim(idx, op, x[0])?;
                let mut dx = vec![0.0; g.len()];
                for ((p, gr), dr) in y.data().chunks(k).zip(g.data().chunks(k)).zip(dx.chunks_mut(k)) {
                    let s: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for i in 0..k {
                        dr[i] = p[i] * (gr[i] - s);
                    }
                }
                vec![Some(Tensor::new(x[0].shape().to_vec(), dx)?)]
            }
            Op::Concat => {
                let total = *y.shape().last().unwrap();
                let mut offset = 0;
                let mut out = Vec::with_capacity(x.len());
                for (t, &nd) in x.iter().zip(need) {
                    let w = *t.shape().last().unwrap();
                    if nd {
                        let data: Vec<f64> = g
                            .data()
                            .chunks(total)
                            .flat_map(|r| r[offset..offset + w].iter().copied())
                            .collect();
                        out.push(Some(Tensor::new(t.shape().to_vec(), data)?));
                    } else {
                        out.push(None);
                    }
                    offset += w;
                }
                out
            }
            Op::Add => vec![
                need[0].then(|| g.clone()),
                need[1].then(|| g.clone()),
            ],
            Op::Mul => {
                let prod = |other: &Tensor| -> Result<Tensor, AutodiffError> {
                    let d = other.data().iter().zip(g.data()).map(|(a, b)| a * b).collect();
                    Tensor::new(g.shape().to_vec(), d)
                };
                vec![
                    need[0].then(|| prod(x[1])).transpose()?,
                    need[1].then(|| prod(x[0])).transpose()?,
                ]
            }
            Op::Scale(c) => {
                let d = g.data().iter().map(|v| v * c).collect();
                vec![Some(Tensor::new(g.shape().to_vec(), d)?)]
            }
            Op::SoftmaxCrossEntropy => {
                let k = last_dim(idx, op, x[0])?;
                let mut dz = vec![0.0; x[0].len()];
                let mut dt = vec![0.0; x[0].len()];
                let rows = x[0].data().chunks(k).zip(x[1].data().chunks(k));
                for (r, (z, t)) in rows.enumerate() {
                    let gr = g.data()[r];
                    let lse = kernels::log_sum_exp(z);
                    let tsum: f64 = t.iter().sum();
                    for i in 0..k {
                        let logp = z[i] - lse;
                        dz[r * k + i] = gr * (tsum * logp.exp() - t[i]);
                        dt[r * k + i] = -gr * logp;
                    }
                }
                vec![
                    need[0].then(|| Tensor::new(x[0].shape().to_vec(), dz)).transpose()?,
                    need[1].then(|| Tensor::new(x[1].shape().to_vec(), dt)).transpose()?,
                ]
            }
            Op::Sum => vec![Some(Tensor::full(x[0].shape(), g.item()))],
            Op::Mean => vec![Some(Tensor::full(x[0].shape(), g.item() / x[0].len() as f64))],
            Op::Flatten => vec![Some(g.clone().reshape(x[0].shape().to_vec())?)],
            Op::Slice { start, end } => {
                let k = *x[0].shape().last().unwrap();
                let w = end - start;
                let mut dx = Tensor::zeros(x[0].shape());
                for (dr, gr) in dx.data_mut().chunks_mut(k).zip(g.data().chunks(w)) {
                    dr[*start..*end].copy_from_slice(gr);
                }
                vec![Some(dx)]
            }
            Op::Gather(rows) => {
                let s = x[0].shape();
                let row_len: usize = s[1..].iter().product();
                let mut dx = Tensor::zeros(s);
                for (i, &r) in rows.iter().enumerate() {
                    kernels::axpy(
                        1.0,
                        &g.data()[i * row_len..(i + 1) * row_len],
                        &mut dx.data_mut()[r * row_len..(r + 1) * row_len],
                    );
                }
                vec![Some(dx)]
            }
        };
        Ok(res)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn last_dim(idx: usize, op: &Op, t: &Tensor) -> Result<usize, AutodiffError> {
    match t.shape().last() {
        Some(&k) if k > 0 => Ok(k),
        _ => Err(mismatch(idx, op, format!("needs a non-empty last axis, got {:?}", t.shape()))),
    }
}

fn conv_geom(
    idx: usize,
    op: &Op,
    x: &Tensor,
    w: &Tensor,
    stride: usize,
) -> Result<(ConvGeom, usize, usize), AutodiffError> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || stride == 0 {
        return Err(mismatch(idx, op, format!("input {xs:?}, weight {ws:?}, stride {stride}")));
    }
    let k = ws[2];
    if xs[2] < k || xs[3] < k {
        return Err(mismatch(idx, op, format!("kernel {k} larger than input {xs:?}")));
    }
    let g = ConvGeom {
        channels: xs[1],
        height: xs[2],
        width: xs[3],
        kernel: k,
        stride,
        out_h: (xs[2] - k) / stride + 1,
        out_w: (xs[3] - k) / stride + 1,
    };
    Ok((g, xs[0], ws[0]))
}

fn pool_geom(
    idx: usize,
    op: &Op,
    x: &Tensor,
    size: usize,
    stride: usize,
) -> Result<ConvGeom, AutodiffError> {
    let xs = x.shape();
    if xs.len() != 4 || size == 0 || stride == 0 || xs[2] < size || xs[3] < size {
        return Err(mismatch(idx, op, format!("input {xs:?}, window {size}, stride {stride}")));
    }
    Ok(ConvGeom {
        channels: 1,
        height: xs[2],
        width: xs[3],
        kernel: size,
        stride,
        out_h: (xs[2] - size) / stride + 1,
        out_w: (xs[3] - size) / stride + 1,
    })
}

fn dense_dims(idx: usize, op: &Op, x: &[&Tensor]) -> Result<(usize, usize, usize), AutodiffError> {
    let (xs, ws, bs) = (x[0].shape(), x[1].shape(), x[2].shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
        return Err(mismatch(
            idx,
            op,
            format!("input {xs:?}, weight {ws:?}, bias {bs:?}"),
        ));
    }
    Ok((xs[0], ws[0], ws[1]))
}

fn concat_forward(idx: usize, op: &Op, x: &[&Tensor]) -> Result<Tensor, AutodiffError> {
    if x.is_empty() {
        return Err(mismatch(idx, op, "no inputs"));
    }
    let lead = &x[0].shape()[..x[0].rank().saturating_sub(1)];
    if x[0].rank() == 0 {
        return Err(mismatch(idx, op, "concat of scalars"));
    }
    for t in x {
        if t.rank() != x[0].rank() || &t.shape()[..t.rank() - 1] != lead {
            return Err(mismatch(
                idx,
                op,
                format!("{:?} vs {:?}", x[0].shape(), t.shape()),
            ));
        }
    }
    let rows: usize = lead.iter().product();
    let widths: Vec<usize> = x.iter().map(|t| *t.shape().last().unwrap()).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (t, &w) in x.iter().zip(&widths) {
            data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(shape, data)
}

/// Evaluates `graph` on `leaves` and returns every registered output.
pub fn forward(graph: &Graph, leaves: &Bindings<'_, '_>) -> Result<BTreeMap<String, Tensor>, AutodiffError> {
    let mut exec = Executor::new(graph);
    exec.run(leaves)?;
    Ok(graph
        .outputs
        .iter()
        .map(|(name, id)| (name.clone(), exec.value(*id).unwrap().clone()))
        .collect())
}

/// Gradient of the scalar `output` with respect to every leaf of `graph`.
pub fn backward(
    graph: &Graph,
    leaves: &Bindings<'_, '_>,
    output: NodeId,
) -> Result<Gradients, AutodiffError> {
    let mut exec = Executor::new(graph);
    exec.run(leaves)?;
    exec.backward(output)
}
