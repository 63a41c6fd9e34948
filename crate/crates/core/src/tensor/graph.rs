use std::collections::BTreeMap;

use thiserror::Error;

use super::{matmul_into, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node {node} ({op}): shape mismatch: {detail}")]
    ShapeMismatch { node: usize, op: &'static str, detail: String },
    #[error("leaf `{0}` is not bound")]
    Unbound(String),
    #[error("graph has not been evaluated")]
    NotEvaluated,
    #[error("graph has no nodes")]
    Empty,
    #[error("seed shape {seed:?} does not match root shape {root:?}")]
    SeedShape { seed: Vec<usize>, root: Vec<usize> },
    #[error("finite-difference check needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("graph has no parameter named `{0}`")]
    UnknownParameter(String),
    #[error("finite-difference epsilon must be positive, got {0}")]
    BadEpsilon(f64),
}

/// Index of a node inside its [`ComputeGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation recorded at a node.
///
/// Element-wise binary ops accept a right-hand side that is either the same
/// shape, a single element, a column `[r, 1]` against `[r, c]`, or a row
/// `[1, c]` against `[r, c]`. Nothing else broadcasts.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Param(String),
    Input(String),
    Constant,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    /// `[m, k] x [k, n] -> [m, n]`.
    MatMul,
    /// Input `[c_in, len]`, kernel `[c_out, c_in, k]`, zero "same" padding.
    Conv1d {
        dilation: usize,
    },
    /// `[rows, len] -> [rows * frames, window]`, frames taken without padding.
    Frame {
        window: usize,
        hop: usize,
    },
    /// Rows `start..start + len` of a 2-D tensor.
    SliceRows {
        start: usize,
        len: usize,
    },
    Concat {
        axis: usize,
    },
    Transpose,
    Relu,
    Tanh,
    /// `ln(max(u, floor))`.
    LogFloor(f64),
    Abs,
    Sqrt,
    Square,
    Sum,
    Mean,
    /// Mean over the last axis: `[r, c] -> [r, 1]`.
    RowMean,
    /// `-ln softmax(logits)[target]` for a logit vector.
    SoftmaxCrossEntropy {
        target: usize,
    },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Param(_) => "param",
            OpKind::Input(_) => "input",
            OpKind::Constant => "constant",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::MatMul => "matmul",
            OpKind::Conv1d { .. } => "conv1d",
            OpKind::Frame { .. } => "frame",
            OpKind::SliceRows { .. } => "slice_rows",
            OpKind::Concat { .. } => "concat",
            OpKind::Transpose => "transpose",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::LogFloor(_) => "log_floor",
            OpKind::Abs => "abs",
            OpKind::Sqrt => "sqrt",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::RowMean => "row_mean",
            OpKind::SoftmaxCrossEntropy { .. } => "softmax_xent",
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, OpKind::Param(_) | OpKind::Input(_) | OpKind::Constant)
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: OpKind,
    inputs: Vec<NodeId>,
    constant: Option<Tensor>,
    value: Option<Tensor>,
}

/// Layered name lookup used to bind parameter and input leaves. Earlier layers
/// win.
#[derive(Default, Clone)]
pub struct Bindings<'a> {
    layers: Vec<&'a BTreeMap<String, Tensor>>,
}

impl<'a> Bindings<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, map: &'a BTreeMap<String, Tensor>) -> Self {
        self.layers.push(map);
        self
    }

    pub fn get(&self, name: &str) -> Option<&'a Tensor> {
        self.layers.iter().find_map(|m| m.get(name))
    }
}

/// Define-by-run expression graph. Nodes are appended in construction order,
/// which is a topological order, so the graph is acyclic by construction. The
/// last node added is the root.
#[derive(Debug, Clone, Default)]
pub struct ComputeGraph {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Tensor>>>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Broadcast {
    Same,
    Scalar,
    Column,
    Row,
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Option<Broadcast> {
    if a == b {
        return Some(Broadcast::Same);
    }
    if b.iter().product::<usize>() == 1 {
        return Some(Broadcast::Scalar);
    }
    match (a, b) {
        ([r, _], [rb, 1]) if r == rb => Some(Broadcast::Column),
        ([_, c], [1, cb]) if c == cb => Some(Broadcast::Row),
        _ => None,
    }
}

/// Index into the right-hand operand for flat position `i` of the left one.
#[inline]
fn rhs_index(kind: Broadcast, i: usize, cols: usize) -> usize {
    match kind {
        Broadcast::Same => i,
        Broadcast::Scalar => 0,
        Broadcast::Column => i / cols,
        Broadcast::Row => i % cols,
    }
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

fn as_2d(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [n] => Some((1, *n)),
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

impl ComputeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: OpKind, inputs: Vec<NodeId>, constant: Option<Tensor>) -> NodeId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        self.grads = None;
        self.nodes.push(Node { op, inputs, constant, value: None });
        NodeId(self.nodes.len() - 1)
    }

    fn find_leaf(&self, op: &OpKind) -> Option<NodeId> {
        self.nodes.iter().position(|n| &n.op == op).map(NodeId)
    }

    /// Trainable leaf bound by name. Repeated calls with the same name return
    /// the same node.
    pub fn param(&mut self, name: &str) -> NodeId {
        let op = OpKind::Param(name.to_string());
        self.find_leaf(&op).unwrap_or_else(|| self.push(op, vec![], None))
    }

    /// Non-trainable leaf bound by name.
    pub fn input(&mut self, name: &str) -> NodeId {
        let op = OpKind::Input(name.to_string());
        self.find_leaf(&op).unwrap_or_else(|| self.push(op, vec![], None))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(OpKind::Constant, vec![], Some(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(OpKind::Add, vec![a, b], None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(OpKind::Sub, vec![a, b], None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(OpKind::Mul, vec![a, b], None)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(OpKind::Scale(factor), vec![a], None)
    }

    pub fn add_scalar(&mut self, a: NodeId, value: f64) -> NodeId {
        self.push(OpKind::AddScalar(value), vec![a], None)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(OpKind::MatMul, vec![a, b], None)
    }

    pub fn conv1d(&mut self, x: NodeId, kernel: NodeId, dilation: usize) -> NodeId {
        self.push(OpKind::Conv1d { dilation }, vec![x, kernel], None)
    }

    pub fn frame(&mut self, x: NodeId, window: usize, hop: usize) -> NodeId {
        self.push(OpKind::Frame { window, hop }, vec![x], None)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        self.push(OpKind::SliceRows { start, len }, vec![x], None)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        self.push(OpKind::Concat { axis }, parts.to_vec(), None)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(OpKind::Transpose, vec![a], None)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(OpKind::Relu, vec![a], None)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(OpKind::Tanh, vec![a], None)
    }

    pub fn log_floor(&mut self, a: NodeId, floor: f64) -> NodeId {
        self.push(OpKind::LogFloor(floor), vec![a], None)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.push(OpKind::Abs, vec![a], None)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.push(OpKind::Sqrt, vec![a], None)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(OpKind::Square, vec![a], None)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(OpKind::Sum, vec![a], None)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(OpKind::Mean, vec![a], None)
    }

    pub fn row_mean(&mut self, a: NodeId) -> NodeId {
        self.push(OpKind::RowMean, vec![a], None)
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> NodeId {
        self.push(OpKind::SoftmaxCrossEntropy { target }, vec![logits], None)
    }

    pub fn root(&self) -> Option<NodeId> {
        (!self.nodes.is_empty()).then(|| NodeId(self.nodes.len() - 1))
    }

    pub fn op(&self, id: NodeId) -> &OpKind {
        &self.nodes[id.0].op
    }

    /// Cached value of a node after [`evaluate`](Self::evaluate).
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].value.as_ref()
    }

    /// Gradient of the root with respect to any node, after backpropagation.
    pub fn gradient(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.as_ref()?.get(id.0)?.as_ref()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                OpKind::Param(name) => Some(name.clone()),
                _ => None,
            })
            .collect()
    }

    /// Binds every leaf and computes all node values, returning the root.
    pub fn evaluate(&mut self, bindings: &Bindings<'_>) -> Result<Tensor, GraphError> {
        for node in &mut self.nodes {
            let value = match &node.op {
                OpKind::Param(name) | OpKind::Input(name) => {
                    bindings.get(name).cloned().ok_or_else(|| GraphError::Unbound(name.clone()))?
                }
                OpKind::Constant => node.constant.clone().expect("constant node without value"),
                _ => continue,
            };
            node.value = Some(value);
        }
        self.forward()
    }

    /// Recomputes every non-leaf node from the currently cached leaf values.
    fn forward(&mut self) -> Result<Tensor, GraphError> {
        if self.nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        self.grads = None;
        for idx in 0..self.nodes.len() {
            if self.nodes[idx].op.is_leaf() {
                continue;
            }
            let out = self.compute(idx)?;
            self.nodes[idx].value = Some(out);
        }
        Ok(self.nodes.last().and_then(|n| n.value.clone()).expect("root evaluated"))
    }

    fn input_value(&self, idx: usize, k: usize) -> &Tensor {
        let id = self.nodes[idx].inputs[k];
        self.nodes[id.0].value.as_ref().expect("inputs evaluated before consumers")
    }

    fn compute(&self, idx: usize) -> Result<Tensor, GraphError> {
        let node = &self.nodes[idx];
        let mismatch = |detail: String| GraphError::ShapeMismatch { node: idx, op: node.op.name(), detail };
        let out = match &node.op {
            OpKind::Param(_) | OpKind::Input(_) | OpKind::Constant => unreachable!(),
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let a = self.input_value(idx, 0);
                let b = self.input_value(idx, 1);
                let kind = broadcast_kind(a.shape(), b.shape())
                    .ok_or_else(|| mismatch(format!("cannot combine {:?} with {:?}", a.shape(), b.shape())))?;
                let cols = last_dim(a.shape());
                let bd = b.data();
                let data: Vec<f64> = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &av)| {
                        let bv = bd[rhs_index(kind, i, cols)];
                        match node.op {
                            OpKind::Add => av + bv,
                            OpKind::Sub => av - bv,
                            _ => av * bv,
                        }
                    })
                    .collect();
                Tensor::new(a.shape().to_vec(), data)
            }
            OpKind::Scale(f) => self.input_value(idx, 0).map(|v| v * f),
            OpKind::AddScalar(s) => self.input_value(idx, 0).map(|v| v + s),
            OpKind::MatMul => {
                let a = self.input_value(idx, 0);
                let b = self.input_value(idx, 1);
                let (m, k) = as_2d(a.shape())
                    .filter(|_| a.shape().len() == 2)
                    .ok_or_else(|| mismatch(format!("left operand must be 2-D, got {:?}", a.shape())))?;
                let (k2, n) = as_2d(b.shape())
                    .filter(|_| b.shape().len() == 2)
                    .ok_or_else(|| mismatch(format!("right operand must be 2-D, got {:?}", b.shape())))?;
                if k != k2 {
                    return Err(mismatch(format!("{:?} x {:?}", a.shape(), b.shape())));
                }
                let mut out = vec![0.0; m * n];
                matmul_into(a.data(), b.data(), &mut out, m, k, n);
                Tensor::matrix(m, n, out)
            }
            OpKind::Conv1d { dilation } => {
                let x = self.input_value(idx, 0);
                let w = self.input_value(idx, 1);
                let (c_in, len) = match x.shape() {
                    [c, l] => (*c, *l),
                    s => return Err(mismatch(format!("input must be [c_in, len], got {s:?}"))),
                };
                let (c_out, k) = match w.shape() {
                    [o, i, k] if *i == c_in => (*o, *k),
                    s => return Err(mismatch(format!("kernel must be [c_out, {c_in}, k], got {s:?}"))),
                };
                let mut out = vec![0.0; c_out * len];
                conv1d_forward(x.data(), w.data(), &mut out, c_in, c_out, len, k, *dilation);
                Tensor::matrix(c_out, len, out)
            }
            OpKind::Frame { window, hop } => {
                let x = self.input_value(idx, 0);
                let (rows, len) =
                    as_2d(x.shape()).ok_or_else(|| mismatch(format!("expected 1-D or 2-D, got {:?}", x.shape())))?;
                if *window == 0 || *hop == 0 || *window > len {
                    return Err(mismatch(format!("window {window} / hop {hop} invalid for length {len}")));
                }
                let frames = (len - window) / hop + 1;
                let mut out = Vec::with_capacity(rows * frames * window);
                for r in 0..rows {
                    let row = &x.data()[r * len..(r + 1) * len];
                    for f in 0..frames {
                        out.extend_from_slice(&row[f * hop..f * hop + window]);
                    }
                }
                Tensor::matrix(rows * frames, *window, out)
            }
            OpKind::SliceRows { start, len } => {
                let x = self.input_value(idx, 0);
                let (rows, cols) = match x.shape() {
                    [r, c] => (*r, *c),
                    s => return Err(mismatch(format!("expected 2-D, got {s:?}"))),
                };
                if *len == 0 || start + len > rows {
                    return Err(mismatch(format!("rows {start}..{} of {rows}", start + len)));
                }
                Tensor::matrix(*len, cols, x.data()[start * cols..(start + len) * cols].to_vec())
            }
            OpKind::Concat { axis } => {
                let parts: Vec<&Tensor> = (0..node.inputs.len()).map(|k| self.input_value(idx, k)).collect();
                concat_forward(&parts, *axis).map_err(mismatch)?
            }
            OpKind::Transpose => {
                let x = self.input_value(idx, 0);
                if x.shape().len() != 2 {
                    return Err(mismatch(format!("expected 2-D, got {:?}", x.shape())));
                }
                x.transpose()
            }
            OpKind::Relu => self.input_value(idx, 0).map(|v| v.max(0.0)),
            OpKind::Tanh => self.input_value(idx, 0).map(f64::tanh),
            OpKind::LogFloor(floor) => self.input_value(idx, 0).map(|v| v.max(*floor).ln()),
            OpKind::Abs => self.input_value(idx, 0).map(f64::abs),
            OpKind::Sqrt => self.input_value(idx, 0).map(|v| v.max(0.0).sqrt()),
            OpKind::Square => self.input_value(idx, 0).map(|v| v * v),
            OpKind::Sum => Tensor::scalar(self.input_value(idx, 0).sum()),
            OpKind::Mean => {
                let x = self.input_value(idx, 0);
                Tensor::scalar(x.sum() / x.len() as f64)
            }
            OpKind::RowMean => {
                let x = self.input_value(idx, 0);
                let (rows, cols) =
                    as_2d(x.shape()).ok_or_else(|| mismatch(format!("expected 1-D or 2-D, got {:?}", x.shape())))?;
                let data = x.data().chunks(cols).map(|row| row.iter().sum::<f64>() / cols as f64).collect();
                Tensor::new(vec![rows, 1], data)
            }
            OpKind::SoftmaxCrossEntropy { target } => {
                let x = self.input_value(idx, 0);
                if *target >= x.len() {
                    return Err(mismatch(format!("target {target} out of {} logits", x.len())));
                }
                let max = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + x.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                Tensor::scalar(lse - x.data()[*target])
            }
        };
        Ok(out)
    }

    /// Reverse pass from the root, seeded with `seed`. Returns the gradient for
    /// every parameter leaf (zeros for parameters the root does not depend on).
    pub fn backpropagate(&mut self, seed: &Tensor) -> Result<BTreeMap<String, Tensor>, GraphError> {
        let root = self.root().ok_or(GraphError::Empty)?;
        let root_value = self.nodes[root.0].value.as_ref().ok_or(GraphError::NotEvaluated)?;
        if root_value.shape() != seed.shape() {
            return Err(GraphError::SeedShape { seed: seed.shape().to_vec(), root: root_value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed.clone());
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut out = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let OpKind::Param(name) = &node.op {
                let value = node.value.as_ref().ok_or(GraphError::NotEvaluated)?;
                let g = grads[idx].clone().unwrap_or_else(|| Tensor::zeros(value.shape()));
                out.insert(name.clone(), g);
            }
        }
        self.grads = Some(grads);
        Ok(out)
    }

    fn backward_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = node.value.as_ref().expect("evaluated");
        let inputs = &node.inputs;
        let accumulate = |grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor| match &mut grads[id.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        };
        let unary = |f: &dyn Fn(f64, f64, f64) -> f64| {
            let x = self.input_value(idx, 0);
            let data = x.data().iter().zip(out.data()).zip(g.data()).map(|((&xv, &yv), &gv)| f(xv, yv, gv)).collect();
            Tensor::new(x.shape().to_vec(), data)
        };
        match &node.op {
            OpKind::Param(_) | OpKind::Input(_) | OpKind::Constant => {}
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let a = self.input_value(idx, 0);
                let b = self.input_value(idx, 1);
                let kind = broadcast_kind(a.shape(), b.shape()).expect("checked in forward");
                let cols = last_dim(a.shape());
                let mut ga = vec![0.0; a.len()];
                let mut gb = vec![0.0; b.len()];
                for (i, &gv) in g.data().iter().enumerate() {
                    let j = rhs_index(kind, i, cols);
                    match node.op {
                        OpKind::Add => {
                            ga[i] = gv;
                            gb[j] += gv;
                        }
                        OpKind::Sub => {
                            ga[i] = gv;
                            gb[j] -= gv;
                        }
                        _ => {
                            ga[i] = gv * b.data()[j];
                            gb[j] += gv * a.data()[i];
                        }
                    }
                }
                accumulate(grads, inputs[0], Tensor::new(a.shape().to_vec(), ga));
                accumulate(grads, inputs[1], Tensor::new(b.shape().to_vec(), gb));
            }
            OpKind::Scale(f) => accumulate(grads, inputs[0], g.map(|v| v * f)),
            OpKind::AddScalar(_) => accumulate(grads, inputs[0], g.clone()),
            OpKind::MatMul => {
                let a = self.input_value(idx, 0);
                let b = self.input_value(idx, 1);
                let (m, k) = as_2d(a.shape()).unwrap();
                let (_, n) = as_2d(b.shape()).unwrap();
                // dA = G B^T, dB = A^T G
                let bt = b.transpose();
                let mut ga = vec![0.0; m * k];
                matmul_into(g.data(), bt.data(), &mut ga, m, n, k);
                let at = a.transpose();
                let mut gb = vec![0.0; k * n];
                matmul_into(at.data(), g.data(), &mut gb, k, m, n);
                accumulate(grads, inputs[0], Tensor::new(a.shape().to_vec(), ga));
                accumulate(grads, inputs[1], Tensor::new(b.shape().to_vec(), gb));
            }
            OpKind::Conv1d { dilation } => {
                let x = self.input_value(idx, 0);
                let w = self.input_value(idx, 1);
                let (c_in, len) = (x.shape()[0], x.shape()[1]);
                let (c_out, k) = (w.shape()[0], w.shape()[2]);
                let mut gx = vec![0.0; x.len()];
                let mut gw = vec![0.0; w.len()];
                conv1d_backward(x.data(), w.data(), g.data(), &mut gx, &mut gw, c_in, c_out, len, k, *dilation);
                accumulate(grads, inputs[0], Tensor::new(x.shape().to_vec(), gx));
                accumulate(grads, inputs[1], Tensor::new(w.shape().to_vec(), gw));
            }
            OpKind::Frame { window, hop } => {
                let x = self.input_value(idx, 0);
                let (rows, len) = as_2d(x.shape()).unwrap();
                let frames = (len - window) / hop + 1;
                let mut gx = vec![0.0; x.len()];
                for r in 0..rows {
                    for f in 0..frames {
                        let src = &g.data()[(r * frames + f) * window..(r * frames + f + 1) * window];
                        let dst = &mut gx[r * len + f * hop..r * len + f * hop + window];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                accumulate(grads, inputs[0], Tensor::new(x.shape().to_vec(), gx));
            }
            OpKind::SliceRows { start, .. } => {
                let x = self.input_value(idx, 0);
                let cols = x.shape()[1];
                let mut gx = vec![0.0; x.len()];
                gx[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                accumulate(grads, inputs[0], Tensor::new(x.shape().to_vec(), gx));
            }
            OpKind::Concat { axis } => {
                let parts: Vec<&Tensor> = (0..inputs.len()).map(|k| self.input_value(idx, k)).collect();
                for (k, piece) in concat_backward(&parts, *axis, g).into_iter().enumerate() {
                    accumulate(grads, inputs[k], piece);
                }
            }
            OpKind::Transpose => accumulate(grads, inputs[0], g.transpose()),
            OpKind::Relu => accumulate(grads, inputs[0], unary(&|x, _, gv| if x > 0.0 { gv } else { 0.0 })),
            OpKind::Tanh => accumulate(grads, inputs[0], unary(&|_, y, gv| gv * (1.0 - y * y))),
            OpKind::LogFloor(floor) => {
                let floor = *floor;
                accumulate(grads, inputs[0], unary(&|x, _, gv| if x > floor { gv / x } else { 0.0 }))
            }
            OpKind::Abs => accumulate(
                grads,
                inputs[0],
                unary(&|x, _, gv| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
            ),
            OpKind::Sqrt => accumulate(grads, inputs[0], unary(&|_, y, gv| if y > 0.0 { gv * 0.5 / y } else { 0.0 })),
            OpKind::Square => accumulate(grads, inputs[0], unary(&|x, _, gv| 2.0 * x * gv)),
            OpKind::Sum => {
                let x = self.input_value(idx, 0);
                accumulate(grads, inputs[0], Tensor::filled(x.shape(), g.data()[0]))
            }
            OpKind::Mean => {
                let x = self.input_value(idx, 0);
                let v = g.data()[0] / x.len() as f64;
                accumulate(grads, inputs[0], Tensor::filled(x.shape(), v))
            }
            OpKind::RowMean => {
                let x = self.input_value(idx, 0);
                let cols = last_dim(x.shape());
                let data = (0..x.len()).map(|i| g.data()[i / cols] / cols as f64).collect();
                accumulate(grads, inputs[0], Tensor::new(x.shape().to_vec(), data))
            }
            OpKind::SoftmaxCrossEntropy { target } => {
                let x = self.input_value(idx, 0);
                let max = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = x.data().iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let data = exps
                    .iter()
                    .enumerate()
                    .map(|(i, e)| g.data()[0] * (e / total - if i == *target { 1.0 } else { 0.0 }))
                    .collect();
                accumulate(grads, inputs[0], Tensor::new(x.shape().to_vec(), data))
            }
        }
    }

    /// Central-difference check of the parameter `name` against backprop over
    /// every coordinate. Returns the largest relative error, using
    /// `max(|a|, |b|, 1e-8)` as the denominator.
    pub fn finite_difference_check(&mut self, name: &str, epsilon: f64) -> Result<f64, GraphError> {
        let n = self.param_value(name)?.len();
        let coords: Vec<usize> = (0..n).collect();
        self.finite_difference_check_coords(name, epsilon, &coords)
    }

    /// As [`finite_difference_check`](Self::finite_difference_check) but only
    /// over the listed flat coordinates.
    pub fn finite_difference_check_coords(
        &mut self,
        name: &str,
        epsilon: f64,
        coords: &[usize],
    ) -> Result<f64, GraphError> {
        if !(epsilon > 0.0) {
            return Err(GraphError::BadEpsilon(epsilon));
        }
        let root = self.root().ok_or(GraphError::Empty)?;
        let root_shape = self.nodes[root.0].value.as_ref().ok_or(GraphError::NotEvaluated)?.shape().to_vec();
        if root_shape.iter().product::<usize>() != 1 {
            return Err(GraphError::NonScalarRoot(root_shape));
        }
        let leaf = self
            .find_leaf(&OpKind::Param(name.to_string()))
            .ok_or_else(|| GraphError::UnknownParameter(name.to_string()))?;
        let analytic = self.backpropagate(&Tensor::filled(&root_shape, 1.0))?;
        let analytic = analytic[name].clone();

        let mut worst = 0.0f64;
        for &c in coords {
            let original = self.leaf_value_mut(leaf).data()[c];
            self.leaf_value_mut(leaf).data_mut()[c] = original + epsilon;
            let plus = self.forward()?.data()[0];
            self.leaf_value_mut(leaf).data_mut()[c] = original - epsilon;
            let minus = self.forward()?.data()[0];
            self.leaf_value_mut(leaf).data_mut()[c] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.data()[c];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
        self.forward()?;
        Ok(worst)
    }

    fn param_value(&self, name: &str) -> Result<&Tensor, GraphError> {
        let leaf = self
            .find_leaf(&OpKind::Param(name.to_string()))
            .ok_or_else(|| GraphError::UnknownParameter(name.to_string()))?;
        self.nodes[leaf.0].value.as_ref().ok_or(GraphError::NotEvaluated)
    }

    fn leaf_value_mut(&mut self, leaf: NodeId) -> &mut Tensor {
        self.nodes[leaf.0].value.as_mut().expect("leaf bound")
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    out: &mut [f64],
    c_in: usize,
    c_out: usize,
    len: usize,
    k: usize,
    dilation: usize,
) {
    let centre = (k - 1) / 2;
    for o in 0..c_out {
        let orow = &mut out[o * len..(o + 1) * len];
        for i in 0..c_in {
            let xrow = &x[i * len..(i + 1) * len];
            for tap in 0..k {
                let wv = w[(o * c_in + i) * k + tap];
                if wv == 0.0 {
                    continue;
                }
                let offset = (tap as isize - centre as isize) * dilation as isize;
                let (t0, t1) = valid_range(offset, len);
                for t in t0..t1 {
                    orow[t] += wv * xrow[(t as isize + offset) as usize];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    gx: &mut [f64],
    gw: &mut [f64],
    c_in: usize,
    c_out: usize,
    len: usize,
    k: usize,
    dilation: usize,
) {
    let centre = (k - 1) / 2;
    for o in 0..c_out {
        let grow = &g[o * len..(o + 1) * len];
        for i in 0..c_in {
            let xrow = &x[i * len..(i + 1) * len];
            for tap in 0..k {
                let widx = (o * c_in + i) * k + tap;
                let wv = w[widx];
                let offset = (tap as isize - centre as isize) * dilation as isize;
                let (t0, t1) = valid_range(offset, len);
                let mut acc = 0.0;
                let gxrow = &mut gx[i * len..(i + 1) * len];
                for t in t0..t1 {
                    let s = (t as isize + offset) as usize;
                    acc += grow[t] * xrow[s];
                    gxrow[s] += wv * grow[t];
                }
                gw[widx] += acc;
            }
        }
    }
}

/// Output positions `t` for which `t + offset` lies inside `0..len`.
fn valid_range(offset: isize, len: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

fn concat_forward(parts: &[&Tensor], axis: usize) -> Result<Tensor, String> {
    let first = parts.first().ok_or_else(|| "nothing to concatenate".to_string())?;
    let rank = first.shape().len();
    if parts.iter().any(|p| p.shape().len() != rank) {
        return Err("all parts must have the same rank".into());
    }
    match (rank, axis) {
        (1, 0) => Ok(Tensor::vector(parts.iter().flat_map(|p| p.data().iter().copied()).collect())),
        (2, 0) => {
            let cols = first.shape()[1];
            if parts.iter().any(|p| p.shape()[1] != cols) {
                return Err(format!("column counts differ for row concat ({cols} expected)"));
            }
            let rows = parts.iter().map(|p| p.shape()[0]).sum();
            Ok(Tensor::matrix(rows, cols, parts.iter().flat_map(|p| p.data().iter().copied()).collect()))
        }
        (2, 1) => {
            let rows = first.shape()[0];
            if parts.iter().any(|p| p.shape()[0] != rows) {
                return Err(format!("row counts differ for column concat ({rows} expected)"));
            }
            let cols: usize = parts.iter().map(|p| p.shape()[1]).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    let c = p.shape()[1];
                    data.extend_from_slice(&p.data()[r * c..(r + 1) * c]);
                }
            }
            Ok(Tensor::matrix(rows, cols, data))
        }
        _ => Err(format!("unsupported concat of rank {rank} along axis {axis}")),
    }
}

fn concat_backward(parts: &[&Tensor], axis: usize, g: &Tensor) -> Vec<Tensor> {
    if axis == 0 {
        let mut offset = 0;
        parts
            .iter()
            .map(|p| {
                let piece = Tensor::new(p.shape().to_vec(), g.data()[offset..offset + p.len()].to_vec());
                offset += p.len();
                piece
            })
            .collect()
    } else {
        let rows = parts[0].shape()[0];
        let total = g.shape()[1];
        let mut col0 = 0;
        parts
            .iter()
            .map(|p| {
                let c = p.shape()[1];
                let mut data = Vec::with_capacity(rows * c);
                for r in 0..rows {
                    data.extend_from_slice(&g.data()[r * total + col0..r * total + col0 + c]);
                }
                col0 += c;
                Tensor::matrix(rows, c, data)
            })
            .collect()
    }
}
