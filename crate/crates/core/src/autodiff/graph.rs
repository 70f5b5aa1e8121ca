//! Define-by-run expression graph with reverse-mode gradients.
//!
//! Nodes are appended as the expression is built, so every parent index is
//! strictly smaller than its child's index and the node list is already a
//! topological order. [`Graph::forward`] evaluates every node (binding any
//! free leaves), [`Graph::backward`] walks the list in reverse and
//! accumulates `∂output/∂node` into per-node gradient slots.
//!
//! ```
//! use maxent_sac::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::scalar(3.0));
//! let y = g.mul(x, x);
//! g.forward(&Default::default()).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.value(y).unwrap().item(), 9.0);
//! assert_eq!(g.grad(x).item(), 6.0);
//! ```

use std::collections::HashMap;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Values for free leaves (created with [`Graph::input`]), or overrides for
/// preset leaves.
pub type Bindings = HashMap<NodeId, Tensor>;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    /// Elementwise minimum; ties route the gradient to the first operand.
    Min,
    Neg,
    Scale(f64),
    Offset(f64),
    /// `[.., c] + [c]`, broadcasting the row over every leading index.
    AddRow,
    /// Tensor times a single-element tensor.
    MulScalar,
    MatMul,
    Relu,
    Tanh,
    Exp,
    Log,
    Square,
    Softplus,
    /// `log(1 − tanh²(u))` evaluated as `2(log 2 − u − softplus(−2u))`.
    LogOneMinusTanhSq,
    Clamp(f64, f64),
    /// Sum over the last axis.
    SumCols,
    /// Max-shifted log-sum-exp over the last axis.
    LogSumExp,
    Sum,
    Mean,
    ConcatCols,
    SliceCols(usize, usize),
    /// Identity in the forward pass, blocks gradients in the backward pass.
    Detach,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Min => "min",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::AddRow => "add_row",
            Op::MulScalar => "mul_scalar",
            Op::MatMul => "matmul",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Square => "square",
            Op::Softplus => "softplus",
            Op::LogOneMinusTanhSq => "log1m_tanh2",
            Op::Clamp(..) => "clamp",
            Op::SumCols => "sum_cols",
            Op::LogSumExp => "log_sum_exp",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::ConcatCols => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Detach => "detach",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    parents: Vec<NodeId>,
    preset: Option<Tensor>,
    value: Option<Tensor>,
    requires_grad: bool,
    label: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    evaluated: bool,
}

/// Numerically stable `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log(1 − tanh²(u))` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn reduced_shape(shape: &[usize]) -> Vec<usize> {
    if shape.len() == 1 {
        vec![1]
    } else {
        let mut s = shape.to_vec();
        *s.last_mut().unwrap() = 1;
        s
    }
}

fn with_last_dim(shape: &[usize], last: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    *s.last_mut().unwrap() = last;
    s
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, preset: Option<Tensor>, leaf_grad: bool) -> NodeId {
        let requires_grad = match op {
            Op::Leaf => leaf_grad,
            Op::Detach => false,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            parents,
            preset,
            value: None,
            requires_grad,
            label: None,
        });
        self.evaluated = false;
        NodeId(self.nodes.len() - 1)
    }

    /// Free leaf; must be bound in every [`Graph::forward`] call.
    pub fn input(&mut self) -> NodeId {
        self.push(Op::Leaf, vec![], None, true)
    }

    /// Leaf with a preset value whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], Some(value), true)
    }

    /// Leaf with a preset value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], Some(value), false)
    }

    /// Attaches a human-readable name used in error messages.
    pub fn label(&mut self, node: NodeId, label: impl Into<String>) -> NodeId {
        self.nodes[node.0].label = Some(label.into());
        node
    }

    fn unary(&mut self, op: Op, a: NodeId) -> NodeId {
        self.push(op, vec![a], None, false)
    }

    fn binary(&mut self, op: Op, a: NodeId, b: NodeId) -> NodeId {
        self.push(op, vec![a, b], None, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Add, a, b)
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Sub, a, b)
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Mul, a, b)
    }
    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Min, a, b)
    }
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        self.binary(Op::AddRow, a, row)
    }
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        self.binary(Op::MulScalar, a, s)
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::MatMul, a, b)
    }
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::ConcatCols, a, b)
    }
    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Neg, a)
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::Scale(c), a)
    }
    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::Offset(c), a)
    }
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Relu, a)
    }
    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Tanh, a)
    }
    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Exp, a)
    }
    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Log, a)
    }
    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Square, a)
    }
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Softplus, a)
    }
    pub fn log_one_minus_tanh_sq(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::LogOneMinusTanhSq, a)
    }
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(Op::Clamp(lo, hi), a)
    }
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::SumCols, a)
    }
    pub fn log_sum_exp(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::LogSumExp, a)
    }
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sum, a)
    }
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Mean, a)
    }
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        self.unary(Op::SliceCols(start, end), a)
    }
    pub fn detach(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Detach, a)
    }

    fn describe(&self, i: usize) -> String {
        match &self.nodes[i].label {
            Some(l) => format!("node {i} ({}, {l})", self.nodes[i].op.name()),
            None => format!("node {i} ({})", self.nodes[i].op.name()),
        }
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("parents are evaluated before children")
    }

    /// Evaluates every node in order, caching the results.
    pub fn forward(&mut self, bindings: &Bindings) -> Result<()> {
        self.evaluated = false;
        for i in 0..self.nodes.len() {
            let value = self.compute(i, bindings)?;
            if !value.is_finite() {
                return Err(Error::numerical(
                    self.describe(i),
                    "non-finite value in forward pass",
                ));
            }
            self.nodes[i].value = Some(value);
        }
        self.grads = vec![None; self.nodes.len()];
        self.evaluated = true;
        Ok(())
    }

    /// Forward pass, returning the value of `output`.
    pub fn eval(&mut self, bindings: &Bindings, output: NodeId) -> Result<Tensor> {
        self.forward(bindings)?;
        Ok(self.val(output).clone())
    }

    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        self.nodes.get(node.0).and_then(|n| n.value.as_ref())
    }

    fn compute(&self, i: usize, bindings: &Bindings) -> Result<Tensor> {
        let node = &self.nodes[i];
        let p = &node.parents;
        let shape_err = |msg: String| Err(Error::Structural(format!("{}: {msg}", self.describe(i))));
        let t = match &node.op {
            Op::Leaf => match bindings.get(&NodeId(i)).or(node.preset.as_ref()) {
                Some(t) => t.clone(),
                None => return Err(Error::Usage(format!("{} is not bound", self.describe(i)))),
            },
            Op::Add | Op::Sub | Op::Mul | Op::Min => {
                let (a, b) = (self.val(p[0]), self.val(p[1]));
                if a.shape() != b.shape() {
                    return shape_err(format!("shapes {:?} and {:?} differ", a.shape(), b.shape()));
                }
                match node.op {
                    Op::Add => a.zip_map(b, |x, y| x + y),
                    Op::Sub => a.zip_map(b, |x, y| x - y),
                    Op::Mul => a.zip_map(b, |x, y| x * y),
                    _ => a.zip_map(b, f64::min),
                }
            }
            Op::AddRow => {
                let (a, r) = (self.val(p[0]), self.val(p[1]));
                if r.len() != a.cols() {
                    return shape_err(format!("row of length {} against {} columns", r.len(), a.cols()));
                }
                let c = a.cols();
                let mut out = a.clone();
                for row in out.data_mut().chunks_mut(c) {
                    for (x, b) in row.iter_mut().zip(r.data()) {
                        *x += b;
                    }
                }
                out
            }
            Op::MulScalar => {
                let (a, s) = (self.val(p[0]), self.val(p[1]));
                if s.len() != 1 {
                    return shape_err(format!("scalar operand has shape {:?}", s.shape()));
                }
                let s = s.item();
                a.map(|x| x * s)
            }
            Op::MatMul => {
                let (a, b) = (self.val(p[0]), self.val(p[1]));
                if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
                    return shape_err(format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()));
                }
                let data = gemm(a.data(), (a.rows(), a.cols()), false, b.data(), (b.rows(), b.cols()), false);
                Tensor::new(vec![a.rows(), b.cols()], data)?
            }
            Op::Neg => self.val(p[0]).map(|x| -x),
            Op::Scale(c) => {
                let c = *c;
                self.val(p[0]).map(|x| x * c)
            }
            Op::Offset(c) => {
                let c = *c;
                self.val(p[0]).map(|x| x + c)
            }
            Op::Relu => self.val(p[0]).map(|x| x.max(0.0)),
            Op::Tanh => self.val(p[0]).map(f64::tanh),
            Op::Exp => self.val(p[0]).map(f64::exp),
            Op::Log => self.val(p[0]).map(f64::ln),
            Op::Square => self.val(p[0]).map(|x| x * x),
            Op::Softplus => self.val(p[0]).map(softplus),
            Op::LogOneMinusTanhSq => self.val(p[0]).map(log_one_minus_tanh_sq),
            Op::Clamp(lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.val(p[0]).map(|x| x.clamp(lo, hi))
            }
            Op::SumCols => {
                let a = self.val(p[0]);
                let data = a.data().chunks(a.cols()).map(|r| r.iter().sum()).collect();
                Tensor::new(reduced_shape(a.shape()), data)?
            }
            Op::LogSumExp => {
                let a = self.val(p[0]);
                let data = a
                    .data()
                    .chunks(a.cols())
                    .map(|r| {
                        let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        m + r.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
                    })
                    .collect();
                Tensor::new(reduced_shape(a.shape()), data)?
            }
            Op::Sum => Tensor::scalar(self.val(p[0]).data().iter().sum()),
            Op::Mean => {
                let a = self.val(p[0]);
                Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
            }
            Op::ConcatCols => {
                let (a, b) = (self.val(p[0]), self.val(p[1]));
                if a.shape().len() != b.shape().len() || a.rows() != b.rows() {
                    return shape_err(format!("cannot concatenate {:?} and {:?}", a.shape(), b.shape()));
                }
                let (ca, cb) = (a.cols(), b.cols());
                let mut data = Vec::with_capacity(a.len() + b.len());
                for r in 0..a.rows() {
                    data.extend_from_slice(a.row(r));
                    data.extend_from_slice(b.row(r));
                }
                Tensor::new(with_last_dim(a.shape(), ca + cb), data)?
            }
            Op::SliceCols(start, end) => {
                let a = self.val(p[0]);
                if start >= end || *end > a.cols() {
                    return shape_err(format!("column range {start}..{end} of {} columns", a.cols()));
                }
                let mut data = Vec::with_capacity(a.rows() * (end - start));
                for r in 0..a.rows() {
                    data.extend_from_slice(&a.row(r)[*start..*end]);
                }
                Tensor::new(with_last_dim(a.shape(), end - start), data)?
            }
            Op::Detach => self.val(p[0]).clone(),
        };
        Ok(t)
    }

    /// Reverse pass from a single-element `output`.
    ///
    /// Gradient slots are reset first, then filled by accumulation so that a
    /// node feeding several consumers receives the sum of their contributions.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        if !self.evaluated {
            return Err(Error::Usage("backward called before a completed forward pass".into()));
        }
        let out_shape = self.val(output).shape().to_vec();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, {} has shape {:?}",
                self.describe(output.0),
                out_shape
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[output.0] = Some(Tensor::full(&out_shape, 1.0));
        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].parents.is_empty() {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            for (parent, contribution) in self.local_grads(i, &g) {
                match &mut self.grads[parent.0] {
                    Some(acc) => acc.accumulate(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// `∂output/∂node` after [`Graph::backward`]; zeros for non-ancestors.
    pub fn grad(&self, node: NodeId) -> Tensor {
        match self.grads.get(node.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(
                self.value(node)
                    .map(|v| v.shape().to_vec())
                    .unwrap_or_else(|| vec![1])
                    .as_slice(),
            ),
        }
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Vec<(NodeId, Tensor)> {
        let node = &self.nodes[i];
        let p = &node.parents;
        let wants = |k: usize| self.nodes[p[k].0].requires_grad;
        let y = node.value.as_ref().expect("evaluated");
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::Add => {
                for k in 0..2 {
                    if wants(k) {
                        out.push((p[k], g.clone()));
                    }
                }
            }
            Op::Sub => {
                if wants(0) {
                    out.push((p[0], g.clone()));
                }
                if wants(1) {
                    out.push((p[1], g.map(|x| -x)));
                }
            }
            Op::Mul => {
                let (a, b) = (self.val(p[0]), self.val(p[1]));
                if wants(0) {
                    out.push((p[0], g.zip_map(b, |g, b| g * b)));
                }
                if wants(1) {
                    out.push((p[1], g.zip_map(a, |g, a| g * a)));
                }
            }
            Op::Min => {
                let (a, b) = (self.val(p[0]), self.val(p[1]));
                let first: Vec<bool> = a.data().iter().zip(b.data()).map(|(x, y)| x <= y).collect();
                let mask = |take_first: bool| {
                    let mut t = g.clone();
                    for (v, &f) in t.data_mut().iter_mut().zip(&first) {
                        if f != take_first {
                            *v = 0.0;
                        }
                    }
                    t
                };
                if wants(0) {
                    out.push((p[0], mask(true)));
                }
                if wants(1) {
                    out.push((p[1], mask(false)));
                }
            }
            Op::AddRow => {
                if wants(0) {
                    out.push((p[0], g.clone()));
                }
                if wants(1) {
                    let r = self.val(p[1]);
                    let mut acc = vec![0.0; r.len()];
                    for row in g.data().chunks(g.cols()) {
                        for (a, x) in acc.iter_mut().zip(row) {
                            *a += x;
                        }
                    }
                    out.push((p[1], Tensor::new(r.shape().to_vec(), acc).expect("same shape")));
                }
            }
            Op::MulScalar => {
                let (a, s) = (self.val(p[0]), self.val(p[1]));
                if wants(0) {
                    let s = s.item();
                    out.push((p[0], g.map(|x| x * s)));
                }
                if wants(1) {
                    let dot = g.data().iter().zip(a.data()).map(|(x, y)| x * y).sum();
                    out.push((p[1], Tensor::new(s.shape().to_vec(), vec![dot]).expect("scalar")));
                }
            }
            Op::MatMul => {
                let (a, b) = (self.val(p[0]), self.val(p[1]));
                let (ad, bd, gd) = ((a.rows(), a.cols()), (b.rows(), b.cols()), (g.rows(), g.cols()));
                if wants(0) {
                    let data = gemm(g.data(), gd, false, b.data(), bd, true);
                    out.push((p[0], Tensor::new(a.shape().to_vec(), data).expect("shape")));
                }
                if wants(1) {
                    let data = gemm(a.data(), ad, true, g.data(), gd, false);
                    out.push((p[1], Tensor::new(b.shape().to_vec(), data).expect("shape")));
                }
            }
            Op::Neg => out.push((p[0], g.map(|x| -x))),
            Op::Scale(c) => {
                let c = *c;
                out.push((p[0], g.map(|x| x * c)));
            }
            Op::Offset(_) => out.push((p[0], g.clone())),
            Op::Relu => {
                let a = self.val(p[0]);
                out.push((p[0], g.zip_map(a, |g, a| if a > 0.0 { g } else { 0.0 })));
            }
            Op::Tanh => out.push((p[0], g.zip_map(y, |g, t| g * (1.0 - t * t)))),
            Op::Exp => out.push((p[0], g.zip_map(y, |g, e| g * e))),
            Op::Log => {
                let a = self.val(p[0]);
                out.push((p[0], g.zip_map(a, |g, a| g / a)));
            }
            Op::Square => {
                let a = self.val(p[0]);
                out.push((p[0], g.zip_map(a, |g, a| 2.0 * g * a)));
            }
            Op::Softplus => {
                let a = self.val(p[0]);
                out.push((p[0], g.zip_map(a, |g, a| g * sigmoid(a))));
            }
            Op::LogOneMinusTanhSq => {
                let a = self.val(p[0]);
                out.push((p[0], g.zip_map(a, |g, a| -2.0 * g * a.tanh())));
            }
            Op::Clamp(lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let a = self.val(p[0]);
                out.push((p[0], g.zip_map(a, |g, a| if a >= lo && a <= hi { g } else { 0.0 })));
            }
            Op::SumCols => {
                let a = self.val(p[0]);
                let c = a.cols();
                let mut t = Tensor::zeros(a.shape());
                for (r, row) in t.data_mut().chunks_mut(c).enumerate() {
                    row.fill(g.data()[r]);
                }
                out.push((p[0], t));
            }
            Op::LogSumExp => {
                let a = self.val(p[0]);
                let c = a.cols();
                let mut t = a.clone();
                for (r, row) in t.data_mut().chunks_mut(c).enumerate() {
                    let lse = y.data()[r];
                    for v in row.iter_mut() {
                        *v = g.data()[r] * (*v - lse).exp();
                    }
                }
                out.push((p[0], t));
            }
            Op::Sum => {
                let a = self.val(p[0]);
                out.push((p[0], Tensor::full(a.shape(), g.item())));
            }
            Op::Mean => {
                let a = self.val(p[0]);
                out.push((p[0], Tensor::full(a.shape(), g.item() / a.len() as f64)));
            }
            Op::ConcatCols => {
                let (a, b) = (self.val(p[0]), self.val(p[1]));
                let (ca, cb) = (a.cols(), b.cols());
                let mut ga = Vec::with_capacity(a.len());
                let mut gb = Vec::with_capacity(b.len());
                for row in g.data().chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                if wants(0) {
                    out.push((p[0], Tensor::new(a.shape().to_vec(), ga).expect("shape")));
                }
                if wants(1) {
                    out.push((p[1], Tensor::new(b.shape().to_vec(), gb).expect("shape")));
                }
            }
            Op::SliceCols(start, end) => {
                let a = self.val(p[0]);
                let c = a.cols();
                let w = end - start;
                let mut t = Tensor::zeros(a.shape());
                for (r, row) in t.data_mut().chunks_mut(c).enumerate() {
                    row[*start..*end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                out.push((p[0], t));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none() -> Bindings {
        Bindings::new()
    }

    #[test]
    fn elementwise_addition() {
        let mut g = Graph::new();
        let x = g.input();
        let y = g.input();
        let z = g.add(x, y);
        let mut b = Bindings::new();
        b.insert(x, Tensor::vector(vec![1.0, 2.0]));
        b.insert(y, Tensor::vector(vec![3.0, 4.0]));
        assert_eq!(g.eval(&b, z).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn tanh_at_zero() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(0.0));
        let y = g.tanh(x);
        assert_eq!(g.eval(&none(), y).unwrap().item(), 0.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).item(), 1.0);
    }

    #[test]
    fn log_sum_exp_of_one_and_zero() {
        // log(e + 1), frozen from a 50-digit mpmath evaluation.
        let expected = 1.3132616875182228;
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 0.0]));
        let y = g.log_sum_exp(x);
        let v = g.eval(&none(), y).unwrap().item();
        assert!((v - expected).abs() < 1e-15, "{v}");
    }

    #[test]
    fn log_sum_exp_survives_large_inputs() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1000.0, 1000.0]));
        let y = g.log_sum_exp(x);
        let v = g.eval(&none(), y).unwrap().item();
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn square_rule() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(3.0));
        let y = g.mul(x, x);
        g.forward(&none()).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).item(), 6.0);
    }

    #[test]
    fn backward_before_forward_is_a_usage_error() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(1.0));
        let y = g.square(x);
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![1.0, 2.0]));
        let y = g.square(x);
        g.forward(&none()).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let y = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        g.add(x, y);
        assert!(matches!(g.forward(&none()), Err(Error::Structural(_))));
    }

    #[test]
    fn non_finite_intermediate_names_the_node() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(-1.0));
        let y = g.log(x);
        g.label(y, "log_of_negative");
        let err = g.forward(&none()).unwrap_err();
        match err {
            Error::Numerical { location, .. } => assert!(location.contains("log_of_negative")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unbound_input_is_reported() {
        let mut g = Graph::new();
        let x = g.input();
        g.square(x);
        assert!(matches!(g.forward(&none()), Err(Error::Usage(_))));
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        // f = min(x, y) + min(x, y) * x, x < y
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(2.0));
        let y = g.variable(Tensor::scalar(5.0));
        let m = g.min(x, y);
        let p = g.mul(m, x);
        let f = g.add(m, p);
        g.forward(&none()).unwrap();
        g.backward(f).unwrap();
        assert_eq!(g.grad(x).item(), 1.0 + 2.0 * 2.0);
        assert_eq!(g.grad(y).item(), 0.0);
    }

    #[test]
    fn detach_blocks_gradient_and_non_ancestors_are_zero() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(2.0));
        let z = g.variable(Tensor::vector(vec![1.0, 1.0]));
        let d = g.detach(x);
        let y = g.mul(d, x);
        g.forward(&none()).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).item(), 2.0);
        assert_eq!(g.grad(z).data(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_is_repeatable() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![0.3, -1.2, 2.0]));
        let t = g.tanh(x);
        let s = g.softplus(t);
        let l = g.log_sum_exp(s);
        let a = g.eval(&none(), l).unwrap();
        let b = g.eval(&none(), l).unwrap();
        assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
    }

    #[test]
    fn stabilized_log_one_minus_tanh_sq_matches_naive_form_and_stays_finite() {
        for &u in &[-3.0, -0.5, 0.0, 0.1, 2.0, 5.0] {
            let naive = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log_one_minus_tanh_sq(u) - naive).abs() < 1e-12, "{u}");
        }
        // The naive form is -inf here.
        let big = log_one_minus_tanh_sq(50.0);
        assert!(big.is_finite());
        assert!((big - (2.0 * std::f64::consts::LN_2 - 100.0)).abs() < 1e-12);
    }
}
