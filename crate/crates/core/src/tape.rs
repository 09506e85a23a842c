//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] owns every tensor produced during a forward pass. Leaves are
//! registered with [`Tape::param`] (gradient wanted) or [`Tape::constant`];
//! primitives are applied through [`Tape::apply`] or the typed shorthands
//! (`tape.matmul(a, b)` and friends). Calling [`Tape::backward`] consumes the
//! tape and returns the gradient of a scalar loss with respect to every node
//! that participates in it.
//!
//! ```
//! use gclprior::tape::Tape;
//! use gclprior::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::row_vector(&[0.0]).unwrap());
//! let y = tape.sigmoid(x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 0.25);
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis along which a reduction or concatenation acts.
///
/// `Rows` is axis 0: reductions collapse the rows (`r × c → 1 × c`) and
/// concatenation stacks vertically. `Cols` is axis 1: reductions collapse
/// the columns (`r × c → r × 1`) and concatenation joins side by side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Arithmetic precision of forward values.
///
/// `F32` rounds every primitive's output to single precision; gradients are
/// still accumulated in 64-bit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Precision::F64),
            "f32" => Ok(Precision::F32),
            other => Err(Error::invalid(format!("unknown precision `{other}`"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        })
    }
}

/// Identifier of a differentiable primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Prim {
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    AddScalar,
    Exp,
    Log,
    Relu,
    Sigmoid,
    Clamp,
    Sum,
    Mean,
    SumAxis,
    L2Norm,
    LogSumExp,
    LogMeanExp,
    Concat,
    Gather,
    Transpose,
}

impl Prim {
    pub const ALL: [Prim; 21] = [
        Prim::MatMul,
        Prim::Add,
        Prim::Sub,
        Prim::Mul,
        Prim::Div,
        Prim::Scale,
        Prim::AddScalar,
        Prim::Exp,
        Prim::Log,
        Prim::Relu,
        Prim::Sigmoid,
        Prim::Clamp,
        Prim::Sum,
        Prim::Mean,
        Prim::SumAxis,
        Prim::L2Norm,
        Prim::LogSumExp,
        Prim::LogMeanExp,
        Prim::Concat,
        Prim::Gather,
        Prim::Transpose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Prim::MatMul => "matmul",
            Prim::Add => "add",
            Prim::Sub => "sub",
            Prim::Mul => "mul",
            Prim::Div => "div",
            Prim::Scale => "scale",
            Prim::AddScalar => "add-scalar",
            Prim::Exp => "exp",
            Prim::Log => "log",
            Prim::Relu => "relu",
            Prim::Sigmoid => "sigmoid",
            Prim::Clamp => "clamp",
            Prim::Sum => "sum",
            Prim::Mean => "mean",
            Prim::SumAxis => "sum-axis",
            Prim::L2Norm => "l2-norm",
            Prim::LogSumExp => "log-sum-exp",
            Prim::LogMeanExp => "log-mean-exp",
            Prim::Concat => "concat",
            Prim::Gather => "gather",
            Prim::Transpose => "transpose",
        }
    }
}

impl fmt::Display for Prim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Prim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Prim::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPrimitive(s.to_string()))
    }
}

/// Optional attributes consumed by some primitives.
#[derive(Clone, Debug, Default)]
pub struct Attrs {
    pub axis: Option<Axis>,
    pub scalar: Option<f64>,
    pub bounds: Option<(f64, f64)>,
    pub indices: Option<Vec<usize>>,
}

impl Attrs {
    pub fn axis(axis: Axis) -> Self {
        Attrs {
            axis: Some(axis),
            ..Default::default()
        }
    }

    pub fn scalar(value: f64) -> Self {
        Attrs {
            scalar: Some(value),
            ..Default::default()
        }
    }

    pub fn bounds(lo: f64, hi: f64) -> Self {
        Attrs {
            bounds: Some((lo, hi)),
            ..Default::default()
        }
    }

    pub fn indices(indices: Vec<usize>) -> Self {
        Attrs {
            indices: Some(indices),
            ..Default::default()
        }
    }
}

/// How the right operand of a binary elementwise op is broadcast.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Clone, Debug)]
enum Op {
    MatMul,
    Add(Bcast),
    Sub(Bcast),
    Mul(Bcast),
    Div(Bcast),
    Scale(f64),
    AddScalar(f64),
    Exp,
    Log,
    Relu,
    Sigmoid,
    Clamp(f64, f64),
    Sum,
    Mean,
    SumAxis(Axis),
    L2Norm(Axis),
    LogSumExp(Axis),
    LogMeanExp(Axis),
    Concat(Axis),
    Gather(Vec<usize>),
    Transpose,
}

struct Node {
    value: Tensor,
    op: Option<Op>,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Ordered record of primitive applications.
///
/// Nodes are appended in evaluation order, so every input precedes its
/// consumers and a single reverse sweep visits each node once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let value = self.round(value);
        self.push(value, None, Vec::new(), requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> [usize; 2] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Number of nodes that carry a differentiable operation.
    pub fn recorded_ops(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_some()).count()
    }

    /// Smallest distance from an input of a recorded `prim` node (relu or
    /// clamp) to its kink; infinite when there is none. Finite-difference
    /// checks use it to skip cases that straddle a kink.
    pub fn kink_distance(&self, prim: Prim) -> f64 {
        let mut best = f64::INFINITY;
        for node in &self.nodes {
            let kinks = match (&node.op, prim) {
                (Some(Op::Relu), Prim::Relu) => [0.0, 0.0],
                (Some(Op::Clamp(lo, hi)), Prim::Clamp) => [*lo, *hi],
                _ => continue,
            };
            for &v in self.nodes[node.inputs[0].0].value.data() {
                for k in kinks {
                    best = best.min((v - k).abs());
                }
            }
        }
        best
    }

    fn push(&mut self, value: Tensor, op: Option<Op>, inputs: Vec<Var>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn round(&self, t: Tensor) -> Tensor {
        match self.precision {
            Precision::F64 => t,
            Precision::F32 => t.map(|v| v as f32 as f64),
        }
    }

    /// Applies primitive `prim` to `inputs`.
    ///
    /// The node is recorded for differentiation when any input requires a
    /// gradient; otherwise only its value is kept.
    pub fn apply(&mut self, prim: Prim, inputs: &[Var], attrs: &Attrs) -> Result<Var> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(Error::invalid(format!("{v:?} does not belong to this tape")));
            }
        }
        let op = self.build_op(prim, inputs, attrs)?;
        let value = {
            let ins: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            forward(&op, &ins)
        };
        let value = self.round(value);
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = requires_grad.then_some(op);
        Ok(self.push(value, op, inputs.to_vec(), requires_grad))
    }

    fn build_op(&self, prim: Prim, inputs: &[Var], attrs: &Attrs) -> Result<Op> {
        let name = prim.name();
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::BadAttrs {
                    op: name,
                    reason: format!("expected {n} inputs, got {}", inputs.len()),
                })
            }
        };
        let need_axis = || {
            attrs.axis.ok_or(Error::BadAttrs {
                op: name,
                reason: "axis required".into(),
            })
        };
        let need_scalar = || {
            attrs.scalar.ok_or(Error::BadAttrs {
                op: name,
                reason: "scalar required".into(),
            })
        };
        let shape = |i: usize| self.nodes[inputs[i].0].value.shape();

        Ok(match prim {
            Prim::MatMul => {
                arity(2)?;
                let (a, b) = (shape(0), shape(1));
                if a[1] != b[0] {
                    return Err(Error::ShapeMismatch {
                        op: name,
                        left: a,
                        right: b,
                    });
                }
                Op::MatMul
            }
            Prim::Add | Prim::Sub | Prim::Mul | Prim::Div => {
                arity(2)?;
                let (a, b) = (shape(0), shape(1));
                let bc = if a == b {
                    Bcast::Same
                } else if b == [1, 1] {
                    Bcast::Scalar
                } else if b[0] == 1 && b[1] == a[1] {
                    Bcast::Row
                } else if b[1] == 1 && b[0] == a[0] {
                    Bcast::Col
                } else {
                    return Err(Error::ShapeMismatch {
                        op: name,
                        left: a,
                        right: b,
                    });
                };
                match prim {
                    Prim::Add => Op::Add(bc),
                    Prim::Sub => Op::Sub(bc),
                    Prim::Mul => Op::Mul(bc),
                    _ => Op::Div(bc),
                }
            }
            Prim::Scale => {
                arity(1)?;
                Op::Scale(need_scalar()?)
            }
            Prim::AddScalar => {
                arity(1)?;
                Op::AddScalar(need_scalar()?)
            }
            Prim::Exp => {
                arity(1)?;
                Op::Exp
            }
            Prim::Log => {
                arity(1)?;
                Op::Log
            }
            Prim::Relu => {
                arity(1)?;
                Op::Relu
            }
            Prim::Sigmoid => {
                arity(1)?;
                Op::Sigmoid
            }
            Prim::Clamp => {
                arity(1)?;
                let (lo, hi) = attrs.bounds.ok_or(Error::BadAttrs {
                    op: name,
                    reason: "bounds required".into(),
                })?;
                if lo.is_nan() || hi.is_nan() || lo > hi {
                    return Err(Error::BadAttrs {
                        op: name,
                        reason: format!("invalid bounds [{lo}, {hi}]"),
                    });
                }
                Op::Clamp(lo, hi)
            }
            Prim::Sum => {
                arity(1)?;
                Op::Sum
            }
            Prim::Mean => {
                arity(1)?;
                Op::Mean
            }
            Prim::SumAxis => {
                arity(1)?;
                Op::SumAxis(need_axis()?)
            }
            Prim::L2Norm => {
                arity(1)?;
                Op::L2Norm(need_axis()?)
            }
            Prim::LogSumExp => {
                arity(1)?;
                Op::LogSumExp(need_axis()?)
            }
            Prim::LogMeanExp => {
                arity(1)?;
                Op::LogMeanExp(need_axis()?)
            }
            Prim::Concat => {
                if inputs.is_empty() {
                    return Err(Error::BadAttrs {
                        op: name,
                        reason: "at least one input required".into(),
                    });
                }
                let axis = need_axis()?;
                let first = shape(0);
                for i in 1..inputs.len() {
                    let s = shape(i);
                    let ok = match axis {
                        Axis::Rows => s[1] == first[1],
                        Axis::Cols => s[0] == first[0],
                    };
                    if !ok {
                        return Err(Error::ShapeMismatch {
                            op: name,
                            left: first,
                            right: s,
                        });
                    }
                }
                Op::Concat(axis)
            }
            Prim::Gather => {
                arity(1)?;
                let idx = attrs.indices.clone().ok_or(Error::BadAttrs {
                    op: name,
                    reason: "indices required".into(),
                })?;
                let rows = shape(0)[0];
                if idx.is_empty() || idx.iter().any(|&i| i >= rows) {
                    return Err(Error::BadAttrs {
                        op: name,
                        reason: format!("indices must be non-empty and below {rows}"),
                    });
                }
                Op::Gather(idx)
            }
            Prim::Transpose => {
                arity(1)?;
                Op::Transpose
            }
        })
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(1.0));
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = &node.op else { continue };
            let Some(g) = grads[idx].take() else { continue };
            let ins: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = backward_op(op, &ins, &node.value, &g, &needs);
            for ((var, need), ig) in node.inputs.iter().zip(&needs).zip(input_grads) {
                if !need {
                    continue;
                }
                if let Some(ig) = ig {
                    accumulate(&mut grads[var.0], ig);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

macro_rules! unary {
    ($($fn_name:ident => $prim:expr),* $(,)?) => {
        impl Tape {
            $(
                pub fn $fn_name(&mut self, x: Var) -> Result<Var> {
                    self.apply($prim, &[x], &Attrs::default())
                }
            )*
        }
    };
}

macro_rules! binary {
    ($($fn_name:ident => $prim:expr),* $(,)?) => {
        impl Tape {
            $(
                pub fn $fn_name(&mut self, a: Var, b: Var) -> Result<Var> {
                    self.apply($prim, &[a, b], &Attrs::default())
                }
            )*
        }
    };
}

unary! {
    exp => Prim::Exp,
    log => Prim::Log,
    relu => Prim::Relu,
    sigmoid => Prim::Sigmoid,
    sum => Prim::Sum,
    mean => Prim::Mean,
    transpose => Prim::Transpose,
}

binary! {
    matmul => Prim::MatMul,
    add => Prim::Add,
    sub => Prim::Sub,
    mul => Prim::Mul,
    div => Prim::Div,
}

impl Tape {
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.apply(Prim::Scale, &[x], &Attrs::scalar(factor))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(Prim::AddScalar, &[x], &Attrs::scalar(c))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.apply(Prim::Clamp, &[x], &Attrs::bounds(lo, hi))
    }

    pub fn sum_axis(&mut self, x: Var, axis: Axis) -> Result<Var> {
        self.apply(Prim::SumAxis, &[x], &Attrs::axis(axis))
    }

    pub fn l2_norm(&mut self, x: Var, axis: Axis) -> Result<Var> {
        self.apply(Prim::L2Norm, &[x], &Attrs::axis(axis))
    }

    pub fn log_sum_exp(&mut self, x: Var, axis: Axis) -> Result<Var> {
        self.apply(Prim::LogSumExp, &[x], &Attrs::axis(axis))
    }

    /// `log(mean(exp(x)))` along `axis`, ignoring entries equal to `-∞`.
    ///
    /// Masked entries are excluded from both the sum and the count, so a
    /// `-∞` mask selects the averaging set exactly.
    pub fn log_mean_exp(&mut self, x: Var, axis: Axis) -> Result<Var> {
        self.apply(Prim::LogMeanExp, &[x], &Attrs::axis(axis))
    }

    pub fn concat(&mut self, xs: &[Var], axis: Axis) -> Result<Var> {
        self.apply(Prim::Concat, xs, &Attrs::axis(axis))
    }

    pub fn gather(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        self.apply(Prim::Gather, &[x], &Attrs::indices(rows))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }
}

fn bcast_index(bc: Bcast, cols: usize, idx: usize) -> usize {
    match bc {
        Bcast::Same => idx,
        Bcast::Row => idx % cols,
        Bcast::Col => idx / cols,
        Bcast::Scalar => 0,
    }
}

fn elementwise(a: &Tensor, b: &Tensor, bc: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let cols = a.cols();
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(k, &x)| f(x, bd[bcast_index(bc, cols, k)]))
        .collect();
    Tensor::from_parts(a.rows(), a.cols(), data)
}

/// Sums a full-shape gradient down to the broadcast operand's shape.
fn reduce_bcast(g: Tensor, bc: Bcast, target: [usize; 2]) -> Tensor {
    if bc == Bcast::Same {
        return g;
    }
    let cols = g.cols();
    let mut out = vec![0.0; target[0] * target[1]];
    for (k, v) in g.data().iter().enumerate() {
        out[bcast_index(bc, cols, k)] += v;
    }
    Tensor::from_parts(target[0], target[1], out)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

/// Lanes of `t` along `axis`: returns (lane count, lane length, index fn).
fn lanes(t: &Tensor, axis: Axis) -> (usize, usize, Box<dyn Fn(usize, usize) -> usize>) {
    let (r, c) = (t.rows(), t.cols());
    match axis {
        // collapse rows: one lane per column
        Axis::Rows => (c, r, Box::new(move |lane, k| k * c + lane)),
        Axis::Cols => (r, c, Box::new(move |lane, k| lane * c + k)),
    }
}

fn reduced_shape(t: &Tensor, axis: Axis) -> [usize; 2] {
    match axis {
        Axis::Rows => [1, t.cols()],
        Axis::Cols => [t.rows(), 1],
    }
}

fn reduce_lanes(t: &Tensor, axis: Axis, f: impl Fn(&mut dyn Iterator<Item = f64>) -> f64) -> Tensor {
    let (n_lanes, len, at) = lanes(t, axis);
    let d = t.data();
    let out: Vec<f64> = (0..n_lanes)
        .map(|lane| f(&mut (0..len).map(|k| d[at(lane, k)])))
        .collect();
    let s = reduced_shape(t, axis);
    Tensor::from_parts(s[0], s[1], out)
}

/// Shift-by-max log-sum-exp of one lane; returns (max, Σ exp(x - max), finite count).
fn lse_parts(values: &mut dyn Iterator<Item = f64>) -> (f64, f64, usize) {
    let vals: Vec<f64> = values.collect();
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return (m, 0.0, 0);
    }
    let mut s = 0.0;
    let mut count = 0;
    for v in vals {
        if v != f64::NEG_INFINITY {
            s += (v - m).exp();
            count += 1;
        }
    }
    (m, s, count)
}

fn forward(op: &Op, ins: &[&Tensor]) -> Tensor {
    match op {
        Op::MatMul => ins[0].matmul(ins[1]).expect("shape validated"),
        Op::Add(bc) => elementwise(ins[0], ins[1], *bc, |a, b| a + b),
        Op::Sub(bc) => elementwise(ins[0], ins[1], *bc, |a, b| a - b),
        Op::Mul(bc) => elementwise(ins[0], ins[1], *bc, |a, b| a * b),
        Op::Div(bc) => elementwise(ins[0], ins[1], *bc, |a, b| a / b),
        Op::Scale(s) => ins[0].map(|v| v * s),
        Op::AddScalar(c) => ins[0].map(|v| v + c),
        Op::Exp => ins[0].map(f64::exp),
        Op::Log => ins[0].map(f64::ln),
        Op::Relu => ins[0].map(|v| if v > 0.0 { v } else { 0.0 }),
        Op::Sigmoid => ins[0].map(sigmoid),
        Op::Clamp(lo, hi) => ins[0].map(|v| v.clamp(*lo, *hi)),
        Op::Sum => Tensor::scalar(ins[0].sum()),
        Op::Mean => Tensor::scalar(ins[0].sum() / ins[0].len() as f64),
        Op::SumAxis(axis) => reduce_lanes(ins[0], *axis, |it| it.sum()),
        Op::L2Norm(axis) => reduce_lanes(ins[0], *axis, |it| it.map(|v| v * v).sum::<f64>().sqrt()),
        Op::LogSumExp(axis) => reduce_lanes(ins[0], *axis, |it| {
            let (m, s, _) = lse_parts(it);
            if m == f64::NEG_INFINITY {
                m
            } else {
                m + s.ln()
            }
        }),
        Op::LogMeanExp(axis) => reduce_lanes(ins[0], *axis, |it| {
            let (m, s, count) = lse_parts(it);
            if m == f64::NEG_INFINITY {
                m
            } else {
                m + (s / count as f64).ln()
            }
        }),
        Op::Concat(axis) => concat(ins, *axis),
        Op::Gather(idx) => ins[0].gather_rows(idx).expect("indices validated"),
        Op::Transpose => ins[0].transpose(),
    }
}

fn concat(ins: &[&Tensor], axis: Axis) -> Tensor {
    match axis {
        Axis::Rows => {
            let cols = ins[0].cols();
            let rows: usize = ins.iter().map(|t| t.rows()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for t in ins {
                data.extend_from_slice(t.data());
            }
            Tensor::from_parts(rows, cols, data)
        }
        Axis::Cols => {
            let rows = ins[0].rows();
            let cols: usize = ins.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for t in ins {
                    data.extend_from_slice(t.row(i));
                }
            }
            Tensor::from_parts(rows, cols, data)
        }
    }
}

/// Expands a reduced-lane tensor (`1 × c` or `r × 1`) back over `shape`.
fn expand_lane(reduced: &Tensor, axis: Axis, idx: usize, cols: usize) -> f64 {
    match axis {
        Axis::Rows => reduced.data()[idx % cols],
        Axis::Cols => reduced.data()[idx / cols],
    }
}

fn backward_op(op: &Op, ins: &[&Tensor], out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
    let like = |t: &Tensor, data: Vec<f64>| Tensor::from_parts(t.rows(), t.cols(), data);
    let unary = |f: &dyn Fn(usize) -> f64| -> Vec<Option<Tensor>> {
        let data = (0..ins[0].len()).map(f).collect();
        vec![Some(like(ins[0], data))]
    };
    let x = ins[0].data();
    let gd = g.data();
    let od = out.data();
    match op {
        Op::MatMul => {
            let da = needs[0].then(|| g.matmul_t(ins[1]).expect("shape"));
            let db = needs[1].then(|| ins[0].t_matmul(g).expect("shape"));
            vec![da, db]
        }
        Op::Add(bc) => vec![
            needs[0].then(|| g.clone()),
            needs[1].then(|| reduce_bcast(g.clone(), *bc, ins[1].shape())),
        ],
        Op::Sub(bc) => vec![
            needs[0].then(|| g.clone()),
            needs[1].then(|| reduce_bcast(g.map(|v| -v), *bc, ins[1].shape())),
        ],
        Op::Mul(bc) => {
            let cols = ins[0].cols();
            let b = ins[1].data();
            let da = needs[0].then(|| {
                let data = gd
                    .iter()
                    .enumerate()
                    .map(|(k, gv)| gv * b[bcast_index(*bc, cols, k)])
                    .collect();
                like(ins[0], data)
            });
            let db = needs[1].then(|| {
                let data = gd.iter().zip(x).map(|(gv, a)| gv * a).collect();
                reduce_bcast(like(ins[0], data), *bc, ins[1].shape())
            });
            vec![da, db]
        }
        Op::Div(bc) => {
            let cols = ins[0].cols();
            let b = ins[1].data();
            let da = needs[0].then(|| {
                let data = gd
                    .iter()
                    .enumerate()
                    .map(|(k, gv)| gv / b[bcast_index(*bc, cols, k)])
                    .collect();
                like(ins[0], data)
            });
            let db = needs[1].then(|| {
                let data = gd
                    .iter()
                    .enumerate()
                    .map(|(k, gv)| {
                        let bv = b[bcast_index(*bc, cols, k)];
                        -gv * x[k] / (bv * bv)
                    })
                    .collect();
                reduce_bcast(like(ins[0], data), *bc, ins[1].shape())
            });
            vec![da, db]
        }
        Op::Scale(s) => vec![Some(g.map(|v| v * s))],
        Op::AddScalar(_) => vec![Some(g.clone())],
        Op::Exp => unary(&|k| gd[k] * od[k]),
        Op::Log => unary(&|k| gd[k] / x[k]),
        Op::Relu => unary(&|k| if x[k] > 0.0 { gd[k] } else { 0.0 }),
        Op::Sigmoid => unary(&|k| gd[k] * od[k] * (1.0 - od[k])),
        Op::Clamp(lo, hi) => unary(&|k| if x[k] >= *lo && x[k] <= *hi { gd[k] } else { 0.0 }),
        Op::Sum => {
            let s = g.item();
            unary(&|_| s)
        }
        Op::Mean => {
            let s = g.item() / ins[0].len() as f64;
            unary(&|_| s)
        }
        Op::SumAxis(axis) => {
            let cols = ins[0].cols();
            unary(&|k| expand_lane(g, *axis, k, cols))
        }
        Op::L2Norm(axis) => {
            let cols = ins[0].cols();
            unary(&|k| {
                let n = expand_lane(out, *axis, k, cols);
                if n == 0.0 {
                    0.0
                } else {
                    expand_lane(g, *axis, k, cols) * x[k] / n
                }
            })
        }
        Op::LogSumExp(axis) => {
            let cols = ins[0].cols();
            unary(&|k| {
                let o = expand_lane(out, *axis, k, cols);
                if x[k] == f64::NEG_INFINITY {
                    0.0
                } else {
                    expand_lane(g, *axis, k, cols) * (x[k] - o).exp()
                }
            })
        }
        Op::LogMeanExp(axis) => {
            // weights are the softmax over unmasked entries of the lane
            let cols = ins[0].cols();
            let (n_lanes, len, at) = lanes(ins[0], *axis);
            let mut lse = vec![0.0; n_lanes];
            for (lane, slot) in lse.iter_mut().enumerate() {
                let (m, s, _) = lse_parts(&mut (0..len).map(|k| x[at(lane, k)]));
                *slot = m + s.ln();
            }
            let lse_t = match axis {
                Axis::Rows => Tensor::from_parts(1, n_lanes, lse),
                Axis::Cols => Tensor::from_parts(n_lanes, 1, lse),
            };
            unary(&|k| {
                if x[k] == f64::NEG_INFINITY {
                    0.0
                } else {
                    expand_lane(g, *axis, k, cols) * (x[k] - expand_lane(&lse_t, *axis, k, cols)).exp()
                }
            })
        }
        Op::Concat(axis) => {
            let mut out = Vec::with_capacity(ins.len());
            let mut offset = 0;
            for (t, need) in ins.iter().zip(needs) {
                let piece = match axis {
                    Axis::Rows => {
                        let start = offset * g.cols();
                        let end = start + t.len();
                        offset += t.rows();
                        like(t, gd[start..end].to_vec())
                    }
                    Axis::Cols => {
                        let mut data = Vec::with_capacity(t.len());
                        for i in 0..t.rows() {
                            data.extend_from_slice(&g.row(i)[offset..offset + t.cols()]);
                        }
                        offset += t.cols();
                        like(t, data)
                    }
                };
                out.push(need.then_some(piece));
            }
            out
        }
        Op::Gather(idx) => {
            let mut acc = Tensor::zeros(ins[0].rows(), ins[0].cols());
            for (r, &src) in idx.iter().enumerate() {
                for (a, v) in acc.row_mut(src).iter_mut().zip(g.row(r)) {
                    *a += v;
                }
            }
            vec![Some(acc)]
        }
        Op::Transpose => vec![Some(g.transpose())],
    }
}
