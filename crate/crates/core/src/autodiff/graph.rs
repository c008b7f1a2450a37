//! Tape-style computation graph with reverse-mode differentiation.
//!
//! Every operation appends a node holding its cached output; node inputs
//! always precede the node, so the tape order is a topological order and
//! `backward` is a single reverse sweep. Graphs are cheap to build and are
//! rebuilt for every forward pass, which lets sequence lengths vary freely.

use std::collections::BTreeMap;

use super::{ParamGrads, ParameterStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Clamp(Var, f64, f64),
    LstmCell(Var, Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Stack(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

fn shapes_of(ts: &[&Tensor]) -> String {
    ts.iter()
        .map(|t| format!("{:?}", t.shape()))
        .collect::<Vec<_>>()
        .join(" and ")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(data: &[f64], width: usize, out: &mut [f64]) {
    for (row, dst) in data.chunks(width).zip(out.chunks_mut(width)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &x) in dst.iter_mut().zip(row) {
            *d = (x - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
}

fn log_softmax_rows(data: &[f64], width: usize, out: &mut [f64]) {
    for (row, dst) in data.chunks(width).zip(out.chunks_mut(width)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        for (d, &x) in dst.iter_mut().zip(row) {
            *d = x - lse;
        }
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(op, value, requires_grad)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Leaf whose gradient is tracked and can be read back with [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Registers (once per graph) and returns the node for a named parameter.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.clone();
        let v = self.push(Op::Param, value, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// `[m,k] x [k,n] -> [m,n]` or matrix-vector `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || !(sb.len() == 1 || sb.len() == 2) || sa[1] != sb[0] {
            return Err(Error::shape("matmul", shapes_of(&[ta, tb])));
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 1 };
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &ad[i * k..(i + 1) * k];
            let dst = &mut out[i * n..(i + 1) * n];
            for (p, &aip) in row.iter().enumerate() {
                if n == 1 {
                    dst[0] += aip * bd[p];
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (d, &bv) in dst.iter_mut().zip(brow) {
                    *d += aip * bv;
                }
            }
        }
        let shape = if sb.len() == 2 { vec![m, n] } else { vec![m] };
        Ok(self.push_op(Op::MatMul(a, b), Tensor::from_parts(shape, out), &[a, b]))
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Ok(Tensor::from_parts(ta.shape().to_vec(), data))
        } else if tb.is_scalar() {
            let y = tb.item();
            let data = ta.data().iter().map(|&x| f(x, y)).collect();
            Ok(Tensor::from_parts(ta.shape().to_vec(), data))
        } else if ta.is_scalar() {
            let x = ta.item();
            let data = tb.data().iter().map(|&y| f(x, y)).collect();
            Ok(Tensor::from_parts(tb.shape().to_vec(), data))
        } else {
            Err(Error::shape(name, shapes_of(&[ta, tb])))
        }
    }

    /// Elementwise sum; either side may be a one-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push_op(Op::Add(a, b), t, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push_op(Op::Sub(a, b), t, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push_op(Op::Mul(a, b), t, &[a, b]))
    }

    /// Adds a row vector `[n]` to every row of `x` (`[.., n]`).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let n = tx.last_dim();
        if tr.shape() != [n] {
            return Err(Error::shape("add_row", shapes_of(&[tx, tr])));
        }
        let rd = tr.data();
        let mut data = tx.data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (d, &r) in chunk.iter_mut().zip(rd) {
                *d += r;
            }
        }
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        Ok(self.push_op(Op::AddRow(x, row), t, &[x, row]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v * factor).collect();
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push_op(Op::Scale(x, factor), t, &[x])
    }

    /// Adds a scalar constant to every element.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v + c).collect();
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push_op(Op::Shift(x), t, &[x])
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push_op(op, t, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    /// Natural logarithm; fails on any non-positive input.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if let Some(bad) = tx.data().iter().find(|&&v| v.is_nan() || v <= 0.0) {
            return Err(Error::domain("log", format!("non-positive input {bad}")));
        }
        Ok(self.unary(x, Op::Log(x), f64::ln))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    fn check_finite(&self, op: &'static str, x: Var) -> Result<()> {
        if self.value(x).is_finite() {
            Ok(())
        } else {
            Err(Error::domain(op, "non-finite input"))
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check_finite("softmax", x)?;
        let tx = self.value(x);
        let mut out = vec![0.0; tx.numel()];
        softmax_rows(tx.data(), tx.last_dim(), &mut out);
        let t = Tensor::from_parts(tx.shape().to_vec(), out);
        Ok(self.push_op(Op::Softmax(x), t, &[x]))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.check_finite("log_softmax", x)?;
        let tx = self.value(x);
        let mut out = vec![0.0; tx.numel()];
        log_softmax_rows(tx.data(), tx.last_dim(), &mut out);
        let t = Tensor::from_parts(tx.shape().to_vec(), out);
        Ok(self.push_op(Op::LogSoftmax(x), t, &[x]))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let lead = self.value(*first).shape();
        let lead = lead[..lead.len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.value(x).shape();
            if s[..s.len() - 1] != lead[..] {
                let ts: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
                return Err(Error::shape("concat", shapes_of(&ts)));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push_op(Op::Concat(xs.to_vec()), Tensor::from_parts(shape, data), xs))
    }

    /// Fused LSTM cell. `gates` holds the pre-activations `[i; f; o; g]` of
    /// width `4H`, `c_prev` has width `H`. Returns `[h; c]` of width `2H`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let (tg, tc) = (self.value(gates), self.value(c_prev));
        let h = tc.numel();
        if tg.shape() != [4 * h] || tc.shape() != [h] {
            return Err(Error::shape("lstm_cell", shapes_of(&[tg, tc])));
        }
        let (a, cp) = (tg.data(), tc.data());
        let mut out = vec![0.0; 2 * h];
        for j in 0..h {
            let i = sigmoid(a[j]);
            let f = sigmoid(a[h + j]);
            let o = sigmoid(a[2 * h + j]);
            let u = a[3 * h + j].tanh();
            let c = f * cp[j] + i * u;
            out[j] = o * c.tanh();
            out[h + j] = c;
        }
        Ok(self.push_op(Op::LstmCell(gates, c_prev), Tensor::from_parts(vec![2 * h], out), &[gates, c_prev]))
    }

    /// Takes `len` entries starting at `start` along the last axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let w = tx.last_dim();
        if len == 0 || start + len > w {
            return Err(Error::shape(
                "slice",
                format!("{:?} with range {start}..{}", tx.shape(), start + len),
            ));
        }
        let data: Vec<f64> = tx
            .data()
            .chunks(w)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(self.push_op(Op::Slice(x, start, len), Tensor::from_parts(shape, data), &[x]))
    }

    /// Stacks equal-length vectors into a `[n, d]` matrix.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("stack", "no inputs"))?;
        let d = self.value(*first).numel();
        let mut data = Vec::with_capacity(d * xs.len());
        for &x in xs {
            let t = self.value(x);
            if t.shape() != [d] {
                let ts: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
                return Err(Error::shape("stack", shapes_of(&ts)));
            }
            data.extend_from_slice(t.data());
        }
        let t = Tensor::from_parts(vec![xs.len(), d], data);
        Ok(self.push_op(Op::Stack(xs.to_vec()), t, xs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if shape.iter().product::<usize>() != tx.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} to {shape:?}", tx.shape())));
        }
        let t = Tensor::from_parts(shape.to_vec(), tx.data().to_vec());
        Ok(self.push_op(Op::Reshape(x), t, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_op(Op::Sum(x), Tensor::scalar(s), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push_op(Op::Mean(x), Tensor::scalar(s), &[x])
    }

    /// Sum of several one-element nodes, accumulated left to right.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::shape("add_all", "no inputs"))?;
        let mut acc = first;
        for &x in rest {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }
}

/// Result of a reverse sweep: per-node adjoints plus per-parameter gradients.
#[derive(Clone, Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient with respect to any node that tracks gradients.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Option<Tensor> {
        self.nodes.get(v.0)?.as_ref().map(|g| {
            Tensor::from_parts(graph.value(v).shape().to_vec(), g.clone())
        })
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], graph: &Graph, v: Var) -> &'a mut [f64] {
    let n = graph.nodes[v.0].value.numel();
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

/// Reverse-mode sweep from a scalar `loss`. Every parameter registered in the
/// graph receives a gradient (zero when the loss does not depend on it).
pub fn backward(graph: &Graph, loss: Var) -> Result<Gradients> {
    let loss_value = graph.value(loss);
    if !loss_value.is_scalar() {
        return Err(Error::NotScalar(loss_value.shape().to_vec()));
    }
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; graph.nodes.len()];
    grads[loss.0] = Some(vec![1.0]);

    for i in (0..=loss.0).rev() {
        let Some(g) = grads[i].take() else { continue };
        let node = &graph.nodes[i];
        if node.requires_grad {
            propagate(graph, node, &g, &mut grads);
        }
        grads[i] = Some(g);
    }

    let mut params = ParamGrads::new();
    for (name, &v) in &graph.params {
        let g = grads[v.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; graph.value(v).numel()]);
        params.insert(name.clone(), Tensor::from_parts(graph.value(v).shape().to_vec(), g));
    }
    Ok(Gradients {
        nodes: grads,
        params,
    })
}

fn needs(graph: &Graph, v: Var) -> bool {
    graph.nodes[v.0].requires_grad
}

/// Accumulates `g` into a possibly-broadcast operand.
fn acc_broadcast(graph: &Graph, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], f: impl Fn(usize) -> f64) {
    if !needs(graph, v) {
        return;
    }
    let numel = graph.value(v).numel();
    let dst = slot(grads, graph, v);
    if numel == g.len() {
        for (k, (d, &gk)) in dst.iter_mut().zip(g).enumerate() {
            *d += gk * f(k);
        }
    } else {
        dst[0] += g.iter().enumerate().map(|(k, &gk)| gk * f(k)).sum::<f64>();
    }
}

fn propagate(graph: &Graph, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let y = node.value.data();
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (graph.value(*a), graph.value(*b));
            let (m, k) = (ta.shape()[0], ta.shape()[1]);
            let n = if tb.shape().len() == 2 { tb.shape()[1] } else { 1 };
            let (ad, bd) = (ta.data(), tb.data());
            if needs(graph, *a) {
                let da = slot(grads, graph, *a);
                if n == 1 {
                    for (p, &bp) in bd.iter().enumerate() {
                        if bp != 0.0 {
                            for (i, &gi) in g.iter().enumerate() {
                                da[i * k + p] += gi * bp;
                            }
                        }
                    }
                }
                for i in (0..m).filter(|_| n > 1) {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        da[i * k + p] += gi.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if needs(graph, *b) {
                let db = slot(grads, graph, *b);
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(gi) {
                            *d += aip * gv;
                        }
                    }
                }
            }
        }
        Op::Add(a, b) => {
            acc_broadcast(graph, grads, *a, g, |_| 1.0);
            acc_broadcast(graph, grads, *b, g, |_| 1.0);
        }
        Op::Sub(a, b) => {
            acc_broadcast(graph, grads, *a, g, |_| 1.0);
            acc_broadcast(graph, grads, *b, g, |_| -1.0);
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (graph.value(*a), graph.value(*b));
            let bval = |k: usize| if tb.is_scalar() { tb.data()[0] } else { tb.data()[k] };
            let aval = |k: usize| if ta.is_scalar() { ta.data()[0] } else { ta.data()[k] };
            acc_broadcast(graph, grads, *a, g, bval);
            acc_broadcast(graph, grads, *b, g, aval);
        }
        Op::AddRow(x, row) => {
            if needs(graph, *x) {
                for (d, &gv) in slot(grads, graph, *x).iter_mut().zip(g) {
                    *d += gv;
                }
            }
            if needs(graph, *row) {
                let n = graph.value(*row).numel();
                let dr = slot(grads, graph, *row);
                for chunk in g.chunks(n) {
                    for (d, &gv) in dr.iter_mut().zip(chunk) {
                        *d += gv;
                    }
                }
            }
        }
        Op::Scale(x, factor) => {
            for (d, &gv) in slot(grads, graph, *x).iter_mut().zip(g) {
                *d += gv * factor;
            }
        }
        Op::Shift(x) | Op::Reshape(x) => {
            for (d, &gv) in slot(grads, graph, *x).iter_mut().zip(g) {
                *d += gv;
            }
        }
        Op::Tanh(x) => {
            for ((d, &gv), &yv) in slot(grads, graph, *x).iter_mut().zip(g).zip(y) {
                *d += gv * (1.0 - yv * yv);
            }
        }
        Op::Sigmoid(x) => {
            for ((d, &gv), &yv) in slot(grads, graph, *x).iter_mut().zip(g).zip(y) {
                *d += gv * yv * (1.0 - yv);
            }
        }
        Op::Exp(x) => {
            for ((d, &gv), &yv) in slot(grads, graph, *x).iter_mut().zip(g).zip(y) {
                *d += gv * yv;
            }
        }
        Op::Log(x) => {
            let xd = graph.value(*x).data();
            for ((d, &gv), &xv) in slot(grads, graph, *x).iter_mut().zip(g).zip(xd) {
                *d += gv / xv;
            }
        }
        Op::Clamp(x, lo, hi) => {
            let xd = graph.value(*x).data();
            for ((d, &gv), &xv) in slot(grads, graph, *x).iter_mut().zip(g).zip(xd) {
                if xv >= *lo && xv <= *hi {
                    *d += gv;
                }
            }
        }
        Op::Softmax(x) => {
            let w = node.value.last_dim();
            let dx = slot(grads, graph, *x);
            for ((drow, grow), yrow) in dx.chunks_mut(w).zip(g.chunks(w)).zip(y.chunks(w)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                    *d += yv * (gv - dot);
                }
            }
        }
        Op::LogSoftmax(x) => {
            let w = node.value.last_dim();
            let dx = slot(grads, graph, *x);
            for ((drow, grow), yrow) in dx.chunks_mut(w).zip(g.chunks(w)).zip(y.chunks(w)) {
                let total: f64 = grow.iter().sum();
                for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                    *d += gv - yv.exp() * total;
                }
            }
        }
        Op::LstmCell(gates, c_prev) => {
            let (a, cp) = (graph.value(*gates).data(), graph.value(*c_prev).data());
            let h = cp.len();
            let mut da = vec![0.0; 4 * h];
            let mut dcp = vec![0.0; h];
            for j in 0..h {
                let i = sigmoid(a[j]);
                let f = sigmoid(a[h + j]);
                let o = sigmoid(a[2 * h + j]);
                let u = a[3 * h + j].tanh();
                let tc = y[h + j].tanh();
                let dh = g[j];
                let dc = g[h + j] + dh * o * (1.0 - tc * tc);
                da[j] = dc * u * i * (1.0 - i);
                da[h + j] = dc * cp[j] * f * (1.0 - f);
                da[2 * h + j] = dh * tc * o * (1.0 - o);
                da[3 * h + j] = dc * i * (1.0 - u * u);
                dcp[j] = dc * f;
            }
            if needs(graph, *gates) {
                for (d, v) in slot(grads, graph, *gates).iter_mut().zip(da) {
                    *d += v;
                }
            }
            if needs(graph, *c_prev) {
                for (d, v) in slot(grads, graph, *c_prev).iter_mut().zip(dcp) {
                    *d += v;
                }
            }
        }
        Op::Concat(xs) => {
            let total = node.value.last_dim();
            let rows = node.value.numel() / total;
            let mut offset = 0;
            for &x in xs {
                let w = graph.value(x).last_dim();
                if needs(graph, x) {
                    let dx = slot(grads, graph, x);
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + w];
                        for (d, &gv) in dx[r * w..(r + 1) * w].iter_mut().zip(src) {
                            *d += gv;
                        }
                    }
                }
                offset += w;
            }
        }
        Op::Slice(x, start, len) => {
            let w = graph.value(*x).last_dim();
            let dx = slot(grads, graph, *x);
            for (drow, grow) in dx.chunks_mut(w).zip(g.chunks(*len)) {
                for (d, &gv) in drow[*start..start + len].iter_mut().zip(grow) {
                    *d += gv;
                }
            }
        }
        Op::Stack(xs) => {
            let d = node.value.last_dim();
            for (r, &x) in xs.iter().enumerate() {
                if needs(graph, x) {
                    for (dst, &gv) in slot(grads, graph, x).iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *dst += gv;
                    }
                }
            }
        }
        Op::Sum(x) => {
            for d in slot(grads, graph, *x).iter_mut() {
                *d += g[0];
            }
        }
        Op::Mean(x) => {
            let n = graph.value(*x).numel() as f64;
            for d in slot(grads, graph, *x).iter_mut() {
                *d += g[0] / n;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0; 3]));
        let s = g.softmax(x).unwrap();
        for &v in g.value(s).data() {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let s = g.sigmoid(x);
        assert_eq!(g.scalar_value(s), 0.5);
    }

    #[test]
    fn identity_matmul_returns_operand() {
        let mut g = Graph::new();
        let eye = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let a = Tensor::matrix(3, 2, vec![1.5, -2.0, 0.25, 4.0, -7.0, 3.0]).unwrap();
        let (i, av) = (g.constant(eye), g.constant(a.clone()));
        let out = g.matmul(i, av).unwrap();
        assert_eq!(g.value(out), &a);
    }

    #[test]
    fn shape_errors_name_the_operation() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]") && err.contains("[2]"), "{err}");
        let c = g.constant(Tensor::zeros(&[4]));
        assert!(g.add(b, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn log_of_non_positive_fails() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(g.log(x), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::vector(vec![1.0, 2.0, 3.0]));
        let mut g = Graph::new();
        let x = g.param(&store, "x").unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        let grads = backward(&g, loss).unwrap();
        assert_eq!(grads.params().get("x").unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::vector(vec![0.3, -0.1]));
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let _unused = g.tanh(w);
        let c = g.constant(Tensor::scalar(4.2));
        let grads = backward(&g, c).unwrap();
        assert_eq!(grads.params().get("w").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn log_sigmoid_gradient_matches_finite_difference() {
        let f = |w: f64| {
            let mut g = Graph::new();
            let x = g.input(Tensor::scalar(w));
            let s = g.sigmoid(x);
            let l = g.log(s).unwrap();
            (g.scalar_value(l), backward(&g, l).unwrap().wrt(&g, x).unwrap().item())
        };
        let (_, analytic) = f(0.0);
        let h = 1e-6;
        let numeric = (f(h).0 - f(-h).0) / (2.0 * h);
        assert!(close(numeric, 0.5, 1e-9));
        assert!(close(analytic, 0.5, 1e-15));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(backward(&g, x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn param_nodes_are_shared() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::scalar(2.0));
        let mut g = Graph::new();
        let a = g.param(&store, "w").unwrap();
        let b = g.param(&store, "w").unwrap();
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap();
        let grads = backward(&g, y).unwrap();
        assert_eq!(grads.params().get("w").unwrap().item(), 4.0);
    }
}
