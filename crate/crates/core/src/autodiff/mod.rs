//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! and whatever it needs for the backward pass. Because nodes are only ever
//! appended, node order is a topological order, and [`Graph::backward`] walks
//! it once in reverse.
//!
//! Leaf gradients accumulate across `backward` calls until
//! [`Graph::zero_grad`]. Leaves that the loss does not depend on report a zero
//! gradient.

mod gradcheck;

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};

use crate::error::{Error, Result};
use crate::tensor::{axis_split, gemm, gemm_nt, gemm_tn, inverse_perm, permute, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    /// tanh approximation.
    Gelu,
    Identity,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let u = GELU_C * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Activation::Identity => 1.0,
        }
    }
}

enum Op {
    Leaf,
    /// `a[.., k] · b[k, n]`, leading axes of `a` flattened into `m` rows.
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    /// Batched `a[bt, m, k] · b[bt, k, n]`, or `· b[bt, n, k]ᵀ` when `trans_b`.
    Bmm { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
    AddBias { x: usize, bias: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, factor: f64 },
    Act { x: usize, kind: Activation },
    Softmax { x: usize, axis: usize },
    LogSoftmax { x: usize, axis: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Reshape { x: usize },
    Permute { x: usize, perm: Vec<usize> },
    SliceLast { x: usize, start: usize },
    ConcatLast { a: usize, b: usize },
    Sum { x: usize },
    Mean { x: usize },
    SecondDiff { x: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Build one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Accumulated gradient of a leaf; zeros if the leaf was never reached.
    pub fn grad(&self, var: Var<'_>) -> Tensor {
        let shape = var.shape();
        match self.grads.borrow().get(var.id).and_then(Option::as_ref) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    /// Populates gradients of every differentiable leaf with `∂loss/∂leaf`.
    /// Calling it again without [`Graph::zero_grad`] adds to the stored values.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.id).map(|_| None).collect();
        adj[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = adj[id].take() else { continue };
            if let Op::Leaf = node.op {
                let mut grads = self.grads.borrow_mut();
                if grads.len() < nodes.len() {
                    grads.resize(nodes.len(), None);
                }
                match &mut grads[id] {
                    Some(g) => g.iter_mut().zip(&dy).for_each(|(g, d)| *g += d),
                    slot => *slot = Some(dy),
                }
                continue;
            }
            backward_node(&nodes, node, &dy, &mut adj);
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, delta: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut adj[id] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(g, d)| *g += d),
        slot => *slot = Some(delta),
    }
}

fn backward_node(nodes: &[Node], node: &Node, dy: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let val = |id: usize| nodes[id].value.data();
    let wants = |id: usize| nodes[id].requires_grad;
    let out = node.value.data();
    match node.op {
        Op::Leaf => unreachable!(),
        Op::MatMul { a, b, m, k, n } => {
            if wants(a) {
                accumulate(adj, nodes, a, gemm_nt(m, n, k, dy, val(b)));
            }
            if wants(b) {
                accumulate(adj, nodes, b, gemm_tn(k, m, n, val(a), dy));
            }
        }
        Op::Bmm { a, b, batch, m, k, n, trans_b } => {
            let (av, bv) = (val(a), val(b));
            if wants(a) {
                let mut da = Vec::with_capacity(batch * m * k);
                for t in 0..batch {
                    let g = &dy[t * m * n..(t + 1) * m * n];
                    let bb = &bv[t * k * n..(t + 1) * k * n];
                    if trans_b {
                        da.extend(gemm(m, n, k, g, bb));
                    } else {
                        da.extend(gemm_nt(m, n, k, g, bb));
                    }
                }
                accumulate(adj, nodes, a, da);
            }
            if wants(b) {
                let mut db = Vec::with_capacity(batch * k * n);
                for t in 0..batch {
                    let g = &dy[t * m * n..(t + 1) * m * n];
                    let aa = &av[t * m * k..(t + 1) * m * k];
                    if trans_b {
                        db.extend(gemm_tn(n, m, k, g, aa));
                    } else {
                        db.extend(gemm_tn(k, m, n, aa, g));
                    }
                }
                accumulate(adj, nodes, b, db);
            }
        }
        Op::AddBias { x, bias } => {
            if wants(bias) {
                let n = nodes[bias].value.numel();
                let mut db = vec![0.0; n];
                for row in dy.chunks_exact(n) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
                accumulate(adj, nodes, bias, db);
            }
            accumulate(adj, nodes, x, dy.to_vec());
        }
        Op::Add { a, b } => {
            accumulate(adj, nodes, a, dy.to_vec());
            accumulate(adj, nodes, b, dy.to_vec());
        }
        Op::Sub { a, b } => {
            accumulate(adj, nodes, a, dy.to_vec());
            if wants(b) {
                accumulate(adj, nodes, b, dy.iter().map(|g| -g).collect());
            }
        }
        Op::Mul { a, b } => {
            if wants(a) {
                accumulate(adj, nodes, a, dy.iter().zip(val(b)).map(|(g, v)| g * v).collect());
            }
            if wants(b) {
                accumulate(adj, nodes, b, dy.iter().zip(val(a)).map(|(g, v)| g * v).collect());
            }
        }
        Op::Scale { x, factor } => {
            accumulate(adj, nodes, x, dy.iter().map(|g| g * factor).collect());
        }
        Op::Act { x, kind } => {
            let dx = dy
                .iter()
                .zip(val(x))
                .map(|(g, &v)| g * kind.derivative(v))
                .collect();
            accumulate(adj, nodes, x, dx);
        }
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = axis_split(node.value.shape(), axis);
            let mut dx = vec![0.0; out.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let dot: f64 = (0..len).map(|j| dy[at(j)] * out[at(j)]).sum();
                    for j in 0..len {
                        dx[at(j)] = out[at(j)] * (dy[at(j)] - dot);
                    }
                }
            }
            accumulate(adj, nodes, x, dx);
        }
        Op::LogSoftmax { x, axis } => {
            let (outer, len, inner) = axis_split(node.value.shape(), axis);
            let mut dx = vec![0.0; out.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let total: f64 = (0..len).map(|j| dy[at(j)]).sum();
                    for j in 0..len {
                        dx[at(j)] = dy[at(j)] - out[at(j)].exp() * total;
                    }
                }
            }
            accumulate(adj, nodes, x, dx);
        }
        Op::LayerNorm { x, gamma, beta, ref xhat, ref inv_std } => {
            let d = nodes[gamma].value.numel();
            let g = val(gamma);
            if wants(gamma) {
                let mut dg = vec![0.0; d];
                for (row_dy, row_xh) in dy.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for j in 0..d {
                        dg[j] += row_dy[j] * row_xh[j];
                    }
                }
                accumulate(adj, nodes, gamma, dg);
            }
            if wants(beta) {
                let mut db = vec![0.0; d];
                for row in dy.chunks_exact(d) {
                    db.iter_mut().zip(row).for_each(|(b, v)| *b += v);
                }
                accumulate(adj, nodes, beta, db);
            }
            if wants(x) {
                let mut dx = Vec::with_capacity(dy.len());
                let mut dxhat = vec![0.0; d];
                for ((row_dy, row_xh), &s) in dy.chunks_exact(d).zip(xhat.chunks_exact(d)).zip(inv_std) {
                    for j in 0..d {
                        dxhat[j] = row_dy[j] * g[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dx = dxhat.iter().zip(row_xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dx.push(s * (dxhat[j] - mean_d - row_xh[j] * mean_dx));
                    }
                }
                accumulate(adj, nodes, x, dx);
            }
        }
        Op::Reshape { x } => accumulate(adj, nodes, x, dy.to_vec()),
        Op::Permute { x, ref perm } => {
            let (_, dx) = permute(node.value.shape(), &inverse_perm(perm), dy);
            accumulate(adj, nodes, x, dx);
        }
        Op::SliceLast { x, start } => {
            let in_shape = nodes[x].value.shape();
            let full = *in_shape.last().unwrap();
            let len = *node.value.shape().last().unwrap();
            let mut dx = vec![0.0; nodes[x].value.numel()];
            for (row_dx, row_dy) in dx.chunks_exact_mut(full).zip(dy.chunks_exact(len)) {
                row_dx[start..start + len].copy_from_slice(row_dy);
            }
            accumulate(adj, nodes, x, dx);
        }
        Op::ConcatLast { a, b } => {
            let la = *nodes[a].value.shape().last().unwrap();
            let lb = *nodes[b].value.shape().last().unwrap();
            let rows = dy.chunks_exact(la + lb);
            if wants(a) {
                accumulate(adj, nodes, a, rows.clone().flat_map(|r| r[..la].iter().copied()).collect());
            }
            if wants(b) {
                accumulate(adj, nodes, b, rows.flat_map(|r| r[la..].iter().copied()).collect());
            }
        }
        Op::Sum { x } => accumulate(adj, nodes, x, vec![dy[0]; nodes[x].value.numel()]),
        Op::Mean { x } => {
            let n = nodes[x].value.numel();
            accumulate(adj, nodes, x, vec![dy[0] / n as f64; n]);
        }
        Op::SecondDiff { x } => {
            let full = *nodes[x].value.shape().last().unwrap();
            let len = full - 2;
            let mut dx = vec![0.0; nodes[x].value.numel()];
            for (row_dx, row_dy) in dx.chunks_exact_mut(full).zip(dy.chunks_exact(len)) {
                for (t, &g) in row_dy.iter().enumerate() {
                    row_dx[t] += g;
                    row_dx[t + 1] -= 2.0 * g;
                    row_dx[t + 2] += g;
                }
            }
            accumulate(adj, nodes, x, dx);
        }
    }
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().expect("rank >= 1")
}

impl<'g> Var<'g> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn graph(self) -> &'g Graph {
        self.graph
    }

    pub fn shape(self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn value(self) -> Tensor {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn item(self) -> f64 {
        self.graph.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn rg(self) -> bool {
        self.requires_grad()
    }

    fn unary(self, f: impl FnOnce(&Tensor) -> Result<(Tensor, Op)>) -> Result<Var<'g>> {
        let (value, op) = {
            let nodes = self.graph.nodes.borrow();
            f(&nodes[self.id].value)?
        };
        Ok(self.graph.push(value, op, self.rg()))
    }

    fn binary(self, other: Var<'g>, f: impl FnOnce(&Tensor, &Tensor) -> Result<(Tensor, Op)>) -> Result<Var<'g>> {
        assert!(std::ptr::eq(self.graph, other.graph), "vars from different graphs");
        let (value, op) = {
            let nodes = self.graph.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        Ok(self.graph.push(value, op, self.rg() || other.rg()))
    }

    /// Contracts the last axis of `self` with the rows of the 2-D `rhs`.
    pub fn matmul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.id, rhs.id);
        self.binary(rhs, |x, w| {
            let (xs, ws) = (x.shape(), w.shape());
            if ws.len() != 2 || last_dim(xs) != ws[0] {
                return Err(Error::shape("matmul", xs, ws));
            }
            let (k, n) = (ws[0], ws[1]);
            let m = x.numel() / k;
            let mut shape = xs.to_vec();
            *shape.last_mut().unwrap() = n;
            let out = Tensor::new(shape, gemm(m, k, n, x.data(), w.data()))?;
            Ok((out, Op::MatMul { a, b, m, k, n }))
        })
    }

    fn bmm_impl(self, rhs: Var<'g>, trans_b: bool) -> Result<Var<'g>> {
        let (a, b) = (self.id, rhs.id);
        self.binary(rhs, |x, y| {
            let (xs, ys) = (x.shape(), y.shape());
            let op = if trans_b { "bmm_nt" } else { "bmm" };
            if xs.len() != 3 || ys.len() != 3 || xs[0] != ys[0] {
                return Err(Error::shape(op, xs, ys));
            }
            let (batch, m, k) = (xs[0], xs[1], xs[2]);
            let n = if trans_b { ys[1] } else { ys[2] };
            let inner = if trans_b { ys[2] } else { ys[1] };
            if inner != k {
                return Err(Error::shape(op, xs, ys));
            }
            let mut data = Vec::with_capacity(batch * m * n);
            for t in 0..batch {
                let xa = &x.data()[t * m * k..(t + 1) * m * k];
                let yb = &y.data()[t * k * n..(t + 1) * k * n];
                if trans_b {
                    data.extend(gemm_nt(m, k, n, xa, yb));
                } else {
                    data.extend(gemm(m, k, n, xa, yb));
                }
            }
            let out = Tensor::new([batch, m, n], data)?;
            Ok((out, Op::Bmm { a, b, batch, m, k, n, trans_b }))
        })
    }

    /// Batched product `[b,m,k]·[b,k,n] → [b,m,n]`.
    pub fn bmm(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.bmm_impl(rhs, false)
    }

    /// Batched product against transposed right factors: `[b,m,k]·[b,n,k]ᵀ → [b,m,n]`.
    pub fn bmm_nt(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.bmm_impl(rhs, true)
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(self, bias: Var<'g>) -> Result<Var<'g>> {
        let (x, b) = (self.id, bias.id);
        self.binary(bias, |v, bv| {
            let n = last_dim(v.shape());
            if bv.numel() != n {
                return Err(Error::shape("add_bias", v.shape(), bv.shape()));
            }
            let mut data = v.data().to_vec();
            for row in data.chunks_exact_mut(n) {
                row.iter_mut().zip(bv.data()).for_each(|(r, b)| *r += b);
            }
            Ok((Tensor::new(v.shape(), data)?, Op::AddBias { x, bias: b }))
        })
    }

    fn zip_with(self, rhs: Var<'g>, name: &'static str, f: fn(f64, f64) -> f64, op: Op) -> Result<Var<'g>> {
        self.binary(rhs, |a, b| {
            if a.shape() != b.shape() {
                return Err(Error::shape(name, a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Ok((Tensor::new(a.shape(), data)?, op))
        })
    }

    pub fn add(self, rhs: Var<'g>) -> Result<Var<'g>> {
        let op = Op::Add { a: self.id, b: rhs.id };
        self.zip_with(rhs, "add", |x, y| x + y, op)
    }

    pub fn sub(self, rhs: Var<'g>) -> Result<Var<'g>> {
        let op = Op::Sub { a: self.id, b: rhs.id };
        self.zip_with(rhs, "sub", |x, y| x - y, op)
    }

    /// Elementwise product.
    pub fn mul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        let op = Op::Mul { a: self.id, b: rhs.id };
        self.zip_with(rhs, "mul", |x, y| x * y, op)
    }

    pub fn scale(self, factor: f64) -> Var<'g> {
        let x = self.id;
        self.unary(|v| {
            let data = v.data().iter().map(|a| a * factor).collect();
            Ok((Tensor::new(v.shape(), data)?, Op::Scale { x, factor }))
        })
        .expect("scale is shape-preserving")
    }

    pub fn activate(self, kind: Activation) -> Var<'g> {
        if kind == Activation::Identity {
            return self;
        }
        let x = self.id;
        self.unary(|v| {
            let data = v.data().iter().map(|&a| kind.apply(a)).collect();
            Ok((Tensor::new(v.shape(), data)?, Op::Act { x, kind }))
        })
        .expect("activation is shape-preserving")
    }

    pub fn relu(self) -> Var<'g> {
        self.activate(Activation::Relu)
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(self, axis: usize) -> Result<Var<'g>> {
        let x = self.id;
        self.unary(|v| {
            if axis >= v.shape().len() {
                return Err(Error::Contract(format!("softmax axis {axis} out of range for {:?}", v.shape())));
            }
            let data = softmax_along(v, axis, false);
            Ok((Tensor::new(v.shape(), data)?, Op::Softmax { x, axis }))
        })
    }

    /// Log-softmax along `axis`, max-subtracted.
    pub fn log_softmax(self, axis: usize) -> Result<Var<'g>> {
        let x = self.id;
        self.unary(|v| {
            if axis >= v.shape().len() {
                return Err(Error::Contract(format!("log_softmax axis {axis} out of range for {:?}", v.shape())));
            }
            let data = softmax_along(v, axis, true);
            Ok((Tensor::new(v.shape(), data)?, Op::LogSoftmax { x, axis }))
        })
    }

    /// Normalizes each row over the last axis (population variance), then
    /// applies `gamma · x̂ + beta`.
    pub fn layernorm(self, gamma: Var<'g>, beta: Var<'g>, eps: f64) -> Result<Var<'g>> {
        let (x, gid, bid) = (self.id, gamma.id, beta.id);
        let rg = self.rg() || gamma.rg() || beta.rg();
        let (value, op) = {
            let nodes = self.graph.nodes.borrow();
            let (v, g, b) = (&nodes[x].value, &nodes[gid].value, &nodes[bid].value);
            let d = last_dim(v.shape());
            if g.numel() != d || b.numel() != d {
                return Err(Error::shape("layernorm", v.shape(), g.shape()));
            }
            let rows = v.numel() / d;
            let mut xhat = Vec::with_capacity(v.numel());
            let mut inv_std = Vec::with_capacity(rows);
            let mut out = Vec::with_capacity(v.numel());
            for row in v.data().chunks_exact(d) {
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / d as f64;
                let s = 1.0 / (var + eps).sqrt();
                inv_std.push(s);
                for j in 0..d {
                    let h = (row[j] - mean) * s;
                    xhat.push(h);
                    out.push(g.data()[j] * h + b.data()[j]);
                }
            }
            let op = Op::LayerNorm { x, gamma: gid, beta: bid, xhat, inv_std };
            (Tensor::new(v.shape(), out)?, op)
        };
        Ok(self.graph.push(value, op, rg))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let x = self.id;
        self.unary(|v| Ok((v.clone().reshape(shape.to_vec())?, Op::Reshape { x })))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'g>> {
        let x = self.id;
        self.unary(|v| {
            let mut seen = perm.to_vec();
            seen.sort_unstable();
            if perm.len() != v.shape().len() || seen.iter().enumerate().any(|(i, &p)| i != p) {
                return Err(Error::shape("permute", v.shape(), perm));
            }
            let (shape, data) = permute(v.shape(), perm, v.data());
            Ok((Tensor::new(shape, data)?, Op::Permute { x, perm: perm.to_vec() }))
        })
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(self, start: usize, len: usize) -> Result<Var<'g>> {
        let x = self.id;
        self.unary(|v| {
            let full = last_dim(v.shape());
            if len == 0 || start + len > full {
                return Err(Error::shape("slice_last", v.shape(), &[start, len]));
            }
            let data = v.data().chunks_exact(full).flat_map(|r| r[start..start + len].iter().copied()).collect();
            let mut shape = v.shape().to_vec();
            *shape.last_mut().unwrap() = len;
            Ok((Tensor::new(shape, data)?, Op::SliceLast { x, start }))
        })
    }

    pub fn concat_last(self, rhs: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.id, rhs.id);
        self.binary(rhs, |x, y| {
            let (xs, ys) = (x.shape(), y.shape());
            if xs.len() != ys.len() || xs[..xs.len() - 1] != ys[..ys.len() - 1] {
                return Err(Error::shape("concat_last", xs, ys));
            }
            let (la, lb) = (last_dim(xs), last_dim(ys));
            let data = x
                .data()
                .chunks_exact(la)
                .zip(y.data().chunks_exact(lb))
                .flat_map(|(r, s)| r.iter().chain(s).copied())
                .collect();
            let mut shape = xs.to_vec();
            *shape.last_mut().unwrap() = la + lb;
            Ok((Tensor::new(shape, data)?, Op::ConcatLast { a, b }))
        })
    }

    pub fn sum(self) -> Var<'g> {
        let x = self.id;
        self.unary(|v| Ok((Tensor::scalar(v.data().iter().sum()), Op::Sum { x })))
            .expect("sum")
    }

    pub fn mean(self) -> Var<'g> {
        let x = self.id;
        self.unary(|v| {
            let m = v.data().iter().sum::<f64>() / v.numel() as f64;
            Ok((Tensor::scalar(m), Op::Mean { x }))
        })
        .expect("mean")
    }

    /// `x[.., t] − 2·x[.., t+1] + x[.., t+2]` along the last axis.
    pub fn second_diff(self) -> Result<Var<'g>> {
        let x = self.id;
        self.unary(|v| {
            let full = last_dim(v.shape());
            if full < 3 {
                return Err(Error::config(format!("second difference needs at least 3 steps, got {full}")));
            }
            let data = v
                .data()
                .chunks_exact(full)
                .flat_map(|r| r.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]))
                .collect();
            let mut shape = v.shape().to_vec();
            *shape.last_mut().unwrap() = full - 2;
            Ok((Tensor::new(shape, data)?, Op::SecondDiff { x }))
        })
    }

    /// Same value, cut out of the gradient path.
    pub fn detach(self) -> Var<'g> {
        self.graph.constant(self.value())
    }
}

fn softmax_along(v: &Tensor, axis: usize, log: bool) -> Vec<f64> {
    let (outer, len, inner) = axis_split(v.shape(), axis);
    let src = v.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = (0..len).map(|j| (src[at(j)] - max).exp()).sum();
            if log {
                let lse = total.ln();
                for j in 0..len {
                    out[at(j)] = src[at(j)] - max - lse;
                }
            } else {
                for j in 0..len {
                    out[at(j)] = (src[at(j)] - max).exp() / total;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
