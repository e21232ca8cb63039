//! A small reverse-mode autodiff tape over dense [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and [`Graph::backward`] is a single reverse sweep.
//! Binary elementwise ops broadcast NumPy-style between tensors of equal
//! rank where one side has extent 1.

use crate::error::ShapeError;
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Scalar function used by the norm-gated nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Gate {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Gate::Identity => x,
            Gate::Relu => x.max(0.0),
            Gate::Sigmoid => sigmoid(x),
            Gate::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Gate::Identity => 1.0,
            Gate::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Gate::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Gate::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `max(x,0) − x·c + ln(1 + e^{−|x|})`: BCE of `sigmoid(x)` against `c`.
pub fn bce_with_logit(x: f64, c: f64) -> f64 {
    x.max(0.0) - x * c + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Sqrt,
    Exp,
    Log,
    Sigmoid,
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug)]
enum MatMulKind {
    /// (m,k)·(k,n), or (B,m,k)·(k,n) flattened to ((B·m),k)·(k,n)
    Flat { m: usize, k: usize, n: usize },
    /// (m,k)·(B,k,n)
    LeftBroadcast { batch: usize, m: usize, k: usize, n: usize },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var, MatMulKind),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    SumAll(Var),
    SumAxis(Var),
    Softmax(Var),
    NormGate(Var, Gate),
    WeightedBce { logits: Var, targets: Tensor, weights: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients from one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a node, or `None` if nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn pad3(shape: &[usize]) -> [usize; 3] {
    let mut out = [1; 3];
    let off = 3 - shape.len();
    out[off..].copy_from_slice(shape);
    out
}

/// `(outer, len, inner)` for iterating along `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, ShapeError> {
    if a.len() != b.len() {
        return Err(ShapeError::new(format!("rank mismatch {a:?} vs {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(ShapeError::new(format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

fn strides(shape: [usize; 3], out: [usize; 3]) -> [usize; 3] {
    let s = [shape[1] * shape[2], shape[2], 1];
    let mut r = [0; 3];
    for d in 0..3 {
        r[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { s[d] };
    }
    r
}

/// Sums `grad` (shaped like the broadcast output) down to `target` shape.
fn reduce_to(grad: &Tensor, target: &[usize]) -> Tensor {
    if grad.shape() == target {
        return grad.clone();
    }
    let out3 = pad3(grad.shape());
    let t3 = pad3(target);
    let st = strides(t3, out3);
    let mut out = vec![0.0; target.iter().product()];
    let g = grad.data();
    let mut idx = 0;
    for i in 0..out3[0] {
        for j in 0..out3[1] {
            for k in 0..out3[2] {
                out[i * st[0] + j * st[1] + k * st[2]] += g[idx];
                idx += 1;
            }
        }
    }
    Tensor::from_parts(target.to_vec(), out)
}

fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, ShapeError> {
    if a.shape() == b.shape() {
        return Ok(a.zip_map(b, f));
    }
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let o3 = pad3(&shape);
    let sa = strides(pad3(a.shape()), o3);
    let sb = strides(pad3(b.shape()), o3);
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(shape.iter().product());
    for i in 0..o3[0] {
        for j in 0..o3[1] {
            for k in 0..o3[2] {
                out.push(f(ad[i * sa[0] + j * sa[1] + k * sa[2]], bd[i * sb[0] + j * sb[1] + k * sb[2]]));
            }
        }
    }
    Ok(Tensor::from_parts(shape, out))
}

/// `a` broadcast to `shape`.
fn expand(a: &Tensor, shape: &[usize]) -> Tensor {
    let zeros = Tensor::zeros(shape);
    broadcast_zip(&zeros, a, |_, y| y).expect("broadcastable by construction")
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable input; gradients are reported for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A fixed input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(a), self.value(b));
        let value = match kind {
            Binary::Add => broadcast_zip(x, y, |p, q| p + q),
            Binary::Sub => broadcast_zip(x, y, |p, q| p - q),
            Binary::Mul => broadcast_zip(x, y, |p, q| p * q),
            Binary::Div => broadcast_zip(x, y, |p, q| p / q),
        }?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let x = self.value(a);
        let value = match kind {
            Unary::Sqrt => x.map(f64::sqrt),
            Unary::Exp => x.map(f64::exp),
            Unary::Log => x.map(f64::ln),
            Unary::Sigmoid => x.map(sigmoid),
            Unary::Relu => x.map(|v| v.max(0.0)),
            Unary::Tanh => x.map(f64::tanh),
        };
        let rg = self.rg(a);
        self.push(value, Op::Unary(kind, a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Unary::Log, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// `(m,k)·(k,n)`, `(B,m,k)·(k,n)` or `(m,k)·(B,k,n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || ShapeError::new(format!("matmul {sa:?} · {sb:?}"));
        let (kind, out_shape) = match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => (MatMulKind::Flat { m, k, n }, vec![m, n]),
            (&[bt, m, k], &[k2, n]) if k == k2 => (MatMulKind::Flat { m: bt * m, k, n }, vec![bt, m, n]),
            (&[m, k], &[bt, k2, n]) if k == k2 => (MatMulKind::LeftBroadcast { batch: bt, m, k, n }, vec![bt, m, n]),
            _ => return Err(mismatch()),
        };
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; out_shape.iter().product()];
        match kind {
            MatMulKind::Flat { m, k, n } => gemm(m, k, n, x, false, y, false, &mut out, 0.0),
            MatMulKind::LeftBroadcast { batch, m, k, n } => {
                for bi in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        x,
                        false,
                        &y[bi * k * n..(bi + 1) * k * n],
                        false,
                        &mut out[bi * m * n..(bi + 1) * m * n],
                        0.0,
                    );
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::MatMul(a, b, kind), rg))
    }

    /// Transpose of a rank-2 node.
    pub fn transpose(&mut self, a: Var) -> Result<Var, ShapeError> {
        if self.shape(a).len() != 2 {
            return Err(ShapeError::new("transpose needs rank 2"));
        }
        let value = self.value(a).t();
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, ShapeError> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, ShapeError> {
        let first = parts.first().ok_or_else(|| ShapeError::new("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(ShapeError::new("concat axis out of range"));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(ShapeError::new(format!("concat {base:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis] * inner;
                out.extend_from_slice(&self.value(*p).data()[o * len..(o + 1) * len]);
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(parts.to_vec(), axis), rg))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, ShapeError> {
        let src = self.shape(a).to_vec();
        if axis >= src.len() || start + len > src[axis] {
            return Err(ShapeError::new(format!("slice {start}+{len} on axis {axis} of {src:?}")));
        }
        let (outer, full, inner) = axis_split(&src, axis);
        let data = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut shape = src;
        shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Slice(a, axis, start), rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, ShapeError> {
        let src = self.shape(a).to_vec();
        if axis >= src.len() {
            return Err(ShapeError::new("sum axis out of range"));
        }
        let (outer, len, inner) = axis_split(&src, axis);
        let data = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                for n in 0..inner {
                    out[o * inner + n] += data[(o * len + i) * inner + n];
                }
            }
        }
        let mut shape = src;
        shape[axis] = 1;
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::SumAxis(a), rg))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, ShapeError> {
        let n = *self.shape(a).get(axis).ok_or_else(|| ShapeError::new("mean axis out of range"))?;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Population variance along `axis`, kept with extent 1.
    pub fn variance_axis(&mut self, a: Var, axis: usize) -> Result<Var, ShapeError> {
        let mean = self.mean_axis(a, axis)?;
        let centered = self.sub(a, mean)?;
        let sq = self.mul(centered, centered)?;
        self.mean_axis(sq, axis)
    }

    /// Softmax along the last axis. Entries equal to `-inf` get weight 0.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = *x.shape().last().expect("softmax of a scalar");
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg)
    }

    /// `v ↦ gate(‖v‖)·v/‖v‖` over axis 1 of an (L, l, s) tensor; 0 at v = 0.
    pub fn norm_gate(&mut self, a: Var, gate: Gate) -> Result<Var, ShapeError> {
        let &[len, dim, mult] = self.shape(a) else {
            return Err(ShapeError::new("norm gate needs rank 3"));
        };
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for t in 0..len {
            for k in 0..mult {
                let idx = |i: usize| (t * dim + i) * mult + k;
                let norm = (0..dim).map(|i| x[idx(i)].powi(2)).sum::<f64>().sqrt();
                if norm > 0.0 {
                    let factor = gate.eval(norm) / norm;
                    for i in 0..dim {
                        out[idx(i)] = factor * x[idx(i)];
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![len, dim, mult], out);
        let rg = self.rg(a);
        Ok(self.push(value, Op::NormGate(a, gate), rg))
    }

    /// `Σ_ij w_j·BCE(sigmoid(x_ij), c_ij)` for 12×T logits, in fused form.
    pub fn weighted_bce(&mut self, logits: Var, targets: &Tensor, weights: &[f64]) -> Result<Var, ShapeError> {
        let x = self.value(logits);
        if x.shape() != targets.shape() || x.rank() != 2 || x.cols() != weights.len() {
            return Err(ShapeError::new(format!(
                "bce logits {:?}, targets {:?}, {} weights",
                x.shape(),
                targets.shape(),
                weights.len()
            )));
        }
        let cols = x.cols();
        let total: f64 = x
            .data()
            .iter()
            .zip(targets.data())
            .enumerate()
            .map(|(idx, (&xi, &ci))| weights[idx % cols] * bce_with_logit(xi, ci))
            .sum();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedBce { logits, targets: targets.clone(), weights: weights.to_vec() },
            rg,
        ))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, ShapeError> {
        if self.value(root).len() != 1 {
            return Err(ShapeError::new(format!("backward needs a scalar root, got shape {:?}", self.shape(root))));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));
        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &grad, &mut grads);
            }
            grads[idx] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, grad: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (ga, gb) = match kind {
                    Binary::Add => (grad.clone(), grad.clone()),
                    Binary::Sub => (grad.clone(), grad.scale(-1.0)),
                    Binary::Mul => (
                        broadcast_zip(grad, y, |g, q| g * q).expect("shape"),
                        broadcast_zip(grad, x, |g, p| g * p).expect("shape"),
                    ),
                    Binary::Div => {
                        let ga = broadcast_zip(grad, y, |g, q| g / q).expect("shape");
                        // d(x/y)/dy = −out/y
                        let t = broadcast_zip(grad, &node.value, |g, o| g * o).expect("shape");
                        let gb = broadcast_zip(&t, y, |g, q| -g / q).expect("shape");
                        (ga, gb)
                    }
                };
                if self.rg(*a) {
                    self.accumulate(grads, *a, reduce_to(&ga, x.shape()));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, reduce_to(&gb, y.shape()));
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a);
                let out = &node.value;
                let local = match kind {
                    Unary::Sqrt => out.map(|o| 0.5 / o),
                    Unary::Exp => out.clone(),
                    Unary::Log => x.map(|v| 1.0 / v),
                    Unary::Sigmoid => out.map(|s| s * (1.0 - s)),
                    Unary::Relu => x.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
                    Unary::Tanh => out.map(|t| 1.0 - t * t),
                };
                self.accumulate(grads, *a, grad.zip_map(&local, |g, d| g * d));
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, grad.scale(*c)),
            Op::AddScalar(a) => self.accumulate(grads, *a, grad.clone()),
            Op::MatMul(a, b, kind) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let g = grad.data();
                match *kind {
                    MatMulKind::Flat { m, k, n } => {
                        if self.rg(*a) {
                            let mut ga = vec![0.0; m * k];
                            gemm(m, n, k, g, false, y.data(), true, &mut ga, 0.0);
                            self.accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), ga));
                        }
                        if self.rg(*b) {
                            let mut gb = vec![0.0; k * n];
                            gemm(k, m, n, x.data(), true, g, false, &mut gb, 0.0);
                            self.accumulate(grads, *b, Tensor::from_parts(y.shape().to_vec(), gb));
                        }
                    }
                    MatMulKind::LeftBroadcast { batch, m, k, n } => {
                        if self.rg(*a) {
                            let mut ga = vec![0.0; m * k];
                            for bi in 0..batch {
                                let gs = &g[bi * m * n..(bi + 1) * m * n];
                                let ys = &y.data()[bi * k * n..(bi + 1) * k * n];
                                gemm(m, n, k, gs, false, ys, true, &mut ga, 1.0);
                            }
                            self.accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), ga));
                        }
                        if self.rg(*b) {
                            let mut gb = vec![0.0; batch * k * n];
                            for bi in 0..batch {
                                let gs = &g[bi * m * n..(bi + 1) * m * n];
                                gemm(k, m, n, x.data(), true, gs, false, &mut gb[bi * k * n..(bi + 1) * k * n], 0.0);
                            }
                            self.accumulate(grads, *b, Tensor::from_parts(y.shape().to_vec(), gb));
                        }
                    }
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, grad.t()),
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, Tensor::from_parts(shape, grad.data().to_vec()));
            }
            Op::Concat(parts, axis) => {
                let shape = grad.shape();
                let (outer, _, inner) = axis_split(shape, *axis);
                let mut offset = 0;
                for p in parts {
                    let pshape = self.shape(*p).to_vec();
                    let len = pshape[*axis];
                    if self.rg(*p) {
                        let mut out = Vec::with_capacity(pshape.iter().product());
                        for o in 0..outer {
                            let base = (o * shape[*axis] + offset) * inner;
                            out.extend_from_slice(&grad.data()[base..base + len * inner]);
                        }
                        self.accumulate(grads, *p, Tensor::from_parts(pshape, out));
                    }
                    offset += len;
                }
            }
            Op::Slice(a, axis, start) => {
                let src = self.shape(*a).to_vec();
                let (outer, full, inner) = axis_split(&src, *axis);
                let len = grad.shape()[*axis];
                let mut out = vec![0.0; src.iter().product()];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    out[base..base + len * inner].copy_from_slice(&grad.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *a, Tensor::from_parts(src, out));
            }
            Op::SumAll(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, grad.item()));
            }
            Op::SumAxis(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, expand(grad, &shape));
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let n = *y.shape().last().expect("rank ≥ 1");
                let mut out = vec![0.0; y.len()];
                for ((o, yr), gr) in out.chunks_mut(n).zip(y.data().chunks(n)).zip(grad.data().chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for i in 0..n {
                        o[i] = yr[i] * (gr[i] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(y.shape().to_vec(), out));
            }
            Op::NormGate(a, gate) => {
                let x = self.value(*a);
                let &[len, dim, mult] = x.shape() else { unreachable!() };
                let (xd, g) = (x.data(), grad.data());
                let mut out = vec![0.0; xd.len()];
                for t in 0..len {
                    for k in 0..mult {
                        let idx = |i: usize| (t * dim + i) * mult + k;
                        let norm = (0..dim).map(|i| xd[idx(i)].powi(2)).sum::<f64>().sqrt();
                        // The map is singular at the origin whenever gate(0) ≠ 0;
                        // the 0/0 below yields NaN there.
                        let radial: f64 = (0..dim).map(|i| xd[idx(i)] * g[idx(i)]).sum::<f64>() / norm;
                        let tangential = gate.eval(norm) / norm;
                        let along = gate.derivative(norm);
                        for i in 0..dim {
                            let unit = xd[idx(i)] / norm;
                            out[idx(i)] = tangential * (g[idx(i)] - unit * radial) + along * unit * radial;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), out));
            }
            Op::WeightedBce { logits, targets, weights } => {
                let x = self.value(*logits);
                let cols = x.cols();
                let upstream = grad.item();
                let data = x
                    .data()
                    .iter()
                    .zip(targets.data())
                    .enumerate()
                    .map(|(idx, (&xi, &ci))| upstream * weights[idx % cols] * (sigmoid(xi) - ci))
                    .collect();
                self.accumulate(grads, *logits, Tensor::from_parts(x.shape().to_vec(), data));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference check of every leaf against `build`.
    fn check(inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().cloned().map(|t| g.leaf(t)).collect();
        let root = build(&mut g, &vars);
        let grads = g.backward(root).unwrap();
        let eval = |ins: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().cloned().map(|t| g.leaf(t)).collect();
            let r = build(&mut g, &vars);
            g.value(r).item()
        };
        let h = 1e-6;
        for (i, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
            for j in 0..input.len() {
                let mut plus = inputs.clone();
                plus[i].data_mut()[j] += h;
                let mut minus = inputs.clone();
                minus[i].data_mut()[j] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[j];
                let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(err < 1e-5, "input {i}[{j}]: analytic {a}, fd {fd}");
            }
        }
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[1, 4], vec![0.3, -1.0, 2.0, 0.5]).unwrap());
        let s = g.softmax(x);
        let total = g.sum_all(s);
        assert!((g.value(total).item() - 1.0).abs() < 1e-15);
        let grads = g.backward(total).unwrap();
        assert!(grads.get(x).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.leaf(Tensor::scalar(1.5));
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn elementwise_and_broadcast_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, &[3, 4, 2]);
        let b = random(&mut rng, &[1, 4, 1]);
        let c = random(&mut rng, &[3, 1, 2]).map(|x| x.abs() + 0.5);
        check(vec![a, b, c], |g, v| {
            let s = g.add(v[0], v[1]).unwrap();
            let p = g.mul(s, v[2]).unwrap();
            let d = g.div(p, v[2]).unwrap();
            let q = g.div(d, v[2]).unwrap();
            let r = g.sub(q, v[1]).unwrap();
            let t = g.tanh(r);
            let e = g.exp(t);
            let sg = g.sigmoid(e);
            let sc = g.scale(sg, 1.7);
            let sh = g.add_scalar(sc, 0.3);
            let l = g.log(sh);
            let sq = g.sqrt(sh);
            let both = g.mul(l, sq).unwrap();
            g.sum_all(both)
        });
    }

    #[test]
    fn matmul_gradients_all_layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[4, 2]);
        let batched = random(&mut rng, &[5, 3, 4]);
        let right = random(&mut rng, &[2, 4, 3]);
        check(vec![a, b, batched, right], |g, v| {
            let ab = g.matmul(v[0], v[1]).unwrap();
            let bb = g.matmul(v[2], v[1]).unwrap();
            let lb = g.matmul(v[0], v[3]).unwrap();
            let t = g.transpose(ab).unwrap();
            let s1 = g.sum_all(t);
            let sq = g.mul(bb, bb).unwrap();
            let s2 = g.sum_all(sq);
            let r = g.relu(lb);
            let s3 = g.sum_all(r);
            let x = g.add(s1, s2).unwrap();
            g.add(x, s3).unwrap()
        });
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, &[2, 3, 4]);
        let b = random(&mut rng, &[2, 2, 4]);
        let w = random(&mut rng, &[2, 5, 4]);
        check(vec![a, b, w], |g, v| {
            let c = g.concat(&[v[0], v[1]], 1).unwrap();
            let s = g.slice(c, 1, 1, 3).unwrap();
            let s2 = g.slice(c, 2, 1, 2).unwrap();
            let r = g.reshape(s, &[6, 4]).unwrap();
            let sm = g.softmax(r);
            let m = g.mean_axis(s2, 1).unwrap();
            let var = g.variance_axis(v[2], 2).unwrap();
            let x = g.mul(sm, sm).unwrap();
            let total = g.sum_all(x);
            let t2 = g.sum_all(m);
            let t3 = g.sum_axis(var, 0).unwrap();
            let t3 = g.sum_all(t3);
            let a = g.add(total, t2).unwrap();
            let m2 = g.mul(t2, t3).unwrap();
            g.add(a, m2).unwrap()
        });
    }

    #[test]
    fn norm_gate_and_bce_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, &[3, 2, 4]);
        let logits = random(&mut rng, &[12, 3]).scale(3.0);
        let targets = Tensor::new(&[12, 3], (0..36).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect()).unwrap();
        for gate in [Gate::Identity, Gate::Sigmoid, Gate::Tanh] {
            let t = targets.clone();
            check(vec![x.clone(), logits.clone()], move |g, v| {
                let y = g.norm_gate(v[0], gate).unwrap();
                let s = g.sum_all(y);
                let sq = g.mul(s, s).unwrap();
                let l = g.weighted_bce(v[1], &t, &[2.0, 1.0, 2.0]).unwrap();
                g.add(sq, l).unwrap()
            });
        }
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        assert!((bce_with_logit(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(bce_with_logit(800.0, 1.0) < 1e-300);
        assert!((bce_with_logit(-800.0, 1.0) - 800.0).abs() < 1e-9);
        assert!(bce_with_logit(-800.0, 0.0).is_finite());
    }
}
