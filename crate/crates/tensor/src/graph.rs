//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Every operation checks its output for NaN/Inf and fails with the index of
//! the offending node instead of letting non-finite values propagate.
//!
//! Shapes are never broadcast implicitly. Use [`Graph::repeat_rows`] to
//! expand a `1 × n` bias to a batch.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate derivative corruptions, used to prove a gradient checker is
/// sensitive enough to catch a wrong backward rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    /// Scales the tanh derivative by 1.01.
    TanhDerivative,
    /// Scales the sigmoid derivative by 1.01.
    SigmoidDerivative,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Scale(Var, f64),
    RepeatRows(Var),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>, Vec<f64>),
    Attend(Var, Var),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Sum(_) => "sum",
            Op::Scale(..) => "scale",
            Op::RepeatRows(_) => "repeat_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::Pick(..) => "pick",
            Op::Attend(..) => "attend",
            Op::Reshape(_) => "reshape",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Elementwise operations accepted by [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    mutation: Option<Mutation>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_mutation(mutation: Option<Mutation>) -> Self {
        Graph {
            nodes: Vec::new(),
            mutation,
        }
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

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Result<Var> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { node: id, op: op.name() });
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        Ok(Var(id))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(Op::MatMul(a, b), out, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(Op::Add(a, b), out, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        self.push(Op::Sub(a, b), out, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push(Op::Mul(a, b), out, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(Op::Sigmoid(a), out, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(Op::Tanh(a), out, rg)
    }

    /// Dispatches one of the pointwise operations by kind.
    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Mul => 2,
            Elementwise::Sigmoid | Elementwise::Tanh => 1,
        };
        if inputs.len() != arity {
            return Err(TensorError::contract(format!(
                "{op:?} takes {arity} inputs, got {}",
                inputs.len()
            )));
        }
        match op {
            Elementwise::Add => self.add(inputs[0], inputs[1]),
            Elementwise::Mul => self.mul(inputs[0], inputs[1]),
            Elementwise::Sigmoid => self.sigmoid(inputs[0]),
            Elementwise::Tanh => self.tanh(inputs[0]),
        }
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = x.last_dim();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(&[a]);
        self.push(Op::Softmax(a), out, rg)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = x.last_dim();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(&[a]);
        self.push(Op::LogSoftmax(a), out, rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), out, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(&[a]);
        self.push(Op::Scale(a, c), out, rg)
    }

    /// Repeats a tensor whose leading extent is 1 `n` times along that axis.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let x = self.value(a);
        if x.shape().first() != Some(&1) || n == 0 {
            return Err(TensorError::shape("repeat_rows", x.shape(), &[1]));
        }
        let mut shape = x.shape().to_vec();
        shape[0] = n;
        let data = x.data().repeat(n);
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[a]);
        self.push(Op::RepeatRows(a), out, rg)
    }

    /// Selects slices along the leading axis; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let rows = x.shape().first().copied().unwrap_or(1);
        if idx.is_empty() {
            return Err(TensorError::contract("gather_rows with no indices"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(TensorError::contract(format!(
                "gather_rows index {bad} out of range for {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * x.len() / rows);
        for &i in idx {
            data.extend_from_slice(x.row_slice(i));
        }
        let mut shape = x.shape().to_vec();
        shape[0] = idx.len();
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[a]);
        self.push(Op::GatherRows(a, idx.to_vec()), out, rg)
    }

    /// Weighted selection `Σ_r w_r · x[r, idx_r]` over a `b × n` input,
    /// returning a scalar. Negative log-likelihood and policy-gradient
    /// surrogates are both built from this.
    pub fn pick(&mut self, a: Var, idx: &[usize], weights: &[f64]) -> Result<Var> {
        let x = self.value(a);
        let (b, n) = x.dims2("pick")?;
        if idx.len() != b || weights.len() != b {
            return Err(TensorError::shape("pick", x.shape(), &[idx.len(), weights.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(TensorError::contract(format!("pick index {bad} out of range for width {n}")));
        }
        let mut total = 0.0;
        for r in 0..b {
            if weights[r] != 0.0 {
                total += weights[r] * x.get2(r, idx[r]);
            }
        }
        let rg = self.rg(&[a]);
        self.push(Op::Pick(a, idx.to_vec(), weights.to_vec()), Tensor::scalar(total), rg)
    }

    /// Per-row convex combination: `alpha` is `b × k`, `values` is
    /// `b × k × r`, output is `b × r` with `out[b] = Σ_i alpha[b,i] values[b,i]`.
    pub fn attend(&mut self, alpha: Var, values: Var) -> Result<Var> {
        let a = self.value(alpha);
        let v = self.value(values);
        let (b, k) = a.dims2("attend")?;
        let r = match v.shape() {
            [vb, vk, r] if *vb == b && *vk == k => *r,
            _ => return Err(TensorError::shape("attend", a.shape(), v.shape())),
        };
        let mut out = vec![0.0; b * r];
        for bi in 0..b {
            let o = &mut out[bi * r..(bi + 1) * r];
            for i in 0..k {
                let w = a.get2(bi, i);
                if w == 0.0 {
                    continue;
                }
                let base = (bi * k + i) * r;
                for (oj, vj) in o.iter_mut().zip(&v.data()[base..base + r]) {
                    *oj += w * vj;
                }
            }
        }
        let out = Tensor::new(vec![b, r], out)?;
        let rg = self.rg(&[alpha, values]);
        self.push(Op::Attend(alpha, values), out, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        self.push(Op::Reshape(a), out, rg)
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`]; interior gradients are transient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {
                    let node = &mut self.nodes[id];
                    match &mut node.grad {
                        Some(acc) => acc.add_assign(&g),
                        None => node.grad = Some(g),
                    }
                }
                Op::MatMul(a, b) => {
                    if self.requires_grad(a) {
                        let ga = g.matmul(&self.value(b).transpose()?)?;
                        accumulate(&mut grads, a, ga);
                    }
                    if self.requires_grad(b) {
                        let gb = self.value(a).transpose()?.matmul(&g)?;
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, b, g.map(|v| -v));
                    accumulate(&mut grads, a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(b), "mul", |g, y| g * y)?;
                    let gb = g.zip_map(self.value(a), "mul", |g, x| g * x)?;
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Sigmoid(a) => {
                    let k = if self.mutation == Some(Mutation::SigmoidDerivative) { 1.01 } else { 1.0 };
                    let ga = g.zip_map(&self.nodes[id].value, "sigmoid", |g, y| k * g * y * (1.0 - y))?;
                    accumulate(&mut grads, a, ga);
                }
                Op::Tanh(a) => {
                    let k = if self.mutation == Some(Mutation::TanhDerivative) { 1.01 } else { 1.0 };
                    let ga = g.zip_map(&self.nodes[id].value, "tanh", |g, y| k * g * (1.0 - y * y))?;
                    accumulate(&mut grads, a, ga);
                }
                Op::Softmax(a) => {
                    let y = &self.nodes[id].value;
                    let n = y.last_dim();
                    let mut ga = g.data().to_vec();
                    for (gr, yr) in ga.chunks_mut(n).zip(y.data().chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for (gv, yv) in gr.iter_mut().zip(yr) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    let ga = Tensor::new(y.shape().to_vec(), ga)?;
                    accumulate(&mut grads, a, ga);
                }
                Op::LogSoftmax(a) => {
                    let y = &self.nodes[id].value;
                    let n = y.last_dim();
                    let mut ga = g.data().to_vec();
                    for (gr, yr) in ga.chunks_mut(n).zip(y.data().chunks(n)) {
                        let total: f64 = gr.iter().sum();
                        for (gv, yv) in gr.iter_mut().zip(yr) {
                            *gv -= yv.exp() * total;
                        }
                    }
                    let ga = Tensor::new(y.shape().to_vec(), ga)?;
                    accumulate(&mut grads, a, ga);
                }
                Op::Sum(a) => {
                    let ga = Tensor::full(self.value(a).shape(), g.item());
                    accumulate(&mut grads, a, ga);
                }
                Op::Scale(a, c) => accumulate(&mut grads, a, g.map(|v| v * c)),
                Op::RepeatRows(a) => {
                    let shape = self.value(a).shape().to_vec();
                    let width = self.value(a).len();
                    let mut ga = vec![0.0; width];
                    for chunk in g.data().chunks(width) {
                        for (s, v) in ga.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    accumulate(&mut grads, a, Tensor::new(shape, ga)?);
                }
                Op::GatherRows(a, idx) => {
                    let x = self.value(a);
                    let rows = x.shape().first().copied().unwrap_or(1);
                    let stride = x.len() / rows;
                    let mut ga = vec![0.0; x.len()];
                    for (slot, &i) in idx.iter().enumerate() {
                        let src = &g.data()[slot * stride..(slot + 1) * stride];
                        for (d, s) in ga[i * stride..(i + 1) * stride].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    let ga = Tensor::new(x.shape().to_vec(), ga)?;
                    accumulate(&mut grads, a, ga);
                }
                Op::Pick(a, idx, weights) => {
                    let x = self.value(a);
                    let n = x.last_dim();
                    let mut ga = vec![0.0; x.len()];
                    let gv = g.item();
                    for (r, (&i, &w)) in idx.iter().zip(&weights).enumerate() {
                        if w != 0.0 {
                            ga[r * n + i] += gv * w;
                        }
                    }
                    let ga = Tensor::new(x.shape().to_vec(), ga)?;
                    accumulate(&mut grads, a, ga);
                }
                Op::Attend(alpha, values) => {
                    let av = self.value(alpha);
                    let vv = self.value(values);
                    let (b, k) = av.dims2("attend")?;
                    let r = vv.last_dim();
                    if self.requires_grad(alpha) {
                        let mut ga = vec![0.0; b * k];
                        for bi in 0..b {
                            let gr = &g.data()[bi * r..(bi + 1) * r];
                            for i in 0..k {
                                let base = (bi * k + i) * r;
                                ga[bi * k + i] =
                                    gr.iter().zip(&vv.data()[base..base + r]).map(|(x, y)| x * y).sum();
                            }
                        }
                        let ga = Tensor::new(vec![b, k], ga)?;
                        accumulate(&mut grads, alpha, ga);
                    }
                    if self.requires_grad(values) {
                        let mut gv = vec![0.0; b * k * r];
                        for bi in 0..b {
                            let gr = &g.data()[bi * r..(bi + 1) * r];
                            for i in 0..k {
                                let w = av.get2(bi, i);
                                let base = (bi * k + i) * r;
                                for (d, s) in gv[base..base + r].iter_mut().zip(gr) {
                                    *d = w * s;
                                }
                            }
                        }
                        let gv = Tensor::new(vec![b, k, r], gv)?;
                        accumulate(&mut grads, values, gv);
                    }
                }
                Op::Reshape(a) => {
                    let shape = self.value(a).shape().to_vec();
                    accumulate(&mut grads, a, g.reshape(&shape)?);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
