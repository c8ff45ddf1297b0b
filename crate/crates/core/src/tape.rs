//! Reverse-mode differentiation over a linear record of primitive operations.
//!
//! Every primitive appends one node whose inputs are earlier nodes, so the
//! node list is already in topological order. `backward` walks it once in
//! reverse. Parameters enter as leaves linked to a [`ParamSet`] slot and
//! receive their gradients by accumulation (`+=`), so several tapes (one per
//! batch item) can feed the same parameter set before an optimizer step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::math;
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberately wrong backward rules, used to prove that the gradient checker
/// notices a broken derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// tanh backward uses `1 - y` instead of `1 - y^2`.
    TanhDerivative,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax { input: Var, axis: usize },
    Concat { a: Var, b: Var, axis: usize },
    Sum(Var),
    BceWithLogits { logits: Var, targets: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// The compute graph of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Fault,
}

/// Gradients of one scalar with respect to every node on a tape.
#[derive(Debug, Clone)]
pub struct Adjoints {
    grads: Vec<Option<Vec<f64>>>,
}

impl Adjoints {
    /// `None` when the node does not influence the differentiated output.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Splits a shape around `axis` into (outer, len, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Softmax along `axis` with max subtraction.
pub(crate) fn softmax_raw(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let max = (0..len)
                .map(|k| x[idx(k)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..len {
                let e = math::exp(x[idx(k)] - max);
                out[idx(k)] = e;
                total += e;
            }
            for k in 0..len {
                out[idx(k)] /= total;
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: Fault) -> Self {
        Tape {
            nodes: Vec::new(),
            fault,
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A leaf holding a snapshot of parameter `id`.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let mut value = params.get(id).clone();
        value.zero_grad();
        self.push(value, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(dim_err("transpose", s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let value = Tensor::new(vec![c, r], transpose_raw(self.value(a).data(), r, c))?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Transpose(a), needs))
    }

    /// Same data viewed with a different shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), needs))
    }

    /// Result shape of a binary op: equal shapes, or one side rank-0.
    fn binary_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(sa.to_vec())
        } else if sa.is_empty() {
            Ok(sb.to_vec())
        } else if sb.is_empty() {
            Ok(sa.to_vec())
        } else {
            Err(dim_err(op, sa, sb))
        }
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.binary_shape(name, a, b)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n: usize = shape.iter().product();
        let out: Vec<f64> = (0..n)
            .map(|i| {
                let x = if va.len() == 1 && n != 1 {
                    va[0]
                } else {
                    va[i]
                };
                let y = if vb.len() == 1 && n != 1 {
                    vb[0]
                } else {
                    vb[i]
                };
                f(x, y)
            })
            .collect();
        let value = Tensor::new(shape, out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = v.data().iter().map(|&x| math::tanh(x)).collect();
        let value = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Tanh(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = v.data().iter().map(|&x| math::sigmoid(x)).collect();
        let value = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a), needs)
    }

    /// Softmax along `axis`; every slice along that axis sums to one.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a);
        let shape = v.shape();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(dim_err("softmax", shape, &[axis]));
        }
        if !v.all_finite() {
            return Err(Error::Numeric(format!(
                "softmax input is not finite (shape {shape:?})"
            )));
        }
        let out = softmax_raw(v.data(), shape, axis);
        let value = Tensor::new(shape.to_vec(), out)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Softmax { input: a, axis }, needs))
    }

    /// Joins `a` and `b` along `axis`; all other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa
                .iter()
                .zip(sb)
                .enumerate()
                .all(|(d, (x, y))| d == axis || x == y);
        if !compatible {
            return Err(dim_err("concat", sa, sb));
        }
        let (outer, la, inner) = axis_split(sa, axis);
        let lb = sb[axis];
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for o in 0..outer {
            out.extend_from_slice(&va[o * la * inner..(o + 1) * la * inner]);
            out.extend_from_slice(&vb[o * lb * inner..(o + 1) * lb * inner]);
        }
        let mut shape = sa.to_vec();
        shape[axis] = la + lb;
        let value = Tensor::new(shape, out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Concat { a, b, axis }, needs))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum(a), needs)
    }

    /// Summed binary cross-entropy of `sigmoid(logits)` against 0/1 targets,
    /// evaluated as `softplus(s) - y*s`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let v = self.value(logits);
        if v.shape() != targets.shape() {
            return Err(dim_err("bce_with_logits", v.shape(), targets.shape()));
        }
        if targets.data().iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Input("targets must be 0 or 1".into()));
        }
        if !v.all_finite() {
            return Err(Error::Numeric("non-finite logit in loss".into()));
        }
        let loss = v
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&s, &y)| math::softplus(s) - y * s)
            .sum();
        let needs = self.needs(logits);
        let op = Op::BceWithLogits {
            logits,
            targets: targets.data().to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, needs))
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn adjoints(&self, output: Var) -> Result<Adjoints> {
        if self.value(output).numel() != 1 {
            return Err(dim_err("backward", self.shape(output), &[]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
            match &mut grads[v.0] {
                Some(g) => g.iter_mut().zip(&delta).for_each(|(g, d)| *g += d),
                slot @ None => *slot = Some(delta),
            }
        }
        // Reduces a broadcast gradient back onto a rank-0 operand.
        fn fit(delta: Vec<f64>, len: usize) -> Vec<f64> {
            if delta.len() == len {
                delta
            } else {
                vec![delta.iter().sum()]
            }
        }
        let bcast = |data: &[f64], i: usize| if data.len() == 1 { data[0] } else { data[i] };

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    if self.needs(*a) {
                        let bt = transpose_raw(self.value(*b).data(), k, n);
                        acc(&mut grads, *a, matmul_raw(&g, &bt, m, n, k));
                    }
                    if self.needs(*b) {
                        let at = transpose_raw(self.value(*a).data(), m, k);
                        acc(&mut grads, *b, matmul_raw(&at, &g, k, m, n));
                    }
                }
                Op::Transpose(a) => {
                    let s = self.shape(*a);
                    acc(&mut grads, *a, transpose_raw(&g, s[1], s[0]));
                }
                Op::Reshape(a) => acc(&mut grads, *a, g.clone()),
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) {
                        -1.0
                    } else {
                        1.0
                    };
                    if self.needs(*a) {
                        let n = self.value(*a).numel();
                        acc(&mut grads, *a, fit(g.clone(), n));
                    }
                    if self.needs(*b) {
                        let n = self.value(*b).numel();
                        acc(&mut grads, *b, fit(g.iter().map(|x| sign * x).collect(), n));
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    if self.needs(*a) {
                        let d = g
                            .iter()
                            .enumerate()
                            .map(|(i, x)| x * bcast(vb, i))
                            .collect();
                        acc(&mut grads, *a, fit(d, va.len()));
                    }
                    if self.needs(*b) {
                        let d = g
                            .iter()
                            .enumerate()
                            .map(|(i, x)| x * bcast(va, i))
                            .collect();
                        acc(&mut grads, *b, fit(d, vb.len()));
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let d = match self.fault {
                        Fault::TanhDerivative => {
                            g.iter().zip(y).map(|(g, y)| g * (1.0 - y)).collect()
                        }
                        Fault::None => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    };
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let d = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    acc(&mut grads, *a, d);
                }
                Op::Softmax { input, axis } => {
                    let y = node.value.data();
                    let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                    let mut d = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * len + k) * inner + i;
                            let dot: f64 = (0..len).map(|k| y[at(k)] * g[at(k)]).sum();
                            for k in 0..len {
                                d[at(k)] = y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                    acc(&mut grads, *input, d);
                }
                Op::Concat { a, b, axis } => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (outer, la, inner) = axis_split(sa, *axis);
                    let lb = sb[*axis];
                    let (mut da, mut db) = (Vec::new(), Vec::new());
                    for o in 0..outer {
                        let base = o * (la + lb) * inner;
                        da.extend_from_slice(&g[base..base + la * inner]);
                        db.extend_from_slice(&g[base + la * inner..base + (la + lb) * inner]);
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).numel();
                    acc(&mut grads, *a, vec![g[0]; n]);
                }
                Op::BceWithLogits { logits, targets } => {
                    let s = self.value(*logits).data();
                    let d = s
                        .iter()
                        .zip(targets)
                        .map(|(&s, &y)| g[0] * (math::sigmoid(s) - y))
                        .collect();
                    acc(&mut grads, *logits, d);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Adjoints { grads })
    }

    /// Back-propagates `output` and accumulates into the linked parameters.
    pub fn backward(&self, output: Var, params: &mut ParamSet) -> Result<Adjoints> {
        let adj = self.adjoints(output)?;
        for (idx, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if let (Op::Param(id), Some(g)) = (&node.op, adj.get(Var(idx))) {
                params.get_mut(*id).accumulate_grad(g)?;
            }
        }
        Ok(adj)
    }
}
