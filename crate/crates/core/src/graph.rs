//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and the inputs its backward rule needs. Node indices are therefore
//! already in topological order, and [`Graph::backward`] walks them in
//! reverse. Parameters can be borrowed into the graph without copying, so a
//! fresh graph per batch is cheap.
//!
//! Matrices are row-major `[rows × cols]`; layers treat each row as an
//! independent example.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Neg,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Tanh => "tanh",
            UnaryOp::Sigmoid => "sigmoid",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Neg => "neg",
        }
    }
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Unary(UnaryOp, Var),
    Affine(Var, S),
    Softmax(Var),
    Sum(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    BceLogits { logits: Var, labels: Vec<S>, weights: Vec<S> },
}

struct Node<'p, S: Scalar> {
    value: Cow<'p, Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// `log(1 + exp(-|z|)) + max(z, 0) - z*y`, the cross-entropy of a logit.
#[inline]
pub fn bce_with_logit<S: Scalar>(z: S, y: S) -> S {
    (-z.abs()).exp().ln_1p() + z.max(S::zero()) - z * y
}

/// Max-subtracted softmax of a slice.
pub fn softmax_slice<S: Scalar>(xs: &[S]) -> Result<Vec<S>> {
    if xs.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    let mut out = vec![S::zero(); xs.len()];
    softmax_into(xs, &mut out);
    Ok(out)
}

fn softmax_into<S: Scalar>(xs: &[S], out: &mut [S]) {
    let max = xs.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape.len() {
        1 => Some((1, shape[0])),
        2 => Some((shape[0], shape[1])),
        _ => None,
    }
}

/// Adds `contrib(buf)` into the pending gradient of `v`, allocating on first use.
fn accumulate<S: Scalar>(pending: &mut [Option<Vec<S>>], v: Var, len: usize, contrib: impl FnOnce(&mut [S])) {
    let buf = pending[v.0].get_or_insert_with(|| vec![S::zero(); len]);
    contrib(buf);
}

pub struct Graph<'p, S: Scalar> {
    nodes: Vec<Node<'p, S>>,
}

impl<'p, S: Scalar> Default for Graph<'p, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, S: Scalar> Graph<'p, S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Cow<'p, Tensor<S>>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Borrows a trainable tensor into the graph.
    pub fn param(&mut self, t: &'p Tensor<S>) -> Var {
        self.leaf(Cow::Borrowed(t), true)
    }

    pub fn param_owned(&mut self, t: Tensor<S>) -> Var {
        self.leaf(Cow::Owned(t), true)
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.leaf(Cow::Owned(t), false)
    }

    pub fn constant_ref(&mut self, t: &'p Tensor<S>) -> Var {
        self.leaf(Cow::Borrowed(t), false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<S>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad matches value shape"))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Result<Var> {
        value.check_finite(op_name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Cow::Owned(value), op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch { op, left: self.shape(a).to_vec(), right: self.shape(b).to_vec() }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch("matmul", a, b));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for (kk, &aik) in ad[i * k..(i + 1) * k].iter().enumerate() {
                for (o, &bkj) in row.iter_mut().zip(&bd[kk * n..(kk + 1) * n]) {
                    *o += aik * bkj;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    /// Adds the vector `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = as_matrix(self.shape(a)).ok_or_else(|| self.mismatch("add_row", a, bias))?;
        if self.value(bias).numel() != n {
            return Err(self.mismatch("add_row", a, bias));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        let v = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("add_row", v, Op::AddRow(a, bias), &[a, bias])
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = as_matrix(self.shape(a)).ok_or_else(|| self.mismatch("mul_col", a, col))?;
        if self.value(col).numel() != m {
            return Err(self.mismatch("mul_col", a, col));
        }
        let c = self.value(col).data();
        let mut data = self.value(a).data().to_vec();
        for (row, &s) in data.chunks_mut(n).zip(c) {
            row.iter_mut().for_each(|x| *x *= s);
        }
        let v = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("mul_col", v, Op::MulCol(a, col), &[a, col])
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let src = self.value(x);
        if op == UnaryOp::Log {
            if let Some(bad) = src.data().iter().find(|v| **v <= S::zero()) {
                return Err(Error::Domain { op: "log", detail: format!("non-positive input {bad}") });
            }
        }
        let f: fn(S) -> S = match op {
            UnaryOp::Tanh => S::tanh,
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Exp => S::exp,
            UnaryOp::Log => S::ln,
            UnaryOp::Neg => |v: S| -v,
        };
        let v = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())?;
        self.push(op.name(), v, Op::Unary(op, x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, x)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: S, shift: S) -> Result<Var> {
        let src = self.value(x);
        let v = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| scale * v + shift).collect())?;
        self.push("affine", v, Op::Affine(x, scale), &[x])
    }

    /// Softmax along the last axis (each row of a matrix independently).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let (_, n) = as_matrix(src.shape()).ok_or_else(|| Error::invalid("softmax expects a vector or matrix"))?;
        let mut out = vec![S::zero(); src.numel()];
        for (o, row) in out.chunks_mut(n).zip(src.data().chunks(n)) {
            softmax_into(row, o);
        }
        let v = Tensor::new(src.shape().to_vec(), out)?;
        self.push("softmax", v, Op::Softmax(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().copied().sum::<S>();
        self.push("sum", Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Selects rows of a matrix; an index may repeat.
    pub fn gather_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let (m, n) = match src.shape().len() {
            2 => (src.shape()[0], src.shape()[1]),
            _ => return Err(Error::invalid(format!("gather_rows expects a matrix, got {:?}", src.shape()))),
        };
        if ids.is_empty() {
            return Err(Error::Empty("row index list"));
        }
        let mut data = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            if i >= m {
                return Err(Error::IndexOutOfRange { index: i, bound: m });
            }
            data.extend_from_slice(src.row(i));
        }
        let v = Tensor::new(vec![ids.len(), n], data)?;
        self.push("gather_rows", v, Op::GatherRows(x, ids.to_vec()), &[x])
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols input"))?;
        let m = self.value(first).dims2().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != m {
                return Err(self.mismatch("concat_cols", first, p));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::new(vec![m, total], data)?;
        self.push("concat_cols", v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_rows input"))?;
        let n = self.value(first).dims2().1;
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != n {
                return Err(self.mismatch("concat_rows", first, p));
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * n);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::new(vec![rows, n], data)?;
        self.push("concat_rows", v, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        let (m, n) = match src.shape() {
            [m, n] => (*m, *n),
            s => return Err(Error::invalid(format!("slice_cols expects a matrix, got {s:?}"))),
        };
        if len == 0 || start + len > n {
            return Err(Error::IndexOutOfRange { index: start + len, bound: n });
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let v = Tensor::new(vec![m, len], data)?;
        self.push("slice_cols", v, Op::SliceCols(x, start), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", v, Op::Reshape(x), &[x])
    }

    /// Weighted binary cross-entropy summed over the entries of `logits`.
    pub fn bce_logits(&mut self, logits: Var, labels: &[S], weights: &[S]) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != labels.len() || z.len() != weights.len() {
            return Err(Error::ShapeMismatch {
                op: "bce_logits",
                left: self.shape(logits).to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y != S::zero() && y != S::one()) {
            return Err(Error::Domain { op: "bce_logits", detail: format!("label {bad} is not 0 or 1") });
        }
        let total = z.iter().zip(labels).zip(weights).map(|((&z, &y), &w)| w * bce_with_logit(z, y)).sum::<S>();
        let op = Op::BceLogits { logits, labels: labels.to_vec(), weights: weights.to_vec() };
        self.push("bce_logits", Tensor::scalar(total), op, &[logits])
    }

    /// Accumulates d(loss)/d(node) into every reachable node that requires a
    /// gradient. Calling it again without [`Graph::zero_grad`] adds to the
    /// existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        let mut pending: Vec<Option<Vec<S>>> = Vec::new();
        pending.resize_with(loss.0 + 1, || None);
        pending[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut pending);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[S], pending: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        let out = node.value.as_ref();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let numel = |v: Var| self.nodes[v.0].value.numel();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if rg(*a) {
                    accumulate(pending, *a, m * k, |da| {
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            for kk in 0..k {
                                let brow = &bv.data()[kk * n..(kk + 1) * n];
                                da[i * k + kk] += gi.iter().zip(brow).map(|(&x, &y)| x * y).sum::<S>();
                            }
                        }
                    });
                }
                if rg(*b) {
                    accumulate(pending, *b, k * n, |db| {
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            for kk in 0..k {
                                let aik = av.data()[i * k + kk];
                                for (d, &x) in db[kk * n..(kk + 1) * n].iter_mut().zip(gi) {
                                    *d += aik * x;
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if rg(v) {
                        accumulate(pending, v, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
                    }
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    accumulate(pending, *a, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
                }
                if rg(*b) {
                    accumulate(pending, *b, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, &x)| *d -= x));
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if rg(v) {
                        let o = self.value(other).data();
                        accumulate(pending, v, g.len(), |d| {
                            for ((d, &x), &y) in d.iter_mut().zip(g).zip(o) {
                                *d += x * y;
                            }
                        });
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if rg(*a) {
                    accumulate(pending, *a, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
                }
                if rg(*bias) {
                    let n = numel(*bias);
                    accumulate(pending, *bias, n, |d| {
                        for row in g.chunks(n) {
                            d.iter_mut().zip(row).for_each(|(d, &x)| *d += x);
                        }
                    });
                }
            }
            Op::MulCol(a, col) => {
                let m = numel(*col);
                let n = g.len() / m;
                if rg(*a) {
                    let c = self.value(*col).data();
                    accumulate(pending, *a, g.len(), |d| {
                        for ((drow, grow), &s) in d.chunks_mut(n).zip(g.chunks(n)).zip(c) {
                            drow.iter_mut().zip(grow).for_each(|(d, &x)| *d += x * s);
                        }
                    });
                }
                if rg(*col) {
                    let av = self.value(*a).data();
                    accumulate(pending, *col, m, |d| {
                        for (i, (grow, arow)) in g.chunks(n).zip(av.chunks(n)).enumerate() {
                            d[i] += grow.iter().zip(arow).map(|(&x, &y)| x * y).sum::<S>();
                        }
                    });
                }
            }
            Op::Unary(op, x) => {
                if rg(*x) {
                    let y = out.data();
                    let xv = self.value(*x).data();
                    let op = *op;
                    accumulate(pending, *x, g.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += match op {
                                UnaryOp::Tanh => g[i] * (S::one() - y[i] * y[i]),
                                UnaryOp::Sigmoid => g[i] * y[i] * (S::one() - y[i]),
                                UnaryOp::Exp => g[i] * y[i],
                                UnaryOp::Log => g[i] / xv[i],
                                UnaryOp::Neg => -g[i],
                            };
                        }
                    });
                }
            }
            Op::Affine(x, scale) => {
                if rg(*x) {
                    let s = *scale;
                    accumulate(pending, *x, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, &x)| *d += x * s));
                }
            }
            Op::Softmax(x) => {
                if rg(*x) {
                    let n = out.dims2().1;
                    let y = out.data();
                    accumulate(pending, *x, g.len(), |d| {
                        for ((drow, grow), yrow) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                            let dot = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<S>();
                            for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += yv * (gv - dot);
                            }
                        }
                    });
                }
            }
            Op::Sum(x) => {
                if rg(*x) {
                    let g0 = g[0];
                    accumulate(pending, *x, numel(*x), |d| d.iter_mut().for_each(|d| *d += g0));
                }
            }
            Op::GatherRows(x, ids) => {
                if rg(*x) {
                    let n = out.dims2().1;
                    accumulate(pending, *x, numel(*x), |d| {
                        for (r, &src) in ids.iter().enumerate() {
                            let grow = &g[r * n..(r + 1) * n];
                            d[src * n..(src + 1) * n].iter_mut().zip(grow).for_each(|(d, &x)| *d += x);
                        }
                    });
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.dims2().1;
                let mut offset = 0;
                for &p in parts {
                    let (m, w) = self.value(p).dims2();
                    if rg(p) {
                        accumulate(pending, p, m * w, |d| {
                            for i in 0..m {
                                let grow = &g[i * total + offset..i * total + offset + w];
                                d[i * w..(i + 1) * w].iter_mut().zip(grow).for_each(|(d, &x)| *d += x);
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = numel(p);
                    if rg(p) {
                        let part = &g[offset..offset + len];
                        accumulate(pending, p, len, |d| d.iter_mut().zip(part).for_each(|(d, &x)| *d += x));
                    }
                    offset += len;
                }
            }
            Op::SliceCols(x, start) => {
                if rg(*x) {
                    let (m, n) = self.value(*x).dims2();
                    let w = out.dims2().1;
                    let start = *start;
                    accumulate(pending, *x, m * n, |d| {
                        for i in 0..m {
                            let grow = &g[i * w..(i + 1) * w];
                            d[i * n + start..i * n + start + w].iter_mut().zip(grow).for_each(|(d, &x)| *d += x);
                        }
                    });
                }
            }
            Op::Reshape(x) => {
                if rg(*x) {
                    accumulate(pending, *x, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
                }
            }
            Op::BceLogits { logits, labels, weights } => {
                if rg(*logits) {
                    let z = self.value(*logits).data();
                    let g0 = g[0];
                    accumulate(pending, *logits, z.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += g0 * weights[i] * (sigmoid(z[i]) - labels[i]);
                        }
                    });
                }
            }
        }
    }
}

/// The coordinate where analytic and numeric gradients disagree most.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckWorst {
    pub param: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Compares autodiff gradients against central finite differences.
///
/// `f` builds a scalar loss from leaf variables bound to `params` (in order).
/// Every coordinate of every parameter is perturbed by `±eps` and `±2·eps`
/// and the fourth-order central difference is compared against the analytic
/// gradient. Returns the
/// maximum over coordinates of `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<S, F>(f: F, params: &[Tensor<S>], eps: f64) -> Result<f64>
where
    S: Scalar,
    F: for<'g> Fn(&mut Graph<'g, S>, &[Var]) -> Result<Var>,
{
    Ok(grad_check_worst(f, params, eps)?.rel_error)
}

/// [`grad_check`] reporting where the largest error occurred.
pub fn grad_check_worst<S, F>(f: F, params: &[Tensor<S>], eps: f64) -> Result<GradCheckWorst>
where
    S: Scalar,
    F: for<'g> Fn(&mut Graph<'g, S>, &[Var]) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid("grad_check eps must be positive"));
    }
    let eval = |ps: &[Tensor<S>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p)).collect();
        let loss = f(&mut g, &vars)?;
        let v = g.value(loss).item().as_f64();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { op: "grad_check objective" })
        }
    };

    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
        let loss = f(&mut g, &vars)?;
        g.backward(loss)?;
        vars.iter()
            .zip(params)
            .map(|(&v, p)| match g.grad(v) {
                Some(gr) => gr.iter().map(|x| x.as_f64()).collect(),
                None => vec![0.0; p.numel()],
            })
            .collect()
    };

    let mut worst = GradCheckWorst::default();
    let mut work: Vec<Tensor<S>> = params.to_vec();
    for (pi, grads) in analytic.iter().enumerate() {
        for (ci, &a) in grads.iter().enumerate() {
            let orig = work[pi].data()[ci];
            let mut at = |offset: f64| -> Result<f64> {
                work[pi].data_mut()[ci] = S::of(orig.as_f64() + offset);
                eval(&work)
            };
            let (up1, down1, up2, down2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
            work[pi].data_mut()[ci] = orig;
            let numeric = (8.0 * (up1 - down1) - (up2 - down2)) / (12.0 * eps);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > worst.rel_error {
                worst = GradCheckWorst { param: pi, coord: ci, analytic: a, numeric, rel_error: rel };
            }
        }
    }
    Ok(worst)
}
