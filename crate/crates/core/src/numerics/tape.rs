//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! Nodes are appended after their inputs, so walking the node list backwards
//! is a reverse topological order and each recorded op is visited once.
//! Parameters can be registered by reference, which keeps large embedding
//! tables from being copied into every per-instance tape.

use std::borrow::Cow;

use super::tensor::{dot, gemm_nn, gemm_nt, gemm_tn, log_sigmoid, sigmoid, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    MeanRows(Var),
    RowSum(Var),
    Softmax(Var),
    SegmentSoftmax(Var, Vec<usize>),
    SegmentWeightedSum { w: Var, v: Var, seg: Vec<usize> },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    LogSigmoid(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    L2Normalize(Var, f64),
    Dot(Var, Var),
    RowDot(Var, Var),
    BinaryCrossEntropy { p: Var, target: usize, eps: f64 },
    NegLogLikelihood { p: Var, target: usize, eps: f64 },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], kept for leaf nodes only.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled when `v` did not participate in the loss.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.lens.get(v.0).copied().unwrap_or(0)],
        }
    }

    /// Adds the gradient of `v` into `out`; a no-op when `v` did not participate.
    pub fn accumulate_into(&self, v: Var, out: &mut [f64]) {
        if let Some(g) = self.get(v) {
            for (o, x) in out.iter_mut().zip(g) {
                *o += x;
            }
        }
    }
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    backward_at: Option<usize>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<'a> Tape<'a> {
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        #[cfg(debug_assertions)]
        if !value.is_finite() && !matches!(op, Op::Leaf) {
            let parents_finite = self.parents(&op).iter().all(|p| self.value(*p).is_finite());
            debug_assert!(!parents_finite, "non-finite output from finite inputs in {op:?}");
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    #[cfg(debug_assertions)]
    fn parents(&self, op: &Op) -> Vec<Var> {
        use Op::*;
        match op {
            Leaf => vec![],
            MatMul(a, b) | MatMulT(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b)
            | MulRow(a, b) | MulCol(a, b) | Dot(a, b) | RowDot(a, b) => vec![*a, *b],
            SegmentWeightedSum { w, v, .. } => vec![*w, *v],
            ConcatCols(vs) | ConcatRows(vs) => vs.clone(),
            Scale(a, _) | AddScalar(a) | SliceCols(a, _) | GatherRows(a, _) | GatherCols(a, _)
            | Sum(a) | Mean(a) | SumRows(a) | MeanRows(a) | RowSum(a) | Softmax(a)
            | SegmentSoftmax(a, _) | Sigmoid(a) | Tanh(a) | Relu(a) | LeakyRelu(a, _)
            | LogSigmoid(a) | Log(a) | Clamp(a, _, _) | L2Normalize(a, _) => vec![*a],
            BinaryCrossEntropy { p, .. } | NegLogLikelihood { p, .. } => vec![*p],
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a borrowed tensor as a differentiable leaf.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers an owned tensor as a differentiable leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        if av.shape().len() > 2 || bv.shape().len() != 2 || bv.shape()[0] != k {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let n = bv.cols();
        let mut out = vec![0.0; m * n];
        gemm_nn(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    /// `a * b^T`, with `a: [m,k]` and `b: [n,k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        if av.shape().len() > 2 || bv.shape().len() > 2 || bv.cols() != k {
            return Err(Error::shape("matmul_t", av.shape(), bv.shape()));
        }
        let n = bv.rows();
        let mut out = vec![0.0; m * n];
        gemm_nt(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMulT(a, b), rg))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Broadcast add: `x[m,n] + r[n]` row-wise.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(r));
        let n = xv.cols();
        if rv.len() != n {
            return Err(Error::shape("add_row", xv.shape(), rv.shape()));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            add_into(row, rv.data());
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(r);
        Ok(self.push(out, Op::AddRow(x, r), rg))
    }

    /// Broadcast multiply: `x[m,n] * r[n]` row-wise.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(r));
        let n = xv.cols();
        if rv.len() != n {
            return Err(Error::shape("mul_row", xv.shape(), rv.shape()));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (d, s) in row.iter_mut().zip(rv.data()) {
                *d *= s;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(r);
        Ok(self.push(out, Op::MulRow(x, r), rg))
    }

    /// Broadcast multiply: `x[m,n] * c[m]` column-wise (each row scaled).
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(c));
        let (m, n) = (xv.rows(), xv.cols());
        if cv.len() != m {
            return Err(Error::shape("mul_col", xv.shape(), cv.shape()));
        }
        let mut data = xv.data().to_vec();
        for (row, s) in data.chunks_mut(n.max(1)).zip(cv.data()) {
            row.iter_mut().for_each(|d| *d *= s);
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(c);
        Ok(self.push(out, Op::MulCol(x, c), rg))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| f(*v)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data).expect("map keeps shape");
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v + s, Op::AddScalar(x))
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.map(x, log_sigmoid, Op::LogSigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, f64::ln, Op::Log(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        let m = first.rows();
        let mut total = 0;
        for p in parts {
            let pv = self.value(*p);
            if pv.rows() != m {
                return Err(Error::shape("concat_cols", first.shape(), pv.shape()));
            }
            total += pv.cols();
        }
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Tensor::matrix(m, total, data), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for p in parts {
            let pv = self.value(*p);
            if pv.cols() != n {
                return Err(Error::shape("concat_rows", self.value(parts[0]).shape(), pv.shape()));
            }
            data.extend_from_slice(pv.data());
        }
        let m = data.len() / n.max(1);
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Tensor::matrix(m, n, data), Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        if start > end || end > n {
            return Err(Error::shape("slice_cols", xv.shape(), &[start, end]));
        }
        let mut data = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            data.extend_from_slice(&xv.row(r)[start..end]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, end - start, data), Op::SliceCols(x, start), rg))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(Error::shape("gather_rows", xv.shape(), &[i]));
            }
            data.extend_from_slice(xv.row(i));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(idx.len(), n, data), Op::GatherRows(x, idx.to_vec()), rg))
    }

    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather_cols", xv.shape(), &[bad]));
        }
        let mut data = Vec::with_capacity(m * idx.len());
        for r in 0..m {
            let row = xv.row(r);
            data.extend(idx.iter().map(|&i| row[i]));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, idx.len(), data), Op::GatherCols(x, idx.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.len().max(1) as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    fn column_totals(xv: &Tensor) -> Vec<f64> {
        let n = xv.cols();
        let mut out = vec![0.0; n];
        for r in 0..xv.rows() {
            add_into(&mut out, xv.row(r));
        }
        out
    }

    /// Sum over rows: `[m,n] -> [1,n]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Self::column_totals(xv);
        let rg = self.rg(x);
        self.push(Tensor::matrix(1, out.len(), out), Op::SumRows(x), rg)
    }

    /// Mean over rows: `[m,n] -> [1,n]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.rows().max(1) as f64;
        let out: Vec<f64> = Self::column_totals(xv).into_iter().map(|v| v / m).collect();
        let rg = self.rg(x);
        self.push(Tensor::matrix(1, out.len(), out), Op::MeanRows(x), rg)
    }

    /// Sum within each row: `[m,n] -> [m,1]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out: Vec<f64> = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let rg = self.rg(x);
        self.push(Tensor::matrix(out.len(), 1, out), Op::RowSum(x), rg)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.cols().max(1);
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let out = Tensor::new(xv.shape().to_vec(), data).expect("softmax keeps shape");
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    /// Softmax of a flat list of logits, normalised separately within each
    /// segment. `seg[e]` names the segment of entry `e`.
    pub fn segment_softmax(&mut self, x: Var, seg: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != seg.len() {
            return Err(Error::shape("segment_softmax", xv.shape(), &[seg.len()]));
        }
        let nseg = seg.iter().copied().max().map_or(0, |m| m + 1);
        let mut maxes = vec![f64::NEG_INFINITY; nseg];
        for (v, &s) in xv.data().iter().zip(seg) {
            maxes[s] = maxes[s].max(*v);
        }
        let mut data: Vec<f64> = xv.data().iter().zip(seg).map(|(v, &s)| (v - maxes[s]).exp()).collect();
        let mut totals = vec![0.0; nseg];
        for (v, &s) in data.iter().zip(seg) {
            totals[s] += v;
        }
        for (v, &s) in data.iter_mut().zip(seg) {
            *v /= totals[s];
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SegmentSoftmax(x, seg.to_vec()), rg))
    }

    /// `out[s] = sum_{e: seg[e]=s} w[e] * v[e]`, shape `[nseg, cols(v)]`.
    /// Segments without entries produce zero rows.
    pub fn segment_weighted_sum(&mut self, w: Var, v: Var, seg: &[usize], nseg: usize) -> Result<Var> {
        let (wv, vv) = (self.value(w), self.value(v));
        if wv.len() != seg.len() || vv.rows() != seg.len() || seg.iter().any(|&s| s >= nseg) {
            return Err(Error::shape("segment_weighted_sum", wv.shape(), vv.shape()));
        }
        let n = vv.cols();
        let mut out = vec![0.0; nseg * n];
        for (e, &s) in seg.iter().enumerate() {
            let we = wv.data()[e];
            for (o, x) in out[s * n..(s + 1) * n].iter_mut().zip(vv.row(e)) {
                *o += we * x;
            }
        }
        let rg = self.rg(w) || self.rg(v);
        Ok(self.push(
            Tensor::matrix(nseg, n, out),
            Op::SegmentWeightedSum { w, v, seg: seg.to_vec() },
            rg,
        ))
    }

    /// Row-wise `x / max(||x||_2, eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.cols().max(1);
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let out = Tensor::new(xv.shape().to_vec(), data).expect("normalize keeps shape");
        let rg = self.rg(x);
        self.push(out, Op::L2Normalize(x, eps), rg)
    }

    /// Inner product of two equally-sized tensors, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(Error::shape("dot", av.shape(), bv.shape()));
        }
        let s = dot(av.data(), bv.data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    /// Row-wise inner products: `[m,n] x [m,n] -> [m,1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() || av.cols() != bv.cols() {
            return Err(Error::shape("row_dot", av.shape(), bv.shape()));
        }
        let out: Vec<f64> = (0..av.rows()).map(|r| dot(av.row(r), bv.row(r))).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(out.len(), 1, out), Op::RowDot(a, b), rg))
    }

    /// `-sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)]` for a one-hot `y`,
    /// with `p` clamped to `[eps, 1 - eps]`.
    pub fn binary_cross_entropy(&mut self, p: Var, target: usize, eps: f64) -> Result<Var> {
        let pv = self.value(p);
        if target >= pv.len() {
            return Err(Error::shape("binary_cross_entropy", pv.shape(), &[target]));
        }
        let loss = -pv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = x.clamp(eps, 1.0 - eps);
                if i == target {
                    c.ln()
                } else {
                    (1.0 - c).ln()
                }
            })
            .sum::<f64>();
        let rg = self.rg(p);
        Ok(self.push(Tensor::scalar(loss), Op::BinaryCrossEntropy { p, target, eps }, rg))
    }

    /// `-log p_target` with `p` clamped to `[eps, 1 - eps]`.
    pub fn neg_log_likelihood(&mut self, p: Var, target: usize, eps: f64) -> Result<Var> {
        let pv = self.value(p);
        if target >= pv.len() {
            return Err(Error::shape("neg_log_likelihood", pv.shape(), &[target]));
        }
        let loss = -pv.data()[target].clamp(eps, 1.0 - eps).ln();
        let rg = self.rg(p);
        Ok(self.push(Tensor::scalar(loss), Op::NegLogLikelihood { p, target, eps }, rg))
    }

    /// Reverse pass from a scalar `loss`. Each tape supports a single
    /// backward pass per recorded forward.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_at == Some(self.nodes.len()) {
            return Err(Error::BackwardTwice);
        }
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        self.backward_at = Some(self.nodes.len());

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
            } else {
                self.propagate(idx, &g, &mut grads);
            }
        }
        let lens = self.nodes.iter().map(|n| n.value.len()).collect();
        Ok(Gradients { grads, lens })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: &Var| -> &Tensor { &nodes[v.0].value };
        let out = &nodes[idx].value;
        let mut acc = |v: &Var, f: &mut dyn FnMut(&mut [f64])| {
            let node = &nodes[v.0];
            if !node.requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
            f(slot);
        };

        use Op::*;
        match &nodes[idx].op {
            Leaf => {}
            MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                acc(a, &mut |da| gemm_nt(g, bv.data(), da, m, n, k));
                acc(b, &mut |db| gemm_tn(av.data(), g, db, m, k, n));
            }
            MatMulT(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                acc(a, &mut |da| gemm_nn(g, bv.data(), da, m, n, k));
                acc(b, &mut |db| gemm_tn(g, av.data(), db, m, n, k));
            }
            Add(a, b) => {
                acc(a, &mut |da| add_into(da, g));
                acc(b, &mut |db| add_into(db, g));
            }
            Sub(a, b) => {
                acc(a, &mut |da| add_into(da, g));
                acc(b, &mut |db| db.iter_mut().zip(g).for_each(|(d, x)| *d -= x));
            }
            Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |da| {
                    for ((d, x), y) in da.iter_mut().zip(g).zip(bv.data()) {
                        *d += x * y;
                    }
                });
                acc(b, &mut |db| {
                    for ((d, x), y) in db.iter_mut().zip(g).zip(av.data()) {
                        *d += x * y;
                    }
                });
            }
            AddRow(x, r) => {
                let n = val(x).cols().max(1);
                acc(x, &mut |dx| add_into(dx, g));
                acc(r, &mut |dr| {
                    for row in g.chunks(n) {
                        add_into(dr, row);
                    }
                });
            }
            MulRow(x, r) => {
                let (xv, rv) = (val(x), val(r));
                let n = xv.cols().max(1);
                acc(x, &mut |dx| {
                    for (drow, grow) in dx.chunks_mut(n).zip(g.chunks(n)) {
                        for ((d, gi), ri) in drow.iter_mut().zip(grow).zip(rv.data()) {
                            *d += gi * ri;
                        }
                    }
                });
                acc(r, &mut |dr| {
                    for (xrow, grow) in xv.data().chunks(n).zip(g.chunks(n)) {
                        for ((d, gi), xi) in dr.iter_mut().zip(grow).zip(xrow) {
                            *d += gi * xi;
                        }
                    }
                });
            }
            MulCol(x, c) => {
                let (xv, cv) = (val(x), val(c));
                let n = xv.cols().max(1);
                acc(x, &mut |dx| {
                    for ((drow, grow), s) in dx.chunks_mut(n).zip(g.chunks(n)).zip(cv.data()) {
                        for (d, gi) in drow.iter_mut().zip(grow) {
                            *d += gi * s;
                        }
                    }
                });
                acc(c, &mut |dc| {
                    for ((d, grow), xrow) in dc.iter_mut().zip(g.chunks(n)).zip(xv.data().chunks(n)) {
                        *d += dot(grow, xrow);
                    }
                });
            }
            Scale(x, s) => acc(x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * s)),
            AddScalar(x) => acc(x, &mut |dx| add_into(dx, g)),
            ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = val(p).cols();
                    acc(p, &mut |dp| {
                        for (drow, grow) in dp.chunks_mut(w.max(1)).zip(g.chunks(total)) {
                            add_into(drow, &grow[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(p).len();
                    acc(p, &mut |dp| add_into(dp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            SliceCols(x, start) => {
                let n = val(x).cols();
                let w = out.cols();
                acc(x, &mut |dx| {
                    for (drow, grow) in dx.chunks_mut(n).zip(g.chunks(w.max(1))) {
                        add_into(&mut drow[*start..*start + w], grow);
                    }
                });
            }
            GatherRows(x, index) => {
                let n = val(x).cols();
                acc(x, &mut |dx| {
                    for (grow, &i) in g.chunks(n.max(1)).zip(index) {
                        add_into(&mut dx[i * n..(i + 1) * n], grow);
                    }
                });
            }
            GatherCols(x, index) => {
                let n = val(x).cols();
                let w = index.len();
                acc(x, &mut |dx| {
                    for (drow, grow) in dx.chunks_mut(n).zip(g.chunks(w.max(1))) {
                        for (gi, &i) in grow.iter().zip(index) {
                            drow[i] += gi;
                        }
                    }
                });
            }
            Sum(x) => acc(x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Mean(x) => {
                let n = val(x).len().max(1) as f64;
                acc(x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0] / n));
            }
            SumRows(x) | MeanRows(x) => {
                let xv = val(x);
                let n = xv.cols().max(1);
                let scale = if matches!(nodes[idx].op, MeanRows(_)) {
                    1.0 / xv.rows().max(1) as f64
                } else {
                    1.0
                };
                acc(x, &mut |dx| {
                    for drow in dx.chunks_mut(n) {
                        for (d, gi) in drow.iter_mut().zip(g) {
                            *d += gi * scale;
                        }
                    }
                });
            }
            RowSum(x) => {
                let n = val(x).cols().max(1);
                acc(x, &mut |dx| {
                    for (drow, gi) in dx.chunks_mut(n).zip(g) {
                        drow.iter_mut().for_each(|d| *d += gi);
                    }
                });
            }
            Softmax(x) => {
                let n = out.cols().max(1);
                acc(x, &mut |dx| {
                    for ((drow, grow), yrow) in dx.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)) {
                        let inner = dot(grow, yrow);
                        for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yi * (gi - inner);
                        }
                    }
                });
            }
            SegmentSoftmax(x, seg) => {
                let y = out.data();
                let nseg = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut inner = vec![0.0; nseg];
                for ((gi, yi), &s) in g.iter().zip(y).zip(seg) {
                    inner[s] += gi * yi;
                }
                acc(x, &mut |dx| {
                    for (e, &s) in seg.iter().enumerate() {
                        dx[e] += y[e] * (g[e] - inner[s]);
                    }
                });
            }
            SegmentWeightedSum { w, v, seg } => {
                let (wv, vv) = (val(w), val(v));
                let n = vv.cols();
                acc(w, &mut |dw| {
                    for (e, &s) in seg.iter().enumerate() {
                        dw[e] += dot(&g[s * n..(s + 1) * n], vv.row(e));
                    }
                });
                acc(v, &mut |dv| {
                    for (e, &s) in seg.iter().enumerate() {
                        let we = wv.data()[e];
                        for (d, gi) in dv[e * n..(e + 1) * n].iter_mut().zip(&g[s * n..(s + 1) * n]) {
                            *d += we * gi;
                        }
                    }
                });
            }
            Sigmoid(x) => acc(x, &mut |dx| {
                for ((d, gi), y) in dx.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * y * (1.0 - y);
                }
            }),
            Tanh(x) => acc(x, &mut |dx| {
                for ((d, gi), y) in dx.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * (1.0 - y * y);
                }
            }),
            Relu(x) => {
                let xv = val(x);
                acc(x, &mut |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv.data()) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            LeakyRelu(x, slope) => {
                let xv = val(x);
                acc(x, &mut |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv.data()) {
                        *d += if *xi > 0.0 { *gi } else { gi * slope };
                    }
                });
            }
            LogSigmoid(x) => {
                let xv = val(x);
                acc(x, &mut |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv.data()) {
                        *d += gi * sigmoid(-xi);
                    }
                });
            }
            Log(x) => {
                let xv = val(x);
                acc(x, &mut |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv.data()) {
                        *d += gi / xi;
                    }
                });
            }
            Clamp(x, lo, hi) => {
                let xv = val(x);
                acc(x, &mut |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv.data()) {
                        if xi >= lo && xi <= hi {
                            *d += gi;
                        }
                    }
                });
            }
            L2Normalize(x, eps) => {
                let xv = val(x);
                let n = xv.cols().max(1);
                acc(x, &mut |dx| {
                    for (((drow, grow), xrow), yrow) in dx
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(xv.data().chunks(n))
                        .zip(out.data().chunks(n))
                    {
                        let norm = dot(xrow, xrow).sqrt();
                        if norm > *eps {
                            let inner = dot(grow, yrow);
                            for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += (gi - yi * inner) / norm;
                            }
                        } else {
                            for (d, gi) in drow.iter_mut().zip(grow) {
                                *d += gi / eps;
                            }
                        }
                    }
                });
            }
            Dot(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |da| da.iter_mut().zip(bv.data()).for_each(|(d, y)| *d += g[0] * y));
                acc(b, &mut |db| db.iter_mut().zip(av.data()).for_each(|(d, y)| *d += g[0] * y));
            }
            RowDot(a, b) => {
                let (av, bv) = (val(a), val(b));
                let n = av.cols().max(1);
                acc(a, &mut |da| {
                    for ((drow, brow), gi) in da.chunks_mut(n).zip(bv.data().chunks(n)).zip(g) {
                        drow.iter_mut().zip(brow).for_each(|(d, y)| *d += gi * y);
                    }
                });
                acc(b, &mut |db| {
                    for ((drow, arow), gi) in db.chunks_mut(n).zip(av.data().chunks(n)).zip(g) {
                        drow.iter_mut().zip(arow).for_each(|(d, y)| *d += gi * y);
                    }
                });
            }
            BinaryCrossEntropy { p, target, eps } => {
                let pv = val(p);
                acc(p, &mut |dp| {
                    for (i, (d, &x)) in dp.iter_mut().zip(pv.data()).enumerate() {
                        if x < *eps || x > 1.0 - eps {
                            continue;
                        }
                        *d += if i == *target { -g[0] / x } else { g[0] / (1.0 - x) };
                    }
                });
            }
            NegLogLikelihood { p, target, eps } => {
                let x = val(p).data()[*target];
                if x >= *eps && x <= 1.0 - eps {
                    acc(p, &mut |dp| dp[*target] -= g[0] / x);
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
