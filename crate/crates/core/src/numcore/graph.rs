//! Reverse-mode differentiation tape.
//!
//! Every primitive appends one node holding its forward value. Nodes are only
//! ever appended, so node order is a topological order and the backward pass
//! is a single reverse sweep.

use std::sync::Arc;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, producing a `1 x cols` result.
    Rows,
    /// Reduce over columns, producing a `rows x 1` result.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Softmax(Var),
    LayerNorm { input: Var, inv_std: Vec<f64> },
    Relu(Var),
    Sigmoid(Var),
    Mean(Var, Axis),
    Sum(Var),
    SquaredError(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation. Confined to one thread; build a fresh graph per
/// forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every differentiable leaf.
#[derive(Debug)]
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

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(Arc::new(value), false)
    }

    /// Differentiable leaf. The tensor is shared, not copied.
    pub fn param(&mut self, value: Arc<Tensor>) -> Var {
        self.push_leaf(value, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push_leaf(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        value.check_finite(name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Arc::new(value), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, op: &'static str, var: Var) -> Result<(usize, usize)> {
        self.value(var).dims2().map_err(|_| {
            Error::shape(op, format!("operand has shape {:?}", self.value(var).shape()))
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims("matmul", a)?;
        let (k2, n) = self.dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} * {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    fn row_operand(&self, op: &'static str, x: Var, row: Var) -> Result<(usize, usize)> {
        let (n, d) = self.dims(op, x)?;
        let (r, c) = self.dims(op, row)?;
        if r != 1 || c != d {
            return Err(Error::shape(op, format!("{n}x{d} with row {r}x{c}")));
        }
        Ok((n, d))
    }

    /// Adds a `1 x d` row to every row of an `n x d` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, d) = self.row_operand("add_row", x, row)?;
        let r = self.value(row).data();
        let out: Vec<f64> =
            self.value(x).data().iter().enumerate().map(|(i, &v)| v + r[i % d]).collect();
        let shape = self.value(x).shape().to_vec();
        self.push("add_row", Tensor::from_parts(shape, out), Op::AddRow(x, row), &[x, row])
    }

    /// Multiplies every row of an `n x d` matrix elementwise by a `1 x d` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, d) = self.row_operand("mul_row", x, row)?;
        let r = self.value(row).data();
        let out: Vec<f64> =
            self.value(x).data().iter().enumerate().map(|(i, &v)| v * r[i % d]).collect();
        let shape = self.value(x).shape().to_vec();
        self.push("mul_row", Tensor::from_parts(shape, out), Op::MulRow(x, row), &[x, row])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.map(x, |v| v * factor);
        self.push("scale", out, Op::Scale(x, factor), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims("transpose", x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                out[j * n + i] = src[i * d + j];
            }
        }
        self.push("transpose", Tensor::from_parts(vec![d, n], out), Op::Transpose(x), &[x])
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no operands"));
        }
        let n = self.dims("concat_cols", parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims("concat_cols", p)?;
            if r != n {
                return Err(Error::shape("concat_cols", format!("row counts {n} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(
            "concat_cols",
            Tensor::from_parts(vec![n, total], out),
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no operands"));
        }
        let d = self.dims("concat_rows", parts[0])?.1;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims("concat_rows", p)?;
            if c != d {
                return Err(Error::shape("concat_rows", format!("column counts {d} vs {c}")));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * d);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        self.push(
            "concat_rows",
            Tensor::from_parts(vec![rows, d], out),
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = self.dims("slice_rows", x)?;
        if start >= end || end > n {
            return Err(Error::shape("slice_rows", format!("{start}..{end} of {n} rows")));
        }
        let out = self.value(x).data()[start * d..end * d].to_vec();
        self.push(
            "slice_rows",
            Tensor::from_parts(vec![end - start, d], out),
            Op::SliceRows(x, start),
            &[x],
        )
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = self.dims("slice_cols", x)?;
        if start >= end || end > d {
            return Err(Error::shape("slice_cols", format!("{start}..{end} of {d} columns")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            out.extend_from_slice(&src[i * d + start..i * d + end]);
        }
        self.push(
            "slice_cols",
            Tensor::from_parts(vec![n, end - start], out),
            Op::SliceCols(x, start),
            &[x],
        )
    }

    /// Softmax along each row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.masked_softmax_rows(x, None)
    }

    /// Softmax along each row where entries with `allowed[i * cols + j] == false`
    /// receive probability exactly zero.
    pub fn masked_softmax_rows(&mut self, x: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let (n, d) = self.dims("softmax", x)?;
        if let Some(mask) = allowed {
            if mask.len() != n * d {
                return Err(Error::shape("softmax", "mask size does not match input"));
            }
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let ok = |j: usize| allowed.is_none_or(|m| m[i * d + j]);
            let max = (0..d).filter(|&j| ok(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::shape("softmax", format!("row {i} fully masked")));
            }
            let mut total = 0.0;
            for j in 0..d {
                if ok(j) {
                    let e = (row[j] - max).exp();
                    out[i * d + j] = e;
                    total += e;
                }
            }
            for v in &mut out[i * d..(i + 1) * d] {
                *v /= total;
            }
        }
        self.push("softmax", Tensor::from_parts(vec![n, d], out), Op::Softmax(x), &[x])
    }

    /// Per-row standardisation to zero mean and unit (population) variance.
    /// The affine part is left to `mul_row`/`add_row`.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.dims("layer_norm", x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; n * d];
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            for (o, &v) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
            inv_std.push(s);
        }
        self.push(
            "layer_norm",
            Tensor::from_parts(vec![n, d], out),
            Op::LayerNorm { input: x, inv_std },
            &[x],
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, |v| v.max(0.0));
        self.push("relu", out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        self.push("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    pub fn mean(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let (n, d) = self.dims("mean", x)?;
        let src = self.value(x).data();
        let out = match axis {
            Axis::Rows => {
                let mut acc = vec![0.0; d];
                for i in 0..n {
                    for (a, &v) in acc.iter_mut().zip(&src[i * d..(i + 1) * d]) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= n as f64);
                Tensor::from_parts(vec![1, d], acc)
            }
            Axis::Cols => {
                let acc = (0..n).map(|i| src[i * d..(i + 1) * d].iter().sum::<f64>() / d as f64);
                Tensor::from_parts(vec![n, 1], acc.collect())
            }
        };
        self.push("mean", out, Op::Mean(x, axis), &[x])
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Mean of squared differences as a `1 x 1` tensor.
    pub fn squared_error(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("squared_error", pred, target)?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let total: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        let value = Tensor::scalar(total / p.len() as f64);
        self.push("squared_error", value, Op::SquaredError(pred, target), &[pred, target])
    }

    /// Reverse sweep from a `1 x 1` output. Returns gradients for every
    /// differentiable leaf that the output depends on.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).numel() != 1 {
            return Err(Error::shape("backward", "output must be a single value"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[output.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
        }
        for g in grads.iter().flatten() {
            g.check_finite("backward")?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2()?;
                let n = tb.cols();
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(gd, tb.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], da));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(ta.data(), gd, &mut db, m, k, n);
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(x, row) => {
                let d = out.cols();
                if self.needs(*row) {
                    let mut acc = vec![0.0; d];
                    for (i, &v) in gd.iter().enumerate() {
                        acc[i % d] += v;
                    }
                    self.accumulate(grads, *row, Tensor::from_parts(vec![1, d], acc));
                }
                self.accumulate(grads, *x, g.clone());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let da = gd.iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, Tensor::from_parts(ta.shape().to_vec(), da));
                }
                if self.needs(*b) {
                    let db = gd.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, Tensor::from_parts(tb.shape().to_vec(), db));
                }
            }
            Op::MulRow(x, row) => {
                let (tx, tr) = (self.value(*x), self.value(*row));
                let d = tx.cols();
                let r = tr.data();
                if self.needs(*row) {
                    let mut acc = vec![0.0; d];
                    for (i, (&gv, &xv)) in gd.iter().zip(tx.data()).enumerate() {
                        acc[i % d] += gv * xv;
                    }
                    self.accumulate(grads, *row, Tensor::from_parts(vec![1, d], acc));
                }
                if self.needs(*x) {
                    let dx = gd.iter().enumerate().map(|(i, &gv)| gv * r[i % d]).collect();
                    self.accumulate(grads, *x, Tensor::from_parts(tx.shape().to_vec(), dx));
                }
            }
            Op::Scale(x, factor) => {
                let dx = gd.iter().map(|v| v * factor).collect();
                self.accumulate(grads, *x, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::Transpose(x) => {
                let (n, d) = out.dims2()?;
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..d {
                        dx[j * n + i] = gd[i * d + j];
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(vec![d, n], dx));
            }
            Op::ConcatCols(parts) => {
                let (n, total) = out.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let mut dp = Vec::with_capacity(n * w);
                        for i in 0..n {
                            dp.extend_from_slice(&gd[i * total + offset..i * total + offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::from_parts(vec![n, w], dp));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.needs(p) {
                        let shape = self.value(p).shape().to_vec();
                        let dp = gd[offset..offset + len].to_vec();
                        self.accumulate(grads, p, Tensor::from_parts(shape, dp));
                    }
                    offset += len;
                }
            }
            Op::SliceRows(x, start) => {
                let tx = self.value(*x);
                let d = tx.cols();
                let mut dx = vec![0.0; tx.numel()];
                dx[start * d..start * d + gd.len()].copy_from_slice(gd);
                self.accumulate(grads, *x, Tensor::from_parts(tx.shape().to_vec(), dx));
            }
            Op::SliceCols(x, start) => {
                let tx = self.value(*x);
                let (n, d) = tx.dims2()?;
                let w = out.cols();
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    dx[i * d + start..i * d + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *x, Tensor::from_parts(vec![n, d], dx));
            }
            Op::Softmax(x) => {
                let (n, d) = out.dims2()?;
                let y = out.data();
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    let r = i * d..(i + 1) * d;
                    let inner: f64 = gd[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| a * b).sum();
                    for j in r {
                        dx[j] = y[j] * (gd[j] - inner);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(vec![n, d], dx));
            }
            Op::LayerNorm { input, inv_std } => {
                let (n, d) = out.dims2()?;
                let y = out.data();
                let mut dx = vec![0.0; n * d];
                for (i, &s) in inv_std.iter().enumerate().take(n) {
                    let r = i * d..(i + 1) * d;
                    let g_mean = gd[r.clone()].iter().sum::<f64>() / d as f64;
                    let gy_mean =
                        gd[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / d as f64;
                    for j in r {
                        dx[j] = s * (gd[j] - g_mean - y[j] * gy_mean);
                    }
                }
                self.accumulate(grads, *input, Tensor::from_parts(vec![n, d], dx));
            }
            Op::Relu(x) => {
                let dx = gd.iter().zip(out.data()).map(|(g, y)| if *y > 0.0 { *g } else { 0.0 });
                self.accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), dx.collect()));
            }
            Op::Sigmoid(x) => {
                let dx = gd.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y));
                self.accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), dx.collect()));
            }
            Op::Mean(x, axis) => {
                let tx = self.value(*x);
                let (n, d) = tx.dims2()?;
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..d {
                        dx[i * d + j] = match axis {
                            Axis::Rows => gd[j] / n as f64,
                            Axis::Cols => gd[i] / d as f64,
                        };
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(vec![n, d], dx));
            }
            Op::Sum(x) => {
                let tx = self.value(*x);
                let dx = vec![gd[0]; tx.numel()];
                self.accumulate(grads, *x, Tensor::from_parts(tx.shape().to_vec(), dx));
            }
            Op::SquaredError(pred, target) => {
                let (tp, tt) = (self.value(*pred), self.value(*target));
                let coef = 2.0 * gd[0] / tp.numel() as f64;
                let diff: Vec<f64> =
                    tp.data().iter().zip(tt.data()).map(|(p, t)| coef * (p - t)).collect();
                if self.needs(*target) {
                    let neg = diff.iter().map(|v| -v).collect();
                    self.accumulate(grads, *target, Tensor::from_parts(tt.shape().to_vec(), neg));
                }
                self.accumulate(grads, *pred, Tensor::from_parts(tp.shape().to_vec(), diff));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Arc<Tensor> {
        Arc::new(Tensor::matrix(rows, cols, data.to_vec()).unwrap())
    }

    #[test]
    fn identity_matmul_and_its_gradient() {
        let mut g = Graph::new();
        let i3 = g.constant(Tensor::identity(3));
        let a = g.param(t(3, 2, &[1.0, -2.0, 3.0, 0.5, 4.0, 7.0]));
        let y = g.matmul(i3, a).unwrap();
        assert_eq!(g.value(y), g.value(a));
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(a).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(grads.get(i3).is_none());
    }

    #[test]
    fn softmax_of_constant_row_is_uniform_with_null_jvp() {
        let mut g = Graph::new();
        let x = g.param(t(1, 4, &[2.5; 4]));
        let y = g.softmax_rows(x).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        // J^T c for constant c is zero; J is symmetric for softmax.
        let c = g.constant(Tensor::filled(1, 4, 3.0));
        let dotted = g.mul(y, c).unwrap();
        let s = g.sum(dotted).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn masked_softmax_zeroes_disallowed_entries() {
        let mut g = Graph::new();
        let x = g.param(t(2, 3, &[1.0, 2.0, 3.0, 0.0, 0.0, 9.0]));
        let mask = [true, true, false, true, true, false];
        let y = g.masked_softmax_rows(x, Some(&mask)).unwrap();
        let v = g.value(y).data();
        assert_eq!(v[2], 0.0);
        assert_eq!(v[5], 0.0);
        assert!((v[3] - 0.5).abs() < 1e-15);
        assert!(g.masked_softmax_rows(x, Some(&[false; 6])).is_err());
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Shape { op: "matmul", .. })));
        let r = g.constant(Tensor::zeros(&[1, 2]));
        assert!(g.add_row(a, r).is_err());
        assert!(g.slice_rows(a, 1, 3).is_err());
        assert!(g.concat_cols(&[]).is_err());
    }

    #[test]
    fn non_finite_results_trip_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(1e300));
        assert!(matches!(g.mul(a, a), Err(Error::NonFinite("mul"))));
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 5, vec![1.0, 2.0, 3.0, 4.0, 10.0, -3.0, 0.1, 0.2, 7.0, 1.0]).unwrap());
        let y = g.layer_norm(x, 1e-12).unwrap();
        let v = g.value(y);
        for i in 0..2 {
            let row = v.row_slice(i);
            let mean = row.iter().sum::<f64>() / 5.0;
            let var = row.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn gradient_reuse_accumulates() {
        // d/dx sum(x * x) = 2x
        let mut g = Graph::new();
        let x = g.param(t(1, 3, &[1.0, -2.0, 0.5]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }
}
