use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use super::gemm::gemm;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

/// Epsilon added to squared distances in inverse-distance interpolation (m^2).
pub const INTERP_EPS: f64 = 1e-4;

/// Handle to a node of one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    Affine(usize, usize, usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Scale(usize, f64),
    Relu(usize),
    GroupMax { input: usize, argmax: Vec<usize> },
    Gather { input: usize, index: Vec<usize> },
    Concat(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { input: usize, start: usize },
    Transpose(usize),
    Reshape(usize),
    Sum(usize),
    SumSquares(usize),
    MeanRows(usize),
    SoftmaxCrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<f64> },
    Interpolate { query: usize, source: usize, features: usize, neighbors: Vec<usize>, k: usize },
    SixDRotation(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Affine(..) => "affine",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::GroupMax { .. } => "group_max",
            Op::Gather { .. } => "gather",
            Op::Concat(_) => "concat",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::SumSquares(_) => "sum_squares",
            Op::MeanRows(_) => "mean_rows",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Interpolate { .. } => "interpolate",
            Op::SixDRotation(_) => "six_d_rotation",
        }
    }
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Eager reverse-mode tape. Each operation evaluates immediately and records
/// what `backward` needs; the node list is its own topological order.
pub struct Graph<'p> {
    id: u64,
    params: Option<&'p ParamStore>,
    param_nodes: Vec<Option<usize>>,
    nodes: Vec<Node<'p>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            params: None,
            param_nodes: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            param_nodes: vec![None; params.len()],
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node. Handles issued before the reset become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_nodes.iter_mut().for_each(|p| *p = None);
        self.id = NEXT_GRAPH.fetch_add(1, Ordering::Relaxed);
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward);
        }
        Ok(v.index)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.graph, self.id, "variable belongs to another graph");
        &self.nodes[v.index].value
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.index].op.name()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn shape_err(&self, op: &'static str, detail: String) -> Error {
        Error::Shape {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let idx = self.check(v)?;
        let t = &self.nodes[idx].value;
        if t.shape().len() != 2 {
            return Err(self.shape_err(op, format!("expected rank-2 input, got {:?}", t.shape())));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    /// Inserts a constant or differentiable input. Gradients are tracked when
    /// the tensor's `requires_grad` flag is set.
    pub fn input(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    /// Binds a learnable parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        let store = self.params.expect("graph was built without a parameter store");
        if let Some(idx) = self.param_nodes[id.0] {
            return Var {
                graph: self.id,
                index: idx,
            };
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(store.get(id)),
            op: Op::Param(id),
            requires_grad: true,
        });
        let idx = self.nodes.len() - 1;
        self.param_nodes[id.0] = Some(idx);
        Var {
            graph: self.id,
            index: idx,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(self.shape_err("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let rg = self.rg(&[a.index, b.index]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a.index, b.index), rg))
    }

    /// `x * w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(x, "affine")?;
        let (k2, n) = self.dims(w, "affine")?;
        let bias = self.value(b);
        if k != k2 || bias.len() != n {
            return Err(self.shape_err(
                "affine",
                format!("[{m}, {k}] x [{k2}, {n}] + bias {:?}", bias.shape()),
            ));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias.data());
        }
        gemm(m, k, n, self.value(x).data(), false, self.value(w).data(), false, 1.0, &mut out);
        let rg = self.rg(&[x.index, w.index, b.index]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::Affine(x.index, w.index, b.index), rg))
    }

    fn broadcast_kind(&self, a: Var, b: Var, op: &'static str) -> Result<Broadcast> {
        let ta = self.value(a);
        let tb = self.value(b);
        if ta.shape() == tb.shape() {
            Ok(Broadcast::Same)
        } else if tb.len() == 1 {
            Ok(Broadcast::Scalar)
        } else if tb.rows() == 1 && tb.len() == ta.cols() {
            Ok(Broadcast::Row)
        } else {
            Err(self.shape_err(op, format!("cannot broadcast {:?} onto {:?}", tb.shape(), ta.shape())))
        }
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: fn(f64, f64) -> f64) -> Result<(Tensor, Broadcast)> {
        self.check(a)?;
        self.check(b)?;
        let kind = self.broadcast_kind(a, b, op)?;
        let ta = self.value(a);
        let tb = self.value(b).data();
        let cols = ta.cols().max(1);
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match kind {
                    Broadcast::Same => tb[i],
                    Broadcast::Row => tb[i % cols],
                    Broadcast::Scalar => tb[0],
                };
                f(x, y)
            })
            .collect();
        Ok((Tensor::new(ta.shape().to_vec(), data)?, kind))
    }

    /// Elementwise `a + b`; `b` may be a row vector or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, kind) = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a.index, b.index]);
        Ok(self.push(t, Op::Add(a.index, b.index, kind), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, kind) = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a.index, b.index]);
        Ok(self.push(t, Op::Sub(a.index, b.index, kind), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, kind) = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a.index, b.index]);
        Ok(self.push(t, Op::Mul(a.index, b.index, kind), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let idx = self.check(a)?;
        let t = &self.nodes[idx].value;
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * c).collect())?;
        let rg = self.rg(&[idx]);
        Ok(self.push(out, Op::Scale(idx, c), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let idx = self.check(a)?;
        let t = &self.nodes[idx].value;
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| x.max(0.0)).collect())?;
        let rg = self.rg(&[idx]);
        Ok(self.push(out, Op::Relu(idx), rg))
    }

    /// Max over consecutive blocks of `group` rows: `[g * group, c] -> [g, c]`.
    /// Ties resolve to the earliest row.
    pub fn group_max(&mut self, a: Var, group: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a, "group_max")?;
        if group == 0 || rows % group != 0 {
            return Err(self.shape_err("group_max", format!("{rows} rows not divisible into groups of {group}")));
        }
        let groups = rows / group;
        let x = self.value(a).data();
        let mut out = vec![f64::NEG_INFINITY; groups * cols];
        let mut argmax = vec![0usize; groups * cols];
        for g in 0..groups {
            for r in g * group..(g + 1) * group {
                let row = &x[r * cols..(r + 1) * cols];
                for c in 0..cols {
                    let o = g * cols + c;
                    if row[c] > out[o] || r == g * group {
                        out[o] = row[c];
                        argmax[o] = r;
                    }
                }
            }
        }
        let rg = self.rg(&[a.index]);
        Ok(self.push(
            Tensor::matrix(groups, cols, out)?,
            Op::GroupMax {
                input: a.index,
                argmax,
            },
            rg,
        ))
    }

    /// Row gather: `out[i] = a[index[i]]`. Backward scatters-adds.
    pub fn gather(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let (rows, cols) = self.dims(a, "gather")?;
        if let Some(bad) = index.iter().find(|&&i| i >= rows) {
            return Err(self.shape_err("gather", format!("row {bad} out of range for {rows} rows")));
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in &index {
            out.extend_from_slice(&x[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(&[a.index]);
        let n = index.len();
        Ok(self.push(Tensor::matrix(n, cols, out)?, Op::Gather { input: a.index, index }, rg))
    }

    /// Column-wise concatenation of inputs with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(self.shape_err("concat", "no inputs".into()));
        }
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            dims.push(self.dims(p, "concat")?);
        }
        let rows = dims[0].0;
        if dims.iter().any(|d| d.0 != rows) {
            return Err(self.shape_err("concat", format!("row counts differ: {dims:?}")));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &(_, c)) in parts.iter().zip(&dims) {
                out.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.index).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Tensor::matrix(rows, total, out)?, Op::Concat(ids), rg))
    }

    /// Row-wise stacking of inputs with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(self.shape_err("concat_rows", "no inputs".into()));
        }
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            dims.push(self.dims(p, "concat_rows")?);
        }
        let cols = dims[0].1;
        if dims.iter().any(|d| d.1 != cols) {
            return Err(self.shape_err("concat_rows", format!("column counts differ: {dims:?}")));
        }
        let rows: usize = dims.iter().map(|d| d.0).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.index).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::ConcatRows(ids), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a, "slice_cols")?;
        if start + len > cols {
            return Err(self.shape_err("slice_cols", format!("columns {start}..{} of {cols}", start + len)));
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&x[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(&[a.index]);
        Ok(self.push(Tensor::matrix(rows, len, out)?, Op::SliceCols { input: a.index, start }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.dims(a, "transpose")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = x[r * cols + c];
            }
        }
        let rg = self.rg(&[a.index]);
        Ok(self.push(Tensor::matrix(cols, rows, out)?, Op::Transpose(a.index), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let idx = self.check(a)?;
        let t = &self.nodes[idx].value;
        if shape.iter().product::<usize>() != t.len() {
            return Err(self.shape_err("reshape", format!("{:?} -> {shape:?}", t.shape())));
        }
        let out = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        let rg = self.rg(&[idx]);
        Ok(self.push(out, Op::Reshape(idx), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let idx = self.check(a)?;
        let s = self.nodes[idx].value.data().iter().sum();
        let rg = self.rg(&[idx]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(idx), rg))
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let idx = self.check(a)?;
        let s = self.nodes[idx].value.data().iter().map(|x| x * x).sum();
        let rg = self.rg(&[idx]);
        Ok(self.push(Tensor::scalar(s), Op::SumSquares(idx), rg))
    }

    /// Column means: `[n, c] -> [1, c]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.dims(a, "mean_rows")?;
        if rows == 0 {
            return Err(self.shape_err("mean_rows", "empty input".into()));
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c] += x[r * cols + c];
            }
        }
        out.iter_mut().for_each(|v| *v /= rows as f64);
        let rg = self.rg(&[a.index]);
        Ok(self.push(Tensor::matrix(1, cols, out)?, Op::MeanRows(a.index), rg))
    }

    /// Mean cross-entropy of row-wise softmax against integer targets.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims(logits, "softmax_cross_entropy")?;
        if targets.len() != rows || targets.iter().any(|&t| t >= cols) {
            return Err(self.shape_err(
                "softmax_cross_entropy",
                format!("{} targets for {rows} rows of {cols} classes", targets.len()),
            ));
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; rows * cols];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let p = softmax(row);
            loss -= p[targets[r]].max(f64::MIN_POSITIVE).ln();
            probs[r * cols..(r + 1) * cols].copy_from_slice(&p);
        }
        let rg = self.rg(&[logits.index]);
        Ok(self.push(
            Tensor::scalar(loss / rows as f64),
            Op::SoftmaxCrossEntropy {
                logits: logits.index,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Inverse-squared-distance interpolation of `features` (rows aligned with
    /// `source` points) at each `query` point, using the given neighbour lists
    /// (`k` source indices per query, flattened).
    pub fn interpolate(
        &mut self,
        query: Var,
        source: Var,
        features: Var,
        neighbors: Vec<usize>,
        k: usize,
    ) -> Result<Var> {
        let (q, d) = self.dims(query, "interpolate")?;
        let (s, d2) = self.dims(source, "interpolate")?;
        let (s2, c) = self.dims(features, "interpolate")?;
        if d != 3 || d2 != 3 || s != s2 || k == 0 || neighbors.len() != q * k || neighbors.iter().any(|&i| i >= s) {
            return Err(self.shape_err(
                "interpolate",
                format!("query [{q}, {d}], source [{s}, {d2}], features [{s2}, {c}], {} neighbours (k={k})", neighbors.len()),
            ));
        }
        let qv = self.value(query).data();
        let sv = self.value(source).data();
        let fv = self.value(features).data();
        let mut out = vec![0.0; q * c];
        for i in 0..q {
            let w = interp_weights(&qv[i * 3..i * 3 + 3], sv, &neighbors[i * k..(i + 1) * k]);
            let total: f64 = w.iter().sum();
            for (j, &n) in neighbors[i * k..(i + 1) * k].iter().enumerate() {
                let a = w[j] / total;
                for ch in 0..c {
                    out[i * c + ch] += a * fv[n * c + ch];
                }
            }
        }
        let rg = self.rg(&[query.index, source.index, features.index]);
        Ok(self.push(
            Tensor::matrix(q, c, out)?,
            Op::Interpolate {
                query: query.index,
                source: source.index,
                features: features.index,
                neighbors,
                k,
            },
            rg,
        ))
    }

    /// Maps a `[1, 6]` vector (two 3D columns) to a rotation matrix by
    /// Gram-Schmidt orthonormalisation; the third column is their cross product.
    pub fn six_d_rotation(&mut self, a: Var) -> Result<Var> {
        let idx = self.check(a)?;
        let x = self.nodes[idx].value.data();
        if x.len() != 6 {
            return Err(self.shape_err("six_d_rotation", format!("expected 6 values, got {}", x.len())));
        }
        let f = six_d_forward(x);
        if !(f.n1 > 0.0 && f.n2 > 0.0) {
            return Err(Error::NonFinite("six_d_rotation: degenerate input columns".into()));
        }
        let mut out = vec![0.0; 9];
        for r in 0..3 {
            out[r * 3] = f.b1[r];
            out[r * 3 + 1] = f.b2[r];
            out[r * 3 + 2] = f.b3[r];
        }
        let rg = self.rg(&[idx]);
        Ok(self.push(Tensor::matrix(3, 3, out)?, Op::SixDRotation(idx), rg))
    }

    /// Reverse sweep from `output`, seeded with `seed` (same shape).
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        let out_idx = self.check(output)?;
        let out_val = &self.nodes[out_idx].value;
        if out_val.len() != seed.len() {
            return Err(Error::Shape {
                node: out_idx,
                op: "backward",
                detail: format!("seed {:?} vs output {:?}", seed.shape(), out_val.shape()),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[out_idx].requires_grad {
            grads[out_idx] = Some(seed.data().to_vec());
        }
        for i in (0..=out_idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("gradient shape")))
            .collect();
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            graph: self.id,
            grads,
            params,
        })
    }

    /// Scalar outputs only: seed 1.
    pub fn backward_scalar(&self, output: Var) -> Result<Gradients> {
        self.backward(output, &Tensor::scalar(1.0))
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |j: usize| self.nodes[j].value.data();
        let shape = |j: usize| &self.nodes[j].value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (shape(a).rows(), shape(a).cols());
                let n = shape(b).cols();
                if let Some(ga) = self.slot(grads, a) {
                    gemm(m, n, k, g, false, val(b), true, 1.0, ga);
                }
                if let Some(gb) = self.slot(grads, b) {
                    gemm(k, m, n, val(a), true, g, false, 1.0, gb);
                }
            }
            &Op::Affine(x, w, b) => {
                let (m, k) = (shape(x).rows(), shape(x).cols());
                let n = shape(w).cols();
                if let Some(gx) = self.slot(grads, x) {
                    gemm(m, n, k, g, false, val(w), true, 1.0, gx);
                }
                if let Some(gw) = self.slot(grads, w) {
                    gemm(k, m, n, val(x), true, g, false, 1.0, gw);
                }
                if let Some(gb) = self.slot(grads, b) {
                    for r in 0..m {
                        for c in 0..n {
                            gb[c] += g[r * n + c];
                        }
                    }
                }
            }
            &Op::Add(a, b, kind) => {
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                self.reduce_broadcast(grads, b, kind, g, |gi, _| gi);
            }
            &Op::Sub(a, b, kind) => {
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                self.reduce_broadcast(grads, b, kind, g, |gi, _| -gi);
            }
            &Op::Mul(a, b, kind) => {
                let av = val(a);
                let bv = val(b);
                let cols = shape(a).cols().max(1);
                if let Some(ga) = self.slot(grads, a) {
                    for (idx, x) in ga.iter_mut().enumerate() {
                        let y = match kind {
                            Broadcast::Same => bv[idx],
                            Broadcast::Row => bv[idx % cols],
                            Broadcast::Scalar => bv[0],
                        };
                        *x += g[idx] * y;
                    }
                }
                self.reduce_broadcast(grads, b, kind, g, |gi, idx| gi * av[idx]);
            }
            &Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                }
            }
            &Op::Relu(a) => {
                let av = val(a);
                if let Some(ga) = self.slot(grads, a) {
                    for ((x, &y), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v > 0.0 {
                            *x += y;
                        }
                    }
                }
            }
            Op::GroupMax { input, argmax } => {
                let cols = shape(*input).cols();
                if let Some(ga) = self.slot(grads, *input) {
                    for (o, &r) in argmax.iter().enumerate() {
                        ga[r * cols + o % cols] += g[o];
                    }
                }
            }
            Op::Gather { input, index } => {
                let cols = shape(*input).cols();
                if let Some(ga) = self.slot(grads, *input) {
                    for (o, &r) in index.iter().enumerate() {
                        for c in 0..cols {
                            ga[r * cols + c] += g[o * cols + c];
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = shape(p).cols();
                    if let Some(gp) = self.slot(grads, p) {
                        for r in 0..rows {
                            for j in 0..c {
                                gp[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = shape(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        gp.iter_mut().zip(&g[offset..offset + n]).for_each(|(x, y)| *x += y);
                    }
                    offset += n;
                }
            }
            &Op::SliceCols { input, start } => {
                let cols = shape(input).cols();
                let len = node.value.cols();
                if let Some(ga) = self.slot(grads, input) {
                    for r in 0..node.value.rows() {
                        for j in 0..len {
                            ga[r * cols + start + j] += g[r * len + j];
                        }
                    }
                }
            }
            &Op::Transpose(a) => {
                let (rows, cols) = (shape(a).rows(), shape(a).cols());
                if let Some(ga) = self.slot(grads, a) {
                    for r in 0..rows {
                        for c in 0..cols {
                            ga[r * cols + c] += g[c * rows + r];
                        }
                    }
                }
            }
            &Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            &Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            &Op::SumSquares(a) => {
                let av = val(a);
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().zip(av).for_each(|(x, v)| *x += 2.0 * v * g[0]);
                }
            }
            &Op::MeanRows(a) => {
                let (rows, cols) = (shape(a).rows(), shape(a).cols());
                if let Some(ga) = self.slot(grads, a) {
                    let inv = 1.0 / rows as f64;
                    for r in 0..rows {
                        for c in 0..cols {
                            ga[r * cols + c] += g[c] * inv;
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let cols = shape(*logits).cols();
                let rows = targets.len();
                if let Some(ga) = self.slot(grads, *logits) {
                    let s = g[0] / rows as f64;
                    for r in 0..rows {
                        for c in 0..cols {
                            let onehot = if c == targets[r] { 1.0 } else { 0.0 };
                            ga[r * cols + c] += s * (probs[r * cols + c] - onehot);
                        }
                    }
                }
            }
            Op::Interpolate {
                query,
                source,
                features,
                neighbors,
                k,
            } => self.interpolate_backward(grads, g, i, *query, *source, *features, neighbors, *k),
            &Op::SixDRotation(a) => {
                let f = six_d_forward(val(a));
                let col = |c: usize| [g[c], g[3 + c], g[6 + c]];
                let ga_local = six_d_backward(&f, val(a), col(0), col(1), col(2));
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().zip(ga_local).for_each(|(x, y)| *x += y);
                }
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], idx: usize) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[idx].requires_grad {
            return None;
        }
        let len = self.nodes[idx].value.len();
        Some(grads[idx].get_or_insert_with(|| vec![0.0; len]))
    }

    fn reduce_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        b: usize,
        kind: Broadcast,
        g: &[f64],
        f: impl Fn(f64, usize) -> f64,
    ) {
        let blen = self.nodes[b].value.len();
        if let Some(gb) = self.slot(grads, b) {
            for (idx, &gi) in g.iter().enumerate() {
                let target = match kind {
                    Broadcast::Same => idx,
                    Broadcast::Row => idx % blen,
                    Broadcast::Scalar => 0,
                };
                gb[target] += f(gi, idx);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn interpolate_backward(
        &self,
        grads: &mut [Option<Vec<f64>>],
        g: &[f64],
        node: usize,
        query: usize,
        source: usize,
        features: usize,
        neighbors: &[usize],
        k: usize,
    ) {
        let qv = self.nodes[query].value.data();
        let sv = self.nodes[source].value.data();
        let fv = self.nodes[features].value.data();
        let out = self.nodes[node].value.data();
        let c = self.nodes[features].value.cols();
        let q = self.nodes[query].value.rows();
        let mut gq = vec![0.0; qv.len()];
        let mut gs = vec![0.0; sv.len()];
        let mut gf = vec![0.0; fv.len()];
        for i in 0..q {
            let qi = &qv[i * 3..i * 3 + 3];
            let nb = &neighbors[i * k..(i + 1) * k];
            let w = interp_weights(qi, sv, nb);
            let total: f64 = w.iter().sum();
            let gi = &g[i * c..(i + 1) * c];
            let oi = &out[i * c..(i + 1) * c];
            for (j, &n) in nb.iter().enumerate() {
                let a = w[j] / total;
                let mut dot = 0.0;
                for ch in 0..c {
                    gf[n * c + ch] += a * gi[ch];
                    dot += gi[ch] * (fv[n * c + ch] - oi[ch]);
                }
                let dw = dot / total;
                let dd = -dw * w[j] * w[j];
                for ax in 0..3 {
                    let diff = qi[ax] - sv[n * 3 + ax];
                    gq[i * 3 + ax] += dd * 2.0 * diff;
                    gs[n * 3 + ax] -= dd * 2.0 * diff;
                }
            }
        }
        for (idx, local) in [(query, gq), (source, gs), (features, gf)] {
            if let Some(slot) = self.slot(grads, idx) {
                slot.iter_mut().zip(local).for_each(|(x, y)| *x += y);
            }
        }
    }
}

/// Gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, idx)| self.grads[idx].as_ref().map(|g| (id, g)))
    }

    /// Adds parameter gradients into buffers aligned with the parameter store.
    pub fn accumulate_into(&self, buffers: &mut [Tensor]) {
        for (id, g) in self.param_grads() {
            buffers[id.0]
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(x, y)| *x += y);
        }
    }
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn interp_weights(q: &[f64], source: &[f64], neighbors: &[usize]) -> Vec<f64> {
    neighbors
        .iter()
        .map(|&n| {
            let s = &source[n * 3..n * 3 + 3];
            let d: f64 = (0..3).map(|a| (q[a] - s[a]).powi(2)).sum();
            1.0 / (d + INTERP_EPS)
        })
        .collect()
}

struct SixD {
    b1: [f64; 3],
    b2: [f64; 3],
    b3: [f64; 3],
    n1: f64,
    n2: f64,
    s: f64,
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn six_d_forward(x: &[f64]) -> SixD {
    let a1 = [x[0], x[1], x[2]];
    let a2 = [x[3], x[4], x[5]];
    let n1 = dot3(a1, a1).sqrt();
    let b1 = a1.map(|v| v / n1);
    let s = dot3(b1, a2);
    let u = [a2[0] - s * b1[0], a2[1] - s * b1[1], a2[2] - s * b1[2]];
    let n2 = dot3(u, u).sqrt();
    let b2 = u.map(|v| v / n2);
    let b3 = cross3(b1, b2);
    SixD { b1, b2, b3, n1, n2, s }
}

fn six_d_backward(f: &SixD, x: &[f64], g1: [f64; 3], g2: [f64; 3], g3: [f64; 3]) -> [f64; 6] {
    let a2 = [x[3], x[4], x[5]];
    // b3 = b1 x b2
    let c1 = cross3(f.b2, g3);
    let c2 = cross3(g3, f.b1);
    let mut gb1 = [g1[0] + c1[0], g1[1] + c1[1], g1[2] + c1[2]];
    let gb2 = [g2[0] + c2[0], g2[1] + c2[1], g2[2] + c2[2]];
    // b2 = u / |u|
    let p = dot3(f.b2, gb2);
    let gu = [0, 1, 2].map(|i| (gb2[i] - f.b2[i] * p) / f.n2);
    // u = a2 - (b1 . a2) b1
    let q = dot3(f.b1, gu);
    let ga2 = [0, 1, 2].map(|i| gu[i] - f.b1[i] * q);
    for i in 0..3 {
        gb1[i] += -a2[i] * q - f.s * gu[i];
    }
    // b1 = a1 / |a1|
    let r = dot3(f.b1, gb1);
    let ga1 = [0, 1, 2].map(|i| (gb1[i] - f.b1[i] * r) / f.n1);
    [ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]]
}

#[cfg(test)]
#[path = "graph_tests.rs"]
mod tests;
