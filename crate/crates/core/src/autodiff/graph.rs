use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::GraphError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Scalar precision used for node values.
///
/// `F32` rounds every op output to single precision; storage and
/// accumulation stay in `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Sparse linear map `y[t] = sum_k coef * x[idx]` over a flattened input.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    pub rows: Vec<Vec<(usize, f64)>>,
}

/// Per-query key lists for windowed attention; an empty list means the
/// query does not attend and its output row is zero.
pub type Neighborhoods = Vec<Vec<usize>>;

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Transpose(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    GatherRows(Var, Rc<[usize]>),
    Softmax(Var, usize),
    LayerNorm { input: Var, inv_std: Vec<f64> },
    MeanSq(Var),
    Sum(Var),
    CrossEntropy { logits: Var, targets: Rc<[usize]>, probs: Vec<f64> },
    SparseLinear(Var, Arc<SparseRows>),
    WindowAttention {
        q: Var,
        k: Var,
        v: Var,
        neighbors: Rc<Neighborhoods>,
        heads: usize,
        probs: Vec<f64>,
        offsets: Vec<usize>,
    },
    StraightThrough(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Eagerly evaluated computation tape with reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, which is a topological order;
/// [`Graph::backward`] walks it in reverse exactly once.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
    precision: Precision,
}

fn shape_err(op: &'static str, detail: String) -> GraphError {
    GraphError::Shape { op, detail }
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize), GraphError> {
    t.dims2()
        .ok_or_else(|| shape_err(op, format!("expected rank-2 tensor, got {:?}", t.shape())))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self { precision, ..Self::default() }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `(1, 1)` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, mut value: Tensor, op: Op) -> Var {
        if self.precision == Precision::F32 {
            for x in value.data_mut() {
                *x = *x as f32 as f64;
            }
        }
        self.grads = None;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    /// Copy of `a` that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::Constant)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("({m}, {k}) x ({k2}, {n})")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out), Op::MatMul(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), GraphError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data);
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a `(1, n)` row to every row of an `(m, n)` tensor.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, GraphError> {
        let (m, n) = dims2(self.value(a), "add_row")?;
        let (one, n2) = dims2(self.value(bias), "add_row")?;
        if one != 1 || n != n2 {
            return Err(shape_err("add_row", format!("({m}, {n}) + ({one}, {n2})")));
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], data), Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(va.shape().to_vec(), data);
        self.push(t, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x.max(0.0)).collect();
        let t = Tensor::new(va.shape().to_vec(), data);
        self.push(t, Op::Relu(a))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, GraphError> {
        let (m, n) = dims2(self.value(a), "transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(Tensor::new(vec![n, m], data), Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, GraphError> {
        let va = self.value(a);
        if shape.iter().product::<usize>() != va.len() {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", va.shape())));
        }
        let t = Tensor::new(shape, va.data().to_vec());
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, GraphError> {
        if inputs.is_empty() || axis > 1 {
            return Err(shape_err("concat", format!("{} inputs, axis {axis}", inputs.len())));
        }
        let dims: Vec<(usize, usize)> = inputs
            .iter()
            .map(|&v| dims2(self.value(v), "concat"))
            .collect::<Result<_, _>>()?;
        let (r0, c0) = dims[0];
        let out = if axis == 0 {
            if dims.iter().any(|d| d.1 != c0) {
                return Err(shape_err("concat", format!("column mismatch {dims:?}")));
            }
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for &v in inputs {
                data.extend_from_slice(self.value(v).data());
            }
            Tensor::new(vec![rows, c0], data)
        } else {
            if dims.iter().any(|d| d.0 != r0) {
                return Err(shape_err("concat", format!("row mismatch {dims:?}")));
            }
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row(i));
                }
            }
            Tensor::new(vec![r0, cols], data)
        };
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    pub fn gather_rows(&mut self, a: Var, indices: Rc<[usize]>) -> Result<Var, GraphError> {
        let (m, n) = dims2(self.value(a), "gather_rows")?;
        if let Some(bad) = indices.iter().find(|&&i| i >= m) {
            return Err(shape_err("gather_rows", format!("row {bad} out of {m}")));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices.iter() {
            data.extend_from_slice(src.row(i));
        }
        let t = Tensor::new(vec![indices.len(), n], data);
        Ok(self.push(t, Op::GatherRows(a, indices)))
    }

    /// Nearest-neighbour 2x upsampling of a token grid stored as
    /// `(src_tokens, C)` rows in x-major order; the result is cropped to
    /// `dst` tokens per axis.
    pub fn nearest_upsample_3d(
        &mut self,
        a: Var,
        src: [usize; 3],
        dst: [usize; 3],
    ) -> Result<Var, GraphError> {
        let (m, _) = dims2(self.value(a), "nearest_upsample_3d")?;
        if m != src.iter().product::<usize>() || (0..3).any(|i| dst[i] > 2 * src[i]) {
            return Err(shape_err("nearest_upsample_3d", format!("{m} rows, {src:?} -> {dst:?}")));
        }
        let mut idx = Vec::with_capacity(dst.iter().product());
        for a0 in 0..dst[0] {
            for b0 in 0..dst[1] {
                for c0 in 0..dst[2] {
                    idx.push(((a0 / 2) * src[1] + b0 / 2) * src[2] + c0 / 2);
                }
            }
        }
        self.gather_rows(a, idx.into())
    }

    /// Softmax along `axis` (0 = down columns, 1 = along rows), max-shifted.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, GraphError> {
        let (m, n) = dims2(self.value(a), "softmax")?;
        if axis > 1 {
            return Err(shape_err("softmax", format!("axis {axis}")));
        }
        let mut data = self.value(a).data().to_vec();
        for group in softmax_groups(m, n, axis) {
            let max = group.iter().map(|&i| data[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for &i in &group {
                data[i] = (data[i] - max).exp();
                total += data[i];
            }
            for &i in &group {
                data[i] /= total;
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], data), Op::Softmax(a, axis)))
    }

    /// Row-wise normalization to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var, GraphError> {
        let (m, n) = dims2(self.value(a), "layer_norm")?;
        let mut data = self.value(a).data().to_vec();
        let mut inv_std = Vec::with_capacity(m);
        for row in data.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * s;
            }
            inv_std.push(s);
        }
        Ok(self.push(Tensor::new(vec![m, n], data), Op::LayerNorm { input: a, inv_std }))
    }

    pub fn mean_sq(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.len().max(1) as f64;
        let v = va.data().iter().map(|x| x * x).sum::<f64>() / n;
        self.push(Tensor::scalar(v), Op::MeanSq(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(a))
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax
    /// of `logits`.
    pub fn cross_entropy_logits(
        &mut self,
        logits: Var,
        targets: Rc<[usize]>,
    ) -> Result<Var, GraphError> {
        let (m, n) = dims2(self.value(logits), "cross_entropy_logits")?;
        if targets.len() != m || targets.iter().any(|&t| t >= n) {
            return Err(shape_err(
                "cross_entropy_logits",
                format!("{} targets for ({m}, {n}) logits", targets.len()),
            ));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &t) in probs.chunks_mut(n).zip(targets.iter()) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets, probs }))
    }

    pub fn sparse_linear(&mut self, a: Var, rows: Arc<SparseRows>) -> Result<Var, GraphError> {
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows.rows.len());
        for row in &rows.rows {
            let mut acc = 0.0;
            for &(i, c) in row {
                let x = src.get(i).ok_or_else(|| {
                    shape_err("sparse_linear", format!("index {i} out of {}", src.len()))
                })?;
                acc += c * x;
            }
            out.push(acc);
        }
        Ok(self.push(Tensor::column(out), Op::SparseLinear(a, rows)))
    }

    /// Multi-head attention where query `i` attends only to `neighbors[i]`.
    ///
    /// Scores are `q_i . k_j / sqrt(C / heads)` per head.
    pub fn window_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        neighbors: Rc<Neighborhoods>,
        heads: usize,
    ) -> Result<Var, GraphError> {
        let (n, c) = dims2(self.value(q), "window_attention")?;
        if self.value(k).shape() != [n, c] || self.value(v).shape() != [n, c] {
            return Err(shape_err("window_attention", "q, k, v shapes differ".into()));
        }
        if heads == 0 || c % heads != 0 || neighbors.len() != n {
            return Err(shape_err(
                "window_attention",
                format!("{c} channels, {heads} heads, {} neighbor lists", neighbors.len()),
            ));
        }
        if neighbors.iter().flatten().any(|&j| j >= n) {
            return Err(shape_err("window_attention", "neighbor index out of range".into()));
        }
        let dh = c / heads;
        let inv = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; n * c];
        let mut probs = Vec::new();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut scores = Vec::new();
        for (i, nbrs) in neighbors.iter().enumerate() {
            offsets.push(probs.len());
            for h in 0..heads {
                let qi = &qd[i * c + h * dh..i * c + (h + 1) * dh];
                scores.clear();
                scores.extend(nbrs.iter().map(|&j| {
                    let kj = &kd[j * c + h * dh..j * c + (h + 1) * dh];
                    qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * inv
                }));
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                for (s, &j) in scores.iter().zip(nbrs) {
                    let p = (s - max).exp() / total;
                    probs.push(p);
                    let vj = &vd[j * c + h * dh..j * c + (h + 1) * dh];
                    for (o, x) in out[i * c + h * dh..i * c + (h + 1) * dh].iter_mut().zip(vj) {
                        *o += p * x;
                    }
                }
            }
        }
        offsets.push(probs.len());
        let t = Tensor::new(vec![n, c], out);
        Ok(self.push(t, Op::WindowAttention { q, k, v, neighbors, heads, probs, offsets }))
    }

    /// Straight-through node: forward value of `value_src`, gradient routed
    /// unchanged to `pass`.
    pub fn straight_through(&mut self, pass: Var, value_src: Var) -> Result<Var, GraphError> {
        self.same_shape(pass, value_src, "straight_through")?;
        let t = self.value(value_src).clone();
        Ok(self.push(t, Op::StraightThrough(pass)))
    }

    /// Reverse pass from a scalar `loss`, filling gradient buffers.
    pub fn backward(&mut self, loss: Var) -> Result<(), GraphError> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", format!("loss shape {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward pass for `v`, if any flowed to it.
    pub fn grad(&self, v: Var) -> Result<Option<&[f64]>, GraphError> {
        let grads = self.grads.as_ref().ok_or(GraphError::NoBackward)?;
        Ok(grads[v.0].as_deref())
    }

    /// Gradients summed per parameter over every use in the graph.
    pub fn param_grads(&self) -> Result<BTreeMap<ParamId, Vec<f64>>, GraphError> {
        let grads = self.grads.as_ref().ok_or(GraphError::NoBackward)?;
        let mut out: BTreeMap<ParamId, Vec<f64>> = BTreeMap::new();
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                match out.get_mut(id) {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => {
                        out.insert(*id, g.clone());
                    }
                }
            }
        }
        Ok(out)
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let acc = |grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]| {
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(delta.to_vec()),
            }
        };
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).dims2().unwrap().1;
                let bt = transpose_raw(self.value(*b).data(), k, n);
                let da = matmul_raw(g, &bt, m, n, k);
                let at = transpose_raw(self.value(*a).data(), m, k);
                let db = matmul_raw(&at, g, k, m, n);
                acc(grads, *a, &da);
                acc(grads, *b, &db);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g);
                acc(grads, *b, g);
            }
            Op::AddRow(a, b) => {
                acc(grads, *a, g);
                let n = self.value(*b).len();
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
                acc(grads, *b, &db);
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                acc(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let da: Vec<f64> = g.iter().zip(vb).map(|(x, y)| x * y).collect();
                let db: Vec<f64> = g.iter().zip(va).map(|(x, y)| x * y).collect();
                acc(grads, *a, &da);
                acc(grads, *b, &db);
            }
            Op::Scale(a, f) => {
                let da: Vec<f64> = g.iter().map(|x| x * f).collect();
                acc(grads, *a, &da);
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                let da: Vec<f64> =
                    g.iter().zip(va).map(|(x, y)| if *y > 0.0 { *x } else { 0.0 }).collect();
                acc(grads, *a, &da);
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).dims2().unwrap();
                let da = transpose_raw(g, n, m);
                acc(grads, *a, &da);
            }
            Op::Reshape(a) => acc(grads, *a, g),
            Op::Concat { inputs, axis } => {
                let (rows, cols) = node.value.dims2().unwrap();
                if *axis == 0 {
                    let mut start = 0;
                    for &v in inputs {
                        let len = self.value(v).len();
                        acc(grads, v, &g[start..start + len]);
                        start += len;
                    }
                } else {
                    let mut col = 0;
                    for &v in inputs {
                        let c = self.value(v).dims2().unwrap().1;
                        let mut dv = Vec::with_capacity(rows * c);
                        for i in 0..rows {
                            dv.extend_from_slice(&g[i * cols + col..i * cols + col + c]);
                        }
                        acc(grads, v, &dv);
                        col += c;
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let (m, n) = self.value(*a).dims2().unwrap();
                let mut da = vec![0.0; m * n];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..n {
                        da[i * n + j] += g[r * n + j];
                    }
                }
                acc(grads, *a, &da);
            }
            Op::Softmax(a, axis) => {
                let (m, n) = node.value.dims2().unwrap();
                let y = node.value.data();
                let mut da = vec![0.0; m * n];
                for group in softmax_groups(m, n, *axis) {
                    let dot: f64 = group.iter().map(|&i| g[i] * y[i]).sum();
                    for &i in &group {
                        da[i] = y[i] * (g[i] - dot);
                    }
                }
                acc(grads, *a, &da);
            }
            Op::LayerNorm { input, inv_std } => {
                let (_, n) = node.value.dims2().unwrap();
                let xhat = node.value.data();
                let nf = n as f64;
                let mut da = vec![0.0; xhat.len()];
                for (r, s) in inv_std.iter().enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    let xr = &xhat[r * n..(r + 1) * n];
                    let sum_g: f64 = gr.iter().sum();
                    let sum_gx: f64 = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        da[r * n + j] = s / nf * (nf * gr[j] - sum_g - xr[j] * sum_gx);
                    }
                }
                acc(grads, *input, &da);
            }
            Op::MeanSq(a) => {
                let va = self.value(*a).data();
                let f = 2.0 * g[0] / va.len().max(1) as f64;
                let da: Vec<f64> = va.iter().map(|x| x * f).collect();
                acc(grads, *a, &da);
            }
            Op::Sum(a) => {
                let da = vec![g[0]; self.value(*a).len()];
                acc(grads, *a, &da);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let (_, n) = self.value(*logits).dims2().unwrap();
                let mut da: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                for (r, &t) in targets.iter().enumerate() {
                    da[r * n + t] -= g[0];
                }
                acc(grads, *logits, &da);
            }
            Op::SparseLinear(a, rows) => {
                let mut da = vec![0.0; self.value(*a).len()];
                for (row, gt) in rows.rows.iter().zip(g) {
                    for &(i, c) in row {
                        da[i] += c * gt;
                    }
                }
                acc(grads, *a, &da);
            }
            Op::WindowAttention { q, k, v, neighbors, heads, probs, offsets } => {
                let (n, c) = self.value(*q).dims2().unwrap();
                let dh = c / heads;
                let inv = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) =
                    (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![0.0; n * c];
                let mut dk = vec![0.0; n * c];
                let mut dv = vec![0.0; n * c];
                let mut dp = Vec::new();
                for (i, nbrs) in neighbors.iter().enumerate() {
                    let base = offsets[i];
                    let m = nbrs.len();
                    for h in 0..*heads {
                        let hs = h * dh..(h + 1) * dh;
                        let p = &probs[base + h * m..base + (h + 1) * m];
                        let gi = &g[i * c + hs.start..i * c + hs.end];
                        dp.clear();
                        for (&j, &pj) in nbrs.iter().zip(p) {
                            let vj = &vd[j * c + hs.start..j * c + hs.end];
                            dp.push(gi.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>());
                            for (d, x) in dv[j * c + hs.start..j * c + hs.end].iter_mut().zip(gi) {
                                *d += pj * x;
                            }
                        }
                        let dot: f64 = dp.iter().zip(p).map(|(a, b)| a * b).sum();
                        for ((&j, &pj), &dpj) in nbrs.iter().zip(p).zip(dp.iter()) {
                            let ds = pj * (dpj - dot) * inv;
                            for t in hs.clone() {
                                dq[i * c + t] += ds * kd[j * c + t];
                                dk[j * c + t] += ds * qd[i * c + t];
                            }
                        }
                    }
                }
                acc(grads, *q, &dq);
                acc(grads, *k, &dk);
                acc(grads, *v, &dv);
            }
            Op::StraightThrough(pass) => acc(grads, *pass, g),
        }
    }
}

fn softmax_groups(m: usize, n: usize, axis: usize) -> Vec<Vec<usize>> {
    if axis == 1 {
        (0..m).map(|i| (i * n..(i + 1) * n).collect()).collect()
    } else {
        (0..n).map(|j| (0..m).map(|i| i * n + j).collect()).collect()
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            for (o, y) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}
