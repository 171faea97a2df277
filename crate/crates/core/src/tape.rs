//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in creation order. Inputs always precede
//! their outputs, so walking the node list backwards is a reverse topological
//! order and each node is visited exactly once by [`Tape::backward`].
//!
//! Every op validates its output: a non-finite result is reported as
//! [`Error::NonFinite`] naming the op instead of being carried forward.
//!
//! Matrices are row-major. Layers follow the `h' = W h` convention with node
//! embeddings stored as rows, which is why [`Tape::matmul_t`] (`A · Bᵀ`) is
//! the workhorse.

use alloc::boxed::Box;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{dot, finite, matmul_into, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Reshape(Var),
    GatherRows { x: Var, idx: Arc<[usize]> },
    SegmentSum { x: Var, seg: Arc<[usize]> },
    SegmentMean { x: Var, seg: Arc<[usize]>, inv_count: Vec<f64> },
    SegmentSoftmax { x: Var, seg: Arc<[usize]> },
    RowScale(Var, Var),
    RowDot(Var, Var),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    SliceCols { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    Bce { p: Var, y: Arc<[f64]> },
    EdgeConditioned(Box<EdgeConditionedOp>),
}

#[derive(Debug, Clone)]
struct EdgeConditionedOp {
    w: Var,
    b: Var,
    h: Var,
    e: Var,
    src: Arc<[usize]>,
    // per node: P[j][a][t] = Σ_b W[a·d+b][t] h_j[b]
    projected: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded recording of one forward computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// require gradients or does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but returns zeros shaped like the value when
    /// no gradient flowed.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

fn check_index(op: &'static str, idx: &[usize], bound: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= bound) {
        Some(i) => Err(shape_err(op, format!("index {i} out of range for {bound} rows"))),
        None => Ok(()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    /// Scalar value of a one-entry tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        let value = finite(Tensor::from_parts(shape, data), op_name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.value(v);
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            Ok(())
        } else {
            Err(shape_err(op, format!("{sa:?} vs {sb:?}")))
        }
    }

    /// `A[m×k] · B[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}x{k}] x [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// `A[m×k] · B[n×k]ᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul_t", a)?;
        let (n, k2) = self.dims2("matmul_t", b)?;
        if k != k2 {
            return Err(shape_err("matmul_t", format!("[{m}x{k}] x [{n}x{k2}]^T")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ar, &bd[j * k..(j + 1) * k]);
            }
        }
        self.push("matmul_t", vec![m, n], out, Op::MatMulT(a, b), &[a, b])
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(name, shape, data, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a bias vector of length `n` to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2("add_row", a)?;
        if self.value(bias).len() != n {
            return Err(shape_err("add_row", format!("bias of {} for {n} columns", self.value(bias).len())));
        }
        let bd = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n.max(1)).take(m) {
            for (o, b) in row.iter_mut().zip(bd) {
                *o += b;
            }
        }
        self.push("add_row", vec![m, n], out, Op::AddRow(a, bias), &[a, bias])
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| f(*x)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(name, shape, data, op, &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map("scale", a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map("add_scalar", a, Op::AddScalar(a), |x| x + s)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    /// `max(x, slope·x)`; the derivative at zero is taken to be `slope`.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::InvalidArgument(format!("leaky slope {slope} outside [0, 1)")));
        }
        self.map("leaky_relu", a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", self.value(a).shape(), shape)));
        }
        let data = self.value(a).data().to_vec();
        self.push("reshape", shape, data, Op::Reshape(a), &[a])
    }

    /// Selects rows `idx` of `x` (rows may repeat).
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let t = self.value(x);
        let (n, d) = (t.rows(), t.cols());
        check_index("gather_rows", &idx, n)?;
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            out.extend_from_slice(t.row(i));
        }
        let shape = if t.shape().len() == 1 { vec![idx.len()] } else { vec![idx.len(), d] };
        self.push("gather_rows", shape, out, Op::GatherRows { x, idx }, &[x])
    }

    fn segment_totals(&self, op: &'static str, x: Var, seg: &[usize], n_segments: usize) -> Result<(usize, Vec<f64>)> {
        let t = self.value(x);
        if t.rows() != seg.len() {
            return Err(shape_err(op, format!("{} rows, {} segment ids", t.rows(), seg.len())));
        }
        check_index(op, seg, n_segments)?;
        let d = t.cols();
        let mut out = vec![0.0; n_segments * d];
        for (e, &s) in seg.iter().enumerate() {
            for (o, v) in out[s * d..(s + 1) * d].iter_mut().zip(t.row(e)) {
                *o += v;
            }
        }
        Ok((d, out))
    }

    /// Row-wise sum of `x` into `n_segments` buckets; empty buckets are zero.
    pub fn segment_sum(&mut self, x: Var, seg: Arc<[usize]>, n_segments: usize) -> Result<Var> {
        let (d, out) = self.segment_totals("segment_sum", x, &seg, n_segments)?;
        self.push("segment_sum", vec![n_segments, d], out, Op::SegmentSum { x, seg }, &[x])
    }

    /// Row-wise mean of `x` per bucket; empty buckets are zero.
    pub fn segment_mean(&mut self, x: Var, seg: Arc<[usize]>, n_segments: usize) -> Result<Var> {
        let (d, mut out) = self.segment_totals("segment_mean", x, &seg, n_segments)?;
        let mut count = vec![0usize; n_segments];
        for &s in seg.iter() {
            count[s] += 1;
        }
        let inv_count: Vec<f64> = count.iter().map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 }).collect();
        for (s, inv) in inv_count.iter().enumerate() {
            for o in &mut out[s * d..(s + 1) * d] {
                *o *= inv;
            }
        }
        self.push("segment_mean", vec![n_segments, d], out, Op::SegmentMean { x, seg, inv_count }, &[x])
    }

    /// Softmax within each segment of a score vector (`[m]` or `[m×1]`).
    /// Segment ids need not be contiguous.
    pub fn segment_softmax(&mut self, x: Var, seg: Arc<[usize]>) -> Result<Var> {
        let t = self.value(x);
        if t.len() != seg.len() {
            return Err(shape_err("segment_softmax", format!("{} scores, {} segment ids", t.len(), seg.len())));
        }
        let out = segment_softmax_values(t.data(), &seg);
        let shape = t.shape().to_vec();
        self.push("segment_softmax", shape, out, Op::SegmentSoftmax { x, seg }, &[x])
    }

    /// Scales row `i` of `x[m×d]` by `s[i]`.
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, d) = self.dims2("row_scale", x)?;
        if self.value(s).len() != m {
            return Err(shape_err("row_scale", format!("{} scales for {m} rows", self.value(s).len())));
        }
        let sd = self.value(s).data();
        let mut out = self.value(x).data().to_vec();
        for (row, sv) in out.chunks_mut(d.max(1)).zip(sd) {
            for o in row {
                *o *= sv;
            }
        }
        self.push("row_scale", vec![m, d], out, Op::RowScale(x, s), &[x, s])
    }

    /// Per-row inner products of two `m×d` matrices, as an `m×1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (m, d) = self.dims2("row_dot", a)?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let out = (0..m).map(|i| dot(&ad[i * d..(i + 1) * d], &bd[i * d..(i + 1) * d])).collect();
        self.push("row_dot", vec![m, 1], out, Op::RowDot(a, b), &[a, b])
    }

    /// `[A ‖ B]` along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.dims2("concat_cols", a)?;
        let (m2, q) = self.dims2("concat_cols", b)?;
        if m != m2 {
            return Err(shape_err("concat_cols", format!("{m} rows vs {m2} rows")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&ad[i * p..(i + 1) * p]);
            out.extend_from_slice(&bd[i * q..(i + 1) * q]);
        }
        self.push("concat_cols", vec![m, p + q], out, Op::ConcatCols(a, b), &[a, b])
    }

    /// Stacks `A` on top of `B`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, d) = self.dims2("concat_rows", a)?;
        let (q, d2) = self.dims2("concat_rows", b)?;
        if d != d2 {
            return Err(shape_err("concat_rows", format!("{d} cols vs {d2} cols")));
        }
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        self.push("concat_rows", vec![p + q, d], out, Op::ConcatRows(a, b), &[a, b])
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, d) = self.dims2("slice_cols", x)?;
        if start > end || end > d {
            return Err(shape_err("slice_cols", format!("columns {start}..{end} of {d}")));
        }
        let xd = self.value(x).data();
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&xd[i * d + start..i * d + end]);
        }
        self.push("slice_cols", vec![m, w], out, Op::SliceCols { x, start }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", vec![], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(shape_err("mean", "mean of an empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", vec![], vec![s], Op::Mean(x), &[x])
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 labels,
    /// with `p` clamped to `[1e-12, 1 − 1e-12]`.
    pub fn binary_cross_entropy(&mut self, p: Var, y: Arc<[f64]>) -> Result<Var> {
        let t = self.value(p);
        if t.len() != y.len() || y.is_empty() {
            return Err(shape_err("binary_cross_entropy", format!("{} predictions, {} labels", t.len(), y.len())));
        }
        let total: f64 = t.data().iter().zip(y.iter()).map(|(&p, &y)| bce_term(p, y)).sum();
        self.push("binary_cross_entropy", vec![], vec![total / y.len() as f64], Op::Bce { p, y }, &[p])
    }

    /// Edge-conditioned messages: for edge `k` with source node `j = src[k]`,
    /// `out[k] = reshape(W·e_k + b, d×d) · h_j`, with `W: (d·d)×d_e` and the
    /// reshape row-major.
    pub fn edge_conditioned(&mut self, w: Var, b: Var, h: Var, e: Var, src: Arc<[usize]>) -> Result<Var> {
        let (n, d) = self.dims2("edge_conditioned", h)?;
        let (m, de) = self.dims2("edge_conditioned", e)?;
        let (wr, wc) = self.dims2("edge_conditioned", w)?;
        if wr != d * d || wc != de || self.value(b).len() != d * d {
            return Err(shape_err(
                "edge_conditioned",
                format!("W [{wr}x{wc}], b {} for d={d}, d_e={de}", self.value(b).len()),
            ));
        }
        if src.len() != m {
            return Err(shape_err("edge_conditioned", format!("{m} edges, {} sources", src.len())));
        }
        check_index("edge_conditioned", &src, n)?;
        let (wd, bd, hd, ed) = (self.value(w).data(), self.value(b).data(), self.value(h).data(), self.value(e).data());
        // P[j] is d×(d_e+1); the last column carries the bias term b·h_j.
        let pw = de + 1;
        let mut projected = vec![0.0; n * d * pw];
        for j in 0..n {
            let hj = &hd[j * d..(j + 1) * d];
            let pj = &mut projected[j * d * pw..(j + 1) * d * pw];
            for a in 0..d {
                let pa = &mut pj[a * pw..(a + 1) * pw];
                for (bi, &hv) in hj.iter().enumerate() {
                    if hv == 0.0 {
                        continue;
                    }
                    let wrow = &wd[(a * d + bi) * de..(a * d + bi + 1) * de];
                    for (p, wv) in pa[..de].iter_mut().zip(wrow) {
                        *p += wv * hv;
                    }
                    pa[de] += bd[a * d + bi] * hv;
                }
            }
        }
        let mut out = vec![0.0; m * d];
        for (k, &j) in src.iter().enumerate() {
            let ek = &ed[k * de..(k + 1) * de];
            let pj = &projected[j * d * pw..(j + 1) * d * pw];
            for (a, o) in out[k * d..(k + 1) * d].iter_mut().enumerate() {
                let pa = &pj[a * pw..(a + 1) * pw];
                *o = dot(&pa[..de], ek) + pa[de];
            }
        }
        let op = Op::EdgeConditioned(Box::new(EdgeConditionedOp { w, b, h, e, src, projected }));
        self.push("edge_conditioned", vec![m, d], out, op, &[w, b, h, e])
    }

    /// Backpropagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", format!("loss must be scalar, got shape {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let out = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match g {
                Some(g) if n.requires_grad => Some(finite(Tensor::from_parts(n.value.shape().to_vec(), g), "backward")),
                _ => None,
            })
            .map(Option::transpose)
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.nodes[v.0].requires_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                let (ad, bd) = (val(*a), val(*b));
                // dA = dC · Bᵀ
                acc(*a, &mut |da| {
                    for r in 0..m {
                        for t in 0..k {
                            da[r * k + t] += dot(&g[r * n..(r + 1) * n], &bd[t * n..(t + 1) * n]);
                        }
                    }
                });
                // dB = Aᵀ · dC
                acc(*b, &mut |db| {
                    for r in 0..m {
                        for t in 0..k {
                            let av = ad[r * k + t];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, gv) in db[t * n..(t + 1) * n].iter_mut().zip(&g[r * n..(r + 1) * n]) {
                                *o += av * gv;
                            }
                        }
                    }
                });
            }
            Op::MatMulT(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).rows();
                let (ad, bd) = (val(*a), val(*b));
                // dA = dC · B
                acc(*a, &mut |da| matmul_into(g, bd, da, m, n, k));
                // dB = dCᵀ · A
                acc(*b, &mut |db| {
                    for r in 0..m {
                        let ar = &ad[r * k..(r + 1) * k];
                        for j in 0..n {
                            let gv = g[r * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for (o, av) in db[j * k..(j + 1) * k].iter_mut().zip(ar) {
                                *o += gv * av;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| db.iter_mut().zip(g).for_each(|(o, gv)| *o -= gv));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                acc(*a, &mut |da| da.iter_mut().zip(g).zip(bd).for_each(|((o, gv), bv)| *o += gv * bv));
                acc(*b, &mut |db| db.iter_mut().zip(g).zip(ad).for_each(|((o, gv), av)| *o += gv * av));
            }
            Op::AddRow(a, bias) => {
                let n = self.value(*bias).len();
                acc(*a, &mut |da| add_into(da, g));
                acc(*bias, &mut |db| {
                    for row in g.chunks(n.max(1)) {
                        add_into(db, row);
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(o, gv)| *o += s * gv)),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |da| add_into(da, g)),
            Op::Relu(a) => {
                let ad = val(*a);
                acc(*a, &mut |da| {
                    for ((o, gv), x) in da.iter_mut().zip(g).zip(ad) {
                        if *x > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let ad = val(*a);
                acc(*a, &mut |da| {
                    for ((o, gv), x) in da.iter_mut().zip(g).zip(ad) {
                        *o += if *x > 0.0 { *gv } else { slope * gv };
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yd = node.value.data();
                acc(*a, &mut |da| da.iter_mut().zip(g).zip(yd).for_each(|((o, gv), y)| *o += gv * y * (1.0 - y)));
            }
            Op::GatherRows { x, idx } => {
                let d = self.value(*x).cols();
                acc(*x, &mut |dx| {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut dx[src * d..(src + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::SegmentSum { x, seg } => {
                let d = self.value(*x).cols();
                acc(*x, &mut |dx| {
                    for (e, &s) in seg.iter().enumerate() {
                        add_into(&mut dx[e * d..(e + 1) * d], &g[s * d..(s + 1) * d]);
                    }
                });
            }
            Op::SegmentMean { x, seg, inv_count } => {
                let d = self.value(*x).cols();
                acc(*x, &mut |dx| {
                    for (e, &s) in seg.iter().enumerate() {
                        let inv = inv_count[s];
                        for (o, gv) in dx[e * d..(e + 1) * d].iter_mut().zip(&g[s * d..(s + 1) * d]) {
                            *o += inv * gv;
                        }
                    }
                });
            }
            Op::SegmentSoftmax { x, seg } => {
                let y = node.value.data();
                let n_seg = seg.iter().max().map_or(0, |m| m + 1);
                let mut weighted = vec![0.0; n_seg];
                for ((&s, yv), gv) in seg.iter().zip(y).zip(g) {
                    weighted[s] += yv * gv;
                }
                acc(*x, &mut |dx| {
                    for (e, &s) in seg.iter().enumerate() {
                        dx[e] += y[e] * (g[e] - weighted[s]);
                    }
                });
            }
            Op::RowScale(x, s) => {
                let d = self.value(*x).cols();
                let (xd, sd) = (val(*x), val(*s));
                acc(*x, &mut |dx| {
                    for (r, sv) in sd.iter().enumerate() {
                        for (o, gv) in dx[r * d..(r + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o += sv * gv;
                        }
                    }
                });
                acc(*s, &mut |ds| {
                    for (r, o) in ds.iter_mut().enumerate() {
                        *o += dot(&g[r * d..(r + 1) * d], &xd[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::RowDot(a, b) => {
                let d = self.value(*a).cols();
                let (ad, bd) = (val(*a), val(*b));
                for (target, other) in [(*a, bd), (*b, ad)] {
                    acc(target, &mut |dt| {
                        for (r, gv) in g.iter().enumerate() {
                            for (o, ov) in dt[r * d..(r + 1) * d].iter_mut().zip(&other[r * d..(r + 1) * d]) {
                                *o += gv * ov;
                            }
                        }
                    });
                }
            }
            Op::ConcatCols(a, b) => {
                let p = self.value(*a).cols();
                let q = self.value(*b).cols();
                let w = p + q;
                acc(*a, &mut |da| {
                    for (r, row) in g.chunks(w).enumerate() {
                        add_into(&mut da[r * p..(r + 1) * p], &row[..p]);
                    }
                });
                acc(*b, &mut |db| {
                    for (r, row) in g.chunks(w).enumerate() {
                        add_into(&mut db[r * q..(r + 1) * q], &row[p..]);
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let split = self.value(*a).len();
                acc(*a, &mut |da| add_into(da, &g[..split]));
                acc(*b, &mut |db| add_into(db, &g[split..]));
            }
            Op::SliceCols { x, start } => {
                let d = self.value(*x).cols();
                let w = node.value.cols();
                acc(*x, &mut |dx| {
                    for (r, row) in g.chunks(w.max(1)).enumerate() {
                        add_into(&mut dx[r * d + start..r * d + start + w], row);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |dx| dx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(x) => {
                let inv = g[0] / self.value(*x).len() as f64;
                acc(*x, &mut |dx| dx.iter_mut().for_each(|o| *o += inv));
            }
            Op::Bce { p, y } => {
                let pd = val(*p);
                let scale = g[0] / y.len() as f64;
                acc(*p, &mut |dp| {
                    for ((o, &pv), &yv) in dp.iter_mut().zip(pd).zip(y.iter()) {
                        if pv > CLAMP && pv < 1.0 - CLAMP {
                            *o += scale * (-yv / pv + (1.0 - yv) / (1.0 - pv));
                        }
                    }
                });
            }
            Op::EdgeConditioned(op) => self.edge_conditioned_backward(op, g, grads, needs),
        }
    }

    fn edge_conditioned_backward(
        &self,
        op: &EdgeConditionedOp,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        needs: impl Fn(Var) -> bool,
    ) {
        let (n, d) = (self.value(op.h).rows(), self.value(op.h).cols());
        let de = self.value(op.e).cols();
        let pw = de + 1;
        let ed = self.value(op.e).data();
        let grab = |v: Var, grads: &mut [Option<Vec<f64>>]| -> Option<Vec<f64>> {
            needs(v).then(|| grads[v.0].take().unwrap_or_else(|| vec![0.0; self.value(v).len()]))
        };

        if let Some(mut de_grad) = grab(op.e, grads) {
            for (k, &j) in op.src.iter().enumerate() {
                let pj = &op.projected[j * d * pw..(j + 1) * d * pw];
                let gk = &g[k * d..(k + 1) * d];
                let row = &mut de_grad[k * de..(k + 1) * de];
                for (a, gv) in gk.iter().enumerate() {
                    for (o, pv) in row.iter_mut().zip(&pj[a * pw..a * pw + de]) {
                        *o += gv * pv;
                    }
                }
            }
            grads[op.e.0] = Some(de_grad);
        }

        let param_side = needs(op.w) || needs(op.b) || needs(op.h);
        if !param_side {
            return;
        }
        // dP[j][a][t] = Σ_{k: src=j} g[k][a]·ẽ_k[t], with ẽ_k = [e_k, 1].
        let mut dp = vec![0.0; n * d * pw];
        for (k, &j) in op.src.iter().enumerate() {
            let ek = &ed[k * de..(k + 1) * de];
            let gk = &g[k * d..(k + 1) * d];
            let pj = &mut dp[j * d * pw..(j + 1) * d * pw];
            for (a, &gv) in gk.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                let pa = &mut pj[a * pw..(a + 1) * pw];
                for (o, ev) in pa[..de].iter_mut().zip(ek) {
                    *o += gv * ev;
                }
                pa[de] += gv;
            }
        }
        let hd = self.value(op.h).data();
        let (wd, bd) = (self.value(op.w).data(), self.value(op.b).data());
        if let Some(mut dw) = grab(op.w, grads) {
            for j in 0..n {
                let hj = &hd[j * d..(j + 1) * d];
                for a in 0..d {
                    let pa = &dp[(j * d + a) * pw..(j * d + a) * pw + de];
                    for (bi, &hv) in hj.iter().enumerate() {
                        if hv == 0.0 {
                            continue;
                        }
                        for (o, pv) in dw[(a * d + bi) * de..(a * d + bi + 1) * de].iter_mut().zip(pa) {
                            *o += pv * hv;
                        }
                    }
                }
            }
            grads[op.w.0] = Some(dw);
        }
        if let Some(mut db) = grab(op.b, grads) {
            for j in 0..n {
                let hj = &hd[j * d..(j + 1) * d];
                for a in 0..d {
                    let gb = dp[(j * d + a) * pw + de];
                    for (o, hv) in db[a * d..(a + 1) * d].iter_mut().zip(hj) {
                        *o += gb * hv;
                    }
                }
            }
            grads[op.b.0] = Some(db);
        }
        if let Some(mut dh) = grab(op.h, grads) {
            for j in 0..n {
                for a in 0..d {
                    let pa = &dp[(j * d + a) * pw..(j * d + a + 1) * pw];
                    for bi in 0..d {
                        let wrow = &wd[(a * d + bi) * de..(a * d + bi + 1) * de];
                        dh[j * d + bi] += dot(&pa[..de], wrow) + pa[de] * bd[a * d + bi];
                    }
                }
            }
            grads[op.h.0] = Some(dh);
        }
    }
}

const CLAMP: f64 = 1e-12;

fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(CLAMP, 1.0 - CLAMP);
    -(y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(o, s)| *o += s);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Numerically stable per-segment softmax (max subtraction).
pub fn segment_softmax_values(scores: &[f64], seg: &[usize]) -> Vec<f64> {
    let n_seg = seg.iter().max().map_or(0, |m| m + 1);
    let mut max = vec![f64::NEG_INFINITY; n_seg];
    for (&s, &x) in seg.iter().zip(scores) {
        max[s] = max[s].max(x);
    }
    let mut out: Vec<f64> = seg.iter().zip(scores).map(|(&s, &x)| libm::exp(x - max[s])).collect();
    let mut total = vec![0.0; n_seg];
    for (&s, &v) in seg.iter().zip(&out) {
        total[s] += v;
    }
    for (o, &s) in out.iter_mut().zip(seg) {
        *o /= total[s];
    }
    out
}
