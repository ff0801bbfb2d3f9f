use rand::Rng;

use crate::kernels;
use crate::{Result, Tensor, TensorError};

/// Handle to a tensor stored in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

/// One recorded operation: inputs, any activations the backward pass needs,
/// and (implicitly) the output node it is attached to.
#[derive(Debug, Clone)]
enum Op {
    MatMul {
        a: TensorId,
        b: TensorId,
    },
    SoftmaxRows {
        x: TensorId,
    },
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        inv_std: Vec<f64>,
        x_hat: Vec<f64>,
    },
    Relu {
        x: TensorId,
    },
    Dropout {
        x: TensorId,
        mask: Vec<f64>,
    },
    ConcatCols {
        parts: Vec<TensorId>,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    AddRow {
        x: TensorId,
        bias: TensorId,
    },
    SliceCols {
        x: TensorId,
        start: usize,
    },
    SliceRows {
        x: TensorId,
        start: usize,
    },
    GatherRows {
        x: TensorId,
        indices: Vec<usize>,
    },
    Transpose {
        x: TensorId,
    },
    Scale {
        x: TensorId,
        factor: f64,
    },
    Sum {
        x: TensorId,
    },
    NormalizeRows {
        x: TensorId,
        inv_norm: Vec<f64>,
    },
    CrossEntropyRows {
        scores: TensorId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    op: Option<Op>,
}

/// Wengert tape: an ordered list of operation records over an arena of
/// tensors. Records are appended in execution order, so every record's
/// inputs precede it and a single reverse sweep computes all gradients.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Inserts a leaf tensor, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        self.push(tensor, None)
    }

    /// Inserts a copy of `tensor` as a differentiation target.
    pub fn param(&mut self, tensor: &Tensor) -> TensorId {
        self.push(tensor.clone().with_grad(), None)
    }

    /// Inserts a copy of `tensor` as plain input data.
    pub fn constant(&mut self, tensor: &Tensor) -> TensorId {
        let mut t = tensor.clone();
        t.requires_grad = false;
        t.grad = None;
        self.push(t, None)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].tensor.data()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].tensor.shape()
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    fn push(&mut self, tensor: Tensor, op: Option<Op>) -> TensorId {
        self.nodes.push(Node { tensor, op });
        TensorId(self.nodes.len() - 1)
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].tensor.requires_grad
    }

    fn emit(&mut self, data: Vec<f64>, shape: &[usize], requires: bool, op: Op) -> TensorId {
        let mut t = Tensor::from_vec(data, shape).expect("op produced a consistent shape");
        t.requires_grad = requires;
        self.push(t, Some(op))
    }

    // ── forward operations ──────────────────────────────────────────────

    /// Standard matrix product `a[m,k] * b[k,n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (self.tensor(a), self.tensor(b));
        if ta.rank() != 2 || tb.rank() != 2 {
            return Err(TensorError::shape(
                "matmul",
                format!("need rank-2 inputs, got {:?} and {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(TensorError::shape(
                "matmul",
                format!("inner dimensions disagree: {:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out = kernels::matmul_nn(ta.data(), tb.data(), m, k, n);
        let req = self.requires(a) || self.requires(b);
        Ok(self.emit(out, &[m, n], req, Op::MatMul { a, b }))
    }

    /// Row-wise softmax, stabilized by per-row max subtraction.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let t = self.tensor(x);
        if t.rank() != 2 {
            return Err(TensorError::shape(
                "softmax_rows",
                format!("need rank-2 input, got {:?}", t.shape()),
            ));
        }
        let (m, n) = (t.rows(), t.cols());
        let out = kernels::softmax_rows(t.data(), m, n);
        let req = self.requires(x);
        Ok(self.emit(out, &[m, n], req, Op::SoftmaxRows { x }))
    }

    /// Per-row normalization to mean 0 / variance 1 (population variance,
    /// `eps` inside the square root) followed by the `gamma`/`beta` affine.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let (tx, tg, tb) = (self.tensor(x), self.tensor(gamma), self.tensor(beta));
        if tx.rank() != 2 {
            return Err(TensorError::shape(
                "layer_norm",
                format!("need rank-2 input, got {:?}", tx.shape()),
            ));
        }
        let d = tx.cols();
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(TensorError::shape(
                "layer_norm",
                format!(
                    "gamma/beta must be rank-1 of length {d}, got {:?} and {:?}",
                    tg.shape(),
                    tb.shape()
                ),
            ));
        }
        let m = tx.rows();
        let (xs, gs, bs) = (tx.data(), tg.data(), tb.data());
        let mut out = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut x_hat = vec![0.0; m * d];
        for r in 0..m {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let xh = (row[c] - mean) * is;
                x_hat[r * d + c] = xh;
                out[r * d + c] = gs[c] * xh + bs[c];
            }
        }
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        Ok(self.emit(
            out,
            &[m, d],
            req,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                inv_std,
                x_hat,
            },
        ))
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let t = self.tensor(x);
        let out = t.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        let req = self.requires(x);
        Ok(self.emit(out, &shape, req, Op::Relu { x }))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; in eval mode
    /// this is the exact identity (the input id is returned unchanged).
    pub fn dropout<R: Rng>(
        &mut self,
        x: TensorId,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<TensorId> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidDropout(p));
        }
        if !training {
            return Ok(x);
        }
        let t = self.tensor(x);
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let out = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = t.shape().to_vec();
        let req = self.requires(x);
        Ok(self.emit(out, &shape, req, Op::Dropout { x, mask }))
    }

    /// Joins rank-2 tensors along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(TensorError::shape("concat_cols", "no inputs"));
        }
        let m = self.tensor(parts[0]).rows();
        let mut total_cols = 0;
        for &p in parts {
            let t = self.tensor(p);
            if t.rank() != 2 || t.rows() != m {
                return Err(TensorError::shape(
                    "concat_cols",
                    format!("all inputs need rank 2 with {m} rows, got {:?}", t.shape()),
                ));
            }
            total_cols += t.cols();
        }
        let mut out = vec![0.0; m * total_cols];
        let mut offset = 0;
        for &p in parts {
            let t = self.tensor(p);
            let c = t.cols();
            for r in 0..m {
                out[r * total_cols + offset..r * total_cols + offset + c]
                    .copy_from_slice(t.row(r));
            }
            offset += c;
        }
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.emit(
            out,
            &[m, total_cols],
            req,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Element-wise sum of two tensors of identical shape.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (self.tensor(a), self.tensor(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::shape(
                "add",
                format!("shapes disagree: {:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        let req = self.requires(a) || self.requires(b);
        Ok(self.emit(out, &shape, req, Op::Add { a, b }))
    }

    /// Adds a rank-1 bias to every row of a rank-2 tensor.
    pub fn add_row(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (tx, tb) = (self.tensor(x), self.tensor(bias));
        if tx.rank() != 2 || tb.shape() != [tx.cols()] {
            return Err(TensorError::shape(
                "add_row",
                format!("cannot add bias {:?} to rows of {:?}", tb.shape(), tx.shape()),
            ));
        }
        let (m, n) = (tx.rows(), tx.cols());
        let mut out = tx.data().to_vec();
        for r in 0..m {
            for c in 0..n {
                out[r * n + c] += tb.data()[c];
            }
        }
        let req = self.requires(x) || self.requires(bias);
        Ok(self.emit(out, &[m, n], req, Op::AddRow { x, bias }))
    }

    /// Contiguous column window `[start, start+len)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let t = self.tensor(x);
        if t.rank() != 2 || start + len > t.cols() {
            return Err(TensorError::shape(
                "slice_cols",
                format!("window {start}..{} out of {:?}", start + len, t.shape()),
            ));
        }
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; m * len];
        for r in 0..m {
            out[r * len..(r + 1) * len].copy_from_slice(&t.data()[r * n + start..r * n + start + len]);
        }
        let req = self.requires(x);
        Ok(self.emit(out, &[m, len], req, Op::SliceCols { x, start }))
    }

    /// Contiguous row window `[start, start+len)` of a rank-2 tensor.
    pub fn slice_rows(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let t = self.tensor(x);
        if t.rank() != 2 || start + len > t.rows() {
            return Err(TensorError::shape(
                "slice_rows",
                format!("window {start}..{} out of {:?}", start + len, t.shape()),
            ));
        }
        let n = t.cols();
        let out = t.data()[start * n..(start + len) * n].to_vec();
        let req = self.requires(x);
        Ok(self.emit(out, &[len, n], req, Op::SliceRows { x, start }))
    }

    /// Selects rows by index; duplicate indices are allowed.
    pub fn gather_rows(&mut self, x: TensorId, indices: &[usize]) -> Result<TensorId> {
        let t = self.tensor(x);
        if t.rank() != 2 {
            return Err(TensorError::shape(
                "gather_rows",
                format!("need rank-2 input, got {:?}", t.shape()),
            ));
        }
        let (m, n) = (t.rows(), t.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(TensorError::shape(
                "gather_rows",
                format!("row index {bad} out of {m} rows"),
            ));
        }
        let mut out = vec![0.0; indices.len() * n];
        for (r, &idx) in indices.iter().enumerate() {
            out[r * n..(r + 1) * n].copy_from_slice(t.row(idx));
        }
        let req = self.requires(x);
        Ok(self.emit(
            out,
            &[indices.len(), n],
            req,
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let t = self.tensor(x);
        if t.rank() != 2 {
            return Err(TensorError::shape(
                "transpose",
                format!("need rank-2 input, got {:?}", t.shape()),
            ));
        }
        let (m, n) = (t.rows(), t.cols());
        let out = kernels::transpose(t.data(), m, n);
        let req = self.requires(x);
        Ok(self.emit(out, &[n, m], req, Op::Transpose { x }))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: TensorId, factor: f64) -> Result<TensorId> {
        let t = self.tensor(x);
        let out = t.data().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        let req = self.requires(x);
        Ok(self.emit(out, &shape, req, Op::Scale { x, factor }))
    }

    /// Sum of all elements, as a single-element tensor.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let t = self.tensor(x);
        let total = t.data().iter().sum();
        let req = self.requires(x);
        Ok(self.emit(vec![total], &[1], req, Op::Sum { x }))
    }

    /// Scales each row to unit Euclidean norm. A row with norm below 1e-12
    /// signals a dead embedding and is surfaced as an error rather than
    /// silently divided.
    pub fn normalize_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let t = self.tensor(x);
        if t.rank() != 2 {
            return Err(TensorError::shape(
                "normalize_rows",
                format!("need rank-2 input, got {:?}", t.shape()),
            ));
        }
        let (m, n) = (t.rows(), t.cols());
        let mut inv_norm = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = t.row(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(TensorError::DegenerateNorm { row: r, norm });
            }
            let inv = 1.0 / norm;
            inv_norm[r] = inv;
            for c in 0..n {
                out[r * n + c] = row[c] * inv;
            }
        }
        let req = self.requires(x);
        Ok(self.emit(out, &[m, n], req, Op::NormalizeRows { x, inv_norm }))
    }

    /// Mean over rows of `-log softmax(row)[label]`, as a scalar tensor.
    pub fn cross_entropy_rows(&mut self, scores: TensorId, labels: &[usize]) -> Result<TensorId> {
        let t = self.tensor(scores);
        if t.rank() != 2 || t.rows() != labels.len() {
            return Err(TensorError::shape(
                "cross_entropy_rows",
                format!("scores {:?} vs {} labels", t.shape(), labels.len()),
            ));
        }
        let (m, n) = (t.rows(), t.cols());
        for (r, &label) in labels.iter().enumerate() {
            if label >= n {
                return Err(TensorError::LabelOutOfRange {
                    row: r,
                    label,
                    classes: n,
                });
            }
        }
        let probs = kernels::softmax_rows(t.data(), m, n);
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = t.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let loss = total / m as f64;
        let req = self.requires(scores);
        Ok(self.emit(
            vec![loss],
            &[1],
            req,
            Op::CrossEntropyRows {
                scores,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    // ── backward pass ───────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates `grad` on every tensor
    /// in the tape that requires gradients and is reachable from the loss.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let loss_t = self.tensor(loss);
        if !loss_t.is_scalar() {
            return Err(TensorError::NotScalar {
                elements: loss_t.numel(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].tensor.requires_grad {
                continue;
            }
            let Some(op) = self.nodes[id].op.clone() else {
                continue; // leaf
            };
            let g = grads[id].clone().expect("checked above");
            self.propagate(&op, id, &g, &mut grads);
        }

        for (id, slot) in grads.into_iter().enumerate() {
            if let Some(g) = slot {
                if self.nodes[id].tensor.requires_grad {
                    self.nodes[id].tensor.grad = Some(g);
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, out_id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::MatMul { a, b } => {
                let (ta, tb) = (self.tensor(*a), self.tensor(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.requires(*a) {
                    let da = kernels::matmul_nt(g, tb.data(), m, n, k);
                    accumulate(&mut grads[a.0], &da);
                }
                if self.requires(*b) {
                    let db = kernels::matmul_tn(ta.data(), g, m, k, n);
                    accumulate(&mut grads[b.0], &db);
                }
            }
            Op::SoftmaxRows { x } => {
                if self.requires(*x) {
                    let y = self.nodes[out_id].tensor.data();
                    let (m, n) = (self.tensor(*x).rows(), self.tensor(*x).cols());
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                        for c in 0..n {
                            dx[r * n + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                inv_std,
                x_hat,
            } => {
                let tg = self.tensor(*gamma);
                let d = tg.cols();
                let m = self.tensor(*x).rows();
                if self.requires(*beta) {
                    let mut db = vec![0.0; d];
                    for r in 0..m {
                        for c in 0..d {
                            db[c] += g[r * d + c];
                        }
                    }
                    accumulate(&mut grads[beta.0], &db);
                }
                if self.requires(*gamma) {
                    let mut dg = vec![0.0; d];
                    for r in 0..m {
                        for c in 0..d {
                            dg[c] += g[r * d + c] * x_hat[r * d + c];
                        }
                    }
                    accumulate(&mut grads[gamma.0], &dg);
                }
                if self.requires(*x) {
                    let gs = tg.data();
                    let mut dx = vec![0.0; m * d];
                    for r in 0..m {
                        let mut mean_gh = 0.0;
                        let mut mean_gh_xh = 0.0;
                        for c in 0..d {
                            let gh = g[r * d + c] * gs[c];
                            mean_gh += gh;
                            mean_gh_xh += gh * x_hat[r * d + c];
                        }
                        mean_gh /= d as f64;
                        mean_gh_xh /= d as f64;
                        for c in 0..d {
                            let gh = g[r * d + c] * gs[c];
                            dx[r * d + c] =
                                inv_std[r] * (gh - mean_gh - x_hat[r * d + c] * mean_gh_xh);
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::Relu { x } => {
                if self.requires(*x) {
                    let xs = self.tensor(*x).data();
                    let dx: Vec<f64> = xs
                        .iter()
                        .zip(g)
                        .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::Dropout { x, mask } => {
                if self.requires(*x) {
                    let dx: Vec<f64> = mask.iter().zip(g).map(|(m, gv)| m * gv).collect();
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::ConcatCols { parts } => {
                let m = self.nodes[out_id].tensor.rows();
                let total = self.nodes[out_id].tensor.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.tensor(p).cols();
                    if self.requires(p) {
                        let mut dp = vec![0.0; m * c];
                        for r in 0..m {
                            dp[r * c..(r + 1) * c]
                                .copy_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        accumulate(&mut grads[p.0], &dp);
                    }
                    offset += c;
                }
            }
            Op::Add { a, b } => {
                if self.requires(*a) {
                    accumulate(&mut grads[a.0], g);
                }
                if self.requires(*b) {
                    accumulate(&mut grads[b.0], g);
                }
            }
            Op::AddRow { x, bias } => {
                if self.requires(*x) {
                    accumulate(&mut grads[x.0], g);
                }
                if self.requires(*bias) {
                    let (m, n) = (self.tensor(*x).rows(), self.tensor(*x).cols());
                    let mut db = vec![0.0; n];
                    for r in 0..m {
                        for c in 0..n {
                            db[c] += g[r * n + c];
                        }
                    }
                    accumulate(&mut grads[bias.0], &db);
                }
            }
            Op::SliceCols { x, start } => {
                if self.requires(*x) {
                    let (m, n) = (self.tensor(*x).rows(), self.tensor(*x).cols());
                    let len = self.nodes[out_id].tensor.cols();
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        dx[r * n + start..r * n + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::SliceRows { x, start } => {
                if self.requires(*x) {
                    let (m, n) = (self.tensor(*x).rows(), self.tensor(*x).cols());
                    let len = self.nodes[out_id].tensor.rows();
                    let mut dx = vec![0.0; m * n];
                    dx[start * n..(start + len) * n].copy_from_slice(g);
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::GatherRows { x, indices } => {
                if self.requires(*x) {
                    let (m, n) = (self.tensor(*x).rows(), self.tensor(*x).cols());
                    let mut dx = vec![0.0; m * n];
                    for (r, &idx) in indices.iter().enumerate() {
                        for c in 0..n {
                            dx[idx * n + c] += g[r * n + c];
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::Transpose { x } => {
                if self.requires(*x) {
                    let (m, n) = (self.tensor(*x).rows(), self.tensor(*x).cols());
                    // g has shape [n, m]; transpose back to [m, n].
                    let dx = kernels::transpose(g, n, m);
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::Scale { x, factor } => {
                if self.requires(*x) {
                    let dx: Vec<f64> = g.iter().map(|gv| gv * factor).collect();
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::Sum { x } => {
                if self.requires(*x) {
                    let dx = vec![g[0]; self.tensor(*x).numel()];
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::NormalizeRows { x, inv_norm } => {
                if self.requires(*x) {
                    let y = self.nodes[out_id].tensor.data();
                    let (m, n) = (self.tensor(*x).rows(), self.tensor(*x).cols());
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                        for c in 0..n {
                            dx[r * n + c] = inv_norm[r] * (gr[c] - yr[c] * dot);
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
            }
            Op::CrossEntropyRows {
                scores,
                labels,
                probs,
            } => {
                if self.requires(*scores) {
                    let (m, n) = (self.tensor(*scores).rows(), self.tensor(*scores).cols());
                    let scale = g[0] / m as f64;
                    let mut dx = vec![0.0; m * n];
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..n {
                            let indicator = if c == label { 1.0 } else { 0.0 };
                            dx[r * n + c] = (probs[r * n + c] - indicator) * scale;
                        }
                    }
                    accumulate(&mut grads[scores.0], &dx);
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: &[f64]) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution.to_vec()),
    }
}
