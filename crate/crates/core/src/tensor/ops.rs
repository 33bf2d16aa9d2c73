//! Forward definitions of every differentiable operation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{AttentionLayout, Graph, Op, Var};
use super::kernels::{self, MatRef};
use super::{Tensor, TensorError};

/// A contiguous run of rows belonging to one sequence in a packed batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    /// Consecutive segments covering `lens` in order.
    pub fn packed(lens: &[usize]) -> Vec<Segment> {
        let mut start = 0;
        lens.iter()
            .map(|&len| {
                let s = Segment { start, len };
                start += len;
                s
            })
            .collect()
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Output length of a 1-D convolution, or `None` when the kernel does not
/// fit inside the padded input.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

impl Graph {
    /// Matrix product of two 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut am = MatRef::new(self.value(a).data(), sa[0], sa[1]);
        let mut bm = MatRef::new(self.value(b).data(), sb[0], sb[1]);
        if ta {
            am = am.t();
        }
        if tb {
            bm = bm.t();
        }
        let (m, k) = am.dims();
        let (kb, n) = bm.dims();
        if k != kb {
            return Err(shape_err("matmul", &[m, k], &[kb, n]));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(am, bm, &mut out, 1.0, 0.0);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, ta, tb }, "matmul")
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub { a, b }, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul { a, b }, "mul")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * factor).collect();
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(t, Op::Scale { a, factor }, "scale")
    }

    /// Adds a length-`cols` vector to every row of `x`.
    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let cols = tx.cols();
        if tb.numel() != cols {
            return Err(shape_err("add_row_broadcast", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push(t, Op::AddRowBroadcast { x, bias }, "add_row_broadcast")
    }

    /// Sum of all elements as a 0-d tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(TensorError::Invalid { op: "mean", msg: "empty tensor".into() });
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    fn map(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var, TensorError> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(t, op, name)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.map(a, Op::Relu { a }, "relu", |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.map(a, Op::Gelu { a }, "gelu", kernels::gelu)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.map(a, Op::Exp { a }, "exp", libm::exp)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, TensorError> {
        self.map(a, Op::Ln { a }, "ln", libm::log)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let cols = t.cols();
        if cols == 0 {
            return Err(TensorError::Invalid { op: "softmax", msg: "empty softmax axis".into() });
        }
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols) {
            kernels::softmax_in_place(row);
        }
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(t, Op::Softmax { a }, "softmax")
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let cols = t.cols();
        if cols == 0 {
            return Err(TensorError::Invalid { op: "log_softmax", msg: "empty softmax axis".into() });
        }
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols) {
            let lse = kernels::log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(t, Op::LogSoftmax { a }, "log_softmax")
    }

    /// Per-row normalization to zero mean / unit (biased) variance followed
    /// by an affine `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let d = tx.cols();
        if d == 0 || !(eps > 0.0) {
            return Err(TensorError::Invalid { op: "layer_norm", msg: format!("d={d}, eps={eps}") });
        }
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.numel() != d || tb.numel() != d {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / libm::sqrt(var + eps);
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let t = Tensor::from_parts(tx.shape().to_vec(), out);
        self.push(t, Op::LayerNorm { x, gain, bias, xhat, inv_std }, "layer_norm")
    }

    /// Strided 1-D convolution of `x` (`len × c_in`) with `kernels`
    /// (`c_out × c_in × k`) and zero padding; returns `len' × c_out`.
    pub fn conv1d(
        &mut self,
        x: Var,
        kernels: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let (tx, tk) = (self.value(x), self.value(kernels));
        let ks = tk.shape();
        if tx.shape().len() != 2 || ks.len() != 3 || ks[1] != tx.cols() {
            return Err(shape_err("conv1d", tx.shape(), ks));
        }
        let (len, c_in) = as_matrix(tx);
        let (c_out, k) = (ks[0], ks[2]);
        let out_len = conv_output_len(len, k, stride, padding).ok_or_else(|| TensorError::Invalid {
            op: "conv1d",
            msg: format!("kernel {k} does not fit input of length {len} with padding {padding} (stride {stride})"),
        })?;
        if let Some(b) = bias {
            if self.value(b).numel() != c_out {
                return Err(shape_err("conv1d", &[c_out], self.shape(b)));
            }
        }
        let cols = kernels::im2col(tx.data(), len, c_in, k, stride, padding, out_len);
        let width = c_in * k;
        let mut out = vec![0.0; out_len * c_out];
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_mut(c_out) {
                row.copy_from_slice(bd);
            }
        }
        kernels::gemm(
            MatRef::new(&cols, out_len, width),
            MatRef::new(tk.data(), c_out, width).t(),
            &mut out,
            1.0,
            1.0,
        );
        let t = Tensor::from_parts(vec![out_len, c_out], out);
        self.push(t, Op::Conv1d { x, kernels, bias, stride, padding, cols }, "conv1d")
    }

    /// Gathers rows of `table` (`V × d`) and multiplies them by `scale`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], scale: f64) -> Result<Var, TensorError> {
        let tt = self.value(table);
        if tt.shape().len() != 2 {
            return Err(shape_err("embedding", tt.shape(), &[]));
        }
        let (vocab, d) = as_matrix(tt);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::Invalid { op: "embedding", msg: format!("id {id} outside vocabulary of {vocab}") });
            }
            out.extend(tt.row(id).iter().map(|v| v * scale));
        }
        let t = Tensor::from_parts(vec![ids.len(), d], out);
        self.push(t, Op::Embedding { table, ids: ids.to_vec(), scale }, "embedding")
    }

    /// Multi-head scaled dot-product attention over packed sequences.
    ///
    /// `q` is `Σ lq × d`, `k`/`v` are `Σ lk × d`; query segment `s` attends only to
    /// key segment `s`. With `causal`, query row `i` of a segment sees keys `0..=i`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        query_segments: &[Segment],
        key_segments: &[Segment],
        causal: bool,
    ) -> Result<Var, TensorError> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        if tk.cols() != d || tv.cols() != d || tk.rows() != tv.rows() {
            return Err(shape_err("attention", tq.shape(), tk.shape()));
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Invalid { op: "attention", msg: format!("{d} not divisible into {heads} heads") });
        }
        if query_segments.len() != key_segments.len() {
            return Err(TensorError::Invalid { op: "attention", msg: "segment count mismatch".into() });
        }
        let dh = d / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut offsets = Vec::with_capacity(query_segments.len());
        let mut total = 0;
        for (qs, ks) in query_segments.iter().zip(key_segments) {
            if qs.end() > tq.rows() || ks.end() > tk.rows() || ks.len == 0 {
                return Err(TensorError::Invalid { op: "attention", msg: format!("bad segment {qs:?}/{ks:?}") });
            }
            if causal && qs.len != ks.len {
                return Err(TensorError::Invalid { op: "attention", msg: "causal attention needs equal lengths".into() });
            }
            offsets.push(total);
            total += heads * qs.len * ks.len;
        }
        let mut probs = vec![0.0; total];
        let mut out = vec![0.0; tq.rows() * d];
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        for (s, (qs, ks)) in query_segments.iter().zip(key_segments).enumerate() {
            for h in 0..heads {
                let base = offsets[s] + h * qs.len * ks.len;
                let col = h * dh;
                for i in 0..qs.len {
                    let qrow = &qd[(qs.start + i) * d + col..(qs.start + i) * d + col + dh];
                    let p = &mut probs[base + i * ks.len..base + (i + 1) * ks.len];
                    let visible = if causal { i + 1 } else { ks.len };
                    for j in 0..ks.len {
                        p[j] = if j < visible {
                            let krow = &kd[(ks.start + j) * d + col..(ks.start + j) * d + col + dh];
                            kernels::dot(qrow, krow) * scale
                        } else {
                            f64::NEG_INFINITY
                        };
                    }
                    kernels::softmax_in_place(&mut p[..visible]);
                    for pj in p[visible..].iter_mut() {
                        *pj = 0.0;
                    }
                    let orow = &mut out[(qs.start + i) * d + col..(qs.start + i) * d + col + dh];
                    for j in 0..visible {
                        let w = p[j];
                        let vrow = &vd[(ks.start + j) * d + col..(ks.start + j) * d + col + dh];
                        for (o, x) in orow.iter_mut().zip(vrow) {
                            *o += w * x;
                        }
                    }
                }
            }
        }
        let layout = AttentionLayout {
            heads,
            query_segments: query_segments.to_vec(),
            key_segments: key_segments.to_vec(),
            offsets,
        };
        let t = Tensor::from_parts(vec![tq.rows(), d], out);
        self.push(t, Op::Attention { q, k, v, layout, probs }, "attention")
    }

    /// Stacks `times` copies of the matrix `a` vertically.
    pub fn tile_rows(&mut self, a: Var, times: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (r, c) = as_matrix(t);
        let mut data = Vec::with_capacity(r * c * times);
        for _ in 0..times {
            data.extend_from_slice(t.data());
        }
        self.push(Tensor::from_parts(vec![r * times, c], data), Op::TileRows { a, times }, "tile_rows")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let Some(first) = parts.first() else {
            return Err(TensorError::Invalid { op: "concat_rows", msg: "no inputs".into() });
        };
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.cols() != c {
                return Err(shape_err("concat_rows", &[c], t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let rows = data.len() / c.max(1);
        self.push(Tensor::from_parts(vec![rows, c], data), Op::ConcatRows { parts: parts.to_vec() }, "concat_rows")
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (r, c) = as_matrix(t);
        if start > end || end > r {
            return Err(shape_err("slice_rows", t.shape(), &[start, end]));
        }
        let data = t.data()[start * c..end * c].to_vec();
        self.push(Tensor::from_parts(vec![end - start, c], data), Op::SliceRows { a, start }, "slice_rows")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(shape_err("transpose", t.shape(), &[]));
        }
        let (r, c) = as_matrix(t);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t.data()[i * c + j];
            }
        }
        self.push(Tensor::from_parts(vec![c, r], data), Op::Transpose { a }, "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = (*self.nodes[a.0].value).clone().reshape(shape.to_vec())?;
        self.push(t, Op::Reshape { a }, "reshape")
    }

    /// Divides each row by `max(‖row‖, eps)`.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var, TensorError> {
        let t = self.value(a);
        let c = t.cols();
        let mut data = t.data().to_vec();
        let mut norms = Vec::with_capacity(t.rows());
        for row in data.chunks_mut(c.max(1)) {
            let n = libm::sqrt(kernels::dot(row, row));
            norms.push(n);
            let denom = if n > eps { n } else { eps };
            for v in row.iter_mut() {
                *v /= denom;
            }
        }
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(t, Op::NormalizeRows { a, norms, eps }, "normalize_rows")
    }

    /// `dot(a, b) / (max(‖a‖, eps) · max(‖b‖, eps))` for two vectors.
    pub fn cosine_similarity(&mut self, a: Var, b: Var, eps: f64) -> Result<Var, TensorError> {
        let (na, nb) = (self.value(a).numel(), self.value(b).numel());
        if na != nb || na == 0 {
            return Err(shape_err("cosine_similarity", self.shape(a), self.shape(b)));
        }
        let a = self.reshape(a, &[1, na])?;
        let b = self.reshape(b, &[1, nb])?;
        let an = self.normalize_rows(a, eps)?;
        let bn = self.normalize_rows(b, eps)?;
        let dot = self.matmul_t(an, bn, false, true)?;
        self.reshape(dot, &[])
    }

    /// Mean over non-pad rows of the label-smoothed negative log-likelihood.
    ///
    /// Row loss is `-(1-ε)·log p[target] - ε/V · Σ_v log p[v]`. Rows whose
    /// target equals `pad` are skipped; an all-pad input is an error.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        pad: Option<usize>,
        smoothing: f64,
    ) -> Result<Var, TensorError> {
        let t = self.value(logits);
        let (rows, vocab) = as_matrix(t);
        if rows != targets.len() {
            return Err(shape_err("cross_entropy", t.shape(), &[targets.len()]));
        }
        if !(0.0..=1.0).contains(&smoothing) {
            return Err(TensorError::Invalid { op: "cross_entropy", msg: format!("smoothing {smoothing}") });
        }
        let count = targets.iter().filter(|&&y| Some(y) != pad).count();
        if count == 0 {
            return Err(TensorError::Invalid { op: "cross_entropy", msg: "no non-pad targets to average over".into() });
        }
        let w = 1.0 / count as f64;
        let mut weights = vec![0.0; rows];
        let mut probs = vec![0.0; rows * vocab];
        let mut total = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            if Some(y) == pad {
                continue;
            }
            if y >= vocab {
                return Err(TensorError::Invalid { op: "cross_entropy", msg: format!("target {y} outside {vocab} classes") });
            }
            weights[r] = w;
            let row = t.row(r);
            let lse = kernels::log_sum_exp(row);
            let mut row_loss = -(1.0 - smoothing) * (row[y] - lse);
            if smoothing > 0.0 {
                let mean_logp = row.iter().map(|v| v - lse).sum::<f64>() / vocab as f64;
                row_loss -= smoothing * mean_logp;
            }
            total += row_loss * w;
            for (p, v) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = libm::exp(v - lse);
            }
        }
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), weights, smoothing, probs };
        self.push(Tensor::scalar(total), op, "cross_entropy")
    }
}
