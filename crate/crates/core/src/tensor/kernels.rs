//! Raw slice kernels shared by the forward and backward passes.

/// Row-major matrix view: `rows × cols` with an optional logical transpose.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    /// Rows of the stored (untransposed) matrix.
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { data, rows, cols, transposed: false }
    }

    pub fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    /// Logical (rows, cols) after applying the transpose flag.
    pub fn dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        let (r, c) = (self.cols as isize, 1);
        if self.transposed {
            (c, r)
        } else {
            (r, c)
        }
    }
}

/// `out = alpha · a · b + beta · out`, with `out` row-major `m × n`.
pub fn gemm(a: MatRef<'_>, b: MatRef<'_>, out: &mut [f64], alpha: f64, beta: f64) {
    let (m, k) = a.dims();
    let (kb, n) = b.dims();
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the views were checked against their slice lengths on construction
    // and the output length against m × n above; strides stay inside each buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds `x` (`len × channels`) into patch rows of width `channels · kernel`,
/// laid out channel-major to match a `c_out × c_in × k` kernel tensor.
pub fn im2col(
    x: &[f64],
    len: usize,
    channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_len: usize,
) -> alloc::vec::Vec<f64> {
    let width = channels * kernel;
    let mut cols = alloc::vec![0.0; out_len * width];
    for t in 0..out_len {
        let row = &mut cols[t * width..(t + 1) * width];
        for j in 0..kernel {
            let src = (t * stride + j) as isize - padding as isize;
            if src < 0 || src as usize >= len {
                continue;
            }
            let src = src as usize;
            for c in 0..channels {
                row[c * kernel + j] = x[src * channels + c];
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input rows.
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    cols: &[f64],
    dx: &mut [f64],
    len: usize,
    channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_len: usize,
) {
    let width = channels * kernel;
    for t in 0..out_len {
        let row = &cols[t * width..(t + 1) * width];
        for j in 0..kernel {
            let src = (t * stride + j) as isize - padding as isize;
            if src < 0 || src as usize >= len {
                continue;
            }
            let src = src as usize;
            for c in 0..channels {
                dx[src * channels + c] += row[c * kernel + j];
            }
        }
    }
}

/// In-place numerically stable softmax over one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `ln Σ exp(row)`, stabilized by the row maximum.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| libm::exp(v - max)).sum();
    max + libm::log(sum)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    cdf + x * pdf
}
