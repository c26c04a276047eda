use super::{Result, Tensor, TensorError};

/// Strided logical view of a row-major buffer, used to express transposes
/// without copying.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> View<'a> {
    pub fn of(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c (+)= a · b`, with `c` a contiguous row-major `a.rows × b.cols` buffer.
pub(crate) fn gemm(a: View<'_>, b: View<'_>, c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(c.len(), a.rows * b.cols);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the views were built from slices whose extents cover
    // rows × cols at the given strides, and `c` has exactly m × n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `C = A · B`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.rows() {
        return Err(TensorError::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = vec![0.0; a.rows() * b.cols()];
    gemm(
        View::of(a.data(), a.rows(), a.cols()),
        View::of(b.data(), b.rows(), b.cols()),
        &mut out,
        false,
    );
    Ok(Tensor::from_raw(a.rows(), b.cols(), out))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(s: &Tensor) -> Tensor {
    let cols = s.cols();
    let mut out = s.data().to_vec();
    for row in out.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::from_raw(s.rows(), cols, out)
}

pub(crate) struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_forward(
    x: &Tensor,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> (Tensor, LayerNormCache) {
    let d = x.cols();
    let mut out = vec![0.0; x.len()];
    let mut normalized = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        for c in 0..d {
            let xh = (row[c] - mean) * inv;
            normalized[r * d + c] = xh;
            out[r * d + c] = xh * gain[c] + bias[c];
        }
    }
    (
        Tensor::from_raw(x.rows(), d, out),
        LayerNormCache {
            normalized,
            inv_std,
        },
    )
}

/// Normalizes every row to zero mean and unit population variance, then
/// applies `gain` and `bias` (both `1 × d`).
pub fn layer_norm_rows(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    if gain.shape() != [1, x.cols()] || bias.shape() != [1, x.cols()] {
        return Err(TensorError::Shape {
            op: "layer_norm",
            left: x.shape(),
            right: gain.shape(),
        });
    }
    Ok(layer_norm_forward(x, gain.data(), bias.data(), eps).0)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
