//! Small dense kernels used by the encoder: row-major matrices, products,
//! softmax, layer normalisation and GELU, each with its backward pass.
//!
//! Every reduction runs in a fixed operand order so results are bitwise
//! reproducible for identical inputs.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "Mat::from_vec shape mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        add_into(&mut self.data, &other.data);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · rhs + bias` (bias broadcast over rows).
    pub fn affine(&self, rhs: &Mat, bias: &[f64]) -> Mat {
        let mut out = self.matmul(rhs);
        for i in 0..out.rows {
            add_into(out.row_mut(i), bias);
        }
        out
    }

    /// `self · rhs`
    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(o_row, a, rhs.row(p));
            }
        }
        out
    }

    /// `self · rhsᵀ`
    pub fn matmul_t(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.cols, "matmul_t shape mismatch");
        let mut out = Mat::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = dot(a_row, rhs.row(j));
            }
        }
        out
    }

    /// Accumulates `selfᵀ · rhs` into `acc`.
    pub fn t_matmul_acc(&self, rhs: &Mat, acc: &mut Mat) {
        assert_eq!(self.rows, rhs.rows, "t_matmul shape mismatch");
        assert_eq!((acc.rows, acc.cols), (self.cols, rhs.cols));
        for p in 0..self.rows {
            let a_row = self.row(p);
            let b_row = rhs.row(p);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(&mut acc.data[i * rhs.cols..(i + 1) * rhs.cols], a, b_row);
            }
        }
    }

    /// Accumulates the column sums of `self` into `acc`.
    pub fn col_sum_acc(&self, acc: &mut [f64]) {
        assert_eq!(acc.len(), self.cols);
        for i in 0..self.rows {
            add_into(acc, self.row(i));
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn add_into(y: &mut [f64], x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Given softmax output `p` and upstream gradient `dp`, writes the gradient
/// with respect to the logits into `dp`.
pub fn softmax_backward_in_place(p: &[f64], dp: &mut [f64]) {
    let inner = dot(p, dp);
    for (g, &pi) in dp.iter_mut().zip(p) {
        *g = pi * (*g - inner);
    }
}

pub const LN_EPS: f64 = 1e-6;

/// Per-row layer-norm statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    /// Normalised input before the affine transform.
    pub xhat: Mat,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &Mat, gain: &[f64], bias: &[f64]) -> (Mat, LayerNormCache) {
    let n = x.cols as f64;
    let mut xhat = Mat::zeros(x.rows, x.cols);
    let mut out = Mat::zeros(x.rows, x.cols);
    let mut rstd = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(r);
        let xh = xhat.row_mut(i);
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * r;
        }
        let o = &mut out.data[i * x.cols..(i + 1) * x.cols];
        for j in 0..x.cols {
            o[j] = xhat.data[i * x.cols + j] * gain[j] + bias[j];
        }
    }
    (out, LayerNormCache { xhat, rstd })
}

/// Returns the input gradient and accumulates gain/bias gradients.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    dout: &Mat,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Mat {
    let cols = dout.cols;
    let n = cols as f64;
    let mut dx = Mat::zeros(dout.rows, cols);
    let mut dxhat = vec![0.0; cols];
    for i in 0..dout.rows {
        let g = dout.row(i);
        let xh = cache.xhat.row(i);
        for j in 0..cols {
            dgain[j] += g[j] * xh[j];
            dbias[j] += g[j];
            dxhat[j] = g[j] * gain[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dot(&dxhat, xh) / n;
        let r = cache.rstd[i];
        let dxr = dx.row_mut(i);
        for j in 0..cols {
            dxr[j] = r * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}
