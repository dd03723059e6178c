//! Dense row-major matrices, a reverse-mode tape, and named parameter stores.
//!
//! Everything in the crate is two-dimensional: sequences are `[time × width]`
//! and 1-D signals for convolutions are `[channels × length]`. The scalar type
//! is generic so the same model code runs in `f32` for training and inference
//! and in `f64` for finite-difference gradient checks.

mod graph;
mod params;

pub use graph::{Gradients, Graph, NodeId};
pub use params::{ParamId, ParamStore};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable throughout the crate (`f32` or `f64`).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + Sum + 'static
{
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, PartialEq)]
pub struct Tensor<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F> Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor[{}x{}]", self.rows, self.cols)
    }
}

impl<F: Real> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, v: F) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data does not match shape {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<F>) -> Self {
        let n = data.len();
        Self::from_vec(1, n, data)
    }

    pub fn scalar(v: F) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Scalar value of a 1x1 tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| G::from_f64c(v.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Self {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale_in_place(&mut self, s: F) {
        for v in &mut self.data {
            *v = *v * s;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), |m, d| if d > m { d } else { m })
    }

    /// `self · other`. Row `i` of the result depends only on row `i` of `self`,
    /// accumulated over the shared dimension in ascending order.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul {}x{} · {}x{}", self.rows, self.cols, other.rows, other.cols);
        let mut out = Self::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in a_row.iter().enumerate() {
                if a == F::zero() {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t {}x{} · ({}x{})ᵀ", self.rows, self.cols, other.rows, other.cols);
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul ({}x{})ᵀ · {}x{}", self.rows, self.cols, other.rows, other.cols);
        let mut out = Self::zeros(self.cols, other.cols);
        let n = other.cols;
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for (i, &a) in a_row.iter().enumerate() {
                if a == F::zero() {
                    continue;
                }
                let o_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// Rows `start..start+len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.rows, "slice_rows out of range");
        Self::from_vec(len, self.cols, self.data[start * self.cols..(start + len) * self.cols].to_vec())
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.cols, "slice_cols out of range");
        let mut out = Self::zeros(self.rows, len);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..start + len]);
        }
        out
    }

    pub fn concat_rows(parts: &[&Self]) -> Self {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Self::from_vec(rows, cols, data)
    }

    pub fn mean(&self) -> F {
        if self.data.is_empty() {
            return F::zero();
        }
        let s: F = self.data.iter().copied().sum();
        s / F::from_usize(self.data.len()).unwrap()
    }

    /// Column-wise mean over rows, as a 1xcols tensor.
    pub fn mean_rows(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                *o = *o + v;
            }
        }
        if self.rows > 0 {
            let n = F::from_usize(self.rows).unwrap();
            for o in &mut out.data {
                *o = *o / n;
            }
        }
        out
    }
}

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut s = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        s = s + x * y;
    }
    s
}

/// Softmax over `row[..valid]`; entries from `valid` on are set to exactly zero.
pub fn softmax_prefix_in_place<F: Real>(row: &mut [F], valid: usize) {
    let valid = valid.min(row.len());
    if valid == 0 {
        row.iter_mut().for_each(|v| *v = F::zero());
        return;
    }
    let max = row[..valid].iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in &mut row[..valid] {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in &mut row[..valid] {
        *v = *v / sum;
    }
    for v in &mut row[valid..] {
        *v = F::zero();
    }
}

/// Normalizes a row to zero mean and unit variance; returns `(mean, 1/std)`.
pub fn normalize_row_in_place<F: Real>(row: &mut [F], eps: F) -> (F, F) {
    let n = F::from_usize(row.len()).unwrap();
    let mean = row.iter().copied().sum::<F>() / n;
    let mut var = F::zero();
    for &v in row.iter() {
        var = var + (v - mean) * (v - mean);
    }
    var = var / n;
    let rstd = F::one() / (var + eps).sqrt();
    for v in row.iter_mut() {
        *v = (*v - mean) * rstd;
    }
    (mean, rstd)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<F: Real>(x: F) -> F {
    let c = F::from_f64c(GELU_C);
    let a = F::from_f64c(GELU_A);
    let half = F::from_f64c(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::from_f64c(GELU_C);
    let a = F::from_f64c(GELU_A);
    let half = F::from_f64c(0.5);
    let three = F::from_f64c(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (F::one() + three * a * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * du
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// 1-D convolution of `x: [c_in × len]` with `w: [c_out × (c_in·k)]`.
pub fn conv1d<F: Real>(x: &Tensor<F>, w: &Tensor<F>, k: usize, stride: usize, pad: usize) -> Tensor<F> {
    let c_in = x.rows();
    let len = x.cols();
    assert_eq!(w.cols(), c_in * k, "conv1d weight width {} != c_in {} * k {}", w.cols(), c_in, k);
    let c_out = w.rows();
    let out_len = conv1d_out_len(len, k, stride, pad);
    let mut out = Tensor::zeros(c_out, out_len);
    for o in 0..c_out {
        let w_row = w.row(o);
        let out_row = &mut out.data[o * out_len..(o + 1) * out_len];
        for c in 0..c_in {
            let x_row = x.row(c);
            let wk = &w_row[c * k..(c + 1) * k];
            for (t, out_v) in out_row.iter_mut().enumerate() {
                let base = (t * stride) as isize - pad as isize;
                let mut acc = F::zero();
                for (j, &wv) in wk.iter().enumerate() {
                    let idx = base + j as isize;
                    if idx >= 0 && (idx as usize) < len {
                        acc = acc + wv * x_row[idx as usize];
                    }
                }
                *out_v = *out_v + acc;
            }
        }
    }
    out
}

pub fn conv1d_out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    if len + 2 * pad < k {
        0
    } else {
        (len + 2 * pad - k) / stride + 1
    }
}

/// Transposed 1-D convolution of `x: [c_in × len]` with `w: [c_in × (c_out·k)]`;
/// output length is `(len - 1)·stride + k`.
pub fn conv_transpose1d<F: Real>(x: &Tensor<F>, w: &Tensor<F>, k: usize, stride: usize) -> Tensor<F> {
    let c_in = x.rows();
    let len = x.cols();
    assert_eq!(w.rows(), c_in, "conv_transpose1d weight rows");
    assert_eq!(w.cols() % k, 0, "conv_transpose1d weight width");
    let c_out = w.cols() / k;
    let out_len = if len == 0 { 0 } else { (len - 1) * stride + k };
    let mut out = Tensor::zeros(c_out, out_len);
    for c in 0..c_in {
        let x_row = x.row(c);
        let w_row = w.row(c);
        for o in 0..c_out {
            let wk = &w_row[o * k..(o + 1) * k];
            let out_row = &mut out.data[o * out_len..(o + 1) * out_len];
            for (t, &xv) in x_row.iter().enumerate() {
                if xv == F::zero() {
                    continue;
                }
                let base = t * stride;
                for (j, &wv) in wk.iter().enumerate() {
                    out_row[base + j] = out_row[base + j] + wv * xv;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.5 - 2.0);
        let b = Tensor::from_fn(4, 2, |r, c| (r as f64 - c as f64) * 0.25);
        let ab = a.matmul(&b);
        assert_eq!(ab, a.matmul_t(&b.transpose()));
        assert_eq!(ab, a.transpose().t_matmul(&b));
        // hand check of one entry
        let e: f64 = (0..4).map(|k| a.get(1, k) * b.get(k, 1)).sum();
        assert_eq!(ab.get(1, 1), e);
    }

    #[test]
    fn softmax_prefix_zeroes_tail() {
        let mut row = vec![1.0f64, 2.0, 3.0, 100.0];
        softmax_prefix_in_place(&mut row, 3);
        assert_eq!(row[3], 0.0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conv_shapes() {
        let x = Tensor::<f32>::full(2, 10, 1.0);
        let w = Tensor::<f32>::full(3, 2 * 3, 1.0);
        let y = conv1d(&x, &w, 3, 2, 1);
        assert_eq!(y.shape(), (3, 5));
        // interior output sums 2 channels * 3 taps
        assert_eq!(y.get(0, 2), 6.0);
        let wt = Tensor::<f32>::full(2, 4 * 3, 1.0);
        let z = conv_transpose1d(&x, &wt, 3, 3);
        assert_eq!(z.shape(), (4, 30));
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
