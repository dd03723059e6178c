//! Graph-free building blocks for frozen modules and cached decoding.
//!
//! These mirror the graph ops in [`crate::tensor::Graph`] operation for
//! operation, so a forward pass through either path accumulates in the same
//! order.

use crate::tensor::{dot, gelu, normalize_row_in_place, softmax_prefix_in_place, Real, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// `x · w + b` with `w: [in × out]`, `b: [1 × out]`.
pub fn linear<F: Real>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let mut y = x.matmul(w);
    add_row_in_place(&mut y, b);
    y
}

pub fn add_row_in_place<F: Real>(x: &mut Tensor<F>, b: &Tensor<F>) {
    assert_eq!(b.shape(), (1, x.cols()), "bias shape");
    for r in 0..x.rows() {
        for (v, &bv) in x.row_mut(r).iter_mut().zip(b.data()) {
            *v = *v + bv;
        }
    }
}

pub fn layer_norm<F: Real>(x: &Tensor<F>, gain: &Tensor<F>, bias: &Tensor<F>) -> Tensor<F> {
    let eps = F::from_f64c(LN_EPS);
    let mut y = x.clone();
    for r in 0..y.rows() {
        let row = y.row_mut(r);
        normalize_row_in_place(row, eps);
        for (v, &g) in row.iter_mut().zip(gain.data()) {
            *v = *v * g;
        }
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v = *v + b;
        }
    }
    y
}

pub fn gelu_tensor<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(gelu)
}

/// One query row attending over `keys`/`values` rows `0..valid` for one head
/// occupying columns `head_off..head_off + head_dim`. Writes into `out`.
#[allow(clippy::too_many_arguments)]
pub fn attend_row<F: Real>(
    q: &[F],
    keys: &Tensor<F>,
    values: &Tensor<F>,
    valid: usize,
    head_off: usize,
    head_dim: usize,
    scale: F,
    out: &mut [F],
) {
    let n = keys.rows();
    let mut scores: Vec<F> = (0..n).map(|j| dot(q, &keys.row(j)[head_off..head_off + head_dim]) * scale).collect();
    softmax_prefix_in_place(&mut scores, valid);
    for o in out.iter_mut() {
        *o = F::zero();
    }
    for (j, &p) in scores.iter().enumerate() {
        if p == F::zero() {
            continue;
        }
        let v = &values.row(j)[head_off..head_off + head_dim];
        for (o, &vv) in out.iter_mut().zip(v) {
            *o = *o + p * vv;
        }
    }
}

/// Multi-head scaled dot-product attention over already-projected `q`, `k`, `v`.
/// With `causal`, query row `i` sees key rows `0..=i + (k_rows - q_rows)`.
pub fn attention<F: Real>(q: &Tensor<F>, k: &Tensor<F>, v: &Tensor<F>, n_heads: usize, causal: bool) -> Tensor<F> {
    let d = q.cols();
    assert_eq!(d % n_heads, 0, "width {d} not divisible by {n_heads} heads");
    let hd = d / n_heads;
    let scale = F::one() / F::from_usize(hd).unwrap().sqrt();
    let offset = k.rows().saturating_sub(q.rows());
    let mut out = Tensor::zeros(q.rows(), d);
    for i in 0..q.rows() {
        let valid = if causal { (i + 1 + offset).min(k.rows()) } else { k.rows() };
        for h in 0..n_heads {
            let off = h * hd;
            let mut head_out = vec![F::zero(); hd];
            attend_row(&q.row(i)[off..off + hd], k, v, valid, off, hd, scale, &mut head_out);
            out.row_mut(i)[off..off + hd].copy_from_slice(&head_out);
        }
    }
    out
}

/// Fixed sinusoidal position table `[n × d]`.
pub fn sinusoidal_positions<F: Real>(n: usize, d: usize) -> Tensor<F> {
    Tensor::from_fn(n, d, |pos, i| {
        let pair = (i / 2) as f64;
        let freq = 1.0 / 10000f64.powf(2.0 * pair / d as f64);
        let a = pos as f64 * freq;
        F::from_f64c(if i % 2 == 0 { a.sin() } else { a.cos() })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_rows_are_distributions_and_causal() {
        let q = Tensor::from_fn(4, 4, |r, c| (r as f64 - c as f64) * 0.3);
        let k = Tensor::from_fn(4, 4, |r, c| (r * c) as f64 * 0.1);
        // value rows are indicator vectors so output rows are attention weights
        let v = Tensor::from_fn(4, 4, |r, c| if r == c { 1.0 } else { 0.0 });
        let out = attention(&q, &k, &v, 1, true);
        for i in 0..4 {
            let s: f64 = out.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(out.row(i)[i + 1..].iter().all(|&p| p == 0.0));
        }
    }
}
