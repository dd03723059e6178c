//! Residual vector quantization.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const N_CODEBOOKS: usize = 4;
pub const CODEBOOK_SIZE: usize = 1024;

/// Four stages of 1024 entries each; entry 0 of every stage is the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct RvqCodebooks {
    stages: Vec<Tensor<f32>>,
}

impl RvqCodebooks {
    pub fn new(stages: Vec<Tensor<f32>>) -> Result<Self> {
        if stages.len() != N_CODEBOOKS {
            return Err(Error::Shape(format!("expected {N_CODEBOOKS} codebooks, got {}", stages.len())));
        }
        let dim = stages[0].cols();
        for (k, s) in stages.iter().enumerate() {
            if s.rows() != CODEBOOK_SIZE || s.cols() != dim {
                return Err(Error::Shape(format!("codebook {k} is {}x{}, expected {CODEBOOK_SIZE}x{dim}", s.rows(), s.cols())));
            }
            if !s.all_finite() {
                return Err(Error::InvalidArgument(format!("codebook {k} has non-finite entries")));
            }
            if s.row(0).iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidArgument(format!("codebook {k} entry 0 is not the zero vector")));
            }
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[Tensor<f32>] {
        &self.stages
    }

    pub fn code_dim(&self) -> usize {
        self.stages[0].cols()
    }

    pub fn quantize(&self, latent: &[f32]) -> RvqCode {
        rvq_quantize(latent, &self.stages)
    }
}

/// Result of quantizing one latent vector.
#[derive(Clone, Debug, PartialEq)]
pub struct RvqCode {
    pub ids: Vec<usize>,
    /// Euclidean norm of the residual left after each stage.
    pub residual_norms: Vec<f32>,
}

/// Index of the nearest row of `book` to `x` (squared Euclidean distance,
/// smallest index on ties).
pub fn nearest_entry(x: &[f32], book: &Tensor<f32>) -> usize {
    let mut best = (0usize, f32::INFINITY);
    for j in 0..book.rows() {
        let mut d = 0.0f32;
        for (&a, &b) in x.iter().zip(book.row(j)) {
            let t = a - b;
            d += t * t;
        }
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Quantizes `latent` stage by stage against `books`, each stage picking the
/// entry nearest to the running residual and subtracting it.
pub fn rvq_quantize(latent: &[f32], books: &[Tensor<f32>]) -> RvqCode {
    let mut residual = latent.to_vec();
    let mut ids = Vec::with_capacity(books.len());
    let mut residual_norms = Vec::with_capacity(books.len());
    for book in books {
        assert_eq!(book.cols(), latent.len(), "codebook width");
        let id = nearest_entry(&residual, book);
        for (r, &e) in residual.iter_mut().zip(book.row(id)) {
            *r -= e;
        }
        ids.push(id);
        residual_norms.push(residual.iter().map(|v| v * v).sum::<f32>().sqrt());
    }
    RvqCode { ids, residual_norms }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_dimensional_nearest_neighbor() {
        let book = Tensor::from_vec(2, 2, vec![0.0, 0.0, 3.0, 4.0]);
        let code = rvq_quantize(&[3.0, 4.0], &[book]);
        assert_eq!(code.ids, vec![1]);
        assert_eq!(code.residual_norms, vec![0.0]);
    }

    #[test]
    fn ties_pick_smallest_index() {
        let book = Tensor::from_vec(3, 1, vec![0.0, 2.0, -2.0]);
        assert_eq!(nearest_entry(&[0.0], &book), 0);
        assert_eq!(nearest_entry(&[1.0], &book), 0);
        let book = Tensor::from_vec(3, 1, vec![5.0, 2.0, -2.0]);
        assert_eq!(nearest_entry(&[0.0], &book), 1);
    }

    #[test]
    fn codebook_validation() {
        let ok = vec![Tensor::zeros(CODEBOOK_SIZE, 8); 4];
        assert!(RvqCodebooks::new(ok.clone()).is_ok());
        assert!(RvqCodebooks::new(ok[..3].to_vec()).is_err());
        let mut bad = ok.clone();
        bad[2].set(0, 0, 1.0);
        assert!(RvqCodebooks::new(bad).is_err());
        let mut nan = ok;
        nan[1].set(5, 0, f32::NAN);
        assert!(RvqCodebooks::new(nan).is_err());
    }
}
