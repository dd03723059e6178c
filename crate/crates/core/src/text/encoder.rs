//! Frozen text encoder: token embedding + sinusoidal positions + two
//! bidirectional self-attention blocks. Weights come from a fixed seed and
//! are never updated.

use super::bpe::MAX_TEXT_TOKENS;
use crate::error::{Error, Result};
use crate::nn;
use crate::tensor::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TEXT_ENCODER_SEED: u64 = 0xE27;
const N_BLOCKS: usize = 2;

/// `[n_text_tokens × d_model]` conditioning embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoding {
    pub embeddings: Tensor<f32>,
}

impl TextEncoding {
    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.embeddings.cols()
    }
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    vocab_size: usize,
    d_model: usize,
    n_heads: usize,
    params: ParamStore<f32>,
    positions: Tensor<f32>,
}

impl TextEncoder {
    pub fn new(vocab_size: usize, d_model: usize) -> Self {
        assert!(d_model >= 2 && d_model % 2 == 0, "d_model must be even");
        let n_heads = if d_model % 4 == 0 { 4 } else { 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(TEXT_ENCODER_SEED);
        let mut p = ParamStore::new();
        let proj_std = 1.0 / (d_model as f64).sqrt();
        p.add_normal("tok_emb", vocab_size, d_model, 1.0, &mut rng);
        for b in 0..N_BLOCKS {
            for name in ["wq", "wk", "wv", "wo"] {
                p.add_normal(format!("block{b}.{name}"), d_model, d_model, proj_std, &mut rng);
                p.add_zeros(format!("block{b}.{name}_b"), 1, d_model);
            }
            p.add_ones(format!("block{b}.ln1_g"), 1, d_model);
            p.add_zeros(format!("block{b}.ln1_b"), 1, d_model);
            p.add_normal(format!("block{b}.ff1"), d_model, 2 * d_model, proj_std, &mut rng);
            p.add_zeros(format!("block{b}.ff1_b"), 1, 2 * d_model);
            p.add_normal(format!("block{b}.ff2"), 2 * d_model, d_model, 1.0 / (2.0 * d_model as f64).sqrt(), &mut rng);
            p.add_zeros(format!("block{b}.ff2_b"), 1, d_model);
            p.add_ones(format!("block{b}.ln2_g"), 1, d_model);
            p.add_zeros(format!("block{b}.ln2_b"), 1, d_model);
        }
        let positions = nn::sinusoidal_positions(MAX_TEXT_TOKENS, d_model);
        Self { vocab_size, d_model, n_heads, params: p, positions }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    fn w(&self, name: &str) -> &Tensor<f32> {
        self.params.get(self.params.id(name).expect("known parameter"))
    }

    /// Encodes 1..=1024 token ids.
    pub fn encode(&self, ids: &[u32]) -> Result<TextEncoding> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("text token ids"));
        }
        if ids.len() > MAX_TEXT_TOKENS {
            return Err(Error::TooLong { got: ids.len(), max: MAX_TEXT_TOKENS });
        }
        let emb = self.w("tok_emb");
        let mut x = Tensor::zeros(ids.len(), self.d_model);
        for (t, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= self.vocab_size {
                return Err(Error::InvalidToken { id, vocab: self.vocab_size });
            }
            for ((o, &e), &p) in x.row_mut(t).iter_mut().zip(emb.row(id)).zip(self.positions.row(t)) {
                *o = e + p;
            }
        }
        for b in 0..N_BLOCKS {
            let w = |n: &str| self.w(&format!("block{b}.{n}"));
            let q = nn::linear(&x, w("wq"), w("wq_b"));
            let k = nn::linear(&x, w("wk"), w("wk_b"));
            let v = nn::linear(&x, w("wv"), w("wv_b"));
            let a = nn::attention(&q, &k, &v, self.n_heads, false);
            let mut h = nn::linear(&a, w("wo"), w("wo_b"));
            h.add_assign(&x);
            let h = nn::layer_norm(&h, w("ln1_g"), w("ln1_b"));
            let f = nn::gelu_tensor(&nn::linear(&h, w("ff1"), w("ff1_b")));
            let mut f = nn::linear(&f, w("ff2"), w("ff2_b"));
            f.add_assign(&h);
            x = nn::layer_norm(&f, w("ln2_g"), w("ln2_b"));
        }
        Ok(TextEncoding { embeddings: x })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_frozen_and_position_sensitive() {
        let enc = TextEncoder::new(300, 512);
        let ids = [5u32, 17, 256, 3, 99, 4, 12];
        let a = enc.encode(&ids).unwrap();
        assert_eq!(a.embeddings.shape(), (7, 512));
        assert!(a.embeddings.all_finite());
        assert_eq!(a, enc.encode(&ids).unwrap());
        assert_eq!(TextEncoder::new(300, 512).checksum(), enc.checksum());

        let rev: Vec<u32> = ids.iter().rev().copied().collect();
        let b = enc.encode(&rev).unwrap();
        assert!(a.embeddings.max_abs_diff(&b.embeddings) > 1e-3);
    }

    #[test]
    fn length_limits() {
        let enc = TextEncoder::new(260, 16);
        assert!(matches!(enc.encode(&[]), Err(Error::EmptyInput(_))));
        assert!(matches!(enc.encode(&vec![1; 1025]), Err(Error::TooLong { .. })));
        assert!(enc.encode(&vec![1; 1024]).is_ok());
        assert!(matches!(enc.encode(&[260]), Err(Error::InvalidToken { .. })));
    }
}
