//! Incremental decoding with a key/value cache, and sampling.

use super::model::{CrossKv, LmNet};
use crate::error::Result;
use crate::nn;
use crate::speaker::SpeakerEmbeddingSequence;
use crate::tensor::{Real, Tensor};
use crate::text::TextEncoding;
use crate::tokens::{TokenSequence, EOS, PAD, SOS};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    Greedy,
    TopK { k: usize, temperature: f64 },
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::TopK { k: 50, temperature: 0.9 }
    }
}

/// Self-attention keys/values of the prefix decoded so far, per block.
#[derive(Clone, Debug)]
pub struct KvCache<F> {
    keys: Vec<Tensor<F>>,
    values: Vec<Tensor<F>>,
    len: usize,
}

impl<F: Real> KvCache<F> {
    fn new(n_blocks: usize, width: usize, capacity: usize) -> Self {
        Self { keys: vec![Tensor::zeros(capacity, width); n_blocks], values: vec![Tensor::zeros(capacity, width); n_blocks], len: 0 }
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// One decoding session: fixed conditioning plus a growing cache.
pub struct Session<'m, F> {
    lm: &'m LmNet<F>,
    cross: Vec<CrossKv<F>>,
    cache: KvCache<F>,
}

impl<'m, F: Real> Session<'m, F> {
    pub fn new(lm: &'m LmNet<F>, text: &Tensor<F>, speaker: &Tensor<F>) -> Result<Self> {
        lm.check_inputs(&[SOS], text, speaker)?;
        let cfg = &lm.cfg;
        Ok(Self { lm, cross: lm.cross_kv(text, speaker), cache: KvCache::new(cfg.n_blocks, cfg.hidden_dim, cfg.max_audio_tokens) })
    }

    pub fn cache(&self) -> &KvCache<F> {
        &self.cache
    }

    /// Feeds one token at the next position and returns its logits row.
    pub fn step(&mut self, token: u32) -> Result<Vec<F>> {
        let pos = self.cache.len;
        let cfg = &self.lm.cfg;
        if pos >= cfg.max_audio_tokens {
            return Err(crate::Error::TooLong { got: pos + 1, max: cfg.max_audio_tokens });
        }
        if token as usize >= cfg.vocab {
            return Err(crate::Error::InvalidToken { id: token as usize, vocab: cfg.vocab });
        }
        let lm = self.lm;
        let nh = cfg.n_heads;
        let hd = cfg.head_dim();
        let scale = F::one() / F::from_usize(hd).expect("head dim").sqrt();
        let mut x = lm.embed(&[token], pos);
        for b in 0..cfg.n_blocks {
            let p = format!("b{b}.self");
            let q = lm.project(&x, &p, 'q');
            let k = lm.project(&x, &p, 'k');
            let v = lm.project(&x, &p, 'v');
            self.cache.keys[b].row_mut(pos).copy_from_slice(k.row(0));
            self.cache.values[b].row_mut(pos).copy_from_slice(v.row(0));
            let keys = self.cache.keys[b].slice_rows(0, pos + 1);
            let values = self.cache.values[b].slice_rows(0, pos + 1);
            let mut o = Tensor::zeros(1, cfg.hidden_dim);
            for h in 0..nh {
                let off = h * hd;
                let mut out = vec![F::zero(); hd];
                nn::attend_row(&q.row(0)[off..off + hd], &keys, &values, pos + 1, off, hd, scale, &mut out);
                o.row_mut(0)[off..off + hd].copy_from_slice(&out);
            }
            let sa = lm.project(&o, &p, 'o');
            x = lm.block_tail(b, &x, &sa, &self.cross[b]);
        }
        self.cache.len += 1;
        Ok(lm.head(&x).into_data())
    }
}

/// Picks the next token. SOS and PAD are never produced.
pub fn sample_token<F: Real>(logits: &[F], sampling: Sampling, rng: &mut impl Rng) -> u32 {
    let allowed = |i: usize| i as u32 != SOS && i as u32 != PAD;
    match sampling {
        Sampling::Greedy => {
            let mut best = (0usize, F::neg_infinity());
            for (i, &l) in logits.iter().enumerate() {
                if allowed(i) && l > best.1 {
                    best = (i, l);
                }
            }
            best.0 as u32
        }
        Sampling::TopK { k, temperature } => {
            let temp = temperature.max(1e-6);
            let mut cand: Vec<(usize, f64)> =
                logits.iter().enumerate().filter(|(i, _)| allowed(*i)).map(|(i, &l)| (i, l.to_f64().unwrap_or(f64::NEG_INFINITY) / temp)).collect();
            cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            cand.truncate(k.max(1));
            let m = cand[0].1;
            let weights: Vec<f64> = cand.iter().map(|(_, l)| (l - m).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            for ((i, _), w) in cand.iter().zip(&weights) {
                if u < *w {
                    return *i as u32;
                }
                u -= w;
            }
            cand.last().expect("non-empty").0 as u32
        }
    }
}

impl<F: Real> LmNet<F> {
    /// Autoregressive decoding from SOS until EOS or `max_audio_tokens` tokens.
    /// The result holds audio tokens only.
    pub fn generate_raw(&self, text: &Tensor<F>, speaker: &Tensor<F>, sampling: Sampling, seed: u64) -> Result<TokenSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut session = Session::new(self, text, speaker)?;
        let mut out = Vec::new();
        let mut token = SOS;
        while out.len() < self.cfg.max_audio_tokens {
            let logits = session.step(token)?;
            token = sample_token(&logits, sampling, &mut rng);
            if token == EOS {
                break;
            }
            out.push(token);
        }
        TokenSequence::audio(out)
    }
}

impl LmNet<f32> {
    pub fn generate(&self, text: &TextEncoding, speaker: &SpeakerEmbeddingSequence, sampling: Sampling, seed: u64) -> Result<TokenSequence> {
        self.generate_raw(&text.embeddings, &speaker.frames, sampling, seed)
    }
}
