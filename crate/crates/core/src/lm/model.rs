//! Decoder-only transformer over audio tokens with masked self-attention,
//! text cross-attention and speaker cross-attention in every block.
//!
//! Block layout (post-norm):
//!
//! ```text
//! a = LN1(x + SelfAttn(x))
//! b = LN2(a + CrossAttn(a, text))
//! c = b + CrossAttn(b, speaker)
//! y = LN3(c + W2 gelu(W1 c))
//! ```

use super::config::LmConfig;
use crate::checkpoint::{self, KeyValues};
use crate::error::{Error, Result};
use crate::nn;
use crate::tensor::{Graph, NodeId, ParamStore, Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub(crate) const CHECKPOINT_KIND: &str = "codec-lm";
const INIT_STD: f64 = 0.02;

#[derive(Debug)]
pub struct LmNet<F> {
    pub cfg: LmConfig,
    pub params: ParamStore<F>,
}

impl<F: Real> Clone for LmNet<F> {
    fn clone(&self) -> Self {
        Self { cfg: self.cfg.clone(), params: self.params.clone() }
    }
}

/// The f32 model used for training and inference.
pub type CodecLm = LmNet<f32>;

fn add_attention<F: Real>(p: &mut ParamStore<F>, prefix: &str, h: usize, kv_in: usize, resid_std: f64, rng: &mut ChaCha8Rng) {
    p.add_normal(format!("{prefix}.wq"), h, h, INIT_STD, rng);
    p.add_zeros(format!("{prefix}.bq"), 1, h);
    p.add_normal(format!("{prefix}.wk"), kv_in, h, INIT_STD, rng);
    p.add_zeros(format!("{prefix}.bk"), 1, h);
    p.add_normal(format!("{prefix}.wv"), kv_in, h, INIT_STD, rng);
    p.add_zeros(format!("{prefix}.bv"), 1, h);
    p.add_normal(format!("{prefix}.wo"), h, h, resid_std, rng);
    p.add_zeros(format!("{prefix}.bo"), 1, h);
}

impl<F: Real> LmNet<F> {
    pub fn new(cfg: LmConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let h = cfg.hidden_dim;
        let resid_std = INIT_STD / (2.0 * cfg.n_blocks as f64).sqrt();
        let mut p = ParamStore::new();
        p.add_normal("tok_emb", cfg.vocab, h, INIT_STD, &mut rng);
        p.add_normal("pos_emb", cfg.max_audio_tokens, h, INIT_STD, &mut rng);
        for b in 0..cfg.n_blocks {
            add_attention(&mut p, &format!("b{b}.self"), h, h, resid_std, &mut rng);
            p.add_ones(format!("b{b}.ln1.g"), 1, h);
            p.add_zeros(format!("b{b}.ln1.b"), 1, h);
            add_attention(&mut p, &format!("b{b}.text"), h, h, resid_std, &mut rng);
            p.add_ones(format!("b{b}.ln2.g"), 1, h);
            p.add_zeros(format!("b{b}.ln2.b"), 1, h);
            add_attention(&mut p, &format!("b{b}.spk"), h, cfg.d_spk, resid_std, &mut rng);
            p.add_normal(format!("b{b}.ff1.w"), h, cfg.ffn_dim, INIT_STD, &mut rng);
            p.add_zeros(format!("b{b}.ff1.b"), 1, cfg.ffn_dim);
            p.add_normal(format!("b{b}.ff2.w"), cfg.ffn_dim, h, resid_std, &mut rng);
            p.add_zeros(format!("b{b}.ff2.b"), 1, h);
            p.add_ones(format!("b{b}.ln3.g"), 1, h);
            p.add_zeros(format!("b{b}.ln3.b"), 1, h);
        }
        p.add_normal("head.w", h, cfg.vocab, INIT_STD, &mut rng);
        p.add_zeros("head.b", 1, cfg.vocab);
        Ok(Self { cfg, params: p })
    }

    pub fn cast<G: Real>(&self) -> LmNet<G> {
        LmNet { cfg: self.cfg.clone(), params: self.params.cast() }
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    pub(crate) fn w(&self, name: &str) -> &Tensor<F> {
        self.params.get(self.params.id(name).unwrap_or_else(|| panic!("unknown parameter {name}")))
    }

    /// Checks token ids, sequence length and conditioning shapes.
    pub fn check_inputs(&self, tokens: &[u32], text: &Tensor<F>, speaker: &Tensor<F>) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("audio tokens"));
        }
        if tokens.len() > self.cfg.max_audio_tokens {
            return Err(Error::TooLong { got: tokens.len(), max: self.cfg.max_audio_tokens });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab) {
            return Err(Error::InvalidToken { id: t as usize, vocab: self.cfg.vocab });
        }
        if text.rows() == 0 || text.cols() != self.cfg.hidden_dim {
            return Err(Error::Shape(format!("text conditioning is {:?}, need [n>0 × {}]", text.shape(), self.cfg.hidden_dim)));
        }
        if text.rows() > self.cfg.max_text_tokens {
            return Err(Error::TooLong { got: text.rows(), max: self.cfg.max_text_tokens });
        }
        if speaker.rows() == 0 || speaker.cols() != self.cfg.d_spk {
            return Err(Error::Shape(format!("speaker conditioning is {:?}, need [n>0 × {}]", speaker.shape(), self.cfg.d_spk)));
        }
        Ok(())
    }

    // ---- differentiable path ----

    fn linear_graph(&self, g: &mut Graph<F>, x: NodeId, w: &str, b: &str, trainable: bool) -> NodeId {
        let w = g.weight(&self.params, w, trainable);
        let b = g.weight(&self.params, b, trainable);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    fn attention_graph(&self, g: &mut Graph<F>, prefix: &str, x: NodeId, kv: NodeId, causal: bool, trainable: bool) -> NodeId {
        let q = self.linear_graph(g, x, &format!("{prefix}.wq"), &format!("{prefix}.bq"), trainable);
        let k = self.linear_graph(g, kv, &format!("{prefix}.wk"), &format!("{prefix}.bk"), trainable);
        let v = self.linear_graph(g, kv, &format!("{prefix}.wv"), &format!("{prefix}.bv"), trainable);
        let hd = self.cfg.head_dim();
        let scale = F::one() / F::from_usize(hd).expect("head dim").sqrt();
        let heads: Vec<NodeId> = (0..self.cfg.n_heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * hd, hd);
                let kh = g.slice_cols(k, h * hd, hd);
                let vh = g.slice_cols(v, h * hd, hd);
                let s = g.matmul_t(qh, kh);
                let s = g.scale(s, scale);
                let p = g.softmax(s, causal);
                g.matmul(p, vh)
            })
            .collect();
        let o = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        self.linear_graph(g, o, &format!("{prefix}.wo"), &format!("{prefix}.bo"), trainable)
    }

    fn norm_graph(&self, g: &mut Graph<F>, x: NodeId, name: &str, trainable: bool) -> NodeId {
        let gain = g.weight(&self.params, &format!("{name}.g"), trainable);
        let bias = g.weight(&self.params, &format!("{name}.b"), trainable);
        g.layer_norm(x, gain, bias, F::from_f64c(nn::LN_EPS))
    }

    /// Hidden states `[T × H]` before the output head.
    pub fn hidden_graph(&self, g: &mut Graph<F>, tokens: &[u32], text: NodeId, speaker: NodeId, trainable: bool) -> NodeId {
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tok = g.weight(&self.params, "tok_emb", trainable);
        let pos = g.weight(&self.params, "pos_emb", trainable);
        let te = g.gather(tok, &ids);
        let pe = g.gather(pos, &positions);
        let mut x = g.add(te, pe);
        for b in 0..self.cfg.n_blocks {
            let sa = self.attention_graph(g, &format!("b{b}.self"), x, x, true, trainable);
            let a = g.add(x, sa);
            let a = self.norm_graph(g, a, &format!("b{b}.ln1"), trainable);
            let ct = self.attention_graph(g, &format!("b{b}.text"), a, text, false, trainable);
            let bb = g.add(a, ct);
            let bb = self.norm_graph(g, bb, &format!("b{b}.ln2"), trainable);
            let cs = self.attention_graph(g, &format!("b{b}.spk"), bb, speaker, false, trainable);
            let c = g.add(bb, cs);
            let f = self.linear_graph(g, c, &format!("b{b}.ff1.w"), &format!("b{b}.ff1.b"), trainable);
            let f = g.gelu(f);
            let f = self.linear_graph(g, f, &format!("b{b}.ff2.w"), &format!("b{b}.ff2.b"), trainable);
            let y = g.add(c, f);
            x = self.norm_graph(g, y, &format!("b{b}.ln3"), trainable);
        }
        x
    }

    /// Logits `[T × vocab]` as a graph node. Inputs must pass [`Self::check_inputs`].
    pub fn logits_graph(&self, g: &mut Graph<F>, tokens: &[u32], text: NodeId, speaker: NodeId, trainable: bool) -> NodeId {
        let x = self.hidden_graph(g, tokens, text, speaker, trainable);
        self.linear_graph(g, x, "head.w", "head.b", trainable)
    }

    // ---- inference path ----

    pub(crate) fn project(&self, x: &Tensor<F>, prefix: &str, which: char) -> Tensor<F> {
        nn::linear(x, self.w(&format!("{prefix}.w{which}")), self.w(&format!("{prefix}.b{which}")))
    }

    pub(crate) fn norm(&self, x: &Tensor<F>, name: &str) -> Tensor<F> {
        nn::layer_norm(x, self.w(&format!("{name}.g")), self.w(&format!("{name}.b")))
    }

    /// Embedding of `tokens` placed at positions `start..`.
    pub(crate) fn embed(&self, tokens: &[u32], start: usize) -> Tensor<F> {
        let tok = self.w("tok_emb");
        let pos = self.w("pos_emb");
        let h = self.cfg.hidden_dim;
        let mut x = Tensor::zeros(tokens.len(), h);
        for (i, &t) in tokens.iter().enumerate() {
            for ((o, &e), &p) in x.row_mut(i).iter_mut().zip(tok.row(t as usize)).zip(pos.row(start + i)) {
                *o = e + p;
            }
        }
        x
    }

    /// Rest of a block after self-attention output `sa` for input rows `x`,
    /// given per-block cross-attention keys/values.
    pub(crate) fn block_tail(&self, b: usize, x: &Tensor<F>, sa: &Tensor<F>, cross: &CrossKv<F>) -> Tensor<F> {
        let nh = self.cfg.n_heads;
        let mut a = sa.clone();
        a.add_assign(x);
        let a = self.norm(&a, &format!("b{b}.ln1"));
        let q = self.project(&a, &format!("b{b}.text"), 'q');
        let ct = nn::attention(&q, &cross.text_k, &cross.text_v, nh, false);
        let mut bb = self.project(&ct, &format!("b{b}.text"), 'o');
        bb.add_assign(&a);
        let bb = self.norm(&bb, &format!("b{b}.ln2"));
        let q = self.project(&bb, &format!("b{b}.spk"), 'q');
        let cs = nn::attention(&q, &cross.spk_k, &cross.spk_v, nh, false);
        let mut c = self.project(&cs, &format!("b{b}.spk"), 'o');
        c.add_assign(&bb);
        let f = nn::gelu_tensor(&nn::linear(&c, self.w(&format!("b{b}.ff1.w")), self.w(&format!("b{b}.ff1.b"))));
        let mut y = nn::linear(&f, self.w(&format!("b{b}.ff2.w")), self.w(&format!("b{b}.ff2.b")));
        y.add_assign(&c);
        self.norm(&y, &format!("b{b}.ln3"))
    }

    pub(crate) fn head(&self, x: &Tensor<F>) -> Tensor<F> {
        nn::linear(x, self.w("head.w"), self.w("head.b"))
    }

    /// Cross-attention keys and values for every block; computed once per
    /// conditioning pair.
    pub fn cross_kv(&self, text: &Tensor<F>, speaker: &Tensor<F>) -> Vec<CrossKv<F>> {
        (0..self.cfg.n_blocks)
            .map(|b| CrossKv {
                text_k: self.project(text, &format!("b{b}.text"), 'k'),
                text_v: self.project(text, &format!("b{b}.text"), 'v'),
                spk_k: self.project(speaker, &format!("b{b}.spk"), 'k'),
                spk_v: self.project(speaker, &format!("b{b}.spk"), 'v'),
            })
            .collect()
    }

    /// Full-sequence logits `[T × vocab]` without a graph.
    pub fn forward(&self, tokens: &[u32], text: &Tensor<F>, speaker: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_inputs(tokens, text, speaker)?;
        let cross = self.cross_kv(text, speaker);
        let mut x = self.embed(tokens, 0);
        for (b, ckv) in cross.iter().enumerate() {
            let p = format!("b{b}.self");
            let q = self.project(&x, &p, 'q');
            let k = self.project(&x, &p, 'k');
            let v = self.project(&x, &p, 'v');
            let o = nn::attention(&q, &k, &v, self.cfg.n_heads, true);
            let sa = self.project(&o, &p, 'o');
            x = self.block_tail(b, &x, &sa, ckv);
        }
        Ok(self.head(&x))
    }
}

/// Per-block cross-attention keys/values.
#[derive(Clone, Debug)]
pub struct CrossKv<F> {
    pub text_k: Tensor<F>,
    pub text_v: Tensor<F>,
    pub spk_k: Tensor<F>,
    pub spk_v: Tensor<F>,
}

impl CodecLm {
    /// Writes `<path>` (tensor container) and `<path>.cfg`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        checkpoint::write_file(path, &checkpoint::encode_tensors(CHECKPOINT_KIND, &self.params))?;
        self.cfg.to_kv().save(checkpoint::config_path(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let cfg = LmConfig::from_kv(&KeyValues::load(checkpoint::config_path(path))?)?;
        let mut net = Self::new(cfg)?;
        let tensors = checkpoint::decode_tensors(&checkpoint::read_file(path)?, CHECKPOINT_KIND)?;
        checkpoint::load_into(&mut net.params, tensors)?;
        Ok(net)
    }
}
