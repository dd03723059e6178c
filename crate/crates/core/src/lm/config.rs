use crate::checkpoint::KeyValues;
use crate::error::{Error, Result};
use crate::speaker::D_SPK;
use crate::text::MAX_TEXT_TOKENS;
use crate::tokens::LM_VOCAB;

/// Longest audio token sequence the model accepts or generates.
pub const MAX_AUDIO_TOKENS: usize = 604;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LmConfig {
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub ffn_dim: usize,
    pub vocab: usize,
    pub max_audio_tokens: usize,
    pub max_text_tokens: usize,
    pub d_spk: usize,
    pub seed: u64,
}

impl LmConfig {
    /// Model with the default feed-forward width of `4 × hidden_dim`.
    pub fn new(hidden_dim: usize, n_heads: usize, n_blocks: usize) -> Self {
        Self {
            hidden_dim,
            n_heads,
            n_blocks,
            ffn_dim: 4 * hidden_dim,
            vocab: LM_VOCAB,
            max_audio_tokens: MAX_AUDIO_TOKENS,
            max_text_tokens: MAX_TEXT_TOKENS,
            d_spk: D_SPK,
            seed: 0x1A,
        }
    }

    pub fn small() -> Self {
        Self::new(512, 4, 6)
    }

    pub fn medium() -> Self {
        Self::new(768, 8, 13)
    }

    pub fn large() -> Self {
        Self::new(1024, 16, 26)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "S" => Some(Self::small()),
            "M" => Some(Self::medium()),
            "L" => Some(Self::large()),
            _ => None,
        }
    }

    pub fn with_ffn(mut self, ffn_dim: usize) -> Self {
        self.ffn_dim = ffn_dim;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.n_heads == 0 || self.n_blocks == 0 || self.ffn_dim == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        if self.hidden_dim % self.n_heads != 0 {
            return Err(Error::InvalidArgument(format!("hidden_dim {} not divisible by n_heads {}", self.hidden_dim, self.n_heads)));
        }
        if self.vocab != LM_VOCAB {
            return Err(Error::InvalidArgument(format!("vocab must be {LM_VOCAB}")));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("hidden_dim", self.hidden_dim);
        kv.set("n_heads", self.n_heads);
        kv.set("n_blocks", self.n_blocks);
        kv.set("ffn_dim", self.ffn_dim);
        kv.set("vocab", self.vocab);
        kv.set("max_audio_tokens", self.max_audio_tokens);
        kv.set("max_text_tokens", self.max_text_tokens);
        kv.set("d_spk", self.d_spk);
        kv.set("seed", self.seed);
        kv
    }

    /// Reads a config; a `preset` key supplies defaults that other keys override.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = match kv.get_str("preset") {
            Some(p) => Self::preset(p).ok_or_else(|| Error::InvalidArgument(format!("unknown preset {p:?}")))?,
            None => Self::new(kv.require("hidden_dim")?, kv.require("n_heads")?, kv.require("n_blocks")?),
        };
        if let Some(v) = kv.get("hidden_dim")? {
            cfg.hidden_dim = v;
            cfg.ffn_dim = 4 * v;
        }
        if let Some(v) = kv.get("n_heads")? {
            cfg.n_heads = v;
        }
        if let Some(v) = kv.get("n_blocks")? {
            cfg.n_blocks = v;
        }
        if let Some(v) = kv.get("ffn_dim")? {
            cfg.ffn_dim = v;
        }
        if let Some(v) = kv.get("seed")? {
            cfg.seed = v;
        }
        for (key, want) in [("vocab", LM_VOCAB), ("max_audio_tokens", MAX_AUDIO_TOKENS), ("max_text_tokens", MAX_TEXT_TOKENS), ("d_spk", D_SPK)] {
            if let Some(v) = kv.get::<usize>(key)? {
                if v != want {
                    return Err(Error::InvalidArgument(format!("{key} must be {want}, got {v}")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exact number of trainable scalars in the language model.
pub fn count_parameters(cfg: &LmConfig) -> usize {
    let h = cfg.hidden_dim;
    let proj = |i: usize| i * h + h;
    let self_attn = 4 * proj(h);
    let text_attn = 4 * proj(h);
    let spk_attn = 2 * proj(h) + 2 * proj(cfg.d_spk);
    let norms = 3 * 2 * h;
    let ffn = cfg.ffn_dim * h + cfg.ffn_dim + h * cfg.ffn_dim + h;
    let block = self_attn + text_attn + spk_attn + norms + ffn;
    let embeddings = cfg.vocab * h + cfg.max_audio_tokens * h;
    let head = h * cfg.vocab + cfg.vocab;
    embeddings + cfg.n_blocks * block + head
}
