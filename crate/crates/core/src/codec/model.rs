//! Convolutional encoder (stride product 294), RVQ bottleneck, and a decoder
//! that maps stage-0 code embeddings to one 80-bin mel frame per token.

use super::rvq::{rvq_quantize, RvqCodebooks, CODEBOOK_SIZE, N_CODEBOOKS};
use crate::audio::{MelSpectrogram, Waveform, HOP, N_MELS};
use crate::checkpoint::{self, KeyValues};
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, ParamStore, Real, Tensor};
use crate::tokens::{TokenSequence, AUDIO_VOCAB};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Per-stage encoder strides; their product is the hop (294 samples).
pub const ENCODER_STRIDES: [usize; 4] = [2, 3, 7, 7];
const LEAK: f64 = 0.1;
pub(crate) const CHECKPOINT_KIND: &str = "codec";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodecConfig {
    pub code_dim: usize,
    pub enc_channels: [usize; 4],
    pub dec_hidden: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { code_dim: 64, enc_channels: [32, 32, 64, 64], dec_hidden: 128, seed: 0xC0DEC }
    }
}

impl CodecConfig {
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("code_dim", self.code_dim);
        kv.set("enc_channels", self.enc_channels.map(|c| c.to_string()).join(","));
        kv.set("dec_hidden", self.dec_hidden);
        kv.set("seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let ch: Vec<usize> = kv
            .require::<String>("enc_channels")?
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Checkpoint(format!("bad enc_channels entry {s:?}"))))
            .collect::<Result<_>>()?;
        let enc_channels: [usize; 4] = ch.try_into().map_err(|_| Error::Checkpoint("enc_channels needs 4 entries".into()))?;
        Ok(Self { code_dim: kv.require("code_dim")?, enc_channels, dec_hidden: kv.require("dec_hidden")?, seed: kv.require("seed")? })
    }
}

/// `[n_frames × 4]` codes at 75 frames per second.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeMatrix {
    pub codes: Vec<[u32; N_CODEBOOKS]>,
}

impl CodeMatrix {
    pub fn n_frames(&self) -> usize {
        self.codes.len()
    }

    pub fn frame_rate(&self) -> usize {
        crate::audio::FRAME_RATE
    }

    /// One frame per line, four space-separated ids.
    pub fn to_text(&self) -> String {
        self.codes.iter().map(|c| format!("{} {} {} {}\n", c[0], c[1], c[2], c[3])).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut codes = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ids: Vec<u32> = line
                .split_whitespace()
                .map(|t| t.parse().ok().filter(|&v| v < CODEBOOK_SIZE as u32).ok_or(Error::Parse { line: i + 1, msg: format!("bad code {t:?}") }))
                .collect::<Result<_>>()?;
            let frame: [u32; N_CODEBOOKS] = ids.try_into().map_err(|_| Error::Parse { line: i + 1, msg: format!("expected {N_CODEBOOKS} codes") })?;
            codes.push(frame);
        }
        Ok(Self { codes })
    }
}

/// Column 0 of the code matrix as an audio token sequence (no SOS/EOS).
pub fn select_first_codebook(m: &CodeMatrix) -> TokenSequence {
    TokenSequence::audio(m.codes.iter().map(|c| c[0]).collect()).expect("codes are audio ids")
}

/// Codec frames produced for `num_samples` input samples.
pub fn codec_frame_count(num_samples: usize) -> usize {
    num_samples / HOP
}

/// Network weights, generic so the same forward runs in f32 and f64.
#[derive(Debug)]
pub struct CodecNet<F> {
    pub cfg: CodecConfig,
    pub params: ParamStore<F>,
}

impl<F: Real> Clone for CodecNet<F> {
    fn clone(&self) -> Self {
        Self { cfg: self.cfg.clone(), params: self.params.clone() }
    }
}

pub(crate) fn book_name(k: usize) -> String {
    format!("rvq.{k}")
}

impl<F: Real> CodecNet<F> {
    pub fn new(cfg: CodecConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p = ParamStore::new();
        let mut c_in = 1;
        for (i, (&s, &c)) in ENCODER_STRIDES.iter().zip(&cfg.enc_channels).enumerate() {
            p.add_normal(format!("enc{i}.w"), c, c_in * s, (2.0 / (c_in * s) as f64).sqrt(), &mut rng);
            p.add_zeros(format!("enc{i}.b"), c, 1);
            c_in = c;
        }
        p.add_normal("enc_proj.w", cfg.code_dim, c_in * 3, (1.0 / (c_in * 3) as f64).sqrt(), &mut rng);
        p.add_zeros("enc_proj.b", cfg.code_dim, 1);
        for k in 0..N_CODEBOOKS {
            let id = p.add_normal(book_name(k), CODEBOOK_SIZE, cfg.code_dim, 0.1 / (k + 1) as f64, &mut rng);
            p.get_mut(id).row_mut(0).iter_mut().for_each(|v| *v = F::zero());
        }
        let h = cfg.dec_hidden;
        p.add_normal("dec0.w", h, cfg.code_dim * 3, (2.0 / (cfg.code_dim * 3) as f64).sqrt(), &mut rng);
        p.add_zeros("dec0.b", h, 1);
        p.add_normal("dec1.w", h, h * 3, (2.0 / (h * 3) as f64).sqrt(), &mut rng);
        p.add_zeros("dec1.b", h, 1);
        p.add_normal("dec_out.w", N_MELS, h, (1.0 / h as f64).sqrt(), &mut rng);
        p.add("dec_out.b", Tensor::full(N_MELS, 1, F::from_f64c(-5.0)));
        Self { cfg, params: p }
    }

    pub fn cast<G: Real>(&self) -> CodecNet<G> {
        CodecNet { cfg: self.cfg.clone(), params: self.params.cast() }
    }

    pub fn book(&self, k: usize) -> &Tensor<F> {
        self.params.get(self.params.id(&book_name(k)).expect("codebook"))
    }

    /// Encoder on a `[1 × N]` waveform node; returns `[T × code_dim]` latents
    /// with `T = floor(N / 294)`.
    pub fn encode_graph(&self, g: &mut Graph<F>, wave: NodeId, trainable: bool) -> NodeId {
        let mut h = wave;
        for (i, &s) in ENCODER_STRIDES.iter().enumerate() {
            let w = g.weight(&self.params, &format!("enc{i}.w"), trainable);
            let b = g.weight(&self.params, &format!("enc{i}.b"), trainable);
            h = g.conv1d(h, w, s, s, 0);
            h = g.add_col(h, b);
            h = g.leaky_relu(h, F::from_f64c(LEAK));
        }
        let w = g.weight(&self.params, "enc_proj.w", trainable);
        let b = g.weight(&self.params, "enc_proj.b", trainable);
        let z = g.conv1d(h, w, 3, 1, 1);
        let z = g.add_col(z, b);
        g.transpose(z)
    }

    /// Decoder on `[T × code_dim]` code embeddings; returns `[T × 80]` log-mel frames.
    pub fn decode_graph(&self, g: &mut Graph<F>, emb: NodeId, trainable: bool) -> NodeId {
        let h = g.transpose(emb);
        let mut h = h;
        for name in ["dec0", "dec1"] {
            let w = g.weight(&self.params, &format!("{name}.w"), trainable);
            let b = g.weight(&self.params, &format!("{name}.b"), trainable);
            h = g.conv1d(h, w, 3, 1, 1);
            h = g.add_col(h, b);
            h = g.gelu(h);
        }
        let w = g.weight(&self.params, "dec_out.w", trainable);
        let b = g.weight(&self.params, "dec_out.b", trainable);
        let m = g.conv1d(h, w, 1, 1, 0);
        let m = g.add_col(m, b);
        g.transpose(m)
    }

    /// Decoder input from a distribution over the 1024 stage-0 entries
    /// (`probs: [T × 1024]`): the probability-weighted codebook vector.
    pub fn soft_embedding_graph(&self, g: &mut Graph<F>, probs: NodeId, trainable: bool) -> NodeId {
        let book = g.weight(&self.params, &book_name(0), trainable);
        g.matmul(probs, book)
    }

    /// RVQ ids for every latent row (computed in f32).
    pub fn assign_codes(&self, latents: &Tensor<F>) -> Vec<Vec<usize>> {
        let books: Vec<Tensor<f32>> = (0..N_CODEBOOKS).map(|k| self.book(k).cast()).collect();
        let lat: Tensor<f32> = latents.cast();
        (0..lat.rows()).map(|t| rvq_quantize(lat.row(t), &books).ids).collect()
    }
}

/// Loss terms of one codec training example.
pub struct CodecLossNodes {
    pub recon: NodeId,
    pub total: NodeId,
}

/// Values the codec loss treats as constants (stop-gradient): the RVQ
/// assignment, the selected entries, the stage residuals and the
/// straight-through offset.
#[derive(Clone, Debug)]
pub struct CodecDetached<F> {
    pub codes: Vec<Vec<usize>>,
    entries: Vec<Tensor<F>>,
    residuals: Vec<Tensor<F>>,
    offset: Tensor<F>,
}

impl<F: Real> CodecDetached<F> {
    /// Snapshot at the current weights. `codes` fixes the assignment;
    /// otherwise it is the nearest-entry one.
    pub fn capture(net: &CodecNet<F>, wave: &Tensor<F>, codes: Option<&[Vec<usize>]>) -> Self {
        let mut g = Graph::new();
        let x = g.constant(wave.clone());
        let z = net.encode_graph(&mut g, x, false);
        let z = g.value(z).clone();
        let codes = codes.map(<[_]>::to_vec).unwrap_or_else(|| net.assign_codes(&z));
        assert_eq!(codes.len(), z.rows(), "code assignment length");
        let mut residual = z.clone();
        let mut entries = Vec::with_capacity(N_CODEBOOKS);
        let mut residuals = Vec::with_capacity(N_CODEBOOKS);
        for k in 0..N_CODEBOOKS {
            let book = net.book(k);
            let e = Tensor::from_fn(z.rows(), z.cols(), |t, c| book.get(codes[t][k], c));
            residuals.push(residual.clone());
            residual = residual.zip_map(&e, |r, e| r - e);
            entries.push(e);
        }
        let offset = entries[0].zip_map(&z, |e, zz| e - zz);
        Self { codes, entries, residuals, offset }
    }
}

/// Mel L1 reconstruction through a straight-through stage-0 quantizer plus
/// codebook and commitment terms over all four stages.
///
/// Stop-gradient quantities come from `detached` when given, so the graph is
/// a smooth function of the weights around the capture point (used by the
/// gradient check); otherwise they are taken at the current weights.
pub fn codec_loss_graph<F: Real>(
    net: &CodecNet<F>,
    g: &mut Graph<F>,
    wave: &Tensor<F>,
    target_mel: &Tensor<F>,
    detached: Option<&CodecDetached<F>>,
) -> CodecLossNodes {
    let owned;
    let d = match detached {
        Some(d) => d,
        None => {
            owned = CodecDetached::capture(net, wave, None);
            &owned
        }
    };
    let x = g.constant(wave.clone());
    let z = net.encode_graph(g, x, true);
    let t = g.value(z).rows();
    assert_eq!(d.codes.len(), t, "code assignment length");

    let mut residual = z;
    let mut vq = None;
    for k in 0..N_CODEBOOKS {
        let ids: Vec<usize> = d.codes.iter().map(|c| c[k]).collect();
        let book = g.weight(&net.params, &book_name(k), true);
        let e = g.gather(book, &ids);
        let e_const = g.constant(d.entries[k].clone());
        let r_const = g.constant(d.residuals[k].clone());
        let cb = g.mean_squared_diff(r_const, e);
        let commit = g.mean_squared_diff(residual, e_const);
        let commit = g.scale(commit, F::from_f64c(0.25));
        let term = g.add(cb, commit);
        vq = Some(match vq {
            None => term,
            Some(acc) => g.add(acc, term),
        });
        residual = g.sub(residual, e_const);
    }
    // straight-through: value of the stage-0 code, gradient of the latent
    let offset = g.constant(d.offset.clone());
    let q = g.add(z, offset);
    let mel = net.decode_graph(g, q, true);
    let target = g.constant(target_mel.slice_rows(0, t));
    let recon = g.mean_abs_diff(mel, target);
    let total = g.add(recon, vq.expect("stages"));
    CodecLossNodes { recon, total }
}

/// A trained, frozen codec.
#[derive(Clone, Debug)]
pub struct NeuralCodec {
    net: CodecNet<f32>,
}

impl NeuralCodec {
    pub fn from_net(net: CodecNet<f32>) -> Self {
        Self { net }
    }

    /// Untrained codec with seeded weights.
    pub fn untrained(cfg: CodecConfig) -> Self {
        Self { net: CodecNet::new(cfg) }
    }

    pub fn net(&self) -> &CodecNet<f32> {
        &self.net
    }

    pub fn config(&self) -> &CodecConfig {
        &self.net.cfg
    }

    pub fn checksum(&self) -> String {
        self.net.params.checksum()
    }

    pub fn codebooks(&self) -> RvqCodebooks {
        RvqCodebooks::new((0..N_CODEBOOKS).map(|k| self.net.book(k).clone()).collect()).expect("codec keeps valid codebooks")
    }

    /// `[floor(N/294) × code_dim]` continuous latents.
    pub fn latents(&self, w: &Waveform) -> Result<Tensor<f32>> {
        if w.len() < HOP {
            return Err(Error::AudioTooShort { got: w.len(), need: HOP });
        }
        let mut g = Graph::new();
        let x = g.constant(w.to_tensor());
        let z = self.net.encode_graph(&mut g, x, false);
        Ok(g.value(z).clone())
    }

    pub fn encode_audio(&self, w: &Waveform) -> Result<CodeMatrix> {
        let z = self.latents(w)?;
        let books = self.codebooks();
        let codes = (0..z.rows())
            .map(|t| {
                let c = books.quantize(z.row(t));
                [c.ids[0] as u32, c.ids[1] as u32, c.ids[2] as u32, c.ids[3] as u32]
            })
            .collect();
        Ok(CodeMatrix { codes })
    }

    /// One mel frame per audio token; special tokens are rejected.
    pub fn decode_tokens(&self, seq: &TokenSequence) -> Result<MelSpectrogram> {
        if let Some(&t) = seq.tokens().iter().find(|&&t| t >= AUDIO_VOCAB) {
            return Err(Error::SpecialToken(t as usize));
        }
        if seq.is_empty() {
            return Ok(MelSpectrogram::new(Tensor::zeros(0, N_MELS)));
        }
        let ids: Vec<usize> = seq.tokens().iter().map(|&t| t as usize).collect();
        let mut g = Graph::new();
        let book = g.weight(&self.net.params, &book_name(0), false);
        let emb = g.gather(book, &ids);
        let mel = self.net.decode_graph(&mut g, emb, false);
        Ok(MelSpectrogram::new(g.value(mel).clone()))
    }

    /// Writes `<path>` (tensor container) and `<path>.cfg` (config).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        checkpoint::write_file(path, &checkpoint::encode_tensors(CHECKPOINT_KIND, &self.net.params))?;
        self.net.cfg.to_kv().save(checkpoint::config_path(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let cfg = CodecConfig::from_kv(&KeyValues::load(checkpoint::config_path(path))?)?;
        let mut net = CodecNet::<f32>::new(cfg);
        let tensors = checkpoint::decode_tensors(&checkpoint::read_file(path)?, CHECKPOINT_KIND)?;
        checkpoint::load_into(&mut net.params, tensors)?;
        Ok(Self { net })
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;

    fn tone(secs: f64) -> Waveform {
        let n = (secs * SAMPLE_RATE as f64).round() as usize;
        Waveform::new((0..n).map(|i| 0.3 * (i as f32 * 0.05).sin()).collect(), SAMPLE_RATE).unwrap()
    }

    #[test]
    fn frame_arithmetic() {
        let codec = NeuralCodec::untrained(CodecConfig::default());
        let m = codec.encode_audio(&tone(10.0)).unwrap();
        assert_eq!(m.n_frames(), 750);
        assert_eq!(select_first_codebook(&m).len(), 750);
        assert_eq!(codec.encode_audio(&tone(1.0)).unwrap().n_frames(), 75);
        assert_eq!(codec.encode_audio(&tone(1.0)).unwrap(), codec.encode_audio(&tone(1.0)).unwrap());
        assert!(matches!(codec.encode_audio(&tone(0.01)), Err(Error::AudioTooShort { .. })));
    }

    #[test]
    fn first_codebook_projection() {
        let m = CodeMatrix { codes: vec![[3, 9, 1, 0], [1023, 4, 4, 4]] };
        assert_eq!(select_first_codebook(&m).tokens(), &[3, 1023]);
        assert!(select_first_codebook(&CodeMatrix { codes: vec![] }).is_empty());
    }

    #[test]
    fn decode_one_frame_per_token() {
        let codec = NeuralCodec::untrained(CodecConfig::default());
        let seq = TokenSequence::audio((0..750).map(|i| (i * 7 % 1024) as u32).collect()).unwrap();
        let mel = codec.decode_tokens(&seq).unwrap();
        assert_eq!((mel.n_frames(), mel.n_mels()), (750, 80));
        assert_eq!(mel, codec.decode_tokens(&seq).unwrap());
        assert_eq!(codec.decode_tokens(&TokenSequence::default()).unwrap().n_frames(), 0);
        let special = TokenSequence::new(vec![1, crate::tokens::EOS]).unwrap();
        assert!(matches!(codec.decode_tokens(&special), Err(Error::SpecialToken(_))));
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let codec = NeuralCodec::untrained(CodecConfig { seed: 5, ..CodecConfig::default() });
        let path = dir.path().join("codec.bin");
        codec.save(&path).unwrap();
        let back = NeuralCodec::load(&path).unwrap();
        assert_eq!(back.checksum(), codec.checksum());
        assert_eq!(back.config(), codec.config());
    }
}
