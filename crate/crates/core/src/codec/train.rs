use super::model::{book_name, codec_loss_graph, CodecConfig, CodecNet, NeuralCodec};
use super::rvq::{rvq_quantize, CODEBOOK_SIZE, N_CODEBOOKS};
use crate::audio::{mel_spectrogram, Waveform, HOP};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};
use crate::training::optim::{AdamW, AdamWConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct CodecTrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Upper bound on the training crop, in codec frames.
    pub max_crop_frames: usize,
    pub seed: u64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self { steps: 200, lr: 1e-3, max_crop_frames: 150, seed: 7 }
    }
}

/// Per-step losses of a codec run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CodecTrainLog {
    pub recon: Vec<f64>,
    pub total: Vec<f64>,
}

/// Hop-aligned crop of at most `max_frames` frames.
fn aligned_crop(w: &Waveform, max_frames: usize, rng: &mut impl Rng) -> Waveform {
    let frames = w.len() / HOP;
    let n = frames.min(max_frames).max(1);
    let start = rng.gen_range(0..=frames - n) * HOP;
    w.slice(start, n * HOP)
}

/// Fills codebook entries 1.. from encoder latents of the corpus, stage by
/// stage on the running residuals, so every entry starts near real data.
fn init_codebooks(net: &mut CodecNet<f32>, corpus: &[Waveform], rng: &mut ChaCha8Rng) -> Result<()> {
    let codec = NeuralCodec::from_net(net.clone());
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for w in corpus {
        let z = codec.latents(w)?;
        rows.extend((0..z.rows()).map(|t| z.row(t).to_vec()));
    }
    let dim = net.cfg.code_dim;
    let mut residuals = rows;
    for k in 0..N_CODEBOOKS {
        let mut book = Tensor::zeros(CODEBOOK_SIZE, dim);
        let scale = residuals.iter().flatten().map(|v| v.abs()).sum::<f32>() / (residuals.len() * dim).max(1) as f32;
        for e in 1..CODEBOOK_SIZE {
            let src = &residuals[rng.gen_range(0..residuals.len())];
            for (o, &v) in book.row_mut(e).iter_mut().zip(src) {
                *o = v + 0.05 * scale * rng.gen_range(-1.0f32..1.0);
            }
        }
        for r in residuals.iter_mut() {
            let id = rvq_quantize(r, std::slice::from_ref(&book)).ids[0];
            for (v, &e) in r.iter_mut().zip(book.row(id)) {
                *v -= e;
            }
        }
        let id = net.params.id(&book_name(k)).expect("codebook");
        *net.params.get_mut(id) = book;
    }
    Ok(())
}

fn zero_first_entries(net: &mut CodecNet<f32>) {
    for k in 0..N_CODEBOOKS {
        let id = net.params.id(&book_name(k)).expect("codebook");
        net.params.get_mut(id).row_mut(0).iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Trains encoder, codebooks and decoder on random hop-aligned crops.
pub fn train_codec(corpus: &[Waveform], cfg: CodecConfig, tcfg: &CodecTrainConfig) -> Result<(NeuralCodec, CodecTrainLog)> {
    let corpus: Vec<&Waveform> = corpus.iter().filter(|w| w.len() >= HOP).collect();
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut net = CodecNet::<f32>::new(cfg);
    let owned: Vec<Waveform> = corpus.iter().map(|w| (*w).clone()).collect();
    init_codebooks(&mut net, &owned, &mut rng)?;
    let mut opt = AdamW::new(&net.params, AdamWConfig { weight_decay: 0.0, ..Default::default() });
    let mut log = CodecTrainLog::default();
    for step in 0..tcfg.steps {
        let w = corpus.choose(&mut rng).expect("non-empty");
        let crop = aligned_crop(w, tcfg.max_crop_frames, &mut rng);
        let mel = mel_spectrogram(&crop).frames;
        let mut g = Graph::new();
        let nodes = codec_loss_graph(&net, &mut g, &crop.to_tensor(), &mel, None);
        let total = g.value(nodes.total).item() as f64;
        let recon = g.value(nodes.recon).item() as f64;
        if !total.is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = g.backward(nodes.total).dense_for(&net.params);
        opt.step(&mut net.params, &grads, tcfg.lr);
        zero_first_entries(&mut net);
        if !net.params.all_finite() {
            return Err(Error::Diverged { step });
        }
        log.recon.push(recon);
        log.total.push(total);
    }
    Ok((NeuralCodec::from_net(net), log))
}
