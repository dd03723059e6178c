//! Teacher-forced training of the codec language model with gradient
//! accumulation, frozen-module auditing and a per-step loss log.

use super::losses::{loss_total, lr_at, LossBreakdown};
use super::optim::AdamW;
use super::TrainConfig;
use crate::audio::{MelSpectrogram, Waveform, HOP};
use crate::codec::{CodecNet, NeuralCodec};
use crate::error::{Error, Result};
use crate::lm::{CodecLm, LmNet};
use crate::speaker::{SpeakerEmbeddingSequence, SpeakerEncoder};
use crate::tensor::{Graph, NodeId, Real, Tensor};
use crate::text::{TextEncoder, TextEncoding};
use crate::tokens::{TokenSequence, AUDIO_VOCAB};
use crate::vocoder::{GanTrainer, VocoderNet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

/// One utterance prepared for teacher forcing.
#[derive(Clone, Debug)]
pub struct TrainingExample {
    /// Audio tokens (first codebook), without SOS/EOS.
    pub tokens: TokenSequence,
    pub text: TextEncoding,
    pub speaker: SpeakerEmbeddingSequence,
    /// `[n_tokens × 80]` ground-truth log-mel frames.
    pub target_mel: Tensor<f32>,
    /// `n_tokens × 294` samples of ground-truth audio.
    pub wave: Waveform,
}

impl TrainingExample {
    /// Truncates to at most `max_seq - 1` audio tokens so that the shifted input
    /// (SOS plus tokens) fits in `max_seq` positions.
    pub fn new(tokens: TokenSequence, text: TextEncoding, speaker: SpeakerEmbeddingSequence, mel: &MelSpectrogram, wave: &Waveform, max_seq: usize) -> Result<Self> {
        if !tokens.is_audio_only() {
            return Err(Error::InvalidArgument("training tokens must be audio ids".into()));
        }
        let n = tokens.len().min(max_seq.saturating_sub(1)).min(mel.n_frames()).min(wave.len() / HOP);
        if n == 0 {
            return Err(Error::EmptyInput("audio tokens"));
        }
        let tokens = TokenSequence::audio(tokens.tokens()[..n].to_vec())?;
        Ok(Self { tokens, text, speaker, target_mel: mel.frames.slice_rows(0, n), wave: wave.slice(0, n * HOP) })
    }

    pub fn tensors<F: Real>(&self) -> ExampleTensors<F> {
        let (input, target) = self.tokens.shifted_pair();
        ExampleTensors { input, target, text: self.text.embeddings.cast(), speaker: self.speaker.frames.cast(), target_mel: self.target_mel.cast() }
    }
}

/// Precision-generic view of a [`TrainingExample`].
#[derive(Clone, Debug)]
pub struct ExampleTensors<F> {
    pub input: Vec<u32>,
    pub target: Vec<u32>,
    pub text: Tensor<F>,
    pub speaker: Tensor<F>,
    pub target_mel: Tensor<F>,
}

pub struct LmLossNodes {
    pub logits: NodeId,
    pub ce: NodeId,
    /// Mel L1 through the frozen decoder, when a codec is supplied.
    pub mel: Option<NodeId>,
    pub pred_mel: Option<NodeId>,
}

/// Cross-entropy on the shifted targets and, with `codec`, the mel loss of the
/// decoder applied to the expected stage-0 code embedding under the model's
/// predicted distribution over audio ids. Codec weights stay constant.
pub fn lm_loss_graph<F: Real>(lm: &LmNet<F>, codec: Option<&CodecNet<F>>, g: &mut Graph<F>, ex: &ExampleTensors<F>, trainable: bool) -> LmLossNodes {
    let text = g.constant(ex.text.clone());
    let spk = g.constant(ex.speaker.clone());
    let logits = lm.logits_graph(g, &ex.input, text, spk, trainable);
    let targets: Vec<usize> = ex.target.iter().map(|&t| t as usize).collect();
    let mask: Vec<bool> = ex.target.iter().map(|&t| t != crate::tokens::PAD).collect();
    let ce = g.cross_entropy(logits, &targets, &mask);
    let n = ex.target.len() - 1;
    let (mel, pred_mel) = match codec {
        Some(codec) if n > 0 => {
            let audio = g.slice_rows(logits, 0, n);
            let audio = g.slice_cols(audio, 0, AUDIO_VOCAB as usize);
            let probs = g.softmax(audio, false);
            let emb = codec.soft_embedding_graph(g, probs, false);
            let pred = codec.decode_graph(g, emb, false);
            let target = g.constant(ex.target_mel.slice_rows(0, n));
            (Some(g.mean_abs_diff(pred, target)), Some(pred))
        }
        _ => (None, None),
    };
    LmLossNodes { logits, ce, mel, pred_mel }
}

/// Modules that must not change during LM training.
#[derive(Clone, Copy)]
pub struct FrozenModules<'a> {
    pub text: &'a TextEncoder,
    pub codec: &'a NeuralCodec,
    pub speaker: &'a SpeakerEncoder,
}

impl FrozenModules<'_> {
    pub fn checksums(&self) -> [String; 3] {
        [self.text.checksum(), self.codec.checksum(), self.speaker.checksum()]
    }
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    lm: CodecLm,
    opt: AdamW<f32>,
    frozen: FrozenModules<'a>,
    frozen_sums: [String; 3],
    gan: Option<GanTrainer>,
    accum: Vec<Tensor<f32>>,
    micro: usize,
    micro_steps: usize,
    last_good: CodecLm,
    history: Vec<LossBreakdown>,
}

impl<'a> Trainer<'a> {
    /// With `cfg.use_gan`, `vocoder` is trained alongside against a fresh discriminator.
    pub fn new(lm: CodecLm, frozen: FrozenModules<'a>, cfg: TrainConfig, vocoder: Option<VocoderNet<f32>>) -> Result<Self> {
        cfg.validate()?;
        let gan = match (cfg.use_gan, vocoder) {
            (true, Some(v)) => Some(GanTrainer::new(v, cfg.seed, cfg.gan_lr)),
            (true, None) => return Err(Error::InvalidArgument("use_gan needs a vocoder".into())),
            (false, _) => None,
        };
        let opt = AdamW::new(&lm.params, cfg.adamw);
        let accum = lm.params.iter().map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Ok(Self {
            frozen_sums: frozen.checksums(),
            last_good: lm.clone(),
            cfg,
            lm,
            opt,
            frozen,
            gan,
            accum,
            micro: 0,
            micro_steps: 0,
            history: Vec::new(),
        })
    }

    pub fn lm(&self) -> &CodecLm {
        &self.lm
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Model as of the last finite optimizer update.
    pub fn last_good(&self) -> &CodecLm {
        &self.last_good
    }

    pub fn vocoder(&self) -> Option<&VocoderNet<f32>> {
        self.gan.as_ref().map(|g| &g.vocoder)
    }

    pub fn optimizer_steps(&self) -> usize {
        self.opt.steps()
    }

    pub fn micro_steps(&self) -> usize {
        self.micro_steps
    }

    pub fn history(&self) -> &[LossBreakdown] {
        &self.history
    }

    pub fn into_parts(self) -> (CodecLm, Option<VocoderNet<f32>>) {
        (self.lm, self.gan.map(|g| g.vocoder))
    }

    /// Errors if any frozen module's parameters changed since construction.
    pub fn verify_frozen(&self) -> Result<()> {
        let now = self.frozen.checksums();
        for (name, (a, b)) in ["text encoder", "codec", "speaker encoder"].iter().zip(now.iter().zip(&self.frozen_sums)) {
            if a != b {
                return Err(Error::InvalidArgument(format!("{name} parameters changed during training")));
            }
        }
        Ok(())
    }

    fn current_lr(&self) -> f64 {
        lr_at((self.opt.steps() + 1).min(self.cfg.total_steps), &self.cfg).unwrap_or(0.0)
    }

    /// One micro-batch: forward/backward on every example, gradients added to
    /// the accumulator; every `grad_accum` micro-batches the optimizer steps.
    pub fn train_step(&mut self, batch: &[&TrainingExample]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        let step = self.micro_steps;
        let codec = self.frozen.codec.net();
        let scale = 1.0 / (batch.len() * self.cfg.grad_accum) as f32;
        let (mut ce_sum, mut mel_sum, mut gan_sum) = (0.0, 0.0, 0.0);
        let mut grads_batch: Vec<Vec<Tensor<f32>>> = Vec::with_capacity(batch.len());
        let mut pred_mels = Vec::with_capacity(batch.len());
        for ex in batch {
            let t = ex.tensors::<f32>();
            let mut g = Graph::new();
            let nodes = lm_loss_graph(&self.lm, self.cfg.use_mel.then_some(codec), &mut g, &t, true);
            let ce = g.value(nodes.ce).item() as f64;
            let alpha = g.scale(nodes.ce, self.cfg.alpha as f32);
            let obj = match nodes.mel {
                Some(m) => {
                    mel_sum += g.value(m).item() as f64;
                    let beta = g.scale(m, self.cfg.beta as f32);
                    g.add(alpha, beta)
                }
                None => alpha,
            };
            ce_sum += ce;
            if !g.value(obj).item().is_finite() {
                return Err(Error::Diverged { step });
            }
            grads_batch.push(g.backward(obj).dense_for(&self.lm.params));
            pred_mels.push(nodes.pred_mel.map(|p| g.value(p).clone()));
        }
        if let Some(gan) = self.gan.as_mut() {
            for (ex, pred) in batch.iter().zip(&pred_mels) {
                let mel = match pred {
                    Some(p) => p.clone(),
                    None => codec_decode_tokens(self.frozen.codec, &ex.tokens)?,
                };
                gan_sum += gan.step(&mel, &ex.speaker.mean(), &ex.wave)?.l_gan;
            }
        }
        for grads in &grads_batch {
            for (acc, g) in self.accum.iter_mut().zip(grads) {
                for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v * scale;
                }
            }
        }
        let n = batch.len() as f64;
        let (l_ce, l_mel, l_gan) = (ce_sum / n, mel_sum / n, gan_sum / n);
        let lr = self.current_lr();
        let b = LossBreakdown { step, l_ce, l_mel, l_gan, l_total: loss_total(l_ce, l_mel, l_gan, &self.cfg), lr };
        if !b.is_finite() {
            return Err(Error::Diverged { step });
        }
        self.micro += 1;
        self.micro_steps += 1;
        if self.micro == self.cfg.grad_accum {
            let grads = std::mem::take(&mut self.accum);
            self.opt.step(&mut self.lm.params, &grads, lr);
            self.accum = grads.into_iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
            self.micro = 0;
            if !self.lm.params.all_finite() {
                self.lm = self.last_good.clone();
                return Err(Error::Diverged { step });
            }
            self.verify_frozen()?;
            self.last_good = self.lm.clone();
        }
        self.history.push(b);
        Ok(b)
    }

    /// Runs until `updates` more optimizer steps have been taken, drawing
    /// micro-batches from a seeded shuffle of `examples`. Each breakdown is
    /// also appended to `log` when given.
    pub fn fit(&mut self, examples: &[TrainingExample], updates: usize, mut log: Option<&mut LossLog>) -> Result<()> {
        if examples.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ self.micro_steps as u64);
        let mut order: Vec<usize> = Vec::new();
        let target = self.opt.steps() + updates;
        while self.opt.steps() < target {
            let mut batch = Vec::with_capacity(self.cfg.batch);
            while batch.len() < self.cfg.batch.min(examples.len()) {
                if order.is_empty() {
                    order = (0..examples.len()).collect();
                    order.shuffle(&mut rng);
                }
                batch.push(&examples[order.pop().expect("refilled")]);
            }
            let b = self.train_step(&batch)?;
            if let Some(log) = log.as_deref_mut() {
                log.append(&b)?;
            }
        }
        Ok(())
    }
}

fn codec_decode_tokens(codec: &NeuralCodec, tokens: &TokenSequence) -> Result<Tensor<f32>> {
    Ok(codec.decode_tokens(tokens)?.frames)
}

/// Per-step loss log, one comma-separated line per breakdown.
pub struct LossLog {
    out: Box<dyn Write>,
}

impl LossLog {
    pub const HEADER: &'static str = "step,l_ce,l_mel,l_gan,l_total,lr";

    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Self::to_writer(Box::new(std::io::BufWriter::new(f)))
    }

    pub fn to_writer(mut out: Box<dyn Write>) -> Result<Self> {
        writeln!(out, "{}", Self::HEADER).map_err(|e| Error::io("<loss log>", e))?;
        Ok(Self { out })
    }

    pub fn line(b: &LossBreakdown) -> String {
        format!("{},{},{},{},{},{}", b.step, b.l_ce, b.l_mel, b.l_gan, b.l_total, b.lr)
    }

    pub fn append(&mut self, b: &LossBreakdown) -> Result<()> {
        writeln!(self.out, "{}", Self::line(b)).and_then(|_| self.out.flush()).map_err(|e| Error::io("<loss log>", e))
    }
}
