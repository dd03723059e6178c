use super::neural::{VocoderConfig, VocoderNet};
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Real, Tensor};
use crate::training::discriminator::Discriminator;
use crate::training::optim::{AdamW, AdamWConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator objective `-ln D(G(mel)) + mean|G(mel) - wave|`, with the
/// discriminator held fixed. Returns `(loss, l1)` nodes.
pub fn generator_loss_graph<F: Real>(
    voc: &VocoderNet<F>,
    disc: &Discriminator<F>,
    g: &mut Graph<F>,
    mel: &Tensor<F>,
    speaker_mean: Option<&Tensor<F>>,
    wave: &Tensor<F>,
) -> (NodeId, NodeId) {
    let m = g.constant(mel.clone());
    let s = speaker_mean.map(|s| g.constant(s.clone()));
    let y = voc.forward_graph(g, m, s, true);
    let n = g.value(y).cols().min(wave.cols());
    let y = g.slice_cols(y, 0, n);
    let target = g.constant(wave.slice_cols(0, n));
    let d = disc.forward_graph(g, y, false);
    let ln_d = g.ln(d);
    let adv = g.scale(ln_d, -F::one());
    let l1 = g.mean_abs_diff(y, target);
    (g.add(adv, l1), l1)
}

/// `-ln D(real) - ln(1 - D(fake))` with the discriminator trainable.
pub fn discriminator_loss_graph<F: Real>(disc: &Discriminator<F>, g: &mut Graph<F>, real: &Tensor<F>, fake: &Tensor<F>) -> NodeId {
    let clamp = F::from_f64c(crate::training::PROB_CLAMP);
    let r = g.constant(real.clone());
    let f = g.constant(fake.clone());
    let dr = disc.forward_graph(g, r, true);
    let df = disc.forward_graph(g, f, true);
    // keep the logs finite; the clamp is far below the values seen in practice
    let eps = g.constant(Tensor::scalar(clamp));
    let dr = g.add(dr, eps);
    let one = g.constant(Tensor::scalar(F::one() + clamp));
    let not_f = g.sub(one, df);
    let lr = g.ln(dr);
    let lf = g.ln(not_f);
    let s = g.add(lr, lf);
    g.scale(s, -F::one())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GanStep {
    pub l_gan: f64,
    pub l1: f64,
    pub d_real: f64,
    pub d_fake: f64,
    pub d_loss: f64,
}

/// Alternating generator / discriminator updates.
#[derive(Clone, Debug)]
pub struct GanTrainer {
    pub vocoder: VocoderNet<f32>,
    pub disc: Discriminator<f32>,
    opt_g: AdamW<f32>,
    opt_d: AdamW<f32>,
    pub lr: f64,
    pub use_speaker: bool,
}

impl GanTrainer {
    pub fn new(vocoder: VocoderNet<f32>, seed: u64, lr: f64) -> Self {
        let disc = Discriminator::new(seed ^ 0xD15C);
        let cfg = AdamWConfig { beta1: 0.5, beta2: 0.9, weight_decay: 0.0, ..Default::default() };
        Self { opt_g: AdamW::new(&vocoder.params, cfg), opt_d: AdamW::new(&disc.params, cfg), vocoder, disc, lr, use_speaker: true }
    }

    /// One generator update followed by one discriminator update.
    pub fn step(&mut self, mel: &Tensor<f32>, speaker_mean: &Tensor<f32>, wave: &Waveform) -> Result<GanStep> {
        let target = wave.to_tensor();
        let spk = self.use_speaker.then_some(speaker_mean);
        let mut g = Graph::new();
        let (loss, l1) = generator_loss_graph(&self.vocoder, &self.disc, &mut g, mel, spk, &target);
        let l_gan = g.value(loss).item() as f64;
        let l1v = g.value(l1).item() as f64;
        if !l_gan.is_finite() {
            return Err(Error::Diverged { step: self.opt_g.steps() });
        }
        let grads = g.backward(loss).dense_for(&self.vocoder.params);
        self.opt_g.step(&mut self.vocoder.params, &grads, self.lr);

        let fake = self.vocoder.samples(mel, spk);
        let n = fake.cols().min(target.cols());
        let (real, fake) = (target.slice_cols(0, n), fake.slice_cols(0, n));
        let mut g = Graph::new();
        let d_loss = discriminator_loss_graph(&self.disc, &mut g, &real, &fake);
        let d_loss_v = g.value(d_loss).item() as f64;
        if !d_loss_v.is_finite() {
            return Err(Error::Diverged { step: self.opt_d.steps() });
        }
        let grads = g.backward(d_loss).dense_for(&self.disc.params);
        self.opt_d.step(&mut self.disc.params, &grads, self.lr);
        let d_real = self.disc.probability(&real) as f64;
        let d_fake = self.disc.probability(&fake) as f64;
        Ok(GanStep { l_gan, l1: l1v, d_real, d_fake, d_loss: d_loss_v })
    }
}

/// One training pair: log-mel frames, the matching waveform and the mean speaker vector.
#[derive(Clone, Debug)]
pub struct VocoderPair {
    pub mel: Tensor<f32>,
    pub wave: Waveform,
    pub speaker_mean: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VocoderTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for VocoderTrainConfig {
    fn default() -> Self {
        Self { steps: 200, lr: 1e-3, seed: 11 }
    }
}

pub fn train_vocoder(pairs: &[VocoderPair], cfg: VocoderConfig, tcfg: &VocoderTrainConfig) -> Result<(VocoderNet<f32>, Vec<GanStep>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut trainer = GanTrainer::new(VocoderNet::new(cfg), tcfg.seed, tcfg.lr);
    let mut log = Vec::with_capacity(tcfg.steps);
    for _ in 0..tcfg.steps {
        let p = pairs.choose(&mut rng).expect("non-empty");
        log.push(trainer.step(&p.mel, &p.speaker_mean, &p.wave)?);
    }
    Ok((trainer.vocoder, log))
}
