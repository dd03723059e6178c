//! Finite-difference checks over every trainable component, on small f64
//! instances.

use super::discriminator::Discriminator;
use super::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use super::trainer::{lm_loss_graph, ExampleTensors};
use crate::audio::{HOP, N_MELS};
use crate::codec::{codec_loss_graph, CodecConfig, CodecDetached, CodecNet};
use crate::error::Result;
use crate::lm::{LmConfig, LmNet};
use crate::speaker::D_SPK;
use crate::tensor::Tensor;
use crate::tokens::{EOS, SOS};
use crate::vocoder::{discriminator_loss_graph, generator_loss_graph, VocoderConfig, VocoderNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Runs the check on one LM block (with the mel path through a frozen
/// decoder), the codec with a fixed RVQ assignment, the vocoder generator
/// objective and the discriminator objective.
pub fn gradient_suite(opts: &GradCheckOptions) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6AD);
    let mut out = Vec::new();

    let codec = CodecNet::<f32>::new(CodecConfig::default()).cast::<f64>();
    let mut lm = LmNet::<f64>::new(LmConfig::new(8, 2, 1).with_seed(opts.seed))?;
    let ex = ExampleTensors {
        input: vec![SOS, 17, 900, 3, 512],
        target: vec![17, 900, 3, 512, EOS],
        text: random(3, 8, 1.0, &mut rng),
        speaker: random(4, D_SPK, 0.1, &mut rng),
        target_mel: random(4, N_MELS, 2.0, &mut rng).map(|v| v - 6.0),
    };
    let r = grad_check(
        &mut lm,
        |m| &mut m.params,
        |m, g| {
            let nodes = lm_loss_graph(m, Some(&codec), g, &ex, true);
            let ce = g.scale(nodes.ce, 1.2);
            let mel = g.scale(nodes.mel.expect("codec given"), 0.7);
            g.add(ce, mel)
        },
        opts,
    );
    out.push(("lm block + mel path", r));

    let mut codec = codec;
    let frames = 3;
    let wave = random(1, frames * HOP, 0.5, &mut rng);
    let target_mel = random(frames, N_MELS, 2.0, &mut rng).map(|v| v - 6.0);
    let detached = CodecDetached::capture(&codec, &wave, None);
    let r = grad_check(&mut codec, |c| &mut c.params, |c, g| codec_loss_graph(c, g, &wave, &target_mel, Some(&detached)).total, opts);
    out.push(("codec (straight-through rvq)", r));

    let mut voc = VocoderNet::<f32>::new(VocoderConfig::default()).cast::<f64>();
    let disc = Discriminator::<f32>::new(opts.seed).cast::<f64>();
    let mel = random(2, N_MELS, 2.0, &mut rng).map(|v| v - 6.0);
    let spk = random(1, D_SPK, 0.1, &mut rng);
    let real = random(1, 2 * HOP, 0.5, &mut rng);
    let r = grad_check(&mut voc, |v| &mut v.params, |v, g| generator_loss_graph(v, &disc, g, &mel, Some(&spk), &real).0, opts);
    out.push(("vocoder generator", r));

    let mut disc = disc;
    let fake = voc.samples(&mel, Some(&spk));
    let r = grad_check(&mut disc, |d| &mut d.params, |d, g| discriminator_loss_graph(d, g, &real, &fake), opts);
    out.push(("discriminator", r));
    Ok(out)
}
