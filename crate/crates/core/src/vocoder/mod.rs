//! Mel-to-waveform conversion: a speaker-conditioned neural generator, or
//! deterministic phase reconstruction.

mod griffin_lim;
mod neural;
mod train;

pub use griffin_lim::{griffin_lim, mel_to_magnitude, GRIFFIN_LIM_ITERS};
pub use neural::{VocoderConfig, VocoderNet, UPSAMPLE};
pub use train::{discriminator_loss_graph, generator_loss_graph, train_vocoder, GanStep, GanTrainer, VocoderPair, VocoderTrainConfig};

use crate::audio::{MelSpectrogram, Waveform};
use crate::checkpoint::{self, KeyValues};
use crate::error::{Error, Result};
use crate::speaker::SpeakerEmbeddingSequence;
use std::path::Path;

pub(crate) const CHECKPOINT_KIND: &str = "vocoder";

#[derive(Clone, Debug)]
pub enum Vocoder {
    Neural(VocoderNet<f32>),
    /// Griffin-Lim; ignores the speaker.
    Deterministic,
}

impl Vocoder {
    pub fn mode_name(&self) -> &'static str {
        match self {
            Vocoder::Neural(_) => "neural",
            Vocoder::Deterministic => "deterministic",
        }
    }

    /// Exactly `n_frames × 294` samples.
    pub fn vocode(&self, mel: &MelSpectrogram, speaker: &SpeakerEmbeddingSequence) -> Result<Waveform> {
        match self {
            Vocoder::Neural(net) => net.vocode(mel, Some(&speaker.mean())),
            Vocoder::Deterministic => griffin_lim(mel, GRIFFIN_LIM_ITERS),
        }
    }

    /// Writes `<path>.cfg` (always) and `<path>` (neural weights only).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut kv = match self {
            Vocoder::Neural(net) => {
                checkpoint::write_file(path, &checkpoint::encode_tensors(CHECKPOINT_KIND, &net.params))?;
                net.cfg.to_kv()
            }
            Vocoder::Deterministic => KeyValues::new(),
        };
        kv.set("mode", self.mode_name());
        kv.save(checkpoint::config_path(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let kv = KeyValues::load(checkpoint::config_path(path))?;
        match kv.get_str("mode") {
            Some("deterministic") => Ok(Vocoder::Deterministic),
            Some("neural") => {
                let mut net = VocoderNet::new(VocoderConfig::from_kv(&kv)?);
                let tensors = checkpoint::decode_tensors(&checkpoint::read_file(path)?, CHECKPOINT_KIND)?;
                checkpoint::load_into(&mut net.params, tensors)?;
                Ok(Vocoder::Neural(net))
            }
            other => Err(Error::Checkpoint(format!("unknown vocoder mode {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::N_MELS;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inputs(frames: usize) -> (MelSpectrogram, Tensor<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mel = MelSpectrogram::new(Tensor::from_fn(frames, N_MELS, |_, _| rng.gen_range(-8.0..0.0)));
        let spk = Tensor::from_fn(1, 256, |_, _| rng.gen_range(-0.1..0.1));
        (mel, spk)
    }

    #[test]
    fn neural_length_determinism_and_speaker_path() {
        let net = VocoderNet::<f32>::new(VocoderConfig::default());
        let (mel, spk) = inputs(76);
        let a = net.vocode(&mel, Some(&spk)).unwrap();
        assert_eq!(a.len(), 22344);
        assert_eq!(a, net.vocode(&mel, Some(&spk)).unwrap());
        let b = net.vocode(&mel, None).unwrap();
        let diff = a.samples().iter().zip(b.samples()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(diff > 0.0);
        for n in [1, 2, 5] {
            assert_eq!(net.vocode(&inputs(n).0, Some(&spk)).unwrap().len(), n * 294);
        }
        assert!(net.vocode(&MelSpectrogram::new(Tensor::zeros(0, N_MELS)), None).is_err());
    }

    #[test]
    fn save_load() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocoder::Neural(VocoderNet::new(VocoderConfig { seed: 4, ..Default::default() }));
        v.save(dir.path().join("voc.bin")).unwrap();
        match Vocoder::load(dir.path().join("voc.bin")).unwrap() {
            Vocoder::Neural(n) => assert_eq!(n.checksum(), VocoderNet::<f32>::new(VocoderConfig { seed: 4, ..Default::default() }).checksum()),
            _ => panic!("mode"),
        }
        Vocoder::Deterministic.save(dir.path().join("gl.bin")).unwrap();
        assert!(matches!(Vocoder::load(dir.path().join("gl.bin")).unwrap(), Vocoder::Deterministic));
    }

    #[test]
    fn short_gan_run_reduces_l1() {
        let (mel, spk) = inputs(6);
        let wave = Waveform::new((0..6 * 294).map(|i| 0.3 * (i as f32 * 0.05).sin()).collect(), 22050).unwrap();
        let pairs = vec![VocoderPair { mel: mel.frames.clone(), wave, speaker_mean: spk }];
        let (_, log) = train_vocoder(&pairs, VocoderConfig::default(), &VocoderTrainConfig { steps: 60, ..Default::default() }).unwrap();
        assert!(log.iter().all(|s| s.d_real > 0.0 && s.d_real < 1.0 && s.d_fake > 0.0 && s.d_fake < 1.0));
        let head = log[..10].iter().map(|s| s.l1).sum::<f64>();
        let tail = log[50..].iter().map(|s| s.l1).sum::<f64>();
        assert!(tail < head, "{head} -> {tail}");
    }
}
