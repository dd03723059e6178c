//! Frozen speaker encoder: per-frame spectral-shape projection, temporally
//! smoothed and unit-normalized.

use crate::audio::{mel_spectrogram, Waveform, N_MELS, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SPEAKER_SEED: u64 = 0x5EA;
pub const D_SPK: usize = 256;
pub const SMOOTHING_WINDOW: usize = 15;
/// Shortest accepted reference, in seconds.
pub const MIN_REFERENCE_SECS: f64 = 0.5;

/// `[n_ref_frames × 256]` unit-norm speaker latents, one per mel frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbeddingSequence {
    pub frames: Tensor<f32>,
}

impl SpeakerEmbeddingSequence {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn d_spk(&self) -> usize {
        self.frames.cols()
    }

    /// Mean over frames, `[1 × d_spk]`.
    pub fn mean(&self) -> Tensor<f32> {
        self.frames.mean_rows()
    }
}

#[derive(Clone, Debug)]
pub struct SpeakerEncoder {
    params: ParamStore<f32>,
}

impl Default for SpeakerEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl SpeakerEncoder {
    pub fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(SPEAKER_SEED);
        let mut params = ParamStore::new();
        params.add_normal("proj", N_MELS, D_SPK, 1.0 / (N_MELS as f64).sqrt(), &mut rng);
        params.add_normal("bias", 1, D_SPK, 0.1, &mut rng);
        Self { params }
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    pub fn embed(&self, reference: &Waveform) -> Result<SpeakerEmbeddingSequence> {
        let need = (MIN_REFERENCE_SECS * SAMPLE_RATE as f64).round() as usize;
        if reference.len() < need {
            return Err(Error::AudioTooShort { got: reference.len(), need });
        }
        let mut mel = mel_spectrogram(reference).frames;
        // per-frame centering removes overall loudness, keeping spectral shape
        for t in 0..mel.rows() {
            let row = mel.row_mut(t);
            let m = row.iter().sum::<f32>() / row.len() as f32;
            row.iter_mut().for_each(|v| *v -= m);
        }
        let proj = self.params.get(self.params.id("proj").expect("proj"));
        let bias = self.params.get(self.params.id("bias").expect("bias"));
        let h = crate::nn::linear(&mel, proj, bias);
        let mut out = moving_average(&h, SMOOTHING_WINDOW);
        for t in 0..out.rows() {
            let row = out.row_mut(t);
            let n = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        Ok(SpeakerEmbeddingSequence { frames: out })
    }
}

/// Centered moving average over rows; the window shrinks at the edges.
fn moving_average(x: &Tensor<f32>, window: usize) -> Tensor<f32> {
    let half = window / 2;
    let n = x.rows();
    Tensor::from_fn(n, x.cols(), |t, c| {
        let lo = t.saturating_sub(half);
        let hi = (t + half + 1).min(n);
        (lo..hi).map(|s| x.get(s, c)).sum::<f32>() / (hi - lo) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_norms() {
        let n = 110250;
        let w = Waveform::new((0..n).map(|i| 0.3 * (i as f32 * 0.02).sin() + 0.1 * (i as f32 * 0.31).sin()).collect(), SAMPLE_RATE).unwrap();
        let enc = SpeakerEncoder::new();
        let e = enc.embed(&w).unwrap();
        assert_eq!(e.frames.shape(), (376, 256));
        for t in 0..e.len() {
            let n: f64 = e.frames.row(t).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert_eq!(e, enc.embed(&w).unwrap());
        assert!(matches!(enc.embed(&w.slice(0, 1000)), Err(Error::AudioTooShort { .. })));
    }

    #[test]
    fn moving_average_edges() {
        let x = Tensor::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let y = moving_average(&x, 3);
        assert_eq!(y.data(), &[1.5, 2.0, 3.0, 3.5]);
    }

    #[test]
    fn same_speaker_closer_than_different() {
        use crate::synthetic::{cosine, Voice};
        let enc = SpeakerEncoder::new();
        let mut margin = 0.0;
        let trials = 20;
        for i in 0..trials {
            let a = Voice::numbered(2 * i);
            let b = Voice::numbered(2 * i + 1);
            let ea = enc.embed(&a.speak(1.5, 100 + i)).unwrap().mean();
            let ea2 = enc.embed(&a.speak(1.5, 200 + i)).unwrap().mean();
            let eb = enc.embed(&b.speak(1.5, 300 + i)).unwrap().mean();
            margin += cosine(ea.data(), ea2.data()) - cosine(ea.data(), eb.data());
        }
        assert!(margin / trials as f64 > 0.0, "mean margin {}", margin / trials as f64);
    }
}
