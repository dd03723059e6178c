//! Synthetic voices for tests, examples and the toy corpus: a harmonic glottal
//! source at a speaker-specific pitch, shaped by vowel formants scaled by a
//! speaker-specific vocal tract length.

use crate::audio::{Waveform, SAMPLE_RATE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Canonical (F1, F2, F3) in Hz for a handful of vowels.
/// Seconds of audio per character in [`Voice::say`].
pub const CHAR_SECS: f64 = 0.06;

const VOWELS: [[f64; 3]; 5] = [[730.0, 1090.0, 2440.0], [270.0, 2290.0, 3010.0], [530.0, 1840.0, 2480.0], [570.0, 840.0, 2410.0], [300.0, 870.0, 2240.0]];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Voice {
    /// Fundamental frequency in Hz.
    pub f0: f64,
    /// Formant scale (shorter vocal tract gives larger values).
    pub tract: f64,
}

impl Voice {
    /// Deterministic voice number `i`.
    pub fn numbered(i: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED ^ i.wrapping_mul(0x9E37_79B9));
        Self { f0: rng.gen_range(90.0..260.0), tract: rng.gen_range(0.8..1.3) }
    }

    /// Speech-like signal of `secs` seconds; `content` picks the vowel sequence.
    pub fn speak(&self, secs: f64, content: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(content);
        let n = (secs * SAMPLE_RATE as f64).round() as usize;
        let seg = (0.12 * SAMPLE_RATE as f64) as usize;
        let segments = (0..n.div_ceil(seg)).map(|_| Some((rng.gen_range(0..VOWELS.len()), rng.gen_range(0.95..1.05)))).collect::<Vec<_>>();
        self.render(&segments, seg, n)
    }

    /// Reads `text` aloud, one 60 ms segment per character: letters map to a
    /// vowel and a pitch inflection, anything else is a pause. The same text
    /// always gives the same audio for a given voice.
    pub fn say(&self, text: &str) -> Waveform {
        let seg = (CHAR_SECS * SAMPLE_RATE as f64) as usize;
        let segments: Vec<_> = text
            .chars()
            .map(|c| {
                let c = c.to_ascii_lowercase();
                c.is_ascii_alphanumeric().then(|| {
                    let b = c as usize;
                    (b % VOWELS.len(), 0.92 + 0.04 * ((b / VOWELS.len()) % 5) as f64)
                })
            })
            .collect();
        self.render(&segments, seg, segments.len().max(1) * seg)
    }

    /// `None` segments are silent.
    fn render(&self, segments: &[Option<(usize, f64)>], seg: usize, n: usize) -> Waveform {
        let sr = SAMPLE_RATE as f64;
        let mut out = vec![0.0f64; n];
        let mut phase = 0.0f64;
        let mut start = 0;
        for s in segments {
            if start >= n {
                break;
            }
            let len = seg.min(n - start);
            let Some((v, inflect)) = *s else {
                start += len;
                continue;
            };
            let vowel = VOWELS[v];
            let f0 = self.f0 * inflect;
            for i in 0..len {
                phase += 2.0 * PI * f0 / sr;
                let mut s = 0.0;
                let mut h = 1;
                while (h as f64) * f0 < 0.45 * sr {
                    let f = h as f64 * f0;
                    let gain: f64 = vowel.iter().map(|&fm| formant_gain(f, fm * self.tract, 90.0)).sum();
                    s += gain * (h as f64 * phase).sin() / h as f64;
                    h += 1;
                }
                // short fades keep segment joins smooth
                let env = ((i.min(len - 1 - i) as f64) / (0.01 * sr)).min(1.0);
                out[start + i] = s * env;
            }
            start += len;
        }
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
        Waveform::new(out.into_iter().map(|v| (0.5 * v / peak) as f32).collect(), SAMPLE_RATE).expect("finite samples")
    }
}

/// Magnitude response of a resonance at `fc` with bandwidth `bw`, evaluated at `f`.
fn formant_gain(f: f64, fc: f64, bw: f64) -> f64 {
    let d = (f - fc) / (bw / 2.0);
    1.0 / (1.0 + d * d).sqrt()
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voices_are_deterministic_and_bounded() {
        let v = Voice::numbered(3);
        let a = v.speak(0.5, 1);
        assert_eq!(a, v.speak(0.5, 1));
        assert_ne!(a, v.speak(0.5, 2));
        assert!((a.peak() - 0.5).abs() < 1e-3);
        assert_eq!(a.len(), 11025);
    }

    #[test]
    fn say_is_text_driven() {
        let v = Voice::numbered(1);
        let a = v.say("hello there");
        assert_eq!(a.len(), 11 * 1323);
        assert_eq!(a, v.say("hello there"));
        assert_ne!(a, v.say("hello where"));
        // the space is silent
        assert!(a.samples()[5 * 1323..6 * 1323].iter().all(|&x| x == 0.0));
    }
}
