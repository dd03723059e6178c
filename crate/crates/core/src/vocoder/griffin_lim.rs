//! Mel inversion by iterative phase reconstruction. No trainable state.

use crate::audio::{hann_window, mel_filterbank, MelSpectrogram, Waveform, HOP, LOG_FLOOR, N_FFT, N_MELS, SAMPLE_RATE};
use crate::error::{Error, Result};
use rustfft::{num_complex::Complex, FftPlanner};

pub const GRIFFIN_LIM_ITERS: usize = 32;

/// Linear-frequency magnitudes `[T][N_FFT/2+1]` from log-mel frames, using the
/// filterbank transpose normalized per frequency bin.
pub fn mel_to_magnitude(mel: &MelSpectrogram) -> Vec<Vec<f64>> {
    let fb = mel_filterbank(SAMPLE_RATE, N_FFT, N_MELS, 0.0, SAMPLE_RATE as f64 / 2.0);
    let n_bins = N_FFT / 2 + 1;
    let norm: Vec<f64> = (0..n_bins).map(|f| fb.iter().map(|row| row[f] * row[f]).sum::<f64>()).collect();
    (0..mel.n_frames())
        .map(|t| {
            let power: Vec<f64> = mel.frames.row(t).iter().map(|&v| ((v as f64).exp() - LOG_FLOOR as f64).max(0.0)).collect();
            (0..n_bins)
                .map(|f| {
                    if norm[f] <= 0.0 {
                        return 0.0;
                    }
                    let p: f64 = fb.iter().zip(&power).map(|(row, &pm)| row[f] * pm).sum::<f64>() / norm[f];
                    p.max(0.0).sqrt()
                })
                .collect()
        })
        .collect()
}

struct Stft {
    window: Vec<f64>,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Stft {
    fn new() -> Self {
        let mut planner = FftPlanner::new();
        Self { window: hann_window(N_FFT), fwd: planner.plan_fft_forward(N_FFT), inv: planner.plan_fft_inverse(N_FFT) }
    }

    /// Centered STFT of `x` with `frames` frames.
    fn analyze(&self, x: &[f64], frames: usize) -> Vec<Vec<Complex<f64>>> {
        let pad = N_FFT / 2;
        (0..frames)
            .map(|t| {
                let start = (t * HOP) as isize - pad as isize;
                let mut buf: Vec<Complex<f64>> = (0..N_FFT)
                    .map(|i| {
                        let idx = start + i as isize;
                        let v = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { 0.0 };
                        Complex::new(v * self.window[i], 0.0)
                    })
                    .collect();
                self.fwd.process(&mut buf);
                buf.truncate(N_FFT / 2 + 1);
                buf
            })
            .collect()
    }

    /// Windowed overlap-add inverse of [`Self::analyze`] into `len` samples.
    fn synthesize(&self, spec: &[Vec<Complex<f64>>], len: usize) -> Vec<f64> {
        let pad = N_FFT / 2;
        let mut out = vec![0.0; len];
        let mut wsum = vec![0.0; len];
        for (t, half) in spec.iter().enumerate() {
            let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
            buf[..half.len()].copy_from_slice(half);
            for k in 1..N_FFT / 2 {
                buf[N_FFT - k] = half[k].conj();
            }
            self.inv.process(&mut buf);
            let start = (t * HOP) as isize - pad as isize;
            for i in 0..N_FFT {
                let idx = start + i as isize;
                if idx >= 0 && (idx as usize) < len {
                    let w = self.window[i];
                    out[idx as usize] += buf[i].re / N_FFT as f64 * w;
                    wsum[idx as usize] += w * w;
                }
            }
        }
        for (o, w) in out.iter_mut().zip(&wsum) {
            if *w > 1e-8 {
                *o /= w;
            }
        }
        out
    }
}

/// Waveform of exactly `n_frames × 294` samples whose STFT magnitude
/// approximates the mel, starting from zero phase.
pub fn griffin_lim(mel: &MelSpectrogram, iterations: usize) -> Result<Waveform> {
    if mel.n_frames() == 0 {
        return Err(Error::EmptyInput("mel frames"));
    }
    let mag = mel_to_magnitude(mel);
    let frames = mag.len();
    let len = frames * HOP;
    let stft = Stft::new();
    let mut spec: Vec<Vec<Complex<f64>>> = mag.iter().map(|row| row.iter().map(|&m| Complex::new(m, 0.0)).collect()).collect();
    let mut x = stft.synthesize(&spec, len);
    for _ in 0..iterations {
        let est = stft.analyze(&x, frames);
        for (row, (erow, mrow)) in spec.iter_mut().zip(est.iter().zip(&mag)) {
            for (s, (e, &m)) in row.iter_mut().zip(erow.iter().zip(mrow)) {
                let n = e.norm();
                *s = if n > 1e-12 { e * (m / n) } else { Complex::new(m, 0.0) };
            }
        }
        x = stft.synthesize(&spec, len);
    }
    Waveform::new(x.into_iter().map(|v| v as f32).collect(), SAMPLE_RATE)
}
