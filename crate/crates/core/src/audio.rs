//! Waveform loading, resampling, cropping and log-mel extraction.
//!
//! Internal audio is mono at [`SAMPLE_RATE`]. The mel hop is chosen so that one
//! mel frame lines up with one codec frame: 22050 / 294 = 75 frames per second.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use std::f64::consts::PI;
use std::io::{Cursor, Read};
use std::path::Path;

pub const SAMPLE_RATE: u32 = 22050;
pub const HOP: usize = 294;
pub const N_FFT: usize = 1024;
pub const N_MELS: usize = 80;
pub const LOG_FLOOR: f32 = 1e-5;
/// Codec / mel frames per second at [`SAMPLE_RATE`].
pub const FRAME_RATE: usize = 75;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    /// Out-of-range samples are clipped to [-1, 1]; non-finite samples are rejected.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("waveform contains non-finite samples".into()));
        }
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// Scales so the peak magnitude equals `target` (no-op on silence).
    pub fn peak_normalized(&self, target: f32) -> Self {
        let p = self.peak();
        if p == 0.0 {
            return self.clone();
        }
        let g = target / p;
        Self { samples: self.samples.iter().map(|s| (s * g).clamp(-1.0, 1.0)).collect(), sample_rate: self.sample_rate }
    }

    /// Truncates or zero-pads to exactly `len` samples.
    pub fn fit_to(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self { samples, sample_rate: self.sample_rate }
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self { samples: self.samples[start..start + len].to_vec(), sample_rate: self.sample_rate }
    }

    /// Row vector `[1 × len]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::row_vector(self.samples.clone())
    }

    /// PCM16 mono WAV bytes at the waveform's own rate.
    pub fn to_wav_bytes(&self) -> Result<Vec<u8>> {
        let mut cursor = Cursor::new(Vec::new());
        {
            let spec = hound::WavSpec {
                channels: 1,
                sample_rate: self.sample_rate,
                bits_per_sample: 16,
                sample_format: hound::SampleFormat::Int,
            };
            let mut w = hound::WavWriter::new(&mut cursor, spec)?;
            for &s in &self.samples {
                w.write_sample(pcm16(s))?;
            }
            w.finalize()?;
        }
        Ok(cursor.into_inner())
    }
}

/// Same scale as the reader, so a round trip moves a sample by at most one step.
fn pcm16(s: f32) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Reads a PCM16 or float32 WAV (1 or 2 channels, any rate) as mono at 22050 Hz.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_wav(std::io::BufReader::new(file))
}

pub fn read_wav<R: Read>(reader: R) -> Result<Waveform> {
    let mut reader = hound::WavReader::new(reader)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(Error::UnsupportedEncoding(format!("{channels} channels")));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => {
            reader.samples::<i16>().map(|s| s.map(|v| v as f32 / 32768.0)).collect::<Result<_, _>>()?
        }
        (hound::SampleFormat::Float, 32) => reader.samples::<f32>().collect::<Result<_, _>>()?,
        (fmt, bits) => return Err(Error::UnsupportedEncoding(format!("{fmt:?} {bits}-bit"))),
    };
    if interleaved.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let mono: Vec<f32> = interleaved.chunks(channels).map(|f| f.iter().sum::<f32>() / channels as f32).collect();
    let w = Waveform::new(mono, spec.sample_rate)?;
    Ok(resample(&w, SAMPLE_RATE))
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let bytes = w.to_wav_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses WAV bytes from memory (see [`read_wav`]).
pub fn read_wav_bytes(bytes: &[u8]) -> Result<Waveform> {
    read_wav(Cursor::new(bytes))
}

const SINC_ZERO_CROSSINGS: f64 = 16.0;

/// Band-limited resampling with a Blackman-windowed sinc kernel.
///
/// Output length is `round(len · to / from)`.
pub fn resample(w: &Waveform, to: u32) -> Waveform {
    let from = w.sample_rate;
    if from == to {
        return w.clone();
    }
    let ratio = to as f64 / from as f64;
    let out_len = (w.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0) * 0.97;
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let x = &w.samples;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let t = i as f64 / ratio;
        let lo = ((t - half_width).ceil().max(0.0)) as usize;
        let hi = ((t + half_width).floor() as isize).min(x.len() as isize - 1);
        let mut acc = 0.0f64;
        if hi >= lo as isize {
            for (j, &xv) in x.iter().enumerate().take(hi as usize + 1).skip(lo) {
                let d = t - j as f64;
                acc += xv as f64 * sinc_kernel(d, cutoff, half_width);
            }
        }
        out.push(acc.clamp(-1.0, 1.0) as f32);
    }
    Waveform { samples: out, sample_rate: to }
}

fn sinc_kernel(d: f64, cutoff: f64, half_width: f64) -> f64 {
    if d.abs() >= half_width {
        return 0.0;
    }
    let x = PI * cutoff * d;
    let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
    let n = (d / half_width + 1.0) * 0.5; // 0..1 across the window
    let win = 0.42 - 0.5 * (2.0 * PI * n).cos() + 0.08 * (4.0 * PI * n).cos();
    cutoff * sinc * win
}

/// Contiguous crop whose length is uniform in `[min_s, max_s]` seconds (capped at
/// the input length). Inputs shorter than `min_s` are returned unchanged.
pub fn random_crop(w: &Waveform, min_s: f64, max_s: f64, rng: &mut impl Rng) -> Result<Waveform> {
    if !(min_s <= max_s) || min_s < 0.0 {
        return Err(Error::InvalidArgument(format!("crop bounds {min_s}..{max_s}")));
    }
    let sr = w.sample_rate as f64;
    let min_len = (min_s * sr).round() as usize;
    let max_len = (max_s * sr).round() as usize;
    if w.len() < min_len {
        return Ok(w.clone());
    }
    let hi = max_len.min(w.len());
    let len = rng.gen_range(min_len..=hi);
    let offset = rng.gen_range(0..=w.len() - len);
    Ok(w.slice(offset, len))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    /// `[n_frames × n_mels]` natural-log energies.
    pub frames: Tensor<f32>,
    pub hop: usize,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn new(frames: Tensor<f32>) -> Self {
        Self { frames, hop: HOP, sample_rate: SAMPLE_RATE }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.cols()
    }

    /// First `n` frames (or all of them if fewer).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.n_frames());
        Self { frames: self.frames.slice_rows(0, n), hop: self.hop, sample_rate: self.sample_rate }
    }
}

/// Number of centered frames for `num_samples` samples.
pub fn mel_frame_count(num_samples: usize) -> usize {
    1 + num_samples / HOP
}

fn hz_to_mel(f: f64) -> f64 {
    // Slaney: linear below 1 kHz, logarithmic above
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if f >= min_log_hz {
        min_log_mel + (f / min_log_hz).ln() / logstep
    } else {
        f / f_sp
    }
}

fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if m >= min_log_mel {
        min_log_hz * (logstep * (m - min_log_mel)).exp()
    } else {
        m * f_sp
    }
}

/// Slaney-normalized triangular filterbank, `[n_mels × (n_fft/2 + 1)]`.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let fft_freqs: Vec<f64> = (0..n_bins).map(|i| i as f64 * sample_rate as f64 / n_fft as f64).collect();
    let (mmin, mmax) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let pts: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(mmin + (mmax - mmin) * i as f64 / (n_mels + 1) as f64)).collect();
    (0..n_mels)
        .map(|m| {
            let (lo, c, hi) = (pts[m], pts[m + 1], pts[m + 2]);
            let enorm = 2.0 / (hi - lo);
            fft_freqs
                .iter()
                .map(|&f| {
                    let up = (f - lo) / (c - lo);
                    let down = (hi - f) / (hi - c);
                    up.min(down).max(0.0) * enorm
                })
                .collect()
        })
        .collect()
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Centered (zero-padded) power spectrogram, `[n_frames][n_fft/2+1]`.
pub fn power_spectrogram(samples: &[f32], n_fft: usize, hop: usize) -> Vec<Vec<f64>> {
    let pad = n_fft / 2;
    let n_frames = 1 + samples.len() / hop;
    let window = hann_window(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut out = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = (t * hop) as isize - pad as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let x = if idx >= 0 && (idx as usize) < samples.len() { samples[idx as usize] as f64 } else { 0.0 };
            *b = Complex::new(x * window[i], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect());
    }
    out
}

/// Log-mel spectrogram: FFT 1024, hop 294, 80 Slaney bins over 0–11025 Hz,
/// `ln(max(energy, 1e-5))`. Frame count is `1 + floor(N / 294)`.
pub fn mel_spectrogram(w: &Waveform) -> MelSpectrogram {
    let fb = mel_filterbank(w.sample_rate, N_FFT, N_MELS, 0.0, w.sample_rate as f64 / 2.0);
    let power = power_spectrogram(&w.samples, N_FFT, HOP);
    let floor = LOG_FLOOR as f64;
    let mut frames = Tensor::zeros(power.len(), N_MELS);
    for (t, spec) in power.iter().enumerate() {
        for (m, filt) in fb.iter().enumerate() {
            let e: f64 = filt.iter().zip(spec).map(|(a, b)| a * b).sum();
            frames.set(t, m, e.max(floor).ln() as f32);
        }
    }
    MelSpectrogram { frames, hop: HOP, sample_rate: w.sample_rate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f32, secs: f32, sr: u32) -> Waveform {
        let n = (secs * sr as f32).round() as usize;
        Waveform::new((0..n).map(|i| 0.5 * (2.0 * std::f32::consts::PI * freq * i as f32 / sr as f32).sin()).collect(), sr).unwrap()
    }

    /// Unoptimized DFT of one centered frame.
    fn direct_frame_power(x: &[f32], t: usize) -> Vec<f64> {
        let win = hann_window(N_FFT);
        let start = (t * HOP) as isize - (N_FFT / 2) as isize;
        (0..=N_FFT / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for n in 0..N_FFT {
                    let idx = start + n as isize;
                    let v = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] as f64 } else { 0.0 };
                    let ang = -2.0 * PI * (k * n) as f64 / N_FFT as f64;
                    re += v * win[n] * ang.cos();
                    im += v * win[n] * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn one_second_gives_76_frames_and_matches_direct_dft() {
        let w = sine(440.0, 1.0, SAMPLE_RATE);
        let mel = mel_spectrogram(&w);
        assert_eq!(mel.n_frames(), 76);
        assert_eq!(mel.n_mels(), 80);
        let fb = mel_filterbank(SAMPLE_RATE, N_FFT, N_MELS, 0.0, 11025.0);
        for &t in &[0usize, 1, 37, 75] {
            let p = direct_frame_power(w.samples(), t);
            for m in (0..80).step_by(7) {
                let e: f64 = fb[m].iter().zip(&p).map(|(a, b)| a * b).sum();
                let expect = e.max(1e-5).ln() as f32;
                assert!((mel.frames.get(t, m) - expect).abs() < 1e-3, "frame {t} bin {m}");
            }
        }
    }

    #[test]
    fn silence_is_floor_and_scaling_shifts_by_ln4() {
        let z = Waveform::silence(5000, SAMPLE_RATE);
        let mel = mel_spectrogram(&z);
        assert!(mel.frames.data().iter().all(|&v| v == (1e-5f64).ln() as f32));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f32> = (0..8000).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let a = Waveform::new(noise.clone(), SAMPLE_RATE).unwrap();
        let b = Waveform::new(noise.iter().map(|v| v * 2.0).collect(), SAMPLE_RATE).unwrap();
        let (ma, mb) = (mel_spectrogram(&a), mel_spectrogram(&b));
        let ln4 = 4f32.ln();
        for (x, y) in ma.frames.data().iter().zip(mb.frames.data()) {
            if *x > -9.0 {
                assert!((y - x - ln4).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn resample_48k_to_22050() {
        let w = sine(300.0, 1.0, 48000);
        let r = resample(&w, SAMPLE_RATE);
        assert_eq!(r.len(), 22050);
        assert_eq!(r.sample_rate(), SAMPLE_RATE);
        // the tone survives: compare against an ideal 300 Hz sine away from the edges
        let ideal = sine(300.0, 1.0, SAMPLE_RATE);
        let err = r.samples()[500..21500].iter().zip(&ideal.samples()[500..21500]).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 0.01, "max err {err}");
    }

    #[test]
    fn crop_bounds_and_passthrough() {
        let w = Waveform::silence(10 * 22050, SAMPLE_RATE);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let c = random_crop(&w, 2.0, 6.0, &mut rng).unwrap();
            assert!((44100..=132300).contains(&c.len()));
        }
        let short = sine(100.0, 1.5, SAMPLE_RATE);
        assert_eq!(random_crop(&short, 2.0, 6.0, &mut rng).unwrap(), short);
        let (mut r1, mut r2) = (ChaCha8Rng::seed_from_u64(9), ChaCha8Rng::seed_from_u64(9));
        let long = sine(100.0, 8.0, SAMPLE_RATE);
        assert_eq!(random_crop(&long, 2.0, 6.0, &mut r1).unwrap(), random_crop(&long, 2.0, 6.0, &mut r2).unwrap());
        assert!(random_crop(&long, 3.0, 2.0, &mut r1).is_err());
    }

    #[test]
    fn wav_roundtrip_and_channel_average() {
        let w = sine(220.0, 0.25, SAMPLE_RATE);
        let bytes = w.to_wav_bytes().unwrap();
        let back = read_wav_bytes(&bytes).unwrap();
        assert_eq!(back.len(), w.len());
        assert!(back.samples().iter().zip(w.samples()).all(|(a, b)| (a - b).abs() < 1e-4));

        let mut cursor = Cursor::new(Vec::new());
        {
            let spec = hound::WavSpec { channels: 2, sample_rate: SAMPLE_RATE, bits_per_sample: 32, sample_format: hound::SampleFormat::Float };
            let mut wr = hound::WavWriter::new(&mut cursor, spec).unwrap();
            for i in 0..100 {
                wr.write_sample(0.5f32).unwrap();
                wr.write_sample(if i % 2 == 0 { -0.1f32 } else { 0.3 }).unwrap();
            }
            wr.finalize().unwrap();
        }
        let st = read_wav_bytes(&cursor.into_inner()).unwrap();
        assert_eq!(st.len(), 100);
        assert!((st.samples()[0] - 0.2).abs() < 1e-6);
        assert!((st.samples()[1] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn empty_and_unsupported_wavs_error() {
        let mut cursor = Cursor::new(Vec::new());
        {
            let spec = hound::WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
            hound::WavWriter::new(&mut cursor, spec).unwrap().finalize().unwrap();
        }
        assert!(matches!(read_wav_bytes(&cursor.into_inner()), Err(Error::EmptyAudio)));

        let mut cursor = Cursor::new(Vec::new());
        {
            let spec = hound::WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 8, sample_format: hound::SampleFormat::Int };
            let mut wr = hound::WavWriter::new(&mut cursor, spec).unwrap();
            wr.write_sample(3i8).unwrap();
            wr.finalize().unwrap();
        }
        assert!(matches!(read_wav_bytes(&cursor.into_inner()), Err(Error::UnsupportedEncoding(_))));
        assert!(load_wav("/nonexistent/file.wav").is_err());
    }
}
