use super::models::ModelSet;
use super::table::Table;
use crate::audio::{resample, Waveform, FRAME_RATE, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::lm::Sampling;
use crate::tokens::TokenSequence;
use std::path::PathBuf;
use std::time::Instant;

/// Wall-clock synthesis time over produced audio duration.
pub fn compute_rtf(synth_seconds: f64, audio_seconds: f64) -> Result<f64> {
    if !(audio_seconds > 0.0 && audio_seconds.is_finite()) {
        return Err(Error::InvalidArgument(format!("audio_seconds must be positive, got {audio_seconds}")));
    }
    if !(synth_seconds >= 0.0 && synth_seconds.is_finite()) {
        return Err(Error::InvalidArgument(format!("synth_seconds must be non-negative, got {synth_seconds}")));
    }
    Ok(synth_seconds / audio_seconds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisReport {
    pub text: String,
    pub output: Option<PathBuf>,
    pub synth_seconds: f64,
    /// `token_count / 75`.
    pub audio_seconds: f64,
    pub rtf: f64,
    pub token_count: usize,
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub report: SynthesisReport,
    pub tokens: TokenSequence,
    pub wave: Waveform,
}

/// Text and reference voice to waveform. The timer covers tokenization
/// through vocoding.
pub fn synthesize(models: &ModelSet, text: &str, reference: &Waveform, sampling: Sampling, seed: u64) -> Result<Synthesis> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("text"));
    }
    let start = Instant::now();
    let front = &models.front;
    let encoding = front.encode_text(text)?;
    let reference = if reference.sample_rate() == SAMPLE_RATE { reference.clone() } else { resample(reference, SAMPLE_RATE) };
    let speaker = front.speaker.embed(&reference)?;
    let tokens = models.lm.generate(&encoding, &speaker, sampling, seed)?;
    if tokens.is_empty() {
        return Err(Error::NoAudio);
    }
    let mel = front.codec.decode_tokens(&tokens)?;
    let wave = models.vocoder.vocode(&mel, &speaker)?;
    let synth_seconds = start.elapsed().as_secs_f64();
    let audio_seconds = tokens.len() as f64 / FRAME_RATE as f64;
    let rtf = compute_rtf(synth_seconds, audio_seconds)?;
    let report = SynthesisReport { text: text.to_string(), output: None, synth_seconds, audio_seconds, rtf, token_count: tokens.len() };
    Ok(Synthesis { report, tokens, wave })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub runs: Vec<SynthesisReport>,
    pub synth_seconds: f64,
    pub audio_seconds: f64,
    /// Aggregate `synth_seconds / audio_seconds` over all runs.
    pub rtf: f64,
}

/// Synthesizes every text `repeats` times with the same reference.
pub fn bench_rtf(models: &ModelSet, texts: &[String], reference: &Waveform, sampling: Sampling, seed: u64, repeats: usize) -> Result<BenchReport> {
    if texts.is_empty() || repeats == 0 {
        return Err(Error::EmptyInput("benchmark texts"));
    }
    let mut runs = Vec::with_capacity(texts.len() * repeats);
    for r in 0..repeats {
        for (i, t) in texts.iter().enumerate() {
            runs.push(synthesize(models, t, reference, sampling, seed.wrapping_add((r * texts.len() + i) as u64))?.report);
        }
    }
    let synth_seconds: f64 = runs.iter().map(|r| r.synth_seconds).sum();
    let audio_seconds: f64 = runs.iter().map(|r| r.audio_seconds).sum();
    Ok(BenchReport { rtf: compute_rtf(synth_seconds, audio_seconds)?, runs, synth_seconds, audio_seconds })
}

impl BenchReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(["run", "tokens", "audio_s", "synth_s", "rtf", "text"]);
        for (i, r) in self.runs.iter().enumerate() {
            t.push([i.to_string(), r.token_count.to_string(), format!("{:.3}", r.audio_seconds), format!("{:.4}", r.synth_seconds), format!("{:.4}", r.rtf), r.text.clone()]);
        }
        t.push([
            "all".to_string(),
            self.runs.iter().map(|r| r.token_count).sum::<usize>().to_string(),
            format!("{:.3}", self.audio_seconds),
            format!("{:.4}", self.synth_seconds),
            format!("{:.4}", self.rtf),
            String::new(),
        ]);
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rtf_arithmetic() {
        assert_eq!(compute_rtf(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(compute_rtf(0.5, 10.0).unwrap(), 0.05);
        assert!(compute_rtf(1.0, 0.0).is_err());
        assert!(compute_rtf(1.0, -2.0).is_err());
        assert!(compute_rtf(-1.0, 2.0).is_err());
    }
}
