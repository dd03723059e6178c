//! Loss terms, their weighted sum and the learning-rate schedule.

use super::TrainConfig;
use crate::audio::{MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tokens::PAD;

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` inside logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Loss components of one step; `l_total` is the weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub step: usize,
    pub l_ce: f64,
    pub l_mel: f64,
    pub l_gan: f64,
    pub l_total: f64,
    pub lr: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l_ce.is_finite() && self.l_mel.is_finite() && self.l_gan.is_finite() && self.l_total.is_finite()
    }
}

/// Mean next-token negative log-likelihood (nats) over non-PAD targets.
pub fn loss_ce(logits: &Tensor<f32>, targets: &[u32]) -> Result<f64> {
    if logits.rows() != targets.len() {
        return Err(Error::Shape(format!("{} logit rows for {} targets", logits.rows(), targets.len())));
    }
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (t, &y) in targets.iter().enumerate() {
        if y == PAD {
            continue;
        }
        let row = logits.row(t);
        if y as usize >= row.len() {
            return Err(Error::InvalidToken { id: y as usize, vocab: row.len() });
        }
        let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let lse = m + row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
        total += lse - row[y as usize] as f64;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyInput("non-PAD targets"));
    }
    Ok(total / count as f64)
}

/// Mean absolute difference between two mels of equal shape.
pub fn loss_mel(pred: &MelSpectrogram, target: &MelSpectrogram) -> Result<f64> {
    if pred.frames.shape() != target.frames.shape() {
        return Err(Error::Shape(format!("mel shapes {:?} and {:?} differ", pred.frames.shape(), target.frames.shape())));
    }
    if pred.frames.is_empty() {
        return Err(Error::EmptyInput("mel frames"));
    }
    let sum: f64 = pred.frames.data().iter().zip(target.frames.data()).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum();
    Ok(sum / pred.frames.len() as f64)
}

/// `-ln(d_out)` plus the mean absolute waveform difference over the common
/// prefix of the two waveforms.
pub fn loss_gan_generator(d_out: f64, pred: &Waveform, reference: &Waveform) -> Result<f64> {
    if !(d_out > 0.0 && d_out <= 1.0) {
        return Err(Error::InvalidArgument(format!("discriminator output {d_out} outside (0, 1]")));
    }
    let n = pred.len().min(reference.len());
    if n == 0 {
        return Err(Error::EmptyAudio);
    }
    let l1: f64 = pred.samples()[..n].iter().zip(&reference.samples()[..n]).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / n as f64;
    Ok(-d_out.ln() + l1)
}

/// Non-saturating discriminator loss `-ln d_real - ln(1 - d_fake)`.
pub fn discriminator_loss(d_real: f64, d_fake: f64) -> f64 {
    let r = d_real.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let f = d_fake.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -r.ln() - (1.0 - f).ln()
}

/// `alpha·l_ce + beta·l_mel + gamma·l_gan`, summed left to right.
pub fn loss_total(l_ce: f64, l_mel: f64, l_gan: f64, cfg: &TrainConfig) -> f64 {
    cfg.alpha * l_ce + cfg.beta * l_mel + cfg.gamma * l_gan
}

/// Linear warmup from 0 to `peak_lr` over `warmup_steps`, then linear decay
/// to 0 at `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::InvalidArgument(format!("step {step} beyond total_steps {}", cfg.total_steps)));
    }
    let (w, t) = (cfg.warmup_steps as f64, cfg.total_steps as f64);
    let s = step as f64;
    Ok(if step <= cfg.warmup_steps {
        if cfg.warmup_steps == 0 {
            cfg.peak_lr
        } else {
            cfg.peak_lr * s / w
        }
    } else {
        cfg.peak_lr * (t - s) / (t - w)
    })
}
