use codec_tts::audio::{mel_spectrogram, MelSpectrogram, Waveform, SAMPLE_RATE};
use codec_tts::codec::{select_first_codebook, CodecConfig, NeuralCodec};
use codec_tts::lm::{CodecLm, LmConfig};
use codec_tts::pipeline::FrontEnd;
use codec_tts::synthetic::Voice;
use codec_tts::tensor::Tensor;
use codec_tts::text::bpe_train;
use codec_tts::training::{discriminator_loss, loss_ce, loss_gan_generator, loss_mel, loss_total, lr_at, LossLog, TrainConfig, Trainer, TrainingExample};
use codec_tts::Error;
use std::sync::{Arc, Mutex};

#[test]
fn composite_loss_weights() {
    let cfg = TrainConfig::default();
    assert!((loss_total(1.0, 1.0, 1.0, &cfg) - 2.5).abs() < 1e-12);
    assert!((loss_total(2.0, 0.0, 0.0, &cfg) - 2.4).abs() < 1e-12);
    assert!((loss_total(0.0, 0.0, 1.0, &cfg) - 0.6).abs() < 1e-12);
}

#[test]
fn schedule_warms_up_then_decays_to_zero() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at(0, &cfg).unwrap(), 0.0);
    assert!((lr_at(16_000, &cfg).unwrap() - 2.5e-4).abs() < 1e-15);
    assert!((lr_at(32_000, &cfg).unwrap() - 5e-4).abs() < 1e-15);
    // halfway through the decay
    assert!((lr_at(416_000, &cfg).unwrap() - 2.5e-4).abs() < 1e-15);
    assert_eq!(lr_at(800_000, &cfg).unwrap(), 0.0);
    assert!(lr_at(800_001, &cfg).is_err());
    let mut prev = 0.0;
    for s in (0..=32_000).step_by(1000) {
        let v = lr_at(s, &cfg).unwrap();
        assert!(v >= prev);
        prev = v;
    }
}

#[test]
fn cross_entropy_against_closed_form() {
    // uniform logits over the full vocabulary: ln(1027) per token
    let logits = Tensor::<f32>::zeros(3, 1027);
    let ce = loss_ce(&logits, &[5, 1025, 7]).unwrap();
    assert!((ce - (1027f64).ln()).abs() < 1e-5);
    // PAD targets are skipped
    let mut l = Tensor::<f32>::zeros(2, 1027);
    l.row_mut(0)[3] = 10.0;
    let pad = codec_tts::tokens::PAD;
    let with_pad = loss_ce(&l, &[3, pad]).unwrap();
    let p = (10f64).exp() / ((10f64).exp() + 1026.0);
    assert!((with_pad + p.ln()).abs() < 1e-5);
    assert!(matches!(loss_ce(&l, &[pad, pad]), Err(Error::EmptyInput(_))));
}

#[test]
fn mel_and_gan_terms() {
    let a = MelSpectrogram::new(Tensor::full(4, 80, -2.0));
    let b = MelSpectrogram::new(Tensor::full(4, 80, -2.5));
    assert!((loss_mel(&a, &b).unwrap() - 0.5).abs() < 1e-9);
    assert!(loss_mel(&a, &MelSpectrogram::new(Tensor::full(3, 80, 0.0))).is_err());
    let w = Waveform::new(vec![0.1; 100], SAMPLE_RATE).unwrap();
    let v = Waveform::new(vec![0.3; 100], SAMPLE_RATE).unwrap();
    // -ln(0.5) + |0.1 - 0.3|
    assert!((loss_gan_generator(0.5, &w, &v).unwrap() - (2f64.ln() + 0.2)).abs() < 1e-6);
    assert!(loss_gan_generator(0.0, &w, &v).is_err());
    assert!((discriminator_loss(0.5, 0.5) - 2.0 * 2f64.ln()).abs() < 1e-12);
    assert!(discriminator_loss(1.0, 0.0).is_finite());
}

/// Collects everything written to it.
#[derive(Clone, Default)]
struct Sink(Arc<Mutex<Vec<u8>>>);

impl std::io::Write for Sink {
    fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(b);
        Ok(b.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn tiny_setup() -> (FrontEnd, Vec<TrainingExample>) {
    let texts = ["the small bird sings.", "a green hill again."];
    let bpe = bpe_train(&texts, 270).unwrap();
    let front = FrontEnd::new(bpe, NeuralCodec::untrained(CodecConfig::default()), 16);
    let ex = texts.iter().enumerate().map(|(i, t)| front.prepare(t, &Voice::numbered(i as u64).say(t), 40).unwrap()).collect();
    (front, ex)
}

#[test]
fn accumulation_steps_the_optimizer_every_n_micro_batches() {
    let (front, ex) = tiny_setup();
    let cfg = TrainConfig { grad_accum: 3, batch: 1, warmup_steps: 2, total_steps: 20, use_gan: false, ..Default::default() };
    let lm = CodecLm::new(LmConfig::new(16, 2, 1)).unwrap();
    let start = lm.checksum();
    let mut t = Trainer::new(lm, front.frozen(), cfg, None).unwrap();
    t.train_step(&[&ex[0]]).unwrap();
    t.train_step(&[&ex[1]]).unwrap();
    assert_eq!(t.optimizer_steps(), 0);
    assert_eq!(t.lm().checksum(), start);
    t.train_step(&[&ex[0]]).unwrap();
    assert_eq!(t.optimizer_steps(), 1);
    assert_ne!(t.lm().checksum(), start);
    assert_eq!(t.micro_steps(), 3);
    // the first update uses lr_at(1)
    assert!((t.history()[2].lr - lr_at(1, t.config()).unwrap()).abs() < 1e-18);
    t.verify_frozen().unwrap();
}

#[test]
fn fit_logs_every_micro_step() {
    let (front, ex) = tiny_setup();
    let cfg = TrainConfig { grad_accum: 2, batch: 2, warmup_steps: 2, total_steps: 20, use_gan: false, ..Default::default() };
    let mut t = Trainer::new(CodecLm::new(LmConfig::new(16, 2, 1)).unwrap(), front.frozen(), cfg, None).unwrap();
    let sink = Sink::default();
    let mut log = LossLog::to_writer(Box::new(sink.clone())).unwrap();
    t.fit(&ex, 3, Some(&mut log)).unwrap();
    let text = String::from_utf8(sink.0.lock().unwrap().clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], LossLog::HEADER);
    assert_eq!(lines.len(), 1 + 6);
    for (i, l) in lines[1..].iter().enumerate() {
        let cols: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(cols.len(), 6);
        assert_eq!(cols[0], i as f64);
        assert!(cols[1] > 0.0 && cols[2] > 0.0 && cols[3] == 0.0);
    }
}

#[test]
fn training_examples_align_tokens_mel_and_audio() {
    let (front, _) = tiny_setup();
    let w = Voice::numbered(4).say("bright river stone.");
    let tokens = select_first_codebook(&front.codec.encode_audio(&w).unwrap());
    let ex = TrainingExample::new(tokens.clone(), front.encode_text("x y").unwrap(), front.speaker.embed(&w).unwrap(), &mel_spectrogram(&w), &w, 30).unwrap();
    assert_eq!(ex.tokens.len(), 29);
    assert_eq!(ex.target_mel.rows(), 29);
    assert_eq!(ex.wave.len(), 29 * 294);
    assert_eq!(ex.tokens.tokens(), &tokens.tokens()[..29]);
    let t = ex.tensors::<f32>();
    assert_eq!(t.input.len(), 30);
    assert_eq!(t.input[0], codec_tts::tokens::SOS);
    assert_eq!(*t.target.last().unwrap(), codec_tts::tokens::EOS);
}

#[test]
fn use_gan_requires_a_vocoder() {
    let (front, _) = tiny_setup();
    let lm = CodecLm::new(LmConfig::new(16, 2, 1)).unwrap();
    assert!(matches!(Trainer::new(lm, front.frozen(), TrainConfig::default(), None), Err(Error::InvalidArgument(_))));
}
