//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

use codec_tts::audio::{Waveform, HOP, SAMPLE_RATE};
use codec_tts::codec::{codec_frame_count, select_first_codebook, train_codec, CodecConfig, CodecTrainConfig, NeuralCodec, RvqCodebooks, CODEBOOK_SIZE, N_CODEBOOKS};
use codec_tts::lm::{CodecLm, LmConfig, Sampling, Session};
use codec_tts::pipeline::{
    bench_rtf, compute_rtf, corpus_stats, length_probe, load_corpus, prepare_examples, toy_corpus, CorpusStats, FrontEnd, Manifest, ManifestRecord, ModelSet, ToyCorpusConfig,
    Utterance,
};
use codec_tts::tensor::Tensor;
use codec_tts::text::bpe_train;
use codec_tts::tokens::{AUDIO_VOCAB, SOS};
use codec_tts::training::{gradient_suite, loss_total, lr_at, GradCheckOptions, LossLog, TrainConfig, Trainer, TrainingExample};
use codec_tts::vocoder::{Vocoder, VocoderConfig, VocoderNet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// Two-utterance corpus, trained front end and prepared examples.
struct Fixture {
    _dir: tempfile::TempDir,
    dir: std::path::PathBuf,
    corpus: Vec<Utterance>,
    front: FrontEnd,
    examples: Vec<TrainingExample>,
}

fn fixture(hidden: usize) -> Fixture {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path().to_path_buf();
    let m = toy_corpus(&dir, &ToyCorpusConfig { speakers: 2, per_speaker: 1, ..Default::default() }).expect("toy corpus");
    let corpus = load_corpus(&m, &dir).expect("corpus");
    let waves: Vec<Waveform> = corpus.iter().map(|u| u.wave.clone()).collect();
    let (codec, _) = train_codec(&waves, CodecConfig::default(), &CodecTrainConfig { steps: 30, max_crop_frames: 40, ..Default::default() }).expect("codec");
    let texts: Vec<&str> = corpus.iter().map(|u| u.record.transcript.as_str()).collect();
    let bpe = bpe_train(&texts, 280).expect("bpe");
    let front = FrontEnd::new(bpe, codec, hidden);
    let examples = prepare_examples(&front, &corpus, 500).expect("examples");
    Fixture { _dir: tmp, dir, corpus, front, examples }
}

fn overfit_config() -> TrainConfig {
    // one example pair per update, schedule compressed to the 500-update budget
    TrainConfig { grad_accum: 1, batch: 2, warmup_steps: 50, total_steps: 500, peak_lr: 2e-3, ..Default::default() }
}

fn c1_gradients() -> Verdict {
    let t = Instant::now();
    let reports = match gradient_suite(&GradCheckOptions::default()) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("suite error: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let worst = reports.iter().map(|(_, r)| r.max_rel_err).fold(0.0, f64::max);
    let names: Vec<String> = reports.iter().map(|(n, r)| format!("{n} {:.1e}", r.max_rel_err)).collect();
    verdict(reports.iter().all(|(_, r)| r.passes(1e-4)) && secs < 120.0, format!("max rel err {worst:.2e} < 1e-4 in {secs:.1}s [{}]", names.join("; ")))
}

fn small_lm(seed: u64) -> CodecLm {
    CodecLm::new(LmConfig::new(32, 2, 2).with_seed(seed)).expect("lm")
}

fn conditioning(rng: &mut ChaCha8Rng, hidden: usize) -> (Tensor<f32>, Tensor<f32>) {
    (Tensor::from_fn(7, hidden, |_, _| rng.gen_range(-1.0..1.0)), Tensor::from_fn(20, 256, |_, _| rng.gen_range(-0.1..0.1)))
}

fn c2_causality() -> Verdict {
    let lm = small_lm(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (text, spk) = conditioning(&mut rng, 32);
    let mut tokens: Vec<u32> = vec![SOS];
    tokens.extend((0..63).map(|_| rng.gen_range(0..AUDIO_VOCAB)));
    let base = lm.forward(&tokens, &text, &spk).expect("forward");
    let mut violations = 0;
    for _ in 0..50 {
        let p = rng.gen_range(1..64);
        let mut t = tokens.clone();
        for x in &mut t[p..] {
            *x = rng.gen_range(0..AUDIO_VOCAB);
        }
        let out = lm.forward(&t, &text, &spk).expect("forward");
        if (0..p).any(|r| out.row(r) != base.row(r)) {
            violations += 1;
        }
    }
    verdict(violations == 0, format!("{violations}/50 perturbations changed earlier logits (exact comparison)"))
}

fn c3_kv_cache() -> Verdict {
    let lm = small_lm(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (text, spk) = conditioning(&mut rng, 32);
    let mut session = Session::new(&lm, &text, &spk).expect("session");
    let argmax = |row: &[f32]| (0..AUDIO_VOCAB as usize).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).expect("vocab") as u32;
    let (mut cached, mut oracle) = (vec![SOS], vec![SOS]);
    let mut max_diff = 0.0f32;
    for _ in 0..64 {
        let step = session.step(*cached.last().expect("prefix")).expect("step");
        let full = lm.forward(&oracle, &text, &spk).expect("forward");
        let last = full.row(full.rows() - 1);
        max_diff = step.iter().zip(last).map(|(a, b)| (a - b).abs()).fold(max_diff, f32::max);
        cached.push(argmax(&step));
        oracle.push(argmax(last));
    }
    let same = cached == oracle;
    verdict(same && max_diff <= 1e-5, format!("64 greedy tokens identical: {same}; max |logit diff| {max_diff:.2e} (EOS excluded from argmax)"))
}

fn c4_frames(codec: &NeuralCodec) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    for _ in 0..100 {
        let n = rng.gen_range(HOP..3 * SAMPLE_RATE as usize);
        let w = Waveform::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), SAMPLE_RATE).expect("wave");
        let frames = codec.encode_audio(&w).expect("encode").n_frames();
        if frames != n / HOP || codec_frame_count(n) != n / HOP {
            bad += 1;
        }
    }
    let ten = Waveform::new((0..10 * SAMPLE_RATE as usize).map(|i| 0.3 * (i as f32 * 0.03).sin()).collect(), SAMPLE_RATE).expect("wave");
    let m = codec.encode_audio(&ten).expect("encode");
    let first = select_first_codebook(&m);
    let ok = bad == 0 && m.n_frames() == 750 && m.codes.iter().all(|c| c.len() == 4) && first.len() == 750;
    verdict(ok, format!("{bad}/100 lengths off floor(N/294); 10 s -> {}x{} codes, {} first-codebook tokens", m.n_frames(), N_CODEBOOKS, first.len()))
}

fn c5_rvq(codec: &NeuralCodec) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = codec.config().code_dim;
    let stages: Vec<Tensor<f32>> = (0..N_CODEBOOKS)
        .map(|_| Tensor::from_fn(CODEBOOK_SIZE, dim, |r, _| if r == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) }))
        .collect();
    let books = RvqCodebooks::new(stages).expect("books");
    let mut bad = 0;
    for _ in 0..1000 {
        let x: Vec<f32> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let norm = x.iter().map(|v| v * v).sum::<f32>().sqrt();
        let c = books.quantize(&x);
        let mut prev = norm;
        for &r in &c.residual_norms {
            if r > prev {
                bad += 1;
            }
            prev = r;
        }
    }
    let mut exact_bad = 0;
    for j in [1usize, 17, 500, 1023] {
        let x = books.stages()[0].row(j).to_vec();
        if books.quantize(&x).residual_norms[0] != 0.0 {
            exact_bad += 1;
        }
    }
    // the trained codec keeps its own entry 0 at zero too
    let pinned = (0..N_CODEBOOKS).all(|k| codec.codebooks().stages()[k].row(0).iter().all(|&v| v == 0.0));
    verdict(bad == 0 && exact_bad == 0 && pinned, format!("{bad} norm increases over 1000 latents x 4 stages; {exact_bad}/4 exact entries with non-zero stage-0 residual; codec entry 0 pinned: {pinned}"))
}

struct Overfit {
    lm: CodecLm,
    vocoder: VocoderNet<f32>,
}

fn c6_overfit(fx: &Fixture) -> (Verdict, Overfit) {
    let t = Instant::now();
    let lm = CodecLm::new(LmConfig::new(128, 2, 2)).expect("lm");
    let mut trainer = Trainer::new(lm, fx.front.frozen(), overfit_config(), Some(VocoderNet::new(VocoderConfig::default()))).expect("trainer");
    let batch: Vec<&TrainingExample> = fx.examples.iter().collect();
    let mut reached = None;
    let mut reproduced = false;
    let mut error = None;
    for update in 1..=500 {
        match trainer.train_step(&batch) {
            Ok(b) if b.l_ce < 0.1 && reached.is_none() => reached = Some((update, b.l_ce)),
            Ok(_) => {}
            Err(e) => {
                error = Some(e);
                break;
            }
        }
        if reached.is_some() && update % 10 == 0 {
            reproduced = fx.examples.iter().all(|ex| trainer.lm().generate(&ex.text, &ex.speaker, Sampling::Greedy, 0).map(|g| g == ex.tokens).unwrap_or(false));
            if reproduced {
                break;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let updates = trainer.optimizer_steps();
    let lens: Vec<usize> = fx.examples.iter().map(|e| e.tokens.len()).collect();
    let detail = match (&error, reached) {
        (Some(e), _) => format!("training error: {e}"),
        (None, Some((u, ce))) => format!("l_ce {ce:.4} < 0.1 at update {u}; greedy reproduces both targets {lens:?}: {reproduced} after {updates} updates; {secs:.0}s"),
        (None, None) => format!("l_ce never below 0.1 in 500 updates; {secs:.0}s"),
    };
    let pass = error.is_none() && reached.is_some() && reproduced && secs < 600.0;
    let (lm, vocoder) = trainer.into_parts();
    (verdict(pass, detail), Overfit { lm, vocoder: vocoder.expect("gan vocoder") })
}

fn c7_formulas(fx: &Fixture) -> Verdict {
    let cfg = TrainConfig::default();
    let total = loss_total(1.0, 1.0, 1.0, &cfg);
    let lr = |s| lr_at(s, &cfg).expect("lr");
    let sched = [(32_000, 5e-4), (16_000, 2.5e-4), (cfg.total_steps, 0.0)];
    let sched_ok = sched.iter().all(|&(s, want)| (lr(s) - want).abs() < 1e-15);
    let log_path = fx.dir.join("loss.csv");
    let steps = 6;
    let mut log = LossLog::create(&log_path).expect("log");
    let small = TrainConfig { warmup_steps: 2, total_steps: 10, ..overfit_config() };
    let mut trainer = Trainer::new(small_lm_h(fx), fx.front.frozen(), small, Some(VocoderNet::new(VocoderConfig::default()))).expect("trainer");
    let batch: Vec<&TrainingExample> = fx.examples.iter().collect();
    for _ in 0..steps {
        let b = trainer.train_step(&batch).expect("step");
        log.append(&b).expect("append");
    }
    drop(log);
    let body = std::fs::read_to_string(&log_path).expect("read log");
    let mut lines = body.lines();
    let header_ok = lines.next() == Some("step,l_ce,l_mel,l_gan,l_total,lr");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').filter_map(|v| v.parse().ok()).collect()).collect();
    let rows_ok = rows.len() == steps && rows.iter().enumerate().all(|(i, r)| r.len() == 6 && r[0] == i as f64 && r.iter().all(|v| v.is_finite()) && r[3] > 0.0);
    let pass = (total - 2.5).abs() < 1e-12 && sched_ok && header_ok && rows_ok;
    verdict(
        pass,
        format!(
            "loss_total(1,1,1)={total}; lr_at(32000)={:e} lr_at(16000)={:e} lr_at(total)={}; log {} rows with all columns: {}",
            lr(32_000),
            lr(16_000),
            lr(cfg.total_steps),
            rows.len(),
            header_ok && rows_ok
        ),
    )
}

fn small_lm_h(fx: &Fixture) -> CodecLm {
    CodecLm::new(LmConfig::new(fx.front.text.d_model(), 2, 1)).expect("lm")
}

fn c8_rtf(models: &ModelSet, fx: &Fixture) -> Verdict {
    let unit = compute_rtf(1.0, 1.0).ok() == Some(1.0);
    let texts: Vec<String> = fx.corpus.iter().map(|u| u.record.transcript.clone()).collect();
    let report = match bench_rtf(models, &texts, &fx.corpus[0].wave, Sampling::Greedy, 0, 2) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("bench error: {e}")),
    };
    let runs_ok = report.runs.iter().all(|r| r.rtf == r.synth_seconds / r.audio_seconds && r.audio_seconds == r.token_count as f64 / 75.0);
    let agg_ok = report.rtf == report.synth_seconds / report.audio_seconds;
    verdict(unit && runs_ok && agg_ok, format!("compute_rtf(1,1)=1.0: {unit}; {} runs recompute exactly: {runs_ok}; aggregate rtf {:.4} (hardware-dependent)", report.runs.len(), report.rtf))
}

fn c9_stats() -> Verdict {
    let rec = |p: &str, d: f64, t: &str| ManifestRecord { path: p.into(), speaker: "s".into(), duration: d, transcript: t.into() };
    let m = Manifest::new(vec![rec("a.wav", 3.0, "a b a"), rec("b.wav", 5.0, "b c")]).expect("manifest");
    let s = corpus_stats(&m).expect("stats");
    let want = CorpusStats { hours: 8.0 / 3600.0, mean_audio_length: 4.0, total_words: 5, vocab_size: 3, sentences: 2, mean_word_freq: 5.0 / 3.0, total_recordings: 2 };
    let exact = s == want;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let big = Manifest::new(
        (0..40).map(|i| rec(&format!("{i}.wav"), rng.gen_range(0.5..9.0), ["Hello, world.", "A b c!", "the THE the", "x y. z?"][i % 4])).collect(),
    )
    .expect("manifest");
    let base = corpus_stats(&big).expect("stats");
    let mut shuffled = big.clone();
    let invariant = (0..10).all(|_| {
        shuffled.records.shuffle(&mut rng);
        corpus_stats(&shuffled).expect("stats") == base
    });
    verdict(exact && invariant, format!("2-record example exact: {exact}; identical over 10 shuffles: {invariant}"))
}

fn c10_determinism(models_dir: &Path, reference: &Path) -> Verdict {
    let bin = env!("CARGO_BIN_EXE_codec-tts");
    let out = |name: &str| models_dir.join(name);
    let run = |o: &Path| {
        Command::new(bin)
            .args(["--deterministic", "synthesize", "--sampling", "greedy", "--text", "the quiet river moves."])
            .arg("--models")
            .arg(models_dir)
            .arg("--ref")
            .arg(reference)
            .arg("--out")
            .arg(o)
            .output()
            .expect("run binary")
    };
    let (a, b) = (run(&out("a.wav")), run(&out("b.wav")));
    if !a.status.success() || !b.status.success() {
        return verdict(false, format!("synthesize failed: {}", String::from_utf8_lossy(&a.stderr)));
    }
    let (x, y) = (std::fs::read(out("a.wav")).expect("a"), std::fs::read(out("b.wav")).expect("b"));
    let hdr = x.len() > 44 && &x[..4] == b"RIFF" && u16::from_le_bytes([x[22], x[23]]) == 1 && u32::from_le_bytes([x[24], x[25], x[26], x[27]]) == SAMPLE_RATE && u16::from_le_bytes([x[34], x[35]]) == 16;
    verdict(x == y && hdr, format!("two runs byte-identical: {} ({} bytes, PCM16 mono 22050 Hz: {hdr})", x == y, x.len()))
}

fn c11_frozen(fx: &Fixture) -> Verdict {
    let before = [fx.front.text.checksum(), fx.front.codec.checksum(), fx.front.speaker.checksum()];
    let cfg = TrainConfig { warmup_steps: 10, total_steps: 100, ..overfit_config() };
    let mut trainer = Trainer::new(small_lm_h(fx), fx.front.frozen(), cfg, Some(VocoderNet::new(VocoderConfig::default()))).expect("trainer");
    let lm_before = trainer.lm().checksum();
    let batch = [&fx.examples[0]];
    let mut err = None;
    for _ in 0..100 {
        if let Err(e) = trainer.train_step(&batch) {
            err = Some(e);
            break;
        }
    }
    let after = [fx.front.text.checksum(), fx.front.codec.checksum(), fx.front.speaker.checksum()];
    let lm_moved = trainer.lm().checksum() != lm_before;
    let pass = err.is_none() && before == after && lm_moved && trainer.optimizer_steps() == 100;
    verdict(pass, format!("text/codec/speaker checksums unchanged over {} updates: {}; LM changed: {lm_moved}{}", trainer.optimizer_steps(), before == after, err.map(|e| format!("; error {e}")).unwrap_or_default()))
}

fn c12_probe(lm: &CodecLm, fx: &Fixture) -> Verdict {
    let trained = length_probe(lm, &fx.examples).expect("probe");
    let untrained = length_probe(&CodecLm::new(lm.cfg.clone()).expect("lm"), &fx.examples).expect("probe");
    let mut populated = 0;
    let mut ok = true;
    let mut parts = Vec::new();
    for (t, u) in trained.iter().zip(&untrained) {
        if let (Some(a), Some(b)) = (t.mean_nll, u.mean_nll) {
            populated += 1;
            ok &= a < b && a >= 0.0;
            parts.push(format!("{}: {a:.3} vs {b:.3}", t.label));
        }
    }
    verdict(ok && populated > 0, format!("{populated} populated buckets, trained < untrained NLL in all: {ok} [{}]", parts.join("; ")))
}

fn main() {
    let total = Instant::now();
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |n: usize, name: &'static str, v: Verdict| {
        println!("{} criterion {n:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v));
    };
    report(1, "gradient suite", c1_gradients());
    report(2, "causality", c2_causality());
    report(3, "kv-cache equivalence", c3_kv_cache());
    let fx = fixture(128);
    report(4, "codec frame arithmetic", c4_frames(&fx.front.codec));
    report(5, "rvq residuals", c5_rvq(&fx.front.codec));
    let (v6, overfit) = c6_overfit(&fx);
    report(6, "overfit", v6);
    report(7, "loss formulas and log", c7_formulas(&fx));
    let models = ModelSet::new(fx.front.clone(), overfit.lm.clone(), Vocoder::Neural(overfit.vocoder.clone())).expect("model set");
    report(8, "rtf", c8_rtf(&models, &fx));
    report(9, "corpus stats", c9_stats());
    let models_dir = fx.dir.join("models");
    models.save(&models_dir).expect("save models");
    report(10, "end-to-end determinism", c10_determinism(&models_dir, &fx.dir.join(&fx.corpus[0].record.path)));
    report(11, "frozenness audit", c11_frozen(&fx));
    report(12, "length probe", c12_probe(&overfit.lm, &fx));
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed in {:.0}s", results.len() - failed.len(), results.len(), total.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
