use crate::failure::Failure;
use crate::*;
use codec_tts::audio::{mel_spectrogram, write_wav, HOP};
use codec_tts::checkpoint::KeyValues;
use codec_tts::codec::{select_first_codebook, train_codec, CodeMatrix, CodecConfig, CodecTrainConfig, NeuralCodec};
use codec_tts::lm::{CodecLm, LmConfig, Sampling};
use codec_tts::pipeline::{
    bench_rtf, corpus_stats, length_probe, load_audio, load_corpus, prepare_examples, probe_table, synthesize, toy_corpus, FrontEnd, Manifest, ModelSet, Table, ToyCorpusConfig,
    Utterance, CODEC_FILE, VOCODER_FILE,
};
use codec_tts::speaker::SpeakerEncoder;
use codec_tts::text::bpe_train;
use codec_tts::tokens::TokenSequence;
use codec_tts::training::{gradient_suite, GradCheckOptions, LossLog, TrainConfig, Trainer};
use codec_tts::vocoder::{train_vocoder, Vocoder, VocoderConfig, VocoderNet, VocoderPair, VocoderTrainConfig};
use codec_tts::Error;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

type Outcome = std::result::Result<(), Failure>;

struct Ctx {
    config: KeyValues,
    seed: u64,
    /// Whether the seed was chosen by the user (or fixed by --deterministic).
    seed_fixed: bool,
}

impl Ctx {
    fn new(cli: &Cli) -> std::result::Result<Self, Failure> {
        let config = match &cli.config {
            Some(p) => KeyValues::load(p).map_err(|e| Failure::Usage(format!("config: {e}")))?,
            None => KeyValues::new(),
        };
        let seed_fixed = cli.seed.is_some() || cli.deterministic;
        let seed = cli.seed.unwrap_or_else(|| if cli.deterministic { 0 } else { SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64) });
        Ok(Self { config, seed, seed_fixed })
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> std::result::Result<T, Failure> {
        self.config.get(key).map_err(|e| Failure::Usage(format!("config: {e}")))?.map_or(Ok(default), Ok)
    }

    fn lm_config(&self) -> std::result::Result<LmConfig, Failure> {
        let mut kv = self.config.section("lm");
        if kv.get_str("preset").is_none() && kv.get_str("hidden_dim").is_none() {
            kv.set("preset", "S");
        }
        Ok(LmConfig::from_kv(&kv)?)
    }

    fn train_config(&self) -> std::result::Result<TrainConfig, Failure> {
        let mut cfg = TrainConfig::from_kv(&self.config.section("train"))?;
        if self.seed_fixed || self.config.get_str("train.seed").is_none() {
            cfg.seed = self.seed;
        }
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Outcome {
    let ctx = Ctx::new(&cli)?;
    match cli.command {
        Command::ToyCorpus(a) => toy(&ctx, a),
        Command::TrainCodec(a) => train_codec_cmd(&ctx, a),
        Command::TrainLm(a) => train_lm_cmd(&ctx, a),
        Command::TrainVocoder(a) => train_vocoder_cmd(&ctx, a),
        Command::Synthesize(a) => synthesize_cmd(&ctx, a),
        Command::Encode(a) => encode_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::CorpusStats(a) => stats_cmd(a),
        Command::BenchRtf(a) => bench_cmd(&ctx, a),
        Command::LengthProbe(a) => probe_cmd(&ctx, a),
        Command::GradCheck(a) => grad_check_cmd(&ctx, a),
    }
}

fn emit(table: &Table, csv: Option<&Path>) -> Outcome {
    print!("{}", table.render());
    if let Some(p) = csv {
        table.write_csv(p)?;
    }
    Ok(())
}

fn corpus(manifest: &Path) -> std::result::Result<Vec<Utterance>, Failure> {
    let m = Manifest::load(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    Ok(load_corpus(&m, base)?)
}

fn sampling(a: &SamplingArgs) -> Sampling {
    match a.sampling {
        SamplingMode::Greedy => Sampling::Greedy,
        SamplingMode::Topk => Sampling::TopK { k: a.k, temperature: a.temperature },
    }
}

fn load_models(dir: &Path) -> std::result::Result<ModelSet, Failure> {
    ModelSet::load(dir).map_err(Failure::model)
}

fn toy(ctx: &Ctx, a: ToyCorpusArgs) -> Outcome {
    let m = toy_corpus(&a.out, &ToyCorpusConfig { speakers: a.speakers, per_speaker: a.per_speaker, seed: ctx.seed, ..Default::default() })?;
    println!("wrote {} utterances and {}", m.len(), a.out.join("manifest.tsv").display());
    Ok(())
}

fn train_codec_cmd(ctx: &Ctx, a: TrainArgs) -> Outcome {
    let utts = corpus(&a.manifest)?;
    let waves: Vec<_> = utts.into_iter().map(|u| u.wave).collect();
    let d = CodecTrainConfig::default();
    let tcfg = CodecTrainConfig {
        steps: ctx.get("codec.steps", d.steps)?,
        lr: ctx.get("codec.lr", d.lr)?,
        max_crop_frames: ctx.get("codec.max_crop_frames", d.max_crop_frames)?,
        seed: ctx.seed,
    };
    let cfg = CodecConfig { seed: ctx.get("codec.seed", CodecConfig::default().seed)?, ..Default::default() };
    let (codec, log) = train_codec(&waves, cfg, &tcfg)?;
    std::fs::create_dir_all(&a.models).map_err(|e| Failure::Data(Error::Io { path: a.models.clone(), source: e }))?;
    codec.save(a.models.join(CODEC_FILE))?;
    let mut t = Table::new(["steps", "first_recon", "last_recon", "checksum"]);
    let first = log.recon.first().map_or("-".into(), |v| format!("{v:.4}"));
    let last = log.recon.last().map_or("-".into(), |v| format!("{v:.4}"));
    t.push([tcfg.steps.to_string(), first, last, codec.checksum()[..16].to_string()]);
    emit(&t, None)
}

fn train_vocoder_cmd(ctx: &Ctx, a: TrainVocoderArgs) -> Outcome {
    let path = a.train.models.join(VOCODER_FILE);
    std::fs::create_dir_all(&a.train.models).map_err(|e| Failure::Data(Error::Io { path: a.train.models.clone(), source: e }))?;
    if a.mode == VocoderMode::Deterministic {
        Vocoder::Deterministic.save(&path)?;
        println!("installed the deterministic vocoder in {}", path.display());
        return Ok(());
    }
    let speaker = SpeakerEncoder::new();
    let pairs = corpus(&a.train.manifest)?
        .into_iter()
        .map(|u| {
            let frames = u.wave.len() / HOP;
            let mel = mel_spectrogram(&u.wave).truncated(frames);
            Ok(VocoderPair { mel: mel.frames, wave: u.wave.slice(0, frames * HOP), speaker_mean: speaker.embed(&u.wave)?.mean() })
        })
        .collect::<codec_tts::Result<Vec<_>>>()?;
    let d = VocoderTrainConfig::default();
    let tcfg = VocoderTrainConfig { steps: ctx.get("vocoder.steps", d.steps)?, lr: ctx.get("vocoder.lr", d.lr)?, seed: ctx.seed };
    let (net, log) = train_vocoder(&pairs, VocoderConfig::default(), &tcfg)?;
    Vocoder::Neural(net).save(&path)?;
    let mut t = Table::new(["steps", "first_l1", "last_l1", "last_d_real", "last_d_fake"]);
    if let (Some(f), Some(l)) = (log.first(), log.last()) {
        t.push([tcfg.steps.to_string(), format!("{:.4}", f.l1), format!("{:.4}", l.l1), format!("{:.3}", l.d_real), format!("{:.3}", l.d_fake)]);
    }
    emit(&t, None)
}

fn train_lm_cmd(ctx: &Ctx, a: TrainLmArgs) -> Outcome {
    let models = &a.train.models;
    let codec = NeuralCodec::load(models.join(CODEC_FILE)).map_err(Failure::model)?;
    let utts = corpus(&a.train.manifest)?;
    let transcripts: Vec<&str> = utts.iter().map(|u| u.record.transcript.as_str()).collect();
    let bpe = bpe_train(&transcripts, ctx.get("bpe.vocab_size", 512)?)?;
    let lm_cfg = ctx.lm_config()?;
    let cfg = ctx.train_config()?;
    let front = FrontEnd::new(bpe, codec, lm_cfg.hidden_dim);
    let examples = prepare_examples(&front, &utts, cfg.max_seq)?;
    let existing = match Vocoder::load(models.join(VOCODER_FILE)) {
        Ok(v) => Some(v),
        Err(Error::Io { .. }) => None,
        Err(e) => return Err(Failure::model(e)),
    };
    let gan_vocoder = cfg.use_gan.then(|| match &existing {
        Some(Vocoder::Neural(n)) => n.clone(),
        _ => VocoderNet::new(VocoderConfig::default()),
    });
    let lm = CodecLm::new(lm_cfg)?;
    let mut trainer = Trainer::new(lm, front.frozen(), cfg, gan_vocoder)?;
    let mut log = a.log.as_ref().map(LossLog::create).transpose()?;
    let fitted = trainer.fit(&examples, a.updates, log.as_mut());
    let last = trainer.history().last().copied();
    let lm = match &fitted {
        Ok(()) => trainer.lm().clone(),
        Err(_) => trainer.last_good().clone(),
    };
    let (_, trained_vocoder) = trainer.into_parts();
    let vocoder = match (trained_vocoder, existing) {
        (Some(v), _) => Vocoder::Neural(v),
        (None, Some(v)) => v,
        (None, None) => Vocoder::Deterministic,
    };
    ModelSet::new(front, lm, vocoder)?.save(models)?;
    fitted?;
    let mut t = Table::new(["updates", "l_ce", "l_mel", "l_gan", "l_total", "lr"]);
    if let Some(b) = last {
        t.push([a.updates.to_string(), format!("{:.4}", b.l_ce), format!("{:.4}", b.l_mel), format!("{:.4}", b.l_gan), format!("{:.4}", b.l_total), format!("{:.3e}", b.lr)]);
    }
    emit(&t, None)
}

fn synthesize_cmd(ctx: &Ctx, a: SynthesizeArgs) -> Outcome {
    if a.text.trim().is_empty() {
        return Err(Failure::Data(Error::EmptyInput("text")));
    }
    let models = load_models(&a.models)?;
    let reference = load_audio(&a.reference)?;
    let mut s = synthesize(&models, &a.text, &reference, sampling(&a.sampling), ctx.seed)?;
    write_wav(&a.out, &s.wave)?;
    s.report.output = Some(a.out.clone());
    let r = &s.report;
    let mut t = Table::new(["tokens", "audio_s", "synth_s", "rtf", "vocoder", "output"]);
    t.push([r.token_count.to_string(), format!("{:.3}", r.audio_seconds), format!("{:.4}", r.synth_seconds), format!("{:.4}", r.rtf), models.vocoder.mode_name().to_string(), a.out.display().to_string()]);
    emit(&t, None)
}

fn encode_cmd(a: EncodeArgs) -> Outcome {
    let codec = NeuralCodec::load(a.models.join(CODEC_FILE)).map_err(Failure::model)?;
    let wave = load_audio(&a.input)?;
    let codes = codec.encode_audio(&wave)?;
    std::fs::write(&a.out, codes.to_text()).map_err(|e| Failure::Data(Error::Io { path: a.out.clone(), source: e }))?;
    println!("{} frames x 4 codebooks -> {}", codes.n_frames(), a.out.display());
    Ok(())
}

fn decode_cmd(a: DecodeArgs) -> Outcome {
    let codec = NeuralCodec::load(a.models.join(CODEC_FILE)).map_err(Failure::model)?;
    let vocoder = Vocoder::load(a.models.join(VOCODER_FILE)).map_err(Failure::model)?;
    let text = std::fs::read_to_string(&a.codes).map_err(|e| Failure::Data(Error::Io { path: a.codes.clone(), source: e }))?;
    let codes = CodeMatrix::from_text(&text)?;
    let tokens: TokenSequence = select_first_codebook(&codes);
    if tokens.is_empty() {
        return Err(Failure::Data(Error::EmptyInput("code file")));
    }
    let speaker = SpeakerEncoder::new().embed(&load_audio(&a.reference)?)?;
    let mel = codec.decode_tokens(&tokens)?;
    let wave = vocoder.vocode(&mel, &speaker)?;
    write_wav(&a.out, &wave)?;
    println!("{} frames -> {} samples -> {}", tokens.len(), wave.len(), a.out.display());
    Ok(())
}

fn stats_cmd(a: CorpusStatsArgs) -> Outcome {
    let m = Manifest::load(&a.manifest)?;
    emit(&corpus_stats(&m)?.table(), a.csv.as_deref())
}

fn bench_cmd(ctx: &Ctx, a: BenchArgs) -> Outcome {
    let mut texts = a.text.clone();
    if let Some(p) = &a.texts {
        let body = std::fs::read_to_string(p).map_err(|e| Failure::Data(Error::Io { path: p.clone(), source: e }))?;
        texts.extend(body.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    if texts.is_empty() {
        return Err(Failure::Usage("bench-rtf needs --text or --texts".into()));
    }
    let models = load_models(&a.models)?;
    let reference = load_audio(&a.reference)?;
    let report = bench_rtf(&models, &texts, &reference, sampling(&a.sampling), ctx.seed, a.repeats)?;
    emit(&report.table(), a.csv.as_deref())
}

fn probe_cmd(ctx: &Ctx, a: ProbeArgs) -> Outcome {
    let models = load_models(&a.models)?;
    let utts = corpus(&a.manifest)?;
    let max_seq = ctx.get("train.max_seq", TrainConfig::default().max_seq)?;
    let examples = prepare_examples(&models.front, &utts, max_seq)?;
    let trained = length_probe(&models.lm, &examples)?;
    let baseline = length_probe(&CodecLm::new(models.lm.cfg.clone())?, &examples)?;
    for b in trained.iter().filter(|b| b.mean_nll.is_none()) {
        eprintln!("note: bucket {} has no texts, skipped", b.label);
    }
    emit(&probe_table(&trained, Some(&baseline)), a.csv.as_deref())
}

fn grad_check_cmd(ctx: &Ctx, a: GradCheckArgs) -> Outcome {
    let opts = GradCheckOptions { seed: ctx.seed, ..Default::default() };
    let reports = gradient_suite(&opts)?;
    let mut t = Table::new(["component", "coords", "max_rel_err", "worst", "pass"]);
    for (name, r) in &reports {
        t.push([name.to_string(), r.coords_checked.to_string(), format!("{:.3e}", r.max_rel_err), r.worst.clone(), r.passes(a.tolerance).to_string()]);
    }
    emit(&t, a.csv.as_deref())?;
    match reports.iter().find(|(_, r)| !r.passes(a.tolerance)) {
        Some((name, r)) => Err(Failure::Failed(format!("gradient check failed for {name}: {:.3e}", r.max_rel_err))),
        None => Ok(()),
    }
}
