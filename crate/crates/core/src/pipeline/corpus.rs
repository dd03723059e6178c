use super::manifest::{Manifest, ManifestRecord};
use super::models::{load_audio, FrontEnd};
use crate::audio::{write_wav, Waveform};
use crate::error::{Error, Result};
use crate::synthetic::Voice;
use crate::training::TrainingExample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// A manifest record with its audio loaded.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub record: ManifestRecord,
    pub wave: Waveform,
}

/// Loads every file of `m`, relative paths resolved against `base`.
pub fn load_corpus(m: &Manifest, base: &Path) -> Result<Vec<Utterance>> {
    if m.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    m.validate_paths(base)?;
    m.records.iter().map(|r| Ok(Utterance { record: r.clone(), wave: load_audio(Manifest::resolve(base, r))? })).collect()
}

pub fn prepare_examples(front: &FrontEnd, corpus: &[Utterance], max_seq: usize) -> Result<Vec<TrainingExample>> {
    corpus.iter().map(|u| front.prepare(&u.record.transcript, &u.wave, max_seq)).collect()
}

const WORDS: [&str; 24] = [
    "the", "a", "cat", "dog", "sees", "runs", "over", "under", "bright", "quiet", "river", "stone", "moves", "slowly", "north", "light", "green", "hill", "small", "bird", "sings", "today", "again", "home",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpusConfig {
    pub speakers: usize,
    pub per_speaker: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self { speakers: 2, per_speaker: 4, min_words: 3, max_words: 6, seed: 1 }
    }
}

/// Random sentence from a fixed word list, at least 12 characters long so
/// its audio clears the speaker-reference minimum.
pub fn toy_sentence(rng: &mut impl Rng, min_words: usize, max_words: usize) -> String {
    loop {
        let n = rng.gen_range(min_words..=max_words.max(min_words));
        let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).expect("word list")).collect();
        let mut s = words.join(" ");
        s.push('.');
        if s.len() >= 12 {
            return s;
        }
    }
}

/// Writes a synthetic multi-speaker corpus (WAV files plus `manifest.tsv`)
/// into `dir` and returns the manifest. Audio is [`Voice::say`] of the
/// transcript, so text and sound are tied deterministically.
pub fn toy_corpus(dir: &Path, cfg: &ToyCorpusConfig) -> Result<Manifest> {
    if cfg.speakers == 0 || cfg.per_speaker == 0 || cfg.min_words == 0 {
        return Err(Error::InvalidArgument("toy corpus needs speakers, utterances and words".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    for s in 0..cfg.speakers {
        let voice = Voice::numbered(s as u64);
        for i in 0..cfg.per_speaker {
            let text = toy_sentence(&mut rng, cfg.min_words, cfg.max_words);
            let wave = voice.say(&text);
            let name = format!("spk{s}_{i:03}.wav");
            write_wav(dir.join(&name), &wave)?;
            records.push(ManifestRecord { path: name.into(), speaker: format!("spk{s}"), duration: wave.duration_secs(), transcript: text });
        }
    }
    let m = Manifest::new(records)?;
    m.save(dir.join("manifest.tsv"))?;
    Ok(m)
}
