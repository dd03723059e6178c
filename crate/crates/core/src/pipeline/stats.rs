use super::manifest::Manifest;
use super::table::Table;
use crate::error::{Error, Result};
use std::collections::HashMap;

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub hours: f64,
    /// Seconds.
    pub mean_audio_length: f64,
    pub total_words: usize,
    /// Distinct normalized words.
    pub vocab_size: usize,
    pub sentences: usize,
    /// `total_words / vocab_size`.
    pub mean_word_freq: f64,
    pub total_recordings: usize,
}

/// Lowercases, splits on whitespace and strips leading and trailing
/// non-alphanumeric characters; tokens left empty are dropped.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.to_lowercase().trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Non-empty segments between `.`, `!` and `?`.
pub fn count_sentences(text: &str) -> usize {
    text.split(['.', '!', '?']).filter(|s| s.chars().any(char::is_alphanumeric)).count()
}

pub fn corpus_stats(m: &Manifest) -> Result<CorpusStats> {
    if m.is_empty() {
        return Err(Error::EmptyInput("manifest"));
    }
    // sort so that the floating-point sum does not depend on record order
    let mut durations: Vec<f64> = m.records.iter().map(|r| r.duration).collect();
    durations.sort_by(f64::total_cmp);
    let total: f64 = durations.iter().sum();
    let mut freq: HashMap<String, usize> = HashMap::new();
    let mut total_words = 0;
    let mut sentences = 0;
    for r in &m.records {
        for w in normalize_words(&r.transcript) {
            total_words += 1;
            *freq.entry(w).or_default() += 1;
        }
        sentences += count_sentences(&r.transcript);
    }
    let n = m.len();
    let vocab_size = freq.len();
    Ok(CorpusStats {
        hours: total / 3600.0,
        mean_audio_length: total / n as f64,
        total_words,
        vocab_size,
        sentences,
        mean_word_freq: if vocab_size == 0 { 0.0 } else { total_words as f64 / vocab_size as f64 },
        total_recordings: n,
    })
}

impl CorpusStats {
    pub fn table(&self) -> Table {
        let mut t = Table::new(["statistic", "value"]);
        t.push(["hours".to_string(), format!("{:.4}", self.hours)]);
        t.push(["mean_audio_length_s".to_string(), format!("{:.4}", self.mean_audio_length)]);
        t.push(["total_words".to_string(), self.total_words.to_string()]);
        t.push(["vocab_size".to_string(), self.vocab_size.to_string()]);
        t.push(["sentences".to_string(), self.sentences.to_string()]);
        t.push(["mean_word_freq".to_string(), format!("{:.4}", self.mean_word_freq)]);
        t.push(["total_recordings".to_string(), self.total_recordings.to_string()]);
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_words("  Hello, WORLD!  \"quoted\" -- it's"), ["hello", "world", "quoted", "it's"]);
        assert_eq!(count_sentences("One. Two? three"), 3);
        assert_eq!(count_sentences("..."), 0);
    }
}
