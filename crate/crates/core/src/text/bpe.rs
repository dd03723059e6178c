//! Byte-level byte-pair encoding.
//!
//! Ids 0–255 are raw bytes; merge `i` creates id `256 + i`. Training picks the
//! most frequent adjacent pair at every step, breaking ties by the
//! lexicographically smaller pair of byte strings.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

/// Hard cap on encoded text length.
pub const MAX_TEXT_TOKENS: usize = 1024;
const BYTE_SYMBOLS: usize = 256;
const HEADER: &str = "#bpe v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(u32, u32)>,
    /// Byte string of every id.
    symbols: Vec<Vec<u8>>,
    ranks: HashMap<(u32, u32), u32>,
}

impl BpeModel {
    /// Model with no merges: encoding is the raw UTF-8 bytes.
    pub fn bytes_only() -> Self {
        Self::from_merges(Vec::new()).expect("empty merge list is valid")
    }

    /// Rebuilds a model from an ordered merge list, checking that each merge
    /// only refers to ids that exist at that point.
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut symbols: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut ranks = HashMap::new();
        for (i, &(a, b)) in merges.iter().enumerate() {
            let n = symbols.len() as u32;
            if a >= n || b >= n {
                return Err(Error::Parse { line: i + 2, msg: format!("merge ({a}, {b}) refers to an unknown id") });
            }
            let mut s = symbols[a as usize].clone();
            s.extend_from_slice(&symbols[b as usize]);
            symbols.push(s);
            ranks.entry((a, b)).or_insert(i as u32);
        }
        Ok(Self { merges, symbols, ranks })
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Byte string for an id.
    pub fn symbol(&self, id: u32) -> Option<&[u8]> {
        self.symbols.get(id as usize).map(Vec::as_slice)
    }

    /// Encodes without the length cap.
    pub fn encode_unbounded(&self, text: &str) -> Vec<u32> {
        let mut seq: Vec<u32> = text.bytes().map(u32::from).collect();
        loop {
            let best = seq
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min_by_key(|&(r, _)| r);
            let Some((rank, pair)) = best else { break };
            seq = merge_pair(&seq, pair, BYTE_SYMBOLS as u32 + rank);
        }
        seq
    }

    /// Encodes `text`; more than [`MAX_TEXT_TOKENS`] tokens is an error.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let ids = self.encode_unbounded(text);
        if ids.len() > MAX_TEXT_TOKENS {
            return Err(Error::TooLong { got: ids.len(), max: MAX_TEXT_TOKENS });
        }
        Ok(ids)
    }

    /// Exact inverse of [`encode`](Self::encode); ids must be in range and
    /// the concatenated bytes valid UTF-8.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let sym = self.symbol(id).ok_or(Error::InvalidToken { id: id as usize, vocab: self.vocab_size() })?;
            bytes.extend_from_slice(sym);
        }
        String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(format!("decoded bytes are not UTF-8: {e}")))
    }

    /// Plain-text form: a header carrying the vocabulary size, then one
    /// `left right` id pair per line in merge order.
    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER} vocab_size={}\n", self.vocab_size());
        for (a, b) in &self.merges {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
        let vocab: usize = header
            .strip_prefix(HEADER)
            .and_then(|rest| rest.trim().strip_prefix("vocab_size="))
            .and_then(|v| v.trim().parse().ok())
            .ok_or(Error::Parse { line: 1, msg: format!("bad header {header:?}") })?;
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace().map(str::parse::<u32>);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => merges.push((a, b)),
                _ => return Err(Error::Parse { line: i + 2, msg: format!("bad merge line {line:?}") }),
            }
        }
        let model = Self::from_merges(merges)?;
        if model.vocab_size() != vocab {
            return Err(Error::Parse { line: 1, msg: format!("header says {vocab} symbols, merges give {}", model.vocab_size()) });
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn merge_pair(seq: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == pair.0 && seq[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}

/// Greedy merge training up to `vocab_size` symbols (fewer if the corpus runs
/// out of pairs).
pub fn bpe_train(corpus: &[&str], vocab_size: usize) -> Result<BpeModel> {
    if corpus.is_empty() || corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    if vocab_size < BYTE_SYMBOLS {
        return Err(Error::VocabTooSmall { got: vocab_size, min: BYTE_SYMBOLS });
    }
    let mut seqs: Vec<Vec<u32>> = corpus.iter().map(|s| s.bytes().map(u32::from).collect()).collect();
    let mut symbols: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut merges = Vec::new();

    while symbols.len() < vocab_size {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for seq in &seqs {
            for w in seq.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += 1;
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                // smaller byte strings win ties, so compare reversed
                let ka = (&symbols[pa.0 as usize], &symbols[pa.1 as usize]);
                let kb = (&symbols[pb.0 as usize], &symbols[pb.1 as usize]);
                kb.cmp(&ka).then_with(|| pb.cmp(pa))
            })
        });
        let Some((pair, _)) = best else { break };
        let new_id = symbols.len() as u32;
        let mut s = symbols[pair.0 as usize].clone();
        s.extend_from_slice(&symbols[pair.1 as usize]);
        symbols.push(s);
        merges.push(pair);
        for seq in &mut seqs {
            *seq = merge_pair(seq, pair, new_id);
        }
    }
    BpeModel::from_merges(merges)
}
