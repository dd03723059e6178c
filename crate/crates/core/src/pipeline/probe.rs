use super::table::Table;
use crate::error::{Error, Result};
use crate::lm::CodecLm;
use crate::training::{loss_ce, TrainingExample};

/// Inclusive text-token ranges; the last is open-ended.
pub const LENGTH_BUCKETS: [(usize, Option<usize>); 5] = [(1, Some(25)), (26, Some(50)), (51, Some(75)), (76, Some(100)), (101, None)];

pub fn bucket_label(i: usize) -> String {
    match LENGTH_BUCKETS[i] {
        (lo, Some(hi)) => format!("{lo}-{hi}"),
        (lo, None) => format!("{lo}+"),
    }
}

/// Bucket of a text of `n` tokens; `None` for an empty text.
pub fn bucket_of(n: usize) -> Option<usize> {
    LENGTH_BUCKETS.iter().position(|&(lo, hi)| n >= lo && hi.map_or(true, |h| n <= h))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BucketNll {
    pub label: String,
    pub count: usize,
    /// Mean teacher-forced NLL in nats per token; `None` when no text fell in the bucket.
    pub mean_nll: Option<f64>,
}

/// Teacher-forced next-token NLL of one example.
pub fn example_nll(lm: &CodecLm, ex: &TrainingExample) -> Result<f64> {
    let t = ex.tensors::<f32>();
    let logits = lm.forward(&t.input, &t.text, &t.speaker)?;
    loss_ce(&logits, &t.target)
}

/// Mean NLL per text-length bucket (length in BPE tokens).
pub fn length_probe(lm: &CodecLm, examples: &[TrainingExample]) -> Result<Vec<BucketNll>> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("probe examples"));
    }
    let mut sums = [(0usize, 0.0f64); LENGTH_BUCKETS.len()];
    for ex in examples {
        let b = bucket_of(ex.text.len()).ok_or(Error::EmptyInput("probe text"))?;
        sums[b].0 += 1;
        sums[b].1 += example_nll(lm, ex)?;
    }
    Ok(sums.iter().enumerate().map(|(i, &(n, s))| BucketNll { label: bucket_label(i), count: n, mean_nll: (n > 0).then(|| s / n as f64) }).collect())
}

/// One row per bucket, optionally next to a baseline run over the same
/// examples; empty buckets are listed as skipped.
pub fn probe_table(buckets: &[BucketNll], baseline: Option<&[BucketNll]>) -> Table {
    let fmt = |v: Option<f64>| v.map_or("skipped (empty)".to_string(), |v| format!("{v:.4}"));
    let mut t = match baseline {
        Some(_) => Table::new(["text_tokens", "utterances", "mean_nll", "baseline_nll"]),
        None => Table::new(["text_tokens", "utterances", "mean_nll"]),
    };
    for (i, b) in buckets.iter().enumerate() {
        let mut row = vec![b.label.clone(), b.count.to_string(), fmt(b.mean_nll)];
        if let Some(base) = baseline {
            row.push(fmt(base[i].mean_nll));
        }
        t.push(row);
    }
    t
}
