//! End-to-end orchestration: corpus manifests and statistics, the model set,
//! synthesis with RTF timing and the text-length probe.

mod corpus;
mod manifest;
mod models;
mod probe;
mod stats;
mod synth;
mod table;

pub use corpus::{load_corpus, prepare_examples, toy_corpus, toy_sentence, ToyCorpusConfig, Utterance};
pub use manifest::{Manifest, ManifestRecord};
pub use models::{load_audio, FrontEnd, ModelSet, BPE_FILE, CODEC_FILE, FORMAT_VERSION, LM_FILE, SET_FILE, VOCODER_FILE};
pub use probe::{bucket_label, bucket_of, example_nll, length_probe, probe_table, BucketNll, LENGTH_BUCKETS};
pub use stats::{corpus_stats, count_sentences, normalize_words, CorpusStats};
pub use synth::{bench_rtf, compute_rtf, synthesize, BenchReport, Synthesis, SynthesisReport};
pub use table::Table;
