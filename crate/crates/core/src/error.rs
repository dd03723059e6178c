use std::path::PathBuf;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("empty audio")]
    EmptyAudio,
    #[error("audio too short: {got} samples, need at least {need}")]
    AudioTooShort { got: usize, need: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid vocabulary size {got}: need at least {min}")]
    VocabTooSmall { got: usize, min: usize },
    #[error("sequence of {got} tokens exceeds the limit of {max}")]
    TooLong { got: usize, max: usize },
    #[error("token id {id} out of range (vocabulary size {vocab})")]
    InvalidToken { id: usize, vocab: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("special token {0} in an audio-token sequence")]
    SpecialToken(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite loss at step {step}")]
    Diverged { step: usize },
    #[error("model generated no audio tokens")]
    NoAudio,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
