//! Text frontend: byte-level BPE and the frozen text encoder.

mod bpe;
mod encoder;

pub use bpe::{bpe_train, BpeModel, MAX_TEXT_TOKENS};
pub use encoder::{TextEncoder, TextEncoding, TEXT_ENCODER_SEED};
