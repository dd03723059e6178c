//! Neural-codec text-to-speech.
//!
//! Text goes through byte-level BPE and a frozen text encoder; audio is
//! turned into discrete tokens by a convolutional codec with residual vector
//! quantization. An autoregressive transformer predicts first-codebook
//! tokens conditioned on the text and on a speaker embedding through two
//! cross-attention layers, and a vocoder turns the decoded mel frames back
//! into a waveform.
//!
//! Everything trainable runs on the reverse-mode [`tensor::Graph`], which is
//! generic over `f32` and `f64`.

pub mod audio;
pub mod checkpoint;
pub mod codec;
pub mod error;
pub mod lm;
pub mod nn;
pub mod pipeline;
pub mod speaker;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod tokens;
pub mod training;
pub mod vocoder;

pub use error::{Error, Result};
