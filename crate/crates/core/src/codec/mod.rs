//! Neural audio codec: waveform to RVQ token frames and tokens to mel frames.

mod model;
mod rvq;
mod train;

pub use model::{
    codec_frame_count, codec_loss_graph, select_first_codebook, CodeMatrix, CodecConfig, CodecDetached, CodecLossNodes, CodecNet, NeuralCodec,
    ENCODER_STRIDES,
};
pub use rvq::{nearest_entry, rvq_quantize, RvqCode, RvqCodebooks, CODEBOOK_SIZE, N_CODEBOOKS};
pub use train::{train_codec, CodecTrainConfig, CodecTrainLog};
