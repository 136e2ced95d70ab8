//! Per-part residual vector quantized motion codec.

mod codebook;
mod codec;
mod tokenize;
mod train;

pub use codebook::{quantize_nearest, rvq_encode, CodeSequence, Codebook, RvqEncoding};
pub use codec::{
    windows_to_channels, CodecConfig, LossParts, RvqCodec, StraightThroughPlan, CODEC_MAGIC, CODEC_VERSION, DOWNSAMPLE,
};
pub use tokenize::{detokenize_motion, encode_part, tokenize_motion, MotionTokens, PartCodecs};
pub use train::{part_windows, train_codec, CodecStepRecord, CodecTrainReport};
