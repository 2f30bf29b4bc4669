//! Autoregressive visual-token decoder with axis-sparse attention.

mod config;
mod model;
mod pattern;
mod text;
mod train;

pub use config::DecoderConfig;
pub use model::{
    attention_layer, decoder_loss_on_tape, dense_masked_attention, embed_text, embed_video_tokens, forward_on_tape,
    init_params, is_trainable, AttentionRoute, Decoder, Patterns,
};
pub use pattern::{build_pattern, AttentionAxis, SparseAttentionPattern};
pub use text::TextSequence;
pub use train::{train_decoder, DecoderTrainConfig, DecoderTrainReport};

#[cfg(test)]
mod tests;
