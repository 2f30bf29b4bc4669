//! Frame-wise vector-quantized autoencoder and token grids.

mod codec;
mod grid;
mod train;

pub use codec::{
    decode_on_tape, encode_on_tape, init_params, lookup, quantize, sidecar, vqvae_loss, Codebook, VqConfig,
    VqLossBreakdown, VqLossVars, VqVae, CODEBOOK, KERNEL, PAD, STRIDE,
};
pub use grid::TokenGrid;
pub use train::{train_vqvae, VqEpochLog, VqTrainConfig, VqTrainReport};
