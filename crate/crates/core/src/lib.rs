//! Text-to-video generation over discrete visual tokens.
//!
//! A frame-wise VQ-VAE ([`vq`]) turns each video frame into a small grid of
//! codebook indices. An autoregressive decoder ([`decoder`]) predicts those
//! indices from a caption, one token at a time in raster order, using
//! attention restricted to the temporal, row and column axes of the token
//! grid. [`sampler`] draws videos from the decoder and reranks them with a
//! text/frame similarity oracle, and [`metrics`] scores generated videos.
//! [`dataset`] renders a synthetic moving-digit corpus to train and test
//! everything on a laptop.
//!
//! All numerics run on the small reverse-mode engine in [`autodiff`], in
//! double precision.

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod decoder;
mod error;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod sampler;
mod tensor;
pub mod video;
pub mod vq;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    struct Overview;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/tokenizer.md")]
    struct Tokenizer;
    #[doc = include_str!("../../../book/src/attention.md")]
    struct Attention;
    #[doc = include_str!("../../../book/src/sampling.md")]
    struct Sampling;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
