use crate::config::{render_kv, KvReader};
use crate::error::{Error, Result};

/// Shape of the autoregressive decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderConfig {
    /// Maximum caption length `N`.
    pub text_len: usize,
    /// Text vocabulary size `S`.
    pub text_vocab: usize,
    /// Token grid `L × h × w`.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Model width `D`.
    pub model_dim: usize,
    /// Number of layers `R`; a multiple of 3.
    pub layers: usize,
    pub heads: usize,
    /// Visual vocabulary `K`.
    pub codebook_size: usize,
    /// Codebook row dimension `d_B`.
    pub latent_dim: usize,
}

impl Default for DecoderConfig {
    /// Desk scale: 16-word captions over the built-in vocabulary, a 4×4×4
    /// token grid over `K = 64`, `D = 64`, 4 heads, one layer triple.
    fn default() -> Self {
        Self {
            text_len: 16,
            text_vocab: crate::dataset::vocab_size(),
            frames: 4,
            height: 4,
            width: 4,
            model_dim: 64,
            layers: 3,
            heads: 4,
            codebook_size: 64,
            latent_dim: 16,
        }
    }
}

impl DecoderConfig {
    /// `N = 35`, `L = 10`, `16 × 16` grid (`M = 2560`), `D = 1024`, `R = 12`,
    /// 16 heads, `K = 10000`, `d_B = 128`.
    pub fn full() -> Self {
        Self {
            text_len: 35,
            text_vocab: crate::dataset::vocab_size(),
            frames: 10,
            height: 16,
            width: 16,
            model_dim: 1024,
            layers: 12,
            heads: 16,
            codebook_size: 10000,
            latent_dim: 128,
        }
    }

    /// Number of visual tokens `M = L·h·w`.
    pub fn tokens(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("decoder.text_len", self.text_len),
            ("decoder.text_vocab", self.text_vocab),
            ("decoder.frames", self.frames),
            ("decoder.height", self.height),
            ("decoder.width", self.width),
            ("decoder.model_dim", self.model_dim),
            ("decoder.heads", self.heads),
            ("decoder.latent_dim", self.latent_dim),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::config(
                "decoder.heads",
                format!("model_dim {} is not divisible by {} heads", self.model_dim, self.heads),
            ));
        }
        if self.layers < 3 || self.layers % 3 != 0 {
            return Err(Error::config("decoder.layers", "must be a positive multiple of 3"));
        }
        if self.codebook_size < 2 {
            return Err(Error::config("decoder.codebook_size", "need at least 2 tokens"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        render_kv([
            ("text_len", self.text_len),
            ("text_vocab", self.text_vocab),
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("model_dim", self.model_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("codebook_size", self.codebook_size),
            ("latent_dim", self.latent_dim),
        ])
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut r = KvReader::parse(text)?;
        let cfg = Self {
            text_len: r.require("text_len")?,
            text_vocab: r.require("text_vocab")?,
            frames: r.require("frames")?,
            height: r.require("height")?,
            width: r.require("width")?,
            model_dim: r.require("model_dim")?,
            layers: r.require("layers")?,
            heads: r.require("heads")?,
            codebook_size: r.require("codebook_size")?,
            latent_dim: r.require("latent_dim")?,
        };
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}
