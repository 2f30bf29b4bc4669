//! The resolved configuration shared by every subcommand.
//!
//! Layers, lowest first: preset defaults, `--config` file, `--set k=v`
//! overrides, dedicated flags. The result is written back as
//! `resolved.cfg` into every output directory and can be fed to `--config`
//! to repeat a run.

use std::fmt::Display;
use std::str::FromStr;
use std::time::Duration;

use vqvid::config::{render_kv, KvReader};
use vqvid::dataset::{vocab_size, DatasetConfig, Glyphs, MotionType, SceneGeometry};
use vqvid::decoder::{DecoderConfig, DecoderTrainConfig};
use vqvid::metrics::{HttpOracle, HttpOracleConfig, SimilarityOracle, ToyOracle};
use vqvid::sampler::{SamplingConfig, Strategy};
use vqvid::vq::{VqConfig, VqTrainConfig};
use vqvid::{Error, Result};

pub const RESOLVED: &str = "resolved.cfg";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(Error::Config {
                field: "preset".into(),
                message: format!("expected desk or full, got `{s}`"),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleKind {
    Toy,
    Http,
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(OracleKind::Toy),
            "http" => Ok(OracleKind::Http),
            _ => Err(invalid("oracle.kind", format!("expected toy or http, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for OracleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OracleKind::Toy => "toy",
            OracleKind::Http => "http",
        })
    }
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// Comma-separated `digit:motion` pairs, or `none`.
#[derive(Clone, Debug, PartialEq)]
pub struct Holdout(pub Vec<(u8, MotionType)>);

impl FromStr for Holdout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "none" || s.trim().is_empty() {
            return Ok(Holdout(Vec::new()));
        }
        s.split(',')
            .map(|item| {
                let (d, m) = item
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| invalid("data.holdout", format!("expected digit:motion, got `{item}`")))?;
                let d: u8 = d.parse().ok().filter(|d| *d < 10).ok_or_else(|| invalid("data.holdout", format!("bad digit `{d}`")))?;
                Ok((d, m.parse()?))
            })
            .collect::<Result<_>>()
            .map(Holdout)
    }
}

impl std::fmt::Display for Holdout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self.0.iter().map(|(d, m)| format!("{d}:{m}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Comma-separated list of sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct Sizes(pub Vec<usize>);

impl FromStr for Sizes {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<std::result::Result<_, _>>()
            .map(Sizes)
    }
}

impl std::fmt::Display for Sizes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub seed: u64,

    pub data_count: usize,
    pub data_train_ratio: f64,
    pub data_frames: usize,
    pub data_height: usize,
    pub data_width: usize,
    pub data_channels: usize,
    pub data_speed: usize,
    pub data_glyph_scale: usize,
    pub data_two_digit_fraction: f64,
    pub data_random_starts: bool,
    pub data_holdout: Holdout,

    pub vq_hidden: usize,
    pub vq_latent_dim: usize,
    pub vq_codebook_size: usize,
    pub vq_beta: f64,

    pub gen_text_len: usize,
    pub gen_model_dim: usize,
    pub gen_layers: usize,
    pub gen_heads: usize,

    pub train_vq_steps: usize,
    pub train_vq_lr: f64,
    pub train_vq_batch_frames: usize,
    /// Train on at most this many training videos; 0 means all.
    pub train_vq_videos: usize,
    /// Fail the run when the final mean reconstruction MSE is above this;
    /// 0 disables the check.
    pub train_vq_target_mse: f64,
    pub train_gen_steps: usize,
    pub train_gen_lr: f64,
    pub train_gen_batch: usize,

    pub sample_strategy: Strategy,
    pub sample_k: usize,
    pub sample_temperature: f64,
    pub sample_candidates: usize,

    pub oracle_kind: OracleKind,
    pub oracle_url: String,
    pub oracle_dim: usize,
    pub oracle_timeout_secs: u64,
    pub oracle_retries: u32,
    pub oracle_cells: usize,

    pub bench_frames: Sizes,
    pub bench_heights: Sizes,
    pub bench_widths: Sizes,
    pub bench_text_len: usize,
}

impl Settings {
    pub fn preset(preset: Preset) -> Self {
        let desk = Self {
            seed: 0,
            data_count: 100,
            data_train_ratio: 0.8,
            data_frames: 4,
            data_height: 16,
            data_width: 16,
            data_channels: 1,
            data_speed: 2,
            data_glyph_scale: 1,
            data_two_digit_fraction: 0.0,
            data_random_starts: false,
            data_holdout: Holdout(vec![(9, MotionType::DownThenUp)]),
            vq_hidden: 32,
            vq_latent_dim: 16,
            vq_codebook_size: 64,
            vq_beta: 0.25,
            gen_text_len: 16,
            gen_model_dim: 64,
            gen_layers: 3,
            gen_heads: 4,
            train_vq_steps: 2000,
            train_vq_lr: 1e-3,
            train_vq_batch_frames: 32,
            train_vq_videos: 0,
            train_vq_target_mse: 0.0,
            train_gen_steps: 1000,
            train_gen_lr: 5e-4,
            train_gen_batch: 8,
            sample_strategy: Strategy::TopK,
            sample_k: 10,
            sample_temperature: 1.0,
            sample_candidates: 32,
            oracle_kind: OracleKind::Toy,
            oracle_url: "http://127.0.0.1:8080".into(),
            oracle_dim: 512,
            oracle_timeout_secs: 30,
            oracle_retries: 2,
            oracle_cells: 4,
            bench_frames: Sizes(vec![4, 10]),
            bench_heights: Sizes(vec![4, 16]),
            bench_widths: Sizes(vec![4, 16]),
            bench_text_len: 35,
        };
        match preset {
            Preset::Desk => desk,
            Preset::Full => Self {
                data_frames: 10,
                data_height: 64,
                data_width: 64,
                data_channels: 3,
                data_speed: 4,
                data_glyph_scale: 3,
                vq_hidden: 128,
                vq_latent_dim: 128,
                vq_codebook_size: 10000,
                gen_text_len: 35,
                gen_model_dim: 1024,
                gen_layers: 12,
                gen_heads: 16,
                train_gen_batch: 32,
                bench_frames: Sizes(vec![10]),
                bench_heights: Sizes(vec![16]),
                bench_widths: Sizes(vec![16]),
                ..desk
            },
        }
    }

    /// Applies every key present in `r`, leaving the rest untouched.
    pub fn apply(&mut self, r: &mut KvReader) -> Result<()> {
        r.set("seed", &mut self.seed)?;
        r.set("data.count", &mut self.data_count)?;
        r.set("data.train_ratio", &mut self.data_train_ratio)?;
        r.set("data.frames", &mut self.data_frames)?;
        r.set("data.height", &mut self.data_height)?;
        r.set("data.width", &mut self.data_width)?;
        r.set("data.channels", &mut self.data_channels)?;
        r.set("data.speed", &mut self.data_speed)?;
        r.set("data.glyph_scale", &mut self.data_glyph_scale)?;
        r.set("data.two_digit_fraction", &mut self.data_two_digit_fraction)?;
        r.set("data.random_starts", &mut self.data_random_starts)?;
        r.set("data.holdout", &mut self.data_holdout)?;
        r.set("vq.hidden", &mut self.vq_hidden)?;
        r.set("vq.latent_dim", &mut self.vq_latent_dim)?;
        r.set("vq.codebook_size", &mut self.vq_codebook_size)?;
        r.set("vq.beta", &mut self.vq_beta)?;
        r.set("gen.text_len", &mut self.gen_text_len)?;
        r.set("gen.model_dim", &mut self.gen_model_dim)?;
        r.set("gen.layers", &mut self.gen_layers)?;
        r.set("gen.heads", &mut self.gen_heads)?;
        r.set("train.vq_steps", &mut self.train_vq_steps)?;
        r.set("train.vq_lr", &mut self.train_vq_lr)?;
        r.set("train.vq_batch_frames", &mut self.train_vq_batch_frames)?;
        r.set("train.vq_videos", &mut self.train_vq_videos)?;
        r.set("train.vq_target_mse", &mut self.train_vq_target_mse)?;
        r.set("train.gen_steps", &mut self.train_gen_steps)?;
        r.set("train.gen_lr", &mut self.train_gen_lr)?;
        r.set("train.gen_batch", &mut self.train_gen_batch)?;
        r.set("sample.strategy", &mut self.sample_strategy)?;
        r.set("sample.k", &mut self.sample_k)?;
        r.set("sample.temperature", &mut self.sample_temperature)?;
        r.set("sample.candidates", &mut self.sample_candidates)?;
        r.set("oracle.kind", &mut self.oracle_kind)?;
        r.set("oracle.url", &mut self.oracle_url)?;
        r.set("oracle.dim", &mut self.oracle_dim)?;
        r.set("oracle.timeout_secs", &mut self.oracle_timeout_secs)?;
        r.set("oracle.retries", &mut self.oracle_retries)?;
        r.set("oracle.cells", &mut self.oracle_cells)?;
        r.set("bench.frames", &mut self.bench_frames)?;
        r.set("bench.heights", &mut self.bench_heights)?;
        r.set("bench.widths", &mut self.bench_widths)?;
        r.set("bench.text_len", &mut self.bench_text_len)?;
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut pairs: Vec<(&str, String)> = Vec::new();
        let mut put = |k: &'static str, v: &dyn Display| pairs.push((k, v.to_string()));
        put("seed", &self.seed);
        put("data.count", &self.data_count);
        put("data.train_ratio", &self.data_train_ratio);
        put("data.frames", &self.data_frames);
        put("data.height", &self.data_height);
        put("data.width", &self.data_width);
        put("data.channels", &self.data_channels);
        put("data.speed", &self.data_speed);
        put("data.glyph_scale", &self.data_glyph_scale);
        put("data.two_digit_fraction", &self.data_two_digit_fraction);
        put("data.random_starts", &self.data_random_starts);
        put("data.holdout", &self.data_holdout);
        put("vq.hidden", &self.vq_hidden);
        put("vq.latent_dim", &self.vq_latent_dim);
        put("vq.codebook_size", &self.vq_codebook_size);
        put("vq.beta", &self.vq_beta);
        put("gen.text_len", &self.gen_text_len);
        put("gen.model_dim", &self.gen_model_dim);
        put("gen.layers", &self.gen_layers);
        put("gen.heads", &self.gen_heads);
        put("train.vq_steps", &self.train_vq_steps);
        put("train.vq_lr", &self.train_vq_lr);
        put("train.vq_batch_frames", &self.train_vq_batch_frames);
        put("train.vq_videos", &self.train_vq_videos);
        put("train.vq_target_mse", &self.train_vq_target_mse);
        put("train.gen_steps", &self.train_gen_steps);
        put("train.gen_lr", &self.train_gen_lr);
        put("train.gen_batch", &self.train_gen_batch);
        put("sample.strategy", &self.sample_strategy);
        put("sample.k", &self.sample_k);
        put("sample.temperature", &self.sample_temperature);
        put("sample.candidates", &self.sample_candidates);
        put("oracle.kind", &self.oracle_kind);
        put("oracle.url", &self.oracle_url);
        put("oracle.dim", &self.oracle_dim);
        put("oracle.timeout_secs", &self.oracle_timeout_secs);
        put("oracle.retries", &self.oracle_retries);
        put("oracle.cells", &self.oracle_cells);
        put("bench.frames", &self.bench_frames);
        put("bench.heights", &self.bench_heights);
        put("bench.widths", &self.bench_widths);
        put("bench.text_len", &self.bench_text_len);
        render_kv(pairs)
    }

    pub fn geometry(&self) -> SceneGeometry {
        SceneGeometry {
            frames: self.data_frames,
            height: self.data_height,
            width: self.data_width,
            channels: self.data_channels,
            speed: self.data_speed,
        }
    }

    pub fn glyphs(&self) -> Glyphs {
        Glyphs::builtin(self.data_glyph_scale)
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            count: self.data_count,
            train_ratio: self.data_train_ratio,
            seed: self.seed,
            geometry: self.geometry(),
            two_digit_fraction: self.data_two_digit_fraction,
            random_starts: self.data_random_starts,
            holdout: self.data_holdout.0.clone(),
        }
    }

    pub fn vq(&self) -> Result<VqConfig> {
        let cfg = VqConfig {
            height: self.data_height,
            width: self.data_width,
            channels: self.data_channels,
            hidden: self.vq_hidden,
            latent_dim: self.vq_latent_dim,
            codebook_size: self.vq_codebook_size,
            beta: self.vq_beta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Decoder shape for token grids produced by `vq` over `frames` frames.
    pub fn decoder(&self, vq: &VqConfig, frames: usize) -> Result<DecoderConfig> {
        let (height, width) = vq.latent_extent()?;
        let cfg = DecoderConfig {
            text_len: self.gen_text_len,
            text_vocab: vocab_size(),
            frames,
            height,
            width,
            model_dim: self.gen_model_dim,
            layers: self.gen_layers,
            heads: self.gen_heads,
            codebook_size: vq.codebook_size,
            latent_dim: vq.latent_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn vq_train(&self) -> VqTrainConfig {
        VqTrainConfig {
            steps: self.train_vq_steps,
            learning_rate: self.train_vq_lr,
            batch_frames: self.train_vq_batch_frames,
            seed: self.seed,
        }
    }

    pub fn gen_train(&self) -> DecoderTrainConfig {
        DecoderTrainConfig {
            steps: self.train_gen_steps,
            learning_rate: self.train_gen_lr,
            batch: self.train_gen_batch,
            seed: self.seed,
        }
    }

    /// Greedy decoding always yields one candidate.
    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            strategy: self.sample_strategy,
            k: self.sample_k,
            temperature: self.sample_temperature,
            candidates: if self.sample_strategy == Strategy::Greedy { 1 } else { self.sample_candidates },
            seed: self.seed,
        }
    }

    pub fn oracle(&self) -> Result<Box<dyn SimilarityOracle>> {
        Ok(match self.oracle_kind {
            OracleKind::Toy => Box::new(ToyOracle::new(self.glyphs(), self.geometry(), self.oracle_cells)?),
            OracleKind::Http => {
                let mut cfg = HttpOracleConfig::new(self.oracle_url.clone(), self.oracle_dim);
                cfg.timeout = Duration::from_secs(self.oracle_timeout_secs);
                cfg.retries = self.oracle_retries;
                Box::new(HttpOracle::new(cfg)?)
            }
        })
    }

    /// Checks that do not depend on a particular command.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.data_train_ratio) {
            return Err(invalid("data.train_ratio", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.data_two_digit_fraction) {
            return Err(invalid("data.two_digit_fraction", "must lie in [0, 1]"));
        }
        if self.data_frames == 0 {
            return Err(invalid("data.frames", "must be positive"));
        }
        for (field, v) in [("train.vq_lr", self.train_vq_lr), ("train.gen_lr", self.train_gen_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, "must be positive"));
            }
        }
        for (field, v) in [("train.vq_batch_frames", self.train_vq_batch_frames), ("train.gen_batch", self.train_gen_batch)] {
            if v == 0 {
                return Err(invalid(field, "must be positive"));
            }
        }
        let (gh, gw) = self.glyphs().size();
        if gh > self.data_height || gw > self.data_width {
            return Err(invalid("data.glyph_scale", format!("{gh}×{gw} glyphs do not fit the canvas")));
        }
        self.vq()?;
        self.sampling().validate(self.vq_codebook_size)?;
        Ok(())
    }
}
