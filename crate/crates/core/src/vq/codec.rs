//! Frame-wise VQ-VAE: a two-layer strided conv encoder, nearest-neighbour
//! quantization against a learned codebook, and a two-layer transposed-conv
//! decoder ending in a sigmoid.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::autodiff::{ConvGeometry, Tape, Var};
use crate::checkpoint;
use crate::config::{render_kv, KvReader};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::Tensor;
use crate::video::VideoTensor;

use super::grid::TokenGrid;

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;

/// Name of the codebook tensor inside a VQ-VAE parameter store.
pub const CODEBOOK: &str = "codebook";

/// Shape and loss settings of a VQ-VAE.
#[derive(Clone, Debug, PartialEq)]
pub struct VqConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Channels between the two conv layers.
    pub hidden: usize,
    /// Codebook row dimension `d_B`.
    pub latent_dim: usize,
    /// Number of codebook rows `K`.
    pub codebook_size: usize,
    /// Commitment weight.
    pub beta: f64,
}

impl Default for VqConfig {
    /// Desk scale: 16×16 grayscale frames, 4×4 latent grid, `d_B = 16`,
    /// `K = 64`.
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 1,
            hidden: 32,
            latent_dim: 16,
            codebook_size: 64,
            beta: 0.25,
        }
    }
}

impl VqConfig {
    /// 64×64 RGB frames, 16×16 latent grid, `d_B = 128`, `K = 10000`.
    pub fn full() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 3,
            hidden: 128,
            latent_dim: 128,
            codebook_size: 10000,
            beta: 0.25,
        }
    }

    /// Latent grid extents `(h, w)`.
    pub fn latent_extent(&self) -> Result<(usize, usize)> {
        let down = |e: usize| {
            ConvGeometry::conv_out(e, KERNEL, STRIDE, PAD).and_then(|e| ConvGeometry::conv_out(e, KERNEL, STRIDE, PAD))
        };
        match (down(self.height), down(self.width)) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(Error::config(
                "vq",
                format!("{}x{} frames must be multiples of 4", self.height, self.width),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vq.channels", self.channels),
            ("vq.hidden", self.hidden),
            ("vq.latent_dim", self.latent_dim),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.codebook_size < 2 {
            return Err(Error::config("vq.codebook_size", "need at least 2 rows"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("vq.beta", "must be finite and non-negative"));
        }
        self.latent_extent().map(|_| ())
    }

    pub fn to_kv(&self) -> String {
        render_kv([
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("channels", self.channels.to_string()),
            ("hidden", self.hidden.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("codebook_size", self.codebook_size.to_string()),
            ("beta", self.beta.to_string()),
        ])
    }

    /// Reads every field; unknown keys are rejected.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut r = KvReader::parse(text)?;
        let cfg = Self {
            height: r.require("height")?,
            width: r.require("width")?,
            channels: r.require("channels")?,
            hidden: r.require("hidden")?,
            latent_dim: r.require("latent_dim")?,
            codebook_size: r.require("codebook_size")?,
            beta: r.require("beta")?,
        };
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The discrete latent vocabulary: `K` rows of dimension `d_B`.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    entries: Tensor,
}

impl Codebook {
    pub fn new(entries: Tensor) -> Result<Self> {
        if entries.rank() != 2 || entries.shape()[0] < 2 || entries.shape()[1] == 0 {
            return Err(Error::Contract(format!(
                "codebook must be K x d with K >= 2, got {:?}",
                entries.shape()
            )));
        }
        if !entries.is_finite() {
            return Err(Error::Contract("codebook has non-finite rows".into()));
        }
        Ok(Self { entries })
    }

    /// Rows drawn uniformly from `[-1/K, 1/K]`.
    pub fn random(size: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / size.max(1) as f64;
        Self::new(Tensor::uniform([size, dim], -bound, bound, rng))
    }

    pub fn size(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        self.entries.row(j)
    }

    pub fn entries(&self) -> &Tensor {
        &self.entries
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest codebook row for every `d_B`-sized row of `latent`
/// (any shape whose last axis is `d_B`). Ties go to the lowest index.
pub fn quantize(latent: &Tensor, codebook: &Codebook) -> Result<Vec<usize>> {
    let d = codebook.dim();
    if latent.shape().last() != Some(&d) {
        return Err(Error::dim(
            "quantize",
            format!("latent {:?} against codebook rows of {d}", latent.shape()),
        ));
    }
    Ok(latent
        .data()
        .chunks(d)
        .map(|y| {
            let mut best = (0, sq_dist(y, codebook.row(0)));
            for j in 1..codebook.size() {
                let dist = sq_dist(y, codebook.row(j));
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            best.0
        })
        .collect())
}

/// Codebook rows for `tokens`, as a `[tokens.len(), d_B]` tensor.
pub fn lookup(tokens: &[usize], codebook: &Codebook) -> Result<Tensor> {
    let mut data = Vec::with_capacity(tokens.len() * codebook.dim());
    for &t in tokens {
        if t >= codebook.size() {
            return Err(Error::Index {
                what: "codebook",
                index: t,
                bound: codebook.size(),
            });
        }
        data.extend_from_slice(codebook.row(t));
    }
    Tensor::new([tokens.len(), codebook.dim()], data)
}

/// The three terms of the VQ-VAE objective, each averaged over frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct VqLossBreakdown {
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub beta: f64,
    pub total: f64,
}

impl fmt::Display for VqLossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total {:.6} (reconstruction {:.6}, codebook {:.6}, commitment {:.6} x {})",
            self.total, self.reconstruction, self.codebook, self.commitment, self.beta
        )
    }
}

/// Tape handles for one evaluation of the VQ-VAE objective.
#[derive(Clone, Debug)]
pub struct VqLossVars {
    pub total: Var,
    pub reconstruction: Var,
    pub codebook: Var,
    pub commitment: Var,
    pub reconstruction_image: Var,
    /// Chosen codebook index per latent region, frame-major raster order.
    pub tokens: Vec<usize>,
    pub breakdown: VqLossBreakdown,
}

/// Fresh parameters: He-normal conv kernels, zero biases, and a codebook
/// uniform in `[-1/K, 1/K]`.
pub fn init_params(cfg: &VqConfig, rng: &mut impl Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let mut p = ParamStore::new();
    let he = |fan_in: usize| (2.0 / (KERNEL * KERNEL * fan_in) as f64).sqrt();
    let (c, hid, d) = (cfg.channels, cfg.hidden, cfg.latent_dim);
    p.insert("enc1.w", Tensor::randn([KERNEL, KERNEL, c, hid], he(c), rng));
    p.insert("enc1.b", Tensor::zeros([hid]));
    p.insert("enc2.w", Tensor::randn([KERNEL, KERNEL, hid, d], he(hid), rng));
    p.insert("enc2.b", Tensor::zeros([d]));
    p.insert("dec1.w", Tensor::randn([KERNEL, KERNEL, d, hid], he(d), rng));
    p.insert("dec1.b", Tensor::zeros([hid]));
    p.insert("dec2.w", Tensor::randn([KERNEL, KERNEL, hid, c], he(hid), rng));
    p.insert("dec2.b", Tensor::zeros([c]));
    let codebook = Codebook::random(cfg.codebook_size, d, rng)?;
    p.insert(CODEBOOK, codebook.entries);
    Ok(p)
}

/// Encoder on the tape: `[n, H, W, C]` frames to `[n, h, w, d_B]` latents.
pub fn encode_on_tape(tape: &mut Tape, p: &BoundParams, frames: Var) -> Result<Var> {
    let x = tape.conv2d(frames, p.get("enc1.w")?, STRIDE, PAD)?;
    let x = tape.add_bias(x, p.get("enc1.b")?)?;
    let x = tape.relu(x)?;
    let x = tape.conv2d(x, p.get("enc2.w")?, STRIDE, PAD)?;
    tape.add_bias(x, p.get("enc2.b")?)
}

/// Decoder on the tape: `[n, h, w, d_B]` embeddings to `[n, H, W, C]`
/// frames in `(0, 1)`.
pub fn decode_on_tape(tape: &mut Tape, p: &BoundParams, embedded: Var) -> Result<Var> {
    let x = tape.conv_transpose2d(embedded, p.get("dec1.w")?, STRIDE, PAD)?;
    let x = tape.add_bias(x, p.get("dec1.b")?)?;
    let x = tape.relu(x)?;
    let x = tape.conv_transpose2d(x, p.get("dec2.w")?, STRIDE, PAD)?;
    let x = tape.add_bias(x, p.get("dec2.b")?)?;
    tape.sigmoid(x)
}

/// Builds the VQ-VAE objective for `frames` (`[L, H, W, C]`) on `tape`.
///
/// With `straight_through` the decoder sees `y + sg(b − y)`: the forward
/// value is the quantized embedding and the reconstruction gradient passes
/// to the encoder unchanged. Without it the decoder sees `b` itself, which
/// makes the objective an ordinary piecewise-smooth function of every
/// parameter (useful for finite-difference checks).
pub fn vqvae_loss(
    tape: &mut Tape,
    p: &BoundParams,
    frames: &Tensor,
    beta: f64,
    straight_through: bool,
) -> Result<VqLossVars> {
    if frames.rank() != 4 {
        return Err(Error::dim("vqvae_loss", format!("frames must be [L, H, W, C], got {:?}", frames.shape())));
    }
    if !(beta >= 0.0) {
        return Err(Error::config("vq.beta", "must be non-negative"));
    }
    let l = frames.shape()[0] as f64;
    let x = tape.constant(frames.clone());
    let y = encode_on_tape(tape, p, x)?;
    let latent_shape = tape.shape(y).to_vec();
    let d = latent_shape[3];
    let regions = latent_shape[..3].iter().product::<usize>();
    let y_rows = tape.reshape(y, &[regions, d])?;

    let cb_var = p.get(CODEBOOK)?;
    let codebook = Codebook::new(tape.value(cb_var).clone())?;
    let tokens = quantize(tape.value(y_rows), &codebook)?;
    let b = tape.gather_rows(cb_var, &tokens)?;

    let y_sg = tape.stop_gradient(y_rows);
    let diff = tape.sub(y_sg, b)?;
    let cb_sum = tape.sum_sq(diff)?;
    let codebook_term = tape.scale(cb_sum, 1.0 / l)?;

    let b_sg = tape.stop_gradient(b);
    let diff = tape.sub(y_rows, b_sg)?;
    let commit_sum = tape.sum_sq(diff)?;
    let commitment_term = tape.scale(commit_sum, 1.0 / l)?;

    let z = if straight_through {
        let delta = tape.sub(b, y_rows)?;
        let delta = tape.stop_gradient(delta);
        tape.add(y_rows, delta)?
    } else {
        b
    };
    let z = tape.reshape(z, &latent_shape)?;
    let x_hat = decode_on_tape(tape, p, z)?;
    let err = tape.sub(x, x_hat)?;
    let rec_sum = tape.sum_sq(err)?;
    let reconstruction_term = tape.scale(rec_sum, 1.0 / l)?;

    let weighted = tape.scale(commitment_term, beta)?;
    let partial = tape.add(reconstruction_term, codebook_term)?;
    let total = tape.add(partial, weighted)?;

    let breakdown = VqLossBreakdown {
        reconstruction: tape.value(reconstruction_term).item(),
        codebook: tape.value(codebook_term).item(),
        commitment: tape.value(commitment_term).item(),
        beta,
        total: tape.value(total).item(),
    };
    Ok(VqLossVars {
        total,
        reconstruction: reconstruction_term,
        codebook: codebook_term,
        commitment: commitment_term,
        reconstruction_image: x_hat,
        tokens,
        breakdown,
    })
}

/// A trained (or freshly initialized) VQ-VAE.
#[derive(Clone, Debug)]
pub struct VqVae {
    config: VqConfig,
    params: ParamStore,
}

impl VqVae {
    pub fn new(config: VqConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = [KERNEL, KERNEL, config.channels, config.hidden];
        if params.get("enc1.w")?.shape() != expected {
            return Err(Error::dim("vq params", "enc1.w does not match the config"));
        }
        let cb = params.get(CODEBOOK)?;
        if cb.shape() != [config.codebook_size, config.latent_dim] {
            return Err(Error::dim(
                "vq params",
                format!("codebook {:?} does not match the config", cb.shape()),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn init(config: VqConfig, rng: &mut impl Rng) -> Result<Self> {
        let params = init_params(&config, rng)?;
        Self::new(config, params)
    }

    pub fn config(&self) -> &VqConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn codebook(&self) -> Codebook {
        Codebook {
            entries: self.params.get(CODEBOOK).expect("checked in new").clone(),
        }
    }

    fn check_frame_extents(&self, video: &VideoTensor) -> Result<()> {
        let c = &self.config;
        if (video.height(), video.width(), video.channels()) != (c.height, c.width, c.channels) {
            return Err(Error::dim(
                "vq",
                format!(
                    "video frames {}x{}x{} against configured {}x{}x{}",
                    video.height(),
                    video.width(),
                    video.channels(),
                    c.height,
                    c.width,
                    c.channels
                ),
            ));
        }
        Ok(())
    }

    /// Continuous latents `[n, h, w, d_B]` for `[n, H, W, C]` frames.
    pub fn encode_frames(&self, frames: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        if frames.rank() != 4 || frames.shape()[1..] != [c.height, c.width, c.channels] {
            return Err(Error::dim(
                "encode_frame",
                format!("frames {:?} against configured {}x{}x{}", frames.shape(), c.height, c.width, c.channels),
            ));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, |_| false);
        let x = tape.constant(frames.clone());
        let y = encode_on_tape(&mut tape, &p, x)?;
        Ok(tape.value(y).clone())
    }

    /// Frames `[n, H, W, C]` from codebook embeddings `[n, h, w, d_B]`.
    pub fn decode_frames(&self, embedded: &Tensor) -> Result<Tensor> {
        let (h, w) = self.config.latent_extent()?;
        if embedded.rank() != 4 || embedded.shape()[1..] != [h, w, self.config.latent_dim] {
            return Err(Error::dim(
                "decode_frame",
                format!("embedding {:?} against {h}x{w}x{}", embedded.shape(), self.config.latent_dim),
            ));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, |_| false);
        let b = tape.constant(embedded.clone());
        let x = decode_on_tape(&mut tape, &p, b)?;
        Ok(tape.value(x).clone())
    }

    pub fn encode(&self, video: &VideoTensor) -> Result<TokenGrid> {
        self.check_frame_extents(video)?;
        let y = self.encode_frames(&video.to_tensor())?;
        let tokens = quantize(&y, &self.codebook())?;
        let (h, w) = self.config.latent_extent()?;
        TokenGrid::new(video.frames(), h, w, self.config.codebook_size, tokens)
    }

    pub fn decode(&self, grid: &TokenGrid) -> Result<VideoTensor> {
        let (h, w) = self.config.latent_extent()?;
        if (grid.height(), grid.width()) != (h, w) || grid.codebook_size() != self.config.codebook_size {
            return Err(Error::dim(
                "vq decode",
                format!(
                    "{}x{} grid over K={} against {h}x{w} over K={}",
                    grid.height(),
                    grid.width(),
                    grid.codebook_size(),
                    self.config.codebook_size
                ),
            ));
        }
        let b = lookup(grid.indices(), &self.codebook())?.reshape([grid.frames(), h, w, self.config.latent_dim])?;
        let x = self.decode_frames(&b)?;
        VideoTensor::from_tensor(&x)
    }

    /// Encode, quantize and decode.
    pub fn reconstruct(&self, video: &VideoTensor) -> Result<VideoTensor> {
        self.decode(&self.encode(video)?)
    }

    /// Objective value for `video` under the current parameters.
    pub fn loss(&self, video: &VideoTensor) -> Result<VqLossBreakdown> {
        self.check_frame_extents(video)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, |_| false);
        Ok(vqvae_loss(&mut tape, &p, &video.to_tensor(), self.config.beta, true)?.breakdown)
    }

    /// Writes the parameters to `path` and the config to `<path>.cfg`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        checkpoint::save(path, &self.params)?;
        std::fs::write(sidecar(path), self.config.to_kv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let config = VqConfig::from_kv(&std::fs::read_to_string(sidecar(path))?)?;
        Self::new(config, checkpoint::load(path)?)
    }
}

/// `<path>.cfg`, where a checkpoint keeps its configuration.
pub fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    s.into()
}
