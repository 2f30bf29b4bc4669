//! Text-conditioned autoregressive decoder over visual tokens.
//!
//! Every layer is pre-norm: attention from the video rows to the text rows
//! and to the attendable video rows of its axis, a residual add, a ReLU
//! feedforward of width `4D`, and another residual add. Layers cycle
//! temporal, row, column. Text rows are keys and values only.
//!
//! The video input is shifted right by one: row 0 is a learned
//! begin-of-video vector and row `m > 0` embeds token `m − 1`, so the logits
//! at row `m` never see token `m` or anything after it.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use super::config::DecoderConfig;
use super::pattern::{build_pattern, AttentionAxis, SparseAttentionPattern};
use super::text::TextSequence;
use crate::autodiff::{AttentionKeys, Tape, Var};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::Tensor;
use crate::vq::{sidecar, TokenGrid, CODEBOOK};

/// How attention is evaluated. Both give the same numbers; `Dense` builds a
/// full masked score matrix from primitive ops and serves as a reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AttentionRoute {
    #[default]
    Sparse,
    Dense,
}

fn layer_name(r: usize, part: &str) -> String {
    format!("layer{r:02}.{part}")
}

/// Fresh decoder parameters around a fixed codebook (`[K, d_B]`).
pub fn init_params(cfg: &DecoderConfig, codebook: &Tensor, rng: &mut impl Rng) -> Result<ParamStore> {
    cfg.validate()?;
    if codebook.shape() != [cfg.codebook_size, cfg.latent_dim] {
        return Err(Error::dim(
            "decoder init",
            format!(
                "codebook {:?} against K={} d_B={}",
                codebook.shape(),
                cfg.codebook_size,
                cfg.latent_dim
            ),
        ));
    }
    let d = cfg.model_dim;
    let hidden = 4 * d;
    let lin = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
    let mut p = ParamStore::new();
    p.insert(CODEBOOK, codebook.clone());
    p.insert("text.embed", Tensor::randn([cfg.text_vocab, d], 0.1, rng));
    p.insert("text.pos", Tensor::randn([cfg.text_len, d], 0.1, rng));
    p.insert("video.pos", Tensor::randn([cfg.tokens(), d], 0.1, rng));
    p.insert("video.bos", Tensor::randn([1, d], 0.1, rng));
    p.insert("video.proj.w", Tensor::randn([cfg.latent_dim, d], lin(cfg.latent_dim), rng));
    p.insert("video.proj.b", Tensor::zeros([d]));
    for r in 0..cfg.layers {
        for ln in ["ln1", "ln2"] {
            p.insert(layer_name(r, &format!("{ln}.g")), Tensor::full([d], 1.0));
            p.insert(layer_name(r, &format!("{ln}.b")), Tensor::zeros([d]));
        }
        for w in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
            p.insert(layer_name(r, w), Tensor::randn([d, d], lin(d), rng));
        }
        p.insert(layer_name(r, "attn.bo"), Tensor::zeros([d]));
        p.insert(layer_name(r, "ffn.w1"), Tensor::randn([d, hidden], lin(d), rng));
        p.insert(layer_name(r, "ffn.b1"), Tensor::zeros([hidden]));
        p.insert(layer_name(r, "ffn.w2"), Tensor::randn([hidden, d], lin(hidden), rng));
        p.insert(layer_name(r, "ffn.b2"), Tensor::zeros([d]));
    }
    p.insert("final.ln.g", Tensor::full([d], 1.0));
    p.insert("final.ln.b", Tensor::zeros([d]));
    p.insert("out.w", Tensor::randn([d, cfg.codebook_size], lin(d), rng));
    p.insert("out.b", Tensor::zeros([cfg.codebook_size]));
    Ok(p)
}

/// Every parameter except the frozen codebook is trained.
pub fn is_trainable(name: &str) -> bool {
    name != CODEBOOK
}

/// `E_text[ids] + P_text`, one row per text position (pad rows included).
pub fn embed_text(tape: &mut Tape, p: &BoundParams, text: &TextSequence) -> Result<Var> {
    let pos = p.get("text.pos")?;
    let n = tape.shape(pos)[0];
    if text.len() != n {
        return Err(Error::dim("embed_text", format!("text of {} tokens, expected {n}", text.len())));
    }
    let e = tape.gather_rows(p.get("text.embed")?, text.ids())?;
    tape.add(e, pos)
}

/// `Linear(b) + P_video[offset..offset + rows]` for codebook embeddings `b`
/// (`[rows, d_B]`).
pub fn embed_video_tokens(tape: &mut Tape, p: &BoundParams, b: Var, offset: usize) -> Result<Var> {
    let rows = tape.shape(b)[0];
    let proj = tape.matmul(b, p.get("video.proj.w")?)?;
    let proj = tape.add_bias(proj, p.get("video.proj.b")?)?;
    let pos = tape.slice_rows(p.get("video.pos")?, offset, rows)?;
    tape.add(proj, pos)
}

/// Decoder input for the first `rows` positions given the tokens before
/// them: row 0 is `bos + P_video[0]`, row `m` embeds `tokens[m − 1]`.
fn shifted_input(tape: &mut Tape, p: &BoundParams, tokens: &[usize], rows: usize) -> Result<Var> {
    let pos = p.get("video.pos")?;
    let first_pos = tape.slice_rows(pos, 0, 1)?;
    let first = tape.add(p.get("video.bos")?, first_pos)?;
    if rows == 1 {
        return Ok(first);
    }
    let b = tape.gather_rows(p.get(CODEBOOK)?, &tokens[..rows - 1])?;
    let rest = embed_video_tokens(tape, p, b, 1)?;
    tape.concat_rows(&[first, rest])
}

/// Multi-head attention evaluated densely: full score matrices, a boolean
/// mask built from `keys`, and a masked softmax. Same contract as
/// [`Tape::sparse_attention`].
pub fn dense_masked_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    keys: &AttentionKeys,
    heads: usize,
) -> Result<Var> {
    let (nq, d) = (tape.shape(q)[0], tape.shape(q)[1]);
    let nk = tape.shape(k)[0];
    if heads == 0 || d % heads != 0 {
        return Err(Error::dim("dense attention", format!("{d} not divisible by {heads} heads")));
    }
    if keys.len() != nq {
        return Err(Error::dim("dense attention", "one key list per query required"));
    }
    let mut mask = vec![false; nq * nk];
    for (i, list) in keys.iter().enumerate() {
        if list.is_empty() {
            return Err(Error::Contract(format!("query {i} has no attendable keys")));
        }
        for &j in list {
            if j >= nk {
                return Err(Error::Index {
                    what: "attention key",
                    index: j,
                    bound: nk,
                });
            }
            mask[i * nk + j] = true;
        }
    }
    let dh = d / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let probs = tape.masked_softmax(scores, &mask)?;
        outs.push(tape.matmul(probs, vh)?);
    }
    tape.concat_cols(&outs)
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_bias(y, b),
        None => Ok(y),
    }
}

/// One pre-norm attention layer with its feedforward block. `x` holds the
/// video rows, `text` the text rows; `keys` index rows of `[text; x]`.
#[allow(clippy::too_many_arguments)]
pub fn attention_layer(
    tape: &mut Tape,
    p: &BoundParams,
    r: usize,
    x: Var,
    text: Var,
    keys: &Arc<AttentionKeys>,
    heads: usize,
    route: AttentionRoute,
) -> Result<Var> {
    let g = |part: &str| p.get(&layer_name(r, part));
    let rows = tape.shape(x)[0];
    let n = tape.shape(text)[0];
    let all = tape.concat_rows(&[text, x])?;
    let a = tape.layer_norm(all, g("ln1.g")?, g("ln1.b")?)?;
    let a_video = tape.slice_rows(a, n, rows)?;
    let q = linear(tape, a_video, g("attn.wq")?, None)?;
    let k = linear(tape, a, g("attn.wk")?, None)?;
    let v = linear(tape, a, g("attn.wv")?, None)?;
    let att = match route {
        AttentionRoute::Sparse => tape.sparse_attention(q, k, v, Arc::clone(keys), heads)?,
        AttentionRoute::Dense => dense_masked_attention(tape, q, k, v, keys, heads)?,
    };
    let o = linear(tape, att, g("attn.wo")?, Some(g("attn.bo")?))?;
    let x = tape.add(x, o)?;
    let f = tape.layer_norm(x, g("ln2.g")?, g("ln2.b")?)?;
    let f = linear(tape, f, g("ffn.w1")?, Some(g("ffn.b1")?))?;
    let f = tape.relu(f)?;
    let f = linear(tape, f, g("ffn.w2")?, Some(g("ffn.b2")?))?;
    tape.add(x, f)
}

/// The three axis patterns of a decoder, shared by every forward pass.
#[derive(Clone, Debug)]
pub struct Patterns([Arc<SparseAttentionPattern>; 3]);

impl Patterns {
    pub fn new(cfg: &DecoderConfig) -> Self {
        Self(AttentionAxis::ALL.map(|a| Arc::new(build_pattern(a, cfg.frames, cfg.height, cfg.width))))
    }

    pub fn get(&self, axis: AttentionAxis) -> &SparseAttentionPattern {
        &self.0[axis as usize]
    }
}

/// Logits `[rows, K]` for the first `rows` raster positions, where
/// `tokens` holds at least the `rows − 1` tokens before the last one.
#[allow(clippy::too_many_arguments)]
pub fn forward_on_tape(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &DecoderConfig,
    patterns: &Patterns,
    text: &TextSequence,
    tokens: &[usize],
    rows: usize,
    route: AttentionRoute,
) -> Result<Var> {
    let m = cfg.tokens();
    if rows == 0 || rows > m || tokens.len() + 1 < rows {
        return Err(Error::dim(
            "decoder_forward",
            format!("{rows} rows from {} tokens on a grid of {m}", tokens.len()),
        ));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.codebook_size) {
        return Err(Error::Index {
            what: "visual token",
            index: bad,
            bound: cfg.codebook_size,
        });
    }
    let text_e = embed_text(tape, p, text)?;
    let mut x = shifted_input(tape, p, tokens, rows)?;
    let keys = AttentionAxis::ALL.map(|a| patterns.get(a).with_text(text.mask(), rows));
    for r in 0..cfg.layers {
        let axis = AttentionAxis::for_layer(r);
        x = attention_layer(tape, p, r, x, text_e, &keys[axis as usize], cfg.heads, route)?;
    }
    let h = tape.layer_norm(x, p.get("final.ln.g")?, p.get("final.ln.b")?)?;
    linear(tape, h, p.get("out.w")?, Some(p.get("out.b")?))
}

fn check_grid(cfg: &DecoderConfig, grid: &TokenGrid) -> Result<()> {
    let want = (cfg.frames, cfg.height, cfg.width, cfg.codebook_size);
    let got = (grid.frames(), grid.height(), grid.width(), grid.codebook_size());
    if want != got {
        return Err(Error::dim(
            "decoder",
            format!("token grid (L, h, w, K) = {got:?}, decoder expects {want:?}"),
        ));
    }
    Ok(())
}

/// Mean negative log-likelihood of every token of `grid` under teacher
/// forcing.
pub fn decoder_loss_on_tape(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &DecoderConfig,
    patterns: &Patterns,
    text: &TextSequence,
    grid: &TokenGrid,
    route: AttentionRoute,
) -> Result<Var> {
    check_grid(cfg, grid)?;
    let logits = forward_on_tape(tape, p, cfg, patterns, text, grid.indices(), cfg.tokens(), route)?;
    tape.cross_entropy(logits, grid.indices())
}

#[derive(Clone, Debug)]
pub struct Decoder {
    config: DecoderConfig,
    params: ParamStore,
    patterns: Patterns,
    route: AttentionRoute,
}

impl Decoder {
    pub fn new(config: DecoderConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let checks = [
            ("text.embed", vec![config.text_vocab, config.model_dim]),
            ("text.pos", vec![config.text_len, config.model_dim]),
            ("video.pos", vec![config.tokens(), config.model_dim]),
            (CODEBOOK, vec![config.codebook_size, config.latent_dim]),
            ("out.w", vec![config.model_dim, config.codebook_size]),
        ];
        for (name, shape) in checks {
            if params.get(name)?.shape() != shape.as_slice() {
                return Err(Error::dim(
                    "decoder params",
                    format!("{name} is {:?}, config implies {shape:?}", params.get(name)?.shape()),
                ));
            }
        }
        if !params.contains(&layer_name(config.layers - 1, "ffn.b2")) || params.contains(&layer_name(config.layers, "ffn.b2")) {
            return Err(Error::dim("decoder params", "layer count differs from the config"));
        }
        let patterns = Patterns::new(&config);
        Ok(Self {
            config,
            params,
            patterns,
            route: AttentionRoute::Sparse,
        })
    }

    pub fn init(config: DecoderConfig, codebook: &Tensor, rng: &mut impl Rng) -> Result<Self> {
        let params = init_params(&config, codebook, rng)?;
        Self::new(config, params)
    }

    pub fn with_route(mut self, route: AttentionRoute) -> Self {
        self.route = route;
        self
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn patterns(&self) -> &Patterns {
        &self.patterns
    }

    pub fn route(&self) -> AttentionRoute {
        self.route
    }

    /// Logits `[min(p + 1, M), K]` given a raster prefix of `p` tokens; a
    /// full grid (`p = M`) is teacher forcing over every position.
    pub fn forward(&self, text: &TextSequence, tokens: &[usize]) -> Result<Tensor> {
        let m = self.config.tokens();
        if tokens.len() > m {
            return Err(Error::dim("decoder_forward", format!("{} tokens exceed M = {m}", tokens.len())));
        }
        let rows = (tokens.len() + 1).min(m);
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, |_| false);
        let logits = forward_on_tape(&mut tape, &p, &self.config, &self.patterns, text, tokens, rows, self.route)?;
        Ok(tape.value(logits).clone())
    }

    /// Logits for the position right after `prefix`.
    pub fn next_logits(&self, text: &TextSequence, prefix: &[usize]) -> Result<Vec<f64>> {
        if prefix.len() >= self.config.tokens() {
            return Err(Error::dim("next_logits", "prefix already fills the grid"));
        }
        let logits = self.forward(text, prefix)?;
        Ok(logits.row(prefix.len()).to_vec())
    }

    pub fn loss(&self, text: &TextSequence, grid: &TokenGrid) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, |_| false);
        let l = decoder_loss_on_tape(&mut tape, &p, &self.config, &self.patterns, text, grid, self.route)?;
        Ok(tape.value(l).item())
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
        let config = DecoderConfig::from_kv(&std::fs::read_to_string(sidecar(path))?)?;
        Self::new(config, checkpoint::load(path)?)
    }
}
