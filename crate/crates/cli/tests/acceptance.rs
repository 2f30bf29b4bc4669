//! End-to-end acceptance criteria, one line of output per criterion.
//!
//! Runs as a plain binary (`harness = false`). Set `ACCEPTANCE_ONLY=1,4,9`
//! to run a subset.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vqvid::autodiff::{grad_check, Tape};
use vqvid::bench::{closed_form_pairs, enumerated_pairs, PairCounts};
use vqvid::dataset::{caption_for, render_scene, tokenize, Glyphs, MotionType, SceneGeometry, SceneSpec};
use vqvid::decoder::{
    build_pattern, decoder_loss_on_tape, dense_masked_attention, is_trainable, AttentionAxis, AttentionRoute, Decoder,
    DecoderConfig, Patterns, TextSequence,
};
use vqvid::metrics::{corpus_eval, rm, sc_aggregate, sim, vr_aggregate, EvalSample, JudgmentRecord, SimilarityOracle, ToyOracle};
use vqvid::sampler::{best_of_n, candidate_rng, generate, sample_candidates, SamplingConfig, Strategy};
use vqvid::video::{Frame, VideoTensor};
use vqvid::vq::{quantize, train_vqvae, vqvae_loss, Codebook, TokenGrid, VqConfig, VqTrainConfig, VqVae};
use vqvid::{Error, Tensor};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn digit_video(digit: u8, motion: MotionType, glyphs: &Glyphs) -> VideoTensor {
    let spec = SceneSpec::canonical(&[digit], &[motion], SceneGeometry::default(), glyphs).unwrap();
    render_scene(&spec, glyphs, 1).unwrap()
}

/// Random decoder whose norms and biases are perturbed away from their
/// initial values, so that every parameter influences the output.
fn random_decoder(cfg: DecoderConfig, seed: u64) -> Decoder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codebook = Tensor::randn([cfg.codebook_size, cfg.latent_dim], 1.0, &mut rng);
    let mut dec = Decoder::init(cfg, &codebook, &mut rng).unwrap();
    let names: Vec<String> = dec.params().names().map(str::to_string).collect();
    for name in names.iter().filter(|n| n.contains(".b") || n.ends_with(".g")) {
        for v in dec.params_mut().get_mut(name).unwrap().data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    dec
}

fn random_text(len: usize, vocab: usize, rng: &mut impl Rng) -> TextSequence {
    let real = rng.random_range(1..=len);
    let ids = (0..len).map(|i| if i < real { rng.random_range(1..vocab) } else { 0 }).collect();
    TextSequence::new(ids, (0..len).map(|i| i < real).collect(), vocab).unwrap()
}

fn random_tokens(cfg: &DecoderConfig, rng: &mut impl Rng) -> Vec<usize> {
    (0..cfg.tokens()).map(|_| rng.random_range(0..cfg.codebook_size)).collect()
}

fn small_decoder_config(frames: usize, height: usize, width: usize) -> DecoderConfig {
    DecoderConfig {
        text_len: 6,
        text_vocab: 22,
        frames,
        height,
        width,
        model_dim: 16,
        layers: 3,
        heads: 2,
        codebook_size: 8,
        latent_dim: 4,
    }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vq_cfg = VqConfig {
        height: 8,
        width: 8,
        channels: 1,
        hidden: 4,
        latent_dim: 4,
        codebook_size: 8,
        beta: 0.25,
    };
    let vq = ok(VqVae::init(vq_cfg, &mut rng))?;
    let frames = Tensor::uniform([2, 8, 8, 1], 0.0, 1.0, &mut rng);
    let mut worst: f64 = 0.0;
    for straight_through in [true, false] {
        let r = ok(grad_check(vq.params(), |_| true, 1e-6, |tape, p| {
            Ok(vqvae_loss(tape, p, &frames, 0.25, straight_through)?.total)
        }))?;
        ensure!(r.max_rel_error < 1e-3, "VQ-VAE (straight-through {straight_through}): {r:?}");
        worst = worst.max(r.max_rel_error);
    }
    let cfg = small_decoder_config(2, 2, 2);
    let dec = random_decoder(cfg.clone(), 2);
    let text = ok(tokenize("digit 3 is moving up and down", 8))?;
    let cfg = DecoderConfig { text_len: 8, ..cfg };
    let dec = ok(Decoder::new(cfg.clone(), with_text_len(dec.params(), &cfg, &mut rng)))?;
    let grid = ok(TokenGrid::new(2, 2, 2, 8, random_tokens(&cfg, &mut rng)))?;
    let patterns = Patterns::new(&cfg);
    let r = ok(grad_check(dec.params(), is_trainable, 1e-6, |tape, p| {
        decoder_loss_on_tape(tape, p, &cfg, &patterns, &text, &grid, AttentionRoute::Sparse)
    }))?;
    ensure!(r.max_rel_error < 1e-3, "decoder: {r:?}");
    worst = worst.max(r.max_rel_error);
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:.1?}");
    Ok(format!("max relative error {worst:.2e} over both losses in {elapsed:.1?}"))
}

/// Replaces the text position table so the decoder accepts `cfg.text_len`.
fn with_text_len(params: &vqvid::params::ParamStore, cfg: &DecoderConfig, rng: &mut impl Rng) -> vqvid::params::ParamStore {
    let mut p = params.clone();
    p.insert("text.pos", Tensor::randn([cfg.text_len, cfg.model_dim], 0.1, rng));
    p
}

fn quantizer_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ties = 0;
    for case in 0..1000 {
        let k = rng.random_range(2..=64);
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=16);
        let coarse = case % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| if coarse { rng.random_range(-1i32..=1) as f64 } else { rng.random_range(-1.0..1.0) };
        let entries: Vec<f64> = (0..k * d).map(|_| draw(&mut rng)).collect();
        let latent: Vec<f64> = (0..n * d).map(|_| draw(&mut rng)).collect();
        let codebook = ok(Codebook::new(ok(Tensor::new([k, d], entries.clone()))?))?;
        let got = ok(quantize(&ok(Tensor::new([n, d], latent.clone()))?, &codebook))?;
        for (i, &g) in got.iter().enumerate() {
            let z = &latent[i * d..(i + 1) * d];
            let dist = |j: usize| -> f64 { (0..d).map(|c| (z[c] - entries[j * d + c]).powi(2)).sum() };
            let mut best = 0;
            for j in 1..k {
                if dist(j) < dist(best) {
                    best = j;
                }
            }
            if (0..k).filter(|&j| dist(j) == dist(best)).count() > 1 {
                ties += 1;
            }
            ensure!(g == best, "case {case}, row {i}: quantize gave {g}, scan gave {best}");
        }
    }
    Ok(format!("1000/1000 instances agree ({ties} rows had tied nearest codes)"))
}

fn attention_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for draw in 0..50 {
        let (l, h, w) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4));
        let m = l * h * w;
        let axis = AttentionAxis::ALL[rng.random_range(0..3)];
        let n = rng.random_range(1..=6);
        let real = rng.random_range(1..=n);
        let mask: Vec<bool> = (0..n).map(|i| i < real).collect();
        let heads = [1, 2, 4][rng.random_range(0..3)];
        let d = heads * rng.random_range(1..=3);
        let keys = build_pattern(axis, l, h, w).with_text(&mask, m);
        let q = Tensor::randn([m, d], 1.0, &mut rng);
        let k = Tensor::randn([n + m, d], 1.0, &mut rng);
        let v = Tensor::randn([n + m, d], 1.0, &mut rng);
        let mut tape = Tape::new();
        let (qv, kv, vv) = (tape.constant(q), tape.constant(k), tape.constant(v));
        let sparse = ok(tape.sparse_attention(qv, kv, vv, keys.clone(), heads))?;
        let dense = ok(dense_masked_attention(&mut tape, qv, kv, vv, &keys, heads))?;
        let diff = tape.value(sparse).max_abs_diff(tape.value(dense));

        let cfg = small_decoder_config(l, h, w);
        let dec = random_decoder(cfg.clone(), draw);
        let text = random_text(cfg.text_len, cfg.text_vocab, &mut rng);
        let tokens = random_tokens(&cfg, &mut rng);
        let a = ok(dec.forward(&text, &tokens))?;
        let b = ok(dec.clone().with_route(AttentionRoute::Dense).forward(&text, &tokens))?;
        let diff = diff.max(a.max_abs_diff(&b));
        ensure!(diff <= 1e-8, "draw {draw} ({l}×{h}×{w}, {axis}): difference {diff:.3e}");
        worst = worst.max(diff);
    }
    Ok(format!("50 draws, max abs difference {worst:.2e} (layer and full decoder)"))
}

fn causality() -> Outcome {
    let cfg = small_decoder_config(2, 3, 3);
    let dec = random_decoder(cfg.clone(), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let text = random_text(cfg.text_len, cfg.text_vocab, &mut rng);
    let tokens = random_tokens(&cfg, &mut rng);
    let base = ok(dec.forward(&text, &tokens))?;
    let k = cfg.codebook_size;
    for m in 0..cfg.tokens() {
        let mut t = tokens.clone();
        t[m] = (t[m] + 1 + rng.random_range(0..k - 1)) % k;
        let out = ok(dec.forward(&text, &t))?;
        let same = out.data()[..(m + 1) * k].iter().zip(&base.data()[..(m + 1) * k]).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "perturbing token {m} changed logits at positions ≤ {m}");
    }
    Ok(format!("{} positions, logits at ≤ m bit-identical", cfg.tokens()))
}

fn complexity() -> Outcome {
    for l in 1..=4 {
        for h in 1..=4 {
            for w in 1..=4 {
                let coords = |q: usize| (q / (h * w), (q / w) % h, q % w);
                let mut brute = 0;
                for q in 0..l * h * w {
                    let (ql, qi, qj) = coords(q);
                    for key in 0..l * h * w {
                        let (kl, ki, kj) = coords(key);
                        brute += usize::from(ki == qi && kj == qj && kl <= ql);
                        brute += usize::from(kl == ql && ki == qi && kj <= qj);
                        brute += usize::from(kl == ql && kj == qj && ki <= qi);
                    }
                }
                let sum: usize = (0..l * h * w)
                    .map(|q| {
                        let (a, b, c) = coords(q);
                        a + b + c + 3
                    })
                    .sum();
                let e = enumerated_pairs(l, h, w);
                ensure!(e == brute && e == sum && e == closed_form_pairs(l, h, w), "{l}×{h}×{w}: masks {e}, brute {brute}, Σ {sum}");
            }
        }
    }
    let r = PairCounts::measure(10, 16, 16, 35);
    ensure!(r.axis_baseline == 107_520, "M(L+h+w) = {}", r.axis_baseline);
    ensure!(r.dense_pairs == 6_553_600, "dense = {}", r.dense_pairs);
    ensure!(r.dense_ratio() >= 60.0, "ratio {:.2}", r.dense_ratio());
    Ok(format!(
        "64 grids match; 10×16×16: dense {} vs baseline {} ({:.2}×), exact axis pairs {}",
        r.dense_pairs,
        r.axis_baseline,
        r.dense_ratio(),
        r.axis_pairs
    ))
}

fn vq_overfit() -> Outcome {
    let start = Instant::now();
    let glyphs = Glyphs::builtin(1);
    let video = digit_video(3, MotionType::UpDown, &glyphs);
    ensure!((video.frames(), video.height(), video.width()) == (4, 16, 16), "unexpected video shape");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model = ok(VqVae::init(VqConfig::default(), &mut rng))?;
    let cfg = VqTrainConfig {
        steps: 2000,
        learning_rate: 1e-3,
        batch_frames: 4,
        seed: 6,
    };
    ok(train_vqvae(&mut model, std::slice::from_ref(&video), &cfg))?;
    let mse = ok(ok(model.reconstruct(&video))?.mse(&video))?;
    let elapsed = start.elapsed();
    ensure!(mse < 1e-3, "MSE {mse:.3e} after 2000 steps");
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:.1?}");
    Ok(format!("MSE {mse:.2e} after 2000 steps in {elapsed:.1?}"))
}

struct Trained {
    vq: VqVae,
    decoder: Decoder,
    texts: Vec<TextSequence>,
    grids: Vec<TokenGrid>,
}

fn train_pipeline(pairs: &[(u8, MotionType)], vq_steps: usize, gen_steps: usize, seed: u64) -> Result<Trained, Error> {
    let glyphs = Glyphs::builtin(1);
    let videos: Vec<VideoTensor> = pairs.iter().map(|&(d, m)| digit_video(d, m, &glyphs)).collect();
    let dc = DecoderConfig::default();
    let texts = pairs
        .iter()
        .map(|&(d, m)| tokenize(&caption_for(&[d], &[m]), dc.text_len))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vq = VqVae::init(VqConfig::default(), &mut rng)?;
    train_vqvae(&mut vq, &videos, &VqTrainConfig { steps: vq_steps, learning_rate: 1e-3, batch_frames: 32, seed })?;
    let grids = videos.iter().map(|v| vq.encode(v)).collect::<Result<Vec<_>, _>>()?;
    let mut decoder = Decoder::init(dc, vq.codebook().entries(), &mut rng)?;
    let data: Vec<_> = texts.iter().cloned().zip(grids.iter().cloned()).collect();
    let cfg = vqvid::decoder::DecoderTrainConfig { steps: gen_steps, learning_rate: 5e-4, batch: 8, seed };
    vqvid::decoder::train_decoder(&mut decoder, &data, &cfg)?;
    Ok(Trained { vq, decoder, texts, grids })
}

fn memorization() -> Outcome {
    let start = Instant::now();
    let pairs: Vec<(u8, MotionType)> = (0..8u8).map(|d| (d, MotionType::ALL[d as usize % 6])).collect();
    let t = ok(train_pipeline(&pairs, 2000, 400, 7))?;
    let mut worst: f64 = 1.0;
    for (i, (text, grid)) in t.texts.iter().zip(&t.grids).enumerate() {
        let g = ok(generate(&t.decoder, text, &SamplingConfig::greedy(), &mut candidate_rng(0, 0)))?;
        let acc = ok(g.agreement(grid))?;
        ensure!(acc >= 0.9, "caption {i}: {:.1}% of tokens reproduced", 100.0 * acc);
        worst = worst.min(acc);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30 * 60), "took {elapsed:.1?}");
    Ok(format!("8 captions, worst grid {:.1}% of tokens, {elapsed:.1?}", 100.0 * worst))
}

fn compositional_probe() -> Outcome {
    let held = (9u8, MotionType::DownThenUp);
    let pairs: Vec<(u8, MotionType)> =
        (0..10u8).flat_map(|d| MotionType::ALL.map(|m| (d, m))).filter(|&p| p != held).collect();
    let oracle = ToyOracle::desk();
    let caption = caption_for(&[held.0], &[held.1]);
    let mut wins = 0;
    let mut margins = Vec::new();
    for seed in 0..10 {
        let t = ok(train_pipeline(&pairs, 1000, 600, 100 + seed))?;
        let text = ok(tokenize(&caption, t.decoder.config().text_len))?;
        let grid = ok(generate(&t.decoder, &text, &SamplingConfig::greedy(), &mut candidate_rng(seed, 0)))?;
        let video = ok(t.vq.decode(&grid))?;
        let own = ok(sim(&caption, &video, &oracle))?;
        let mut best_other = f64::NEG_INFINITY;
        for m in MotionType::ALL.into_iter().filter(|&m| m != held.1) {
            best_other = best_other.max(ok(sim(&caption_for(&[held.0], &[m]), &video, &oracle))?);
        }
        wins += usize::from(own > best_other);
        margins.push(format!("{:+.3}", own - best_other));
    }
    let detail = format!("{wins}/10 runs prefer the held-out caption (margins {})", margins.join(" "));
    ensure!(wins >= 6, "{detail}");
    Ok(detail)
}

fn metric_identities() -> Outcome {
    let glyphs = Glyphs::builtin(1);
    let oracle = ToyOracle::desk();
    let mut samples = Vec::new();
    for d in 0..10u8 {
        for m in MotionType::ALL {
            let video = digit_video(d, m, &glyphs);
            let text = caption_for(&[d], &[m]);
            let r = ok(rm(&text, &video, &video, &oracle))?;
            ensure!(r == 100.0, "rm(gt, gt) = {r:?} for `{text}`");
            samples.push(EvalSample { text, predicted: video.clone(), ground_truth: video });
        }
    }
    let report = ok(corpus_eval(&samples, &oracle))?;
    ensure!(report.mean_rm == Some(100.0), "corpus mean RM {:?}", report.mean_rm);

    let mut tournaments = 0;
    for (models, samples) in [(2usize, 3usize), (3, 2)] {
        let pairs: Vec<(usize, usize)> = (0..models).flat_map(|i| (i + 1..models).map(move |j| (i, j))).collect();
        let slots = pairs.len() * samples;
        for outcome in 0u32..(1 << slots) {
            let mut records = Vec::new();
            for (s, (t, &(i, j))) in (0..samples).flat_map(|t| pairs.iter().map(move |p| (t, p))).enumerate() {
                let win = outcome >> s & 1 == 1;
                records.push(JudgmentRecord { sample: t, model_i: i, model_j: j, realism: win, consistency: !win });
            }
            for scores in [ok(vr_aggregate(&records, models, samples))?, ok(sc_aggregate(&records, models, samples))?] {
                let total: f64 = scores.iter().sum();
                let want = (models as f64 - 1.0) / 2.0;
                ensure!((total - want).abs() < 1e-12, "N={models}: Σ = {total}, expected {want}");
            }
            tournaments += 1;
        }
    }
    Ok(format!("rm(gt,gt) = 100 on 60 videos, corpus RM = 100, Σ VR = Σ SC = (N−1)/2 on {tournaments} tournaments"))
}

/// Scores frames identical to `target` at cosine 1 and everything else at
/// cosine `base`.
struct Rigged {
    target: Vec<f64>,
    base: f64,
}

impl SimilarityOracle for Rigged {
    fn dim(&self) -> usize {
        2
    }

    fn embed_text(&self, _: &str) -> Result<Vec<f64>, Error> {
        Ok(vec![1.0, 0.0])
    }

    fn embed_frame(&self, frame: Frame<'_>) -> Result<Vec<f64>, Error> {
        Ok(if frame.pixels == self.target.as_slice() {
            vec![1.0, 0.0]
        } else {
            vec![self.base, (1.0 - self.base * self.base).sqrt()]
        })
    }
}

fn reranking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let vq_cfg = VqConfig {
        height: 8,
        width: 8,
        channels: 1,
        hidden: 4,
        latent_dim: 4,
        codebook_size: 8,
        beta: 0.25,
    };
    let text = ok(tokenize("digit 4 is moving left and right", 8))?;
    for trial in 0..20 {
        let vq = ok(VqVae::init(vq_cfg.clone(), &mut rng))?;
        let cfg = DecoderConfig { text_len: 8, ..small_decoder_config(2, 2, 2) };
        let decoder = ok(Decoder::init(cfg, vq.codebook().entries(), &mut rng))?;
        let sampling = SamplingConfig {
            strategy: Strategy::TopK,
            k: 8,
            temperature: 1.0,
            candidates: rng.random_range(2..=8),
            seed: rng.random(),
        };
        let grids = ok(sample_candidates(&decoder, &text, &sampling))?;
        let videos = grids.iter().map(|g| vq.decode(g)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
        let unique: Vec<usize> = (0..videos.len())
            .filter(|&i| videos.iter().filter(|v| v.frame(0).pixels == videos[i].frame(0).pixels).count() == 1)
            .collect();
        ensure!(!unique.is_empty(), "trial {trial}: no distinguishable candidate");
        let j = unique[rng.random_range(0..unique.len())];
        let oracle = Rigged { target: videos[j].frame(0).pixels.to_vec(), base: rng.random_range(-0.9..0.9) };
        let out = ok(best_of_n("digit 4 is moving left and right", &text, &decoder, &vq, &sampling, &oracle))?;
        ensure!(out.best == j, "trial {trial}: returned candidate {} instead of {j}", out.best);
        let max = videos
            .iter()
            .map(|v| sim("digit 4 is moving left and right", v, &oracle))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        ensure!(out.score == max, "trial {trial}: score {} but max SIM {max}", out.score);
    }
    Ok("20/20 trials returned the designated candidate with score = max SIM".into())
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn vqvid(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vqvid")).args(args).env("RUST_LOG", "warn").output().map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "vqvid {}: {}\n{}", args.join(" "), out.status, String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn same_tree(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (files(a), files(b));
    ensure!(fa.keys().eq(fb.keys()), "file lists differ: {:?} vs {:?}", fa.keys(), fb.keys());
    for (k, v) in &fa {
        ensure!(v == &fb[k], "{} differs", k.display());
    }
    Ok(fa.len())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    for run in ["data-a", "data-b"] {
        vqvid(&["build-data", "--out-dir", &p(run), "--count", "30", "--seed", "11"])?;
    }
    let data_files = same_tree(&tmp.path().join("data-a"), &tmp.path().join("data-b"))?;

    vqvid(&["train-vqvae", "--data-dir", &p("data-a"), "--out-dir", &p("vq"), "--steps", "40"])?;
    let vq_ckpt = p("vq/vqvae.ckpt");
    vqvid(&["train-gen", "--data-dir", &p("data-a"), "--vqvae-ckpt", &vq_ckpt, "--out-dir", &p("gen"), "--steps", "10"])?;
    let gen_ckpt = p("gen/gen.ckpt");
    for run in ["gen-a", "gen-b"] {
        vqvid(&[
            "generate",
            "--text",
            "digit 9 is moving down then up",
            "--strategy",
            "greedy",
            "--vqvae-ckpt",
            &vq_ckpt,
            "--gen-ckpt",
            &gen_ckpt,
            "--out-dir",
            &p(run),
        ])?;
    }
    let gen_files = same_tree(&tmp.path().join("gen-a"), &tmp.path().join("gen-b"))?;
    Ok(format!("build-data ({data_files} files) and greedy generate ({gen_files} files) byte-identical across runs"))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "gradient integrity", gradient_integrity),
        (2, "quantizer oracle equivalence", quantizer_equivalence),
        (3, "sparse/dense attention equivalence", attention_equivalence),
        (4, "causality", causality),
        (5, "complexity measurement", complexity),
        (6, "VQ-VAE single-video overfit", vq_overfit),
        (7, "end-to-end memorization", memorization),
        (8, "compositional generalization probe", compositional_probe),
        (9, "metric identities", metric_identities),
        (10, "reranking", reranking),
        (11, "determinism", determinism),
    ];
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id:>2} {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {id:>2} {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
