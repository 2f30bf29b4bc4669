use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, AttentionKeys, Tape};
use crate::error::Error;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::vq::{TokenGrid, CODEBOOK};

fn tiny(frames: usize, height: usize, width: usize) -> DecoderConfig {
    DecoderConfig {
        text_len: 5,
        text_vocab: 9,
        frames,
        height,
        width,
        model_dim: 8,
        layers: 3,
        heads: 2,
        codebook_size: 6,
        latent_dim: 3,
    }
}

fn random_decoder(cfg: DecoderConfig, seed: u64) -> Decoder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codebook = Tensor::randn([cfg.codebook_size, cfg.latent_dim], 1.0, &mut rng);
    let mut params = init_params(&cfg, &codebook, &mut rng).unwrap();
    // Non-trivial norms and biases so every parameter matters.
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        if name.ends_with(".b") || name.ends_with(".g") || name.contains(".b") {
            let t = params.get_mut(&name).unwrap();
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    Decoder::new(cfg, params).unwrap()
}

fn random_text(cfg: &DecoderConfig, real: usize, rng: &mut impl Rng) -> TextSequence {
    let ids: Vec<usize> = (0..cfg.text_len).map(|i| if i < real { rng.random_range(1..cfg.text_vocab) } else { 0 }).collect();
    let mask = (0..cfg.text_len).map(|i| i < real).collect();
    TextSequence::new(ids, mask, cfg.text_vocab).unwrap()
}

fn random_grid(cfg: &DecoderConfig, rng: &mut impl Rng) -> TokenGrid {
    let idx = (0..cfg.tokens()).map(|_| rng.random_range(0..cfg.codebook_size)).collect();
    TokenGrid::new(cfg.frames, cfg.height, cfg.width, cfg.codebook_size, idx).unwrap()
}

#[test]
fn text_embedding_matches_direct_indexing() {
    let cfg = tiny(1, 2, 2);
    let dec = random_decoder(cfg.clone(), 17);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let text = random_text(&cfg, 3, &mut rng);
    let mut tape = Tape::new();
    let p = dec.params().bind(&mut tape, |_| false);
    let e = embed_text(&mut tape, &p, &text).unwrap();
    let table = dec.params().get("text.embed").unwrap();
    let pos = dec.params().get("text.pos").unwrap();
    for (n, &id) in text.ids().iter().enumerate() {
        for c in 0..cfg.model_dim {
            let want = table.data()[id * cfg.model_dim + c] + pos.data()[n * cfg.model_dim + c];
            assert_eq!(tape.value(e).data()[n * cfg.model_dim + c], want);
        }
    }
}

#[test]
fn text_embedding_edge_cases() {
    let cfg = tiny(1, 2, 2);
    let dec = random_decoder(cfg.clone(), 1);
    let mut zeroed = dec.params().clone();
    zeroed.insert("text.embed", Tensor::zeros([9, 8]));
    zeroed.insert("text.pos", Tensor::zeros([5, 8]));
    let mut tape = Tape::new();
    let p = zeroed.bind(&mut tape, |_| false);
    let text = TextSequence::new(vec![3, 1, 0, 0, 0], vec![true, true, false, false, false], 9).unwrap();
    let e = embed_text(&mut tape, &p, &text).unwrap();
    assert!(tape.value(e).data().iter().all(|&v| v == 0.0));

    let wide = TextSequence::unpadded(vec![1, 2, 40, 3, 4], 50).unwrap();
    assert!(matches!(embed_text(&mut tape, &p, &wide), Err(Error::Index { index: 40, .. })));
    let short = TextSequence::unpadded(vec![1, 2], 9).unwrap();
    assert!(matches!(embed_text(&mut tape, &p, &short), Err(Error::Dimension { .. })));

    let mut full = DecoderConfig::full();
    full.layers = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamStore::new();
    params.insert("text.embed", Tensor::randn([full.text_vocab, 1024], 0.1, &mut rng));
    params.insert("text.pos", Tensor::zeros([35, 1024]));
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, |_| false);
    let text = crate::dataset::tokenize("digit 9 is moving down then up", 35).unwrap();
    let e = embed_text(&mut tape, &p, &text).unwrap();
    assert_eq!(tape.shape(e), [35, 1024]);
}

#[test]
fn video_embedding_is_linear_plus_position() {
    let cfg = tiny(2, 2, 2);
    let dec = random_decoder(cfg.clone(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = Tensor::randn([8, 3], 1.0, &mut rng);
    let w = dec.params().get("video.proj.w").unwrap();
    let bias = dec.params().get("video.proj.b").unwrap();
    let pos = dec.params().get("video.pos").unwrap();
    let mut tape = Tape::new();
    let p = dec.params().bind(&mut tape, |_| false);
    let bv = tape.constant(b.clone());
    let out = embed_video_tokens(&mut tape, &p, bv, 0).unwrap();
    for m in 0..8 {
        for c in 0..8 {
            let lin: f64 = (0..3).map(|k| b.data()[m * 3 + k] * w.data()[k * 8 + c]).sum();
            let want = lin + bias.data()[c] + pos.data()[m * 8 + c];
            assert!((tape.value(out).data()[m * 8 + c] - want).abs() < 1e-12);
        }
    }

    let mut zeroed = dec.params().clone();
    zeroed.insert("video.proj.w", Tensor::zeros([3, 8]));
    zeroed.insert("video.proj.b", Tensor::zeros([8]));
    let mut tape = Tape::new();
    let p = zeroed.bind(&mut tape, |_| false);
    let bv = tape.constant(b);
    let out = embed_video_tokens(&mut tape, &p, bv, 0).unwrap();
    assert_eq!(tape.value(out).data(), pos.data());
}

#[test]
fn sparse_attention_equals_dense_reference_on_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for draw in 0..20 {
        let (l, h, w) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4));
        let cfg = tiny(l, h, w);
        let dec = random_decoder(cfg.clone(), draw);
        let text = random_text(&cfg, rng.random_range(1..=5), &mut rng);
        let grid = random_grid(&cfg, &mut rng);
        let sparse = dec.forward(&text, grid.indices()).unwrap();
        let dense = dec.clone().with_route(AttentionRoute::Dense).forward(&text, grid.indices()).unwrap();
        assert!(sparse.max_abs_diff(&dense) < 1e-8, "draw {draw}: {}", sparse.max_abs_diff(&dense));
    }
}

#[test]
fn attention_ignores_key_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let q = Tensor::randn([6, 4], 1.0, &mut rng);
    let k = Tensor::randn([9, 4], 1.0, &mut rng);
    let v = Tensor::randn([9, 4], 1.0, &mut rng);
    let lists: Vec<Vec<usize>> = (0..6).map(|i| (0..=i + 3).collect()).collect();
    let shuffled: Vec<Vec<usize>> = lists
        .iter()
        .map(|l| {
            let mut l = l.clone();
            l.shuffle(&mut rng);
            l
        })
        .collect();
    let run = |lists: Vec<Vec<usize>>| {
        let mut tape = Tape::new();
        let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
        let out = tape.sparse_attention(qv, kv, vv, Arc::new(AttentionKeys::new(lists)), 2).unwrap();
        tape.value(out).clone()
    };
    assert!(run(lists).max_abs_diff(&run(shuffled)) < 1e-12);
}

#[test]
fn self_only_attention_is_local() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let x = Tensor::randn([5, 4], 1.0, &mut rng);
    let keys = Arc::new(AttentionKeys::new((0..5).map(|i| vec![i]).collect()));
    let run = |x: &Tensor| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = tape.sparse_attention(xv, xv, xv, Arc::clone(&keys), 2).unwrap();
        tape.value(out).clone()
    };
    let base = run(&x);
    assert_eq!(base, x);
    let mut moved = x.clone();
    moved.data_mut()[0..4].iter_mut().for_each(|v| *v += 1.0);
    let out = run(&moved);
    assert_eq!(&out.data()[4..], &base.data()[4..]);
}

#[test]
fn logits_never_see_current_or_later_tokens() {
    let cfg = tiny(2, 3, 3);
    let dec = random_decoder(cfg.clone(), 40);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let text = random_text(&cfg, 4, &mut rng);
    let grid = random_grid(&cfg, &mut rng);
    let base = dec.forward(&text, grid.indices()).unwrap();
    let k = cfg.codebook_size;
    for m in 0..cfg.tokens() {
        let mut tokens = grid.indices().to_vec();
        tokens[m] = (tokens[m] + 1) % k;
        let out = dec.forward(&text, &tokens).unwrap();
        assert_eq!(&out.data()[..(m + 1) * k], &base.data()[..(m + 1) * k], "position {m}");
        if m + 1 < cfg.tokens() {
            assert_ne!(&out.data()[(m + 1) * k..], &base.data()[(m + 1) * k..]);
        }
    }
}

#[test]
fn prefix_forward_matches_teacher_forcing_bit_for_bit() {
    let cfg = tiny(2, 2, 3);
    let dec = random_decoder(cfg.clone(), 41);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let text = random_text(&cfg, 5, &mut rng);
    let grid = random_grid(&cfg, &mut rng);
    let full = dec.forward(&text, grid.indices()).unwrap();
    for p in 0..cfg.tokens() {
        let logits = dec.next_logits(&text, &grid.indices()[..p]).unwrap();
        assert_eq!(logits.as_slice(), full.row(p));
    }
    assert!(dec.next_logits(&text, grid.indices()).is_err());
}

#[test]
fn full_grid_and_vocabulary_give_m_by_k_logits() {
    let cfg = DecoderConfig {
        model_dim: 8,
        heads: 1,
        layers: 3,
        latent_dim: 4,
        ..DecoderConfig::full()
    };
    let dec = random_decoder(cfg.clone(), 2);
    let text = crate::dataset::tokenize("digit 9 is moving down then up", 35).unwrap();
    let tokens = vec![0; 2560];
    assert_eq!(dec.forward(&text, &tokens).unwrap().shape(), [2560, 10000]);
}

#[test]
fn loss_is_cross_entropy_of_forward_and_uniform_logits_give_ln_k() {
    let cfg = tiny(1, 2, 2);
    let dec = random_decoder(cfg.clone(), 50);
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let text = random_text(&cfg, 2, &mut rng);
    let grid = random_grid(&cfg, &mut rng);
    let logits = dec.forward(&text, grid.indices()).unwrap();
    let mut tape = Tape::new();
    let lv = tape.constant(logits);
    let ce = tape.cross_entropy(lv, grid.indices()).unwrap();
    assert_eq!(dec.loss(&text, &grid).unwrap(), tape.value(ce).item());

    let mut params = dec.params().clone();
    params.insert("out.w", Tensor::zeros([8, 6]));
    params.insert("out.b", Tensor::zeros([6]));
    let flat = Decoder::new(cfg, params).unwrap();
    assert!((flat.loss(&text, &grid).unwrap() - 6f64.ln()).abs() < 1e-12);
}

#[test]
fn decoder_gradients_pass_finite_difference_check() {
    let cfg = DecoderConfig {
        text_len: 4,
        text_vocab: 7,
        frames: 2,
        height: 2,
        width: 2,
        model_dim: 16,
        layers: 3,
        heads: 2,
        codebook_size: 8,
        latent_dim: 4,
    };
    let dec = random_decoder(cfg.clone(), 60);
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let text = random_text(&cfg, 3, &mut rng);
    let grid = random_grid(&cfg, &mut rng);
    let patterns = Patterns::new(&cfg);
    let report = grad_check(dec.params(), is_trainable, 1e-6, |tape, p| {
        decoder_loss_on_tape(tape, p, &cfg, &patterns, &text, &grid, AttentionRoute::Sparse)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
    assert_eq!(report.coordinates, dec.params().numel() - dec.params().get(CODEBOOK).unwrap().numel());
}

#[test]
fn grid_geometry_mismatch_is_rejected() {
    let cfg = tiny(1, 2, 2);
    let dec = random_decoder(cfg.clone(), 70);
    let text = TextSequence::unpadded(vec![1; 5], 9).unwrap();
    let wrong = TokenGrid::new(2, 1, 2, 6, vec![0; 4]).unwrap();
    assert!(matches!(dec.loss(&text, &wrong), Err(Error::Dimension { .. })));
    assert!(dec.forward(&text, &[0; 5]).is_err());
    assert!(matches!(dec.forward(&text, &[7]), Err(Error::Index { .. })));
}

#[test]
fn checkpoint_round_trip() {
    let cfg = tiny(1, 2, 2);
    let dec = random_decoder(cfg, 71);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gen.gdva");
    dec.save(&path).unwrap();
    let back = Decoder::load(&path).unwrap();
    assert_eq!(back.config(), dec.config());
    assert_eq!(back.params(), dec.params());
}

#[test]
fn training_lowers_the_loss() {
    let cfg = tiny(1, 2, 2);
    let mut dec = random_decoder(cfg.clone(), 80);
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let data: Vec<_> = (0..3).map(|_| (random_text(&cfg, 3, &mut rng), random_grid(&cfg, &mut rng))).collect();
    let before: f64 = data.iter().map(|(t, g)| dec.loss(t, g).unwrap()).sum();
    let report = train_decoder(&mut dec, &data, &DecoderTrainConfig { steps: 50, learning_rate: 1e-2, batch: 3, seed: 0 }).unwrap();
    assert_eq!(report.steps.len(), 50);
    let after: f64 = data.iter().map(|(t, g)| dec.loss(t, g).unwrap()).sum();
    assert!(after < 0.5 * before, "{before} -> {after}");
    let codebook = dec.params().get(CODEBOOK).unwrap().clone();
    let fresh = random_decoder(cfg, 80);
    assert_eq!(&codebook, fresh.params().get(CODEBOOK).unwrap());
}

/// Whole-network forward written with plain loops over row vectors, from the
/// layer description alone.
fn reference_forward(dec: &Decoder, text: &TextSequence, tokens: &[usize]) -> Vec<Vec<f64>> {
    let cfg = dec.config();
    let p = |name: &str| dec.params().get(name).unwrap();
    let d = cfg.model_dim;
    let row = |t: &Tensor, r: usize| t.data()[r * t.shape()[1]..(r + 1) * t.shape()[1]].to_vec();
    let matvec = |x: &[f64], w: &Tensor| -> Vec<f64> {
        let cols = w.shape()[1];
        (0..cols).map(|c| x.iter().enumerate().map(|(k, xv)| xv * w.data()[k * cols + c]).sum()).collect()
    };
    let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>();
    let ln = |x: &[f64], g: &Tensor, b: &Tensor| {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g.data()[i] + b.data()[i])
            .collect::<Vec<f64>>()
    };
    let m = cfg.tokens();
    let (hh, ww) = (cfg.height, cfg.width);
    let text_rows: Vec<Vec<f64>> = text
        .ids()
        .iter()
        .enumerate()
        .map(|(n, &id)| add(&row(p("text.embed"), id), &row(p("text.pos"), n)))
        .collect();
    let mut x: Vec<Vec<f64>> = (0..m)
        .map(|pos| {
            let base = if pos == 0 {
                row(p("video.bos"), 0)
            } else {
                let b = row(p(CODEBOOK), tokens[pos - 1]);
                add(&matvec(&b, p("video.proj.w")), p("video.proj.b").data())
            };
            add(&base, &row(p("video.pos"), pos))
        })
        .collect();
    let dh = d / cfg.heads;
    for r in 0..cfg.layers {
        let g = |s: &str| p(&format!("layer{r:02}.{s}"));
        let normed_text: Vec<Vec<f64>> = text_rows.iter().map(|t| ln(t, g("ln1.g"), g("ln1.b"))).collect();
        let normed_video: Vec<Vec<f64>> = x.iter().map(|v| ln(v, g("ln1.g"), g("ln1.b"))).collect();
        let mut next = Vec::with_capacity(m);
        for q in 0..m {
            let (ql, qi, qj) = (q / (hh * ww), (q / ww) % hh, q % ww);
            let mut sources: Vec<&Vec<f64>> = (0..cfg.text_len).filter(|&t| text.mask()[t]).map(|t| &normed_text[t]).collect();
            for k in 0..=q {
                let (kl, ki, kj) = (k / (hh * ww), (k / ww) % hh, k % ww);
                let ok = match r % 3 {
                    0 => ki == qi && kj == qj && kl <= ql,
                    1 => kl == ql && kj == qj && ki <= qi,
                    _ => kl == ql && ki == qi && kj <= qj,
                };
                if ok {
                    sources.push(&normed_video[k]);
                }
            }
            let qv = matvec(&normed_video[q], g("attn.wq"));
            let ks: Vec<Vec<f64>> = sources.iter().map(|s| matvec(s, g("attn.wk"))).collect();
            let vs: Vec<Vec<f64>> = sources.iter().map(|s| matvec(s, g("attn.wv"))).collect();
            let mut att = vec![0.0; d];
            for h in 0..cfg.heads {
                let span = h * dh..(h + 1) * dh;
                let scores: Vec<f64> = ks
                    .iter()
                    .map(|k| span.clone().map(|c| qv[c] * k[c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = e.iter().sum();
                for (w, v) in e.iter().zip(&vs) {
                    for c in span.clone() {
                        att[c] += w / z * v[c];
                    }
                }
            }
            let o = add(&matvec(&att, g("attn.wo")), g("attn.bo").data());
            let x1 = add(&x[q], &o);
            let f = ln(&x1, g("ln2.g"), g("ln2.b"));
            let f: Vec<f64> = add(&matvec(&f, g("ffn.w1")), g("ffn.b1").data()).into_iter().map(|v| v.max(0.0)).collect();
            let f = add(&matvec(&f, g("ffn.w2")), g("ffn.b2").data());
            next.push(add(&x1, &f));
        }
        x = next;
    }
    x.iter()
        .map(|v| add(&matvec(&ln(v, p("final.ln.g"), p("final.ln.b")), p("out.w")), p("out.b").data()))
        .collect()
}

#[test]
fn forward_matches_loop_reference_on_one_by_two_by_two_grid() {
    let cfg = tiny(1, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    for seed in 0..3 {
        let dec = random_decoder(cfg.clone(), 90 + seed);
        let text = random_text(&cfg, 3, &mut rng);
        let grid = random_grid(&cfg, &mut rng);
        let got = dec.forward(&text, grid.indices()).unwrap();
        let want = reference_forward(&dec, &text, grid.indices());
        for (m, row) in want.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                assert!((got.row(m)[k] - v).abs() < 1e-10, "position {m}, token {k}");
            }
        }
    }
}
