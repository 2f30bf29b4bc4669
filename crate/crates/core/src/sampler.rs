//! Autoregressive generation, top-k sampling and best-of-n reranking.
//!
//! Every candidate draws from its own ChaCha8 stream: the generator is seeded
//! with the master seed and switched to stream `index`, so candidate `i` is
//! the same whether one or a hundred candidates are generated, and whichever
//! worker thread produces it.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, TextSequence};
use crate::error::{Error, Result};
use crate::metrics::{sim, SimilarityOracle};
use crate::video::VideoTensor;
use crate::vq::{TokenGrid, VqVae};

/// Tolerance on `Σ probs = 1` accepted by [`top_k_sample`].
pub const PROB_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Greedy,
    TopK,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Greedy => "greedy",
            Strategy::TopK => "top-k",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "top-k" | "topk" => Ok(Strategy::TopK),
            _ => Err(Error::config("strategy", format!("expected greedy or top-k, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub strategy: Strategy,
    pub k: usize,
    /// Logits are divided by this before the softmax and the top-k cut.
    pub temperature: f64,
    pub candidates: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    /// Top-10 sampling, 32 candidates.
    fn default() -> Self {
        Self {
            strategy: Strategy::TopK,
            k: 10,
            temperature: 1.0,
            candidates: 32,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn greedy() -> Self {
        Self {
            strategy: Strategy::Greedy,
            k: 1,
            candidates: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self, codebook_size: usize) -> Result<()> {
        if self.k == 0 || self.k > codebook_size {
            return Err(Error::config("k", format!("must lie in [1, {codebook_size}], got {}", self.k)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config("temperature", format!("must be positive, got {}", self.temperature)));
        }
        if self.candidates == 0 {
            return Err(Error::config("candidates", "must be at least 1"));
        }
        Ok(())
    }
}

/// `softmax(logits / temperature)`.
pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Contract("empty probability vector".into()));
    }
    if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Contract(format!("probability {i} is {}", probs[i])));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_TOLERANCE {
        return Err(Error::Contract(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// Samples from the `k` most probable entries after renormalizing them.
/// Ties at the cut are resolved towards lower indices.
pub fn top_k_sample(probs: &[f64], k: usize, rng: &mut impl Rng) -> Result<usize> {
    check_distribution(probs)?;
    if k == 0 || k > probs.len() {
        return Err(Error::Contract(format!("k = {k} outside [1, {}]", probs.len())));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(k);
    let mass: f64 = order.iter().map(|&i| probs[i]).sum();
    if mass <= 0.0 {
        return Ok(order[0]);
    }
    let mut u = rng.random::<f64>() * mass;
    for &i in &order {
        if u < probs[i] {
            return Ok(i);
        }
        u -= probs[i];
    }
    // Rounding left `u` just past the last bucket.
    Ok(*order.iter().rev().find(|&&i| probs[i] > 0.0).unwrap_or(&order[0]))
}

/// The generator for candidate `index`.
pub fn candidate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Emits all `M` tokens in raster order.
pub fn generate(decoder: &Decoder, text: &TextSequence, cfg: &SamplingConfig, rng: &mut impl Rng) -> Result<TokenGrid> {
    let dc = decoder.config();
    cfg.validate(dc.codebook_size)?;
    let m = dc.tokens();
    let mut tokens = Vec::with_capacity(m);
    while tokens.len() < m {
        let logits = decoder.next_logits(text, &tokens)?;
        let probs = softmax_with_temperature(&logits, cfg.temperature);
        let next = match cfg.strategy {
            Strategy::Greedy => argmax(&probs),
            Strategy::TopK => top_k_sample(&probs, cfg.k, rng)?,
        };
        tokens.push(next);
    }
    TokenGrid::new(dc.frames, dc.height, dc.width, dc.codebook_size, tokens)
}

/// Candidate `index` of a best-of-n run.
pub fn sample_candidate(decoder: &Decoder, text: &TextSequence, cfg: &SamplingConfig, index: usize) -> Result<TokenGrid> {
    generate(decoder, text, cfg, &mut candidate_rng(cfg.seed, index))
}

/// Candidates `0..n`, spread over worker threads.
pub fn sample_candidates(decoder: &Decoder, text: &TextSequence, cfg: &SamplingConfig) -> Result<Vec<TokenGrid>> {
    cfg.validate(decoder.config().codebook_size)?;
    let n = cfg.candidates;
    let workers = thread::available_parallelism().map_or(1, |w| w.get()).min(n);
    let mut slots: Vec<Option<Result<TokenGrid>>> = (0..n).map(|_| None).collect();
    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..n)
                        .step_by(workers)
                        .map(|i| (i, sample_candidate(decoder, text, cfg, i)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("sampling worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every candidate sampled")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub index: usize,
    pub score: f64,
    /// Token-grid file, relative to the report's directory.
    pub tokens: String,
}

#[derive(Clone, Debug)]
pub struct Reranked {
    pub best: usize,
    pub grid: TokenGrid,
    pub video: VideoTensor,
    pub score: f64,
    /// Every candidate in index order with its score.
    pub candidates: Vec<(TokenGrid, f64)>,
}

impl Reranked {
    /// Writes `tokens/candidate-NNN.gdtk` for every candidate and a
    /// `candidates.jsonl` report, one [`CandidateRecord`] per line.
    pub fn write_report(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("tokens"))?;
        let path = dir.join("candidates.jsonl");
        let mut out = fs::File::create(&path)?;
        for (index, (grid, score)) in self.candidates.iter().enumerate() {
            let tokens = format!("tokens/candidate-{index:03}.gdtk");
            grid.save(dir.join(&tokens))?;
            let rec = CandidateRecord { index, score: *score, tokens };
            writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        }
        Ok(path)
    }
}

fn with_candidate(index: usize, e: Error) -> Error {
    match e {
        Error::Oracle(m) => Error::Oracle(format!("candidate {index}: {m}")),
        Error::Contract(m) => Error::Contract(format!("candidate {index}: {m}")),
        Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("candidate {index}: {m}")),
        other => other,
    }
}

/// Generates `cfg.candidates` videos for `caption` and keeps the one the
/// oracle scores highest; ties go to the earliest candidate.
pub fn best_of_n(
    caption: &str,
    text: &TextSequence,
    decoder: &Decoder,
    vq: &VqVae,
    cfg: &SamplingConfig,
    oracle: &dyn SimilarityOracle,
) -> Result<Reranked> {
    let grids = sample_candidates(decoder, text, cfg)?;
    let mut candidates = Vec::with_capacity(grids.len());
    let mut best: Option<(usize, VideoTensor, f64)> = None;
    for (i, grid) in grids.into_iter().enumerate() {
        let video = vq.decode(&grid)?;
        let score = sim(caption, &video, oracle).map_err(|e| with_candidate(i, e))?;
        if best.as_ref().is_none_or(|(_, _, s)| score > *s) {
            best = Some((i, video, score));
        }
        candidates.push((grid, score));
    }
    let (best, video, score) = best.expect("at least one candidate");
    Ok(Reranked {
        best,
        grid: candidates[best].0.clone(),
        video,
        score,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use proptest::prelude::{any, prop, prop_assert, prop_assume, proptest};

    use super::*;
    use crate::decoder::DecoderConfig;
    use crate::metrics::normalize;
    use crate::video::Frame;
    use crate::vq::VqConfig;

    fn tiny() -> (Decoder, VqVae, TextSequence) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vq = VqVae::init(
            VqConfig {
                height: 8,
                width: 8,
                channels: 1,
                hidden: 4,
                latent_dim: 4,
                codebook_size: 8,
                beta: 0.25,
            },
            &mut rng,
        )
        .unwrap();
        let cfg = DecoderConfig {
            text_len: 4,
            text_vocab: 22,
            frames: 2,
            height: 2,
            width: 2,
            model_dim: 8,
            layers: 3,
            heads: 2,
            codebook_size: 8,
            latent_dim: 4,
        };
        let decoder = Decoder::init(cfg, vq.codebook().entries(), &mut rng).unwrap();
        let text = TextSequence::new(vec![1, 7, 3, 0], vec![true, true, true, false], 22).unwrap();
        (decoder, vq, text)
    }

    #[test]
    fn certain_outcome_is_always_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 1..=4 {
            for _ in 0..200 {
                assert_eq!(top_k_sample(&[0.0, 0.0, 1.0, 0.0], k, &mut rng).unwrap(), 2);
            }
        }
    }

    #[test]
    fn uniform_full_support_passes_chi_square() {
        let k = 10;
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            counts[top_k_sample(&[0.1; 10], k, &mut rng).unwrap()] += 1;
        }
        let expected = draws as f64 / k as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 9 degrees of freedom: mean 9, sd √18; five sd is about 30.
        assert!(chi2 < 9.0 + 5.0 * 18f64.sqrt(), "chi2 = {chi2}");
        let sd = (expected * (1.0 - 1.0 / k as f64)).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - expected).abs() < 5.0 * sd), "{counts:?}");
    }

    #[test]
    fn truncation_renormalizes_the_kept_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[top_k_sample(&[0.5, 0.3, 0.2], 2, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        let p = 0.5 / 0.8;
        let sd = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((counts[0] as f64 / draws as f64 - p).abs() < 5.0 * sd, "{counts:?}");
    }

    #[test]
    fn ties_at_the_cut_keep_the_lowest_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let i = top_k_sample(&[0.2, 0.4, 0.2, 0.2], 2, &mut rng).unwrap();
            assert!(i == 0 || i == 1);
        }
    }

    #[test]
    fn malformed_distributions_are_contract_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for probs in [vec![0.5, 0.5 + 2e-6], vec![0.9], vec![1.5, -0.5], vec![f64::NAN, 1.0], vec![]] {
            assert!(matches!(top_k_sample(&probs, 1, &mut rng), Err(Error::Contract(_))), "{probs:?}");
        }
        assert!(top_k_sample(&[0.5, 0.5 + 5e-7], 1, &mut rng).is_ok());
        assert!(matches!(top_k_sample(&[1.0], 2, &mut rng), Err(Error::Contract(_))));
        assert!(matches!(top_k_sample(&[1.0], 0, &mut rng), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn draws_stay_inside_the_top_k(raw in prop::collection::vec(0u32..5, 2..12), k_frac in 0.0f64..1.0, seed in any::<u64>()) {
            let total: u32 = raw.iter().sum();
            prop_assume!(total > 0);
            let probs: Vec<f64> = raw.iter().map(|&r| r as f64 / total as f64).collect();
            let k = 1 + (k_frac * (probs.len() - 1) as f64) as usize;
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
            let allowed = &order[..k];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..50 {
                let i = top_k_sample(&probs, k, &mut rng).unwrap();
                prop_assert!(allowed.contains(&i));
                prop_assert!(probs[i] > 0.0);
            }
        }
    }

    #[test]
    fn temperature_sharpens_and_flattens() {
        let logits = [1.0, 2.0, 0.5];
        let base = softmax_with_temperature(&logits, 1.0);
        let cold = softmax_with_temperature(&logits, 0.25);
        let hot = softmax_with_temperature(&logits, 4.0);
        assert!(cold[1] > base[1] && base[1] > hot[1]);
        for p in [&base, &cold, &hot] {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        assert!((base[0] - 1f64.exp() / z).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(SamplingConfig::default().validate(10).is_ok());
        assert!(SamplingConfig::default().validate(9).is_err());
        let bad = [
            SamplingConfig { k: 0, ..SamplingConfig::default() },
            SamplingConfig { temperature: 0.0, ..SamplingConfig::default() },
            SamplingConfig { temperature: f64::NAN, ..SamplingConfig::default() },
            SamplingConfig { candidates: 0, ..SamplingConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(64), Err(Error::Config { .. })), "{cfg:?}");
        }
        assert_eq!("top-k".parse::<Strategy>().unwrap(), Strategy::TopK);
        assert!("beam".parse::<Strategy>().is_err());
    }

    #[test]
    fn greedy_is_deterministic_and_replays_under_teacher_forcing() {
        let (decoder, _, text) = tiny();
        let cfg = SamplingConfig::greedy();
        let a = sample_candidate(&decoder, &text, &cfg, 0).unwrap();
        let b = sample_candidate(&decoder, &text, &cfg, 7).unwrap();
        assert_eq!(a, b);
        let logits = decoder.forward(&text, a.indices()).unwrap();
        for m in 0..a.indices().len() {
            assert_eq!(argmax(logits.row(m)), a.indices()[m]);
        }
        let k1 = SamplingConfig { strategy: Strategy::TopK, k: 1, ..SamplingConfig::default() };
        for i in 0..4 {
            assert_eq!(sample_candidate(&decoder, &text, &k1, i).unwrap(), a);
        }
    }

    #[test]
    fn candidates_are_reproducible_individually() {
        let (decoder, _, text) = tiny();
        let cfg = SamplingConfig { k: 8, candidates: 6, seed: 11, ..SamplingConfig::default() };
        let all = sample_candidates(&decoder, &text, &cfg).unwrap();
        assert_eq!(all, sample_candidates(&decoder, &text, &cfg).unwrap());
        for (i, g) in all.iter().enumerate() {
            assert_eq!(&sample_candidate(&decoder, &text, &cfg, i).unwrap(), g);
        }
        assert!(all.iter().any(|g| g != &all[0]));
        let other = SamplingConfig { seed: 12, ..cfg.clone() };
        assert_ne!(sample_candidates(&decoder, &text, &other).unwrap(), all);
    }

    /// Text embeds to `e₀`; frames whose first pixel matches `target`
    /// embed to `e₀`, all others to a fixed vector at cosine `0.3`.
    struct Rigged {
        target: Vec<f64>,
        calls: Cell<usize>,
        fail_at: Option<usize>,
    }

    impl SimilarityOracle for Rigged {
        fn dim(&self) -> usize {
            2
        }

        fn embed_text(&self, _: &str) -> Result<Vec<f64>> {
            Ok(vec![1.0, 0.0])
        }

        fn embed_frame(&self, frame: Frame<'_>) -> Result<Vec<f64>> {
            let n = self.calls.get();
            self.calls.set(n + 1);
            if Some(n) == self.fail_at {
                return Err(Error::Oracle("service unavailable".into()));
            }
            Ok(if frame.pixels == self.target.as_slice() { vec![1.0, 0.0] } else { normalize(vec![0.3, 0.91f64.sqrt()]).unwrap() })
        }
    }

    #[test]
    fn rigged_oracle_selects_the_designated_candidate() {
        let (decoder, vq, text) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let cfg = SamplingConfig { k: 8, candidates: 5, seed: trial, ..SamplingConfig::default() };
            let grids = sample_candidates(&decoder, &text, &cfg).unwrap();
            let unique: Vec<usize> = (0..grids.len()).filter(|&i| grids.iter().filter(|g| *g == &grids[i]).count() == 1).collect();
            let j = unique[rng.random_range(0..unique.len())];
            let video = vq.decode(&grids[j]).unwrap();
            let oracle = Rigged { target: video.frame(0).pixels.to_vec(), calls: Cell::new(0), fail_at: None };
            let out = best_of_n("caption", &text, &decoder, &vq, &cfg, &oracle).unwrap();
            assert_eq!(out.best, j);
            assert_eq!(out.grid, grids[j]);
            let max = out.candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(out.score, max);
        }
    }

    #[test]
    fn oracle_errors_name_the_candidate() {
        let (decoder, vq, text) = tiny();
        let cfg = SamplingConfig { k: 8, candidates: 3, ..SamplingConfig::default() };
        // Two frames per candidate: call 4 is candidate 2's first frame.
        let oracle = Rigged { target: vec![], calls: Cell::new(0), fail_at: Some(4) };
        let err = best_of_n("caption", &text, &decoder, &vq, &cfg, &oracle).unwrap_err();
        assert_eq!(err.to_string(), "oracle: candidate 2: service unavailable");
    }

    #[test]
    fn single_candidate_equals_generate_then_decode_and_score_grows_with_n() {
        let (decoder, vq, text) = tiny();
        let oracle = crate::metrics::ToyOracle::desk();
        let caption = "digit 3 is moving up and down";
        let one = SamplingConfig { k: 8, candidates: 1, seed: 9, ..SamplingConfig::default() };
        let out = best_of_n(caption, &text, &decoder, &vq, &one, &oracle).unwrap();
        let grid = generate(&decoder, &text, &one, &mut candidate_rng(9, 0)).unwrap();
        assert_eq!(out.grid, grid);
        assert_eq!(out.video, vq.decode(&grid).unwrap());
        let mut last = f64::NEG_INFINITY;
        for n in 1..=6 {
            let cfg = SamplingConfig { candidates: n, ..one.clone() };
            let s = best_of_n(caption, &text, &decoder, &vq, &cfg, &oracle).unwrap().score;
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn report_lists_every_candidate() {
        let (decoder, vq, text) = tiny();
        let cfg = SamplingConfig { k: 8, candidates: 3, ..SamplingConfig::default() };
        let oracle = Rigged { target: vec![], calls: Cell::new(0), fail_at: None };
        let out = best_of_n("caption", &text, &decoder, &vq, &cfg, &oracle).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = out.write_report(dir.path()).unwrap();
        let lines: Vec<CandidateRecord> = fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        for (i, rec) in lines.iter().enumerate() {
            assert_eq!(rec.index, i);
            assert_eq!(TokenGrid::load(dir.path().join(&rec.tokens)).unwrap(), out.candidates[i].0);
        }
    }
}
