use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::codec::{vqvae_loss, VqLossBreakdown, VqVae};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;
use crate::video::VideoTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct VqTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Frames per optimizer step.
    pub batch_frames: usize,
    pub seed: u64,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 1e-3,
            batch_frames: 32,
            seed: 0,
        }
    }
}

/// Mean loss terms over one pass through the training frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VqEpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub mean: VqLossBreakdown,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VqTrainReport {
    pub epochs: Vec<VqEpochLog>,
    /// Per-step loss terms, in order.
    pub steps: Vec<VqLossBreakdown>,
}

fn frame_batch(frames: &[(usize, usize)], videos: &[VideoTensor]) -> Result<Tensor> {
    let v0 = &videos[frames[0].0];
    let mut data = Vec::with_capacity(frames.len() * v0.frame_len());
    for &(v, l) in frames {
        data.extend_from_slice(videos[v].frame(l).pixels);
    }
    Tensor::new([frames.len(), v0.height(), v0.width(), v0.channels()], data)
}

/// Trains all parameters, codebook included, with Adam on shuffled frame
/// batches. Stops with [`Error::Diverged`] on a non-finite loss.
pub fn train_vqvae(model: &mut VqVae, videos: &[VideoTensor], cfg: &VqTrainConfig) -> Result<VqTrainReport> {
    if videos.is_empty() {
        return Err(Error::Validation("no training videos".into()));
    }
    if cfg.batch_frames == 0 {
        return Err(Error::config("batch_frames", "must be positive"));
    }
    let c = model.config().clone();
    for v in videos {
        if (v.height(), v.width(), v.channels()) != (c.height, c.width, c.channels) {
            return Err(Error::dim("train_vqvae", "video extents differ from the config"));
        }
    }
    let mut pool: Vec<(usize, usize)> =
        videos.iter().enumerate().flat_map(|(v, vid)| (0..vid.frames()).map(move |l| (v, l))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut report = VqTrainReport::default();
    let mut logged = 0;
    let mut epoch = 0;
    while report.steps.len() < cfg.steps {
        pool.shuffle(&mut rng);
        let mut sum = VqLossBreakdown {
            beta: c.beta,
            ..Default::default()
        };
        let mut count = 0;
        for chunk in pool.chunks(cfg.batch_frames) {
            if report.steps.len() == cfg.steps {
                break;
            }
            let step = report.steps.len();
            let batch = frame_batch(chunk, videos)?;
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape, |_| true);
            let diverged = |detail: String| Error::Diverged { step, detail };
            let loss = vqvae_loss(&mut tape, &bound, &batch, c.beta, true).map_err(|e| match e {
                Error::NonFinite { op } => diverged(format!("non-finite value in {op}")),
                e => e,
            })?;
            let b = loss.breakdown;
            if !b.total.is_finite() {
                return Err(diverged(format!("loss is {b}")));
            }
            let grads = tape.backward(loss.total)?;
            let grads = bound.gradients(&tape, &grads);
            adam.step(model.params_mut(), &grads)?;
            if model.params().iter().any(|(_, t)| !t.is_finite()) {
                return Err(diverged(format!("non-finite parameters after update; loss was {b}")));
            }
            sum.reconstruction += b.reconstruction;
            sum.codebook += b.codebook;
            sum.commitment += b.commitment;
            sum.total += b.total;
            count += 1;
            report.steps.push(b);
        }
        let n = count as f64;
        let mean = VqLossBreakdown {
            reconstruction: sum.reconstruction / n,
            codebook: sum.codebook / n,
            commitment: sum.commitment / n,
            beta: c.beta,
            total: sum.total / n,
        };
        let mark = report.steps.len() * 10 / cfg.steps.max(1);
        if mark != logged {
            logged = mark;
            info!("vq epoch {epoch} (step {}): {mean}", report.steps.len());
        } else {
            debug!("vq epoch {epoch}: {mean}");
        }
        report.epochs.push(VqEpochLog {
            epoch,
            steps: count,
            mean,
        });
        epoch += 1;
    }
    Ok(report)
}
