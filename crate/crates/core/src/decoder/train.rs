use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{decoder_loss_on_tape, is_trainable, Decoder};
use super::text::TextSequence;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::vq::TokenGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Caption/grid pairs per optimizer step.
    pub batch: usize,
    pub seed: u64,
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 5e-4,
            batch: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecoderTrainReport {
    /// Mean batch loss per step.
    pub steps: Vec<f64>,
    /// Mean loss per pass over the data.
    pub epochs: Vec<f64>,
}

/// Adam on shuffled mini-batches of teacher-forced token grids. The
/// codebook stays fixed.
pub fn train_decoder(
    decoder: &mut Decoder,
    data: &[(TextSequence, TokenGrid)],
    cfg: &DecoderTrainConfig,
) -> Result<DecoderTrainReport> {
    if data.is_empty() {
        return Err(Error::Validation("no training pairs".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::config("batch", "must be positive"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut report = DecoderTrainReport::default();
    let mut logged = 0;
    while report.steps.len() < cfg.steps {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0);
        for chunk in order.chunks(cfg.batch) {
            if report.steps.len() == cfg.steps {
                break;
            }
            let step = report.steps.len();
            let mut tape = Tape::new();
            let p = decoder.params().bind(&mut tape, is_trainable);
            let mut losses = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (text, grid) = &data[i];
                losses.push(decoder_loss_on_tape(
                    &mut tape,
                    &p,
                    decoder.config(),
                    decoder.patterns(),
                    text,
                    grid,
                    decoder.route(),
                )
                .map_err(|e| match e {
                    Error::NonFinite { op } => Error::Diverged {
                        step,
                        detail: format!("non-finite value in {op}"),
                    },
                    e => e,
                })?);
            }
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = tape.add(total, l)?;
            }
            let loss = tape.scale(total, 1.0 / losses.len() as f64)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss is {value}"),
                });
            }
            let grads = tape.backward(loss)?;
            let grads = p.gradients(&tape, &grads);
            adam.step(decoder.params_mut(), &grads)?;
            sum += value;
            count += 1;
            report.steps.push(value);
        }
        let mean = sum / count as f64;
        let mark = report.steps.len() * 10 / cfg.steps.max(1);
        if mark != logged {
            logged = mark;
            info!("decoder epoch {} (step {}): mean loss {mean:.6}", report.epochs.len(), report.steps.len());
        } else {
            debug!("decoder epoch {}: mean loss {mean:.6}", report.epochs.len());
        }
        report.epochs.push(mean);
    }
    Ok(report)
}
