use std::fmt::Write as _;

use log::warn;
use serde::Serialize;

use super::oracle::{checked_frame, checked_text, SimilarityOracle};
use crate::error::{Error, Result};
use crate::video::VideoTensor;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn frame_embeddings(video: &VideoTensor, oracle: &dyn SimilarityOracle) -> Result<Vec<Vec<f64>>> {
    if video.frames() == 0 {
        return Err(Error::Contract("video has no frames".into()));
    }
    (0..video.frames()).map(|l| checked_frame(oracle, video.frame(l))).collect()
}

fn mean_similarity(text: &[f64], frames: &[Vec<f64>]) -> f64 {
    frames.iter().map(|f| dot(text, f)).sum::<f64>() / frames.len() as f64
}

/// Mean text/frame similarity over the frames of `video`, in `[-1, 1]`.
pub fn sim(text: &str, video: &VideoTensor, oracle: &dyn SimilarityOracle) -> Result<f64> {
    let t = checked_text(oracle, text)?;
    Ok(mean_similarity(&t, &frame_embeddings(video, oracle)?))
}

/// `100 · sim(pred) / sim(gt)`.
pub fn rm(text: &str, predicted: &VideoTensor, ground_truth: &VideoTensor, oracle: &dyn SimilarityOracle) -> Result<f64> {
    let t = checked_text(oracle, text)?;
    let gt = mean_similarity(&t, &frame_embeddings(ground_truth, oracle)?);
    let pred = mean_similarity(&t, &frame_embeddings(predicted, oracle)?);
    ratio(pred, gt, text)
}

fn ratio(pred: f64, gt: f64, text: &str) -> Result<f64> {
    if gt <= 0.0 || !gt.is_finite() {
        return Err(Error::UndefinedMetric(format!(
            "relative matching needs a positive ground-truth similarity; got {gt} for `{text}` (prediction similarity {pred})"
        )));
    }
    Ok(100.0 * (pred / gt))
}

/// One evaluation triple.
#[derive(Clone, Debug)]
pub struct EvalSample {
    pub text: String,
    pub predicted: VideoTensor,
    pub ground_truth: VideoTensor,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleMetrics {
    pub text: String,
    pub sim: f64,
    pub sim_ground_truth: f64,
    /// `None` when the ground-truth similarity is not positive.
    pub rm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusReport {
    pub samples: Vec<SampleMetrics>,
    /// Mean prediction similarity, ×100.
    pub mean_sim: f64,
    /// Mean of the defined per-sample relative matching scores.
    pub mean_rm: Option<f64>,
    /// Samples left out of `mean_rm`.
    pub undefined_rm: usize,
    /// `sim_predicted[q][v]`: caption `q` against predicted video `v`.
    pub sim_predicted: Vec<Vec<f64>>,
    /// `sim_ground_truth[q][v]`: caption `q` against ground-truth video `v`.
    pub sim_ground_truth: Vec<Vec<f64>>,
}

/// Per-sample SIM and RM, their corpus means, and caption-by-video SIM
/// matrices. Each caption and frame is embedded once.
pub fn corpus_eval(samples: &[EvalSample], oracle: &dyn SimilarityOracle) -> Result<CorpusReport> {
    if samples.is_empty() {
        return Err(Error::Validation("no samples to evaluate".into()));
    }
    let texts: Vec<Vec<f64>> = samples.iter().map(|s| checked_text(oracle, &s.text)).collect::<Result<_>>()?;
    let preds: Vec<Vec<Vec<f64>>> =
        samples.iter().map(|s| frame_embeddings(&s.predicted, oracle)).collect::<Result<_>>()?;
    let gts: Vec<Vec<Vec<f64>>> =
        samples.iter().map(|s| frame_embeddings(&s.ground_truth, oracle)).collect::<Result<_>>()?;
    let matrix = |videos: &[Vec<Vec<f64>>]| -> Vec<Vec<f64>> {
        texts.iter().map(|t| videos.iter().map(|v| mean_similarity(t, v)).collect()).collect()
    };
    let sim_predicted = matrix(&preds);
    let sim_ground_truth = matrix(&gts);
    let mut out = Vec::with_capacity(samples.len());
    let mut undefined = 0;
    for (i, s) in samples.iter().enumerate() {
        let (pred, gt) = (sim_predicted[i][i], sim_ground_truth[i][i]);
        let rm = match ratio(pred, gt, &s.text) {
            Ok(v) => Some(v),
            Err(e) => {
                warn!("sample {i}: {e}");
                undefined += 1;
                None
            }
        };
        out.push(SampleMetrics {
            text: s.text.clone(),
            sim: pred,
            sim_ground_truth: gt,
            rm,
        });
    }
    let defined: Vec<f64> = out.iter().filter_map(|s| s.rm).collect();
    let mean_rm = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let mean_sim = 100.0 * out.iter().map(|s| s.sim).sum::<f64>() / out.len() as f64;
    Ok(CorpusReport {
        samples: out,
        mean_sim,
        mean_rm,
        undefined_rm: undefined,
        sim_predicted,
        sim_ground_truth,
    })
}

/// Square SIM matrix as CSV: a header of video indices, then one row per
/// caption led by its index.
pub fn matrix_csv(matrix: &[Vec<f64>]) -> String {
    let mut s = String::from("query");
    for v in 0..matrix.first().map_or(0, Vec::len) {
        let _ = write!(s, ",video_{v}");
    }
    s.push('\n');
    for (q, row) in matrix.iter().enumerate() {
        let _ = write!(s, "{q}");
        for x in row {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    s
}
