//! Attended-pair counts for sparse and dense attention over a token grid.
//!
//! A video query at frame `l`, row `i`, column `j` (0-based) attends
//! `l + 1` keys on the temporal axis, `j + 1` on the row axis and `i + 1` on
//! the column axis, self included each time. Summed over the `M = L·h·w`
//! queries this is `M(L + h + w + 3) / 2`. The asymptotic figure
//! `M(L + h + w)` and the dense `M²` are reported next to it.

use serde::Serialize;

use crate::decoder::{build_pattern, AttentionAxis};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PairCounts {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub text_len: usize,
    pub tokens: usize,
    /// Video-to-video pairs over the three axes, enumerated from the masks.
    pub axis_pairs: usize,
    /// `M(L + h + w)`.
    pub axis_baseline: usize,
    /// Video-to-text pairs over the three axes, `3·M·N`.
    pub text_pairs: usize,
    /// `M²`.
    pub dense_pairs: usize,
}

impl PairCounts {
    pub fn measure(frames: usize, height: usize, width: usize, text_len: usize) -> Self {
        let tokens = frames * height * width;
        Self {
            frames,
            height,
            width,
            text_len,
            tokens,
            axis_pairs: enumerated_pairs(frames, height, width),
            axis_baseline: tokens * (frames + height + width),
            text_pairs: 3 * tokens * text_len,
            dense_pairs: tokens * tokens,
        }
    }

    /// `dense_pairs / axis_baseline`.
    pub fn dense_ratio(&self) -> f64 {
        self.dense_pairs as f64 / self.axis_baseline as f64
    }
}

/// Σ over axes of the pairs admitted by each mask.
pub fn enumerated_pairs(frames: usize, height: usize, width: usize) -> usize {
    AttentionAxis::ALL
        .into_iter()
        .map(|axis| build_pattern(axis, frames, height, width).video_pairs())
        .sum()
}

/// `M(L + h + w + 3) / 2`.
pub fn closed_form_pairs(frames: usize, height: usize, width: usize) -> usize {
    frames * height * width * (frames + height + width + 3) / 2
}

/// One row per grid in the cartesian product of the three lists.
pub fn sweep(frames: &[usize], heights: &[usize], widths: &[usize], text_len: usize) -> Vec<PairCounts> {
    let mut out = Vec::new();
    for &l in frames {
        for &h in heights {
            for &w in widths {
                out.push(PairCounts::measure(l, h, w, text_len));
            }
        }
    }
    out
}

/// Fixed-width table of a sweep.
pub fn render_table(rows: &[PairCounts]) -> String {
    let mut s = format!(
        "{:>4} {:>4} {:>4} {:>7} {:>12} {:>12} {:>12} {:>14} {:>8}\n",
        "L", "h", "w", "M", "axis", "M(L+h+w)", "text", "dense", "ratio"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>4} {:>4} {:>4} {:>7} {:>12} {:>12} {:>12} {:>14} {:>8.2}\n",
            r.frames,
            r.height,
            r.width,
            r.tokens,
            r.axis_pairs,
            r.axis_baseline,
            r.text_pairs,
            r.dense_pairs,
            r.dense_ratio()
        ));
    }
    s
}
