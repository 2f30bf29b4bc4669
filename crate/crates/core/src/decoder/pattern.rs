//! Which earlier video positions each query may attend to.
//!
//! Positions are raster indices `m = (l·h + i)·w + j` over frame `l`, row
//! `i` and column `j`. Each axis keeps the keys that agree with the query on
//! the other two coordinates and do not come after it on this one; the
//! query itself is always included.

use std::fmt;
use std::sync::Arc;

use crate::autodiff::AttentionKeys;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttentionAxis {
    /// Same `(i, j)` in frames `l' ≤ l`.
    Temporal,
    /// Same `(l, j)` in rows `i' ≤ i`.
    Row,
    /// Same `(l, i)` in columns `j' ≤ j`.
    Column,
}

impl AttentionAxis {
    pub const ALL: [AttentionAxis; 3] = [AttentionAxis::Temporal, AttentionAxis::Row, AttentionAxis::Column];

    /// Axis of layer `r` in the repeating temporal, row, column stack.
    pub fn for_layer(r: usize) -> Self {
        Self::ALL[r % 3]
    }
}

impl fmt::Display for AttentionAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionAxis::Temporal => "temporal",
            AttentionAxis::Row => "row",
            AttentionAxis::Column => "column",
        })
    }
}

/// Video-to-video attendability for one axis over an `L × h × w` grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseAttentionPattern {
    axis: AttentionAxis,
    frames: usize,
    height: usize,
    width: usize,
    /// Ascending key positions per query.
    video_keys: Vec<Vec<usize>>,
}

pub fn build_pattern(axis: AttentionAxis, frames: usize, height: usize, width: usize) -> SparseAttentionPattern {
    let pos = |l: usize, i: usize, j: usize| (l * height + i) * width + j;
    let mut video_keys = Vec::with_capacity(frames * height * width);
    for l in 0..frames {
        for i in 0..height {
            for j in 0..width {
                video_keys.push(match axis {
                    AttentionAxis::Temporal => (0..=l).map(|l2| pos(l2, i, j)).collect(),
                    AttentionAxis::Row => (0..=i).map(|i2| pos(l, i2, j)).collect(),
                    AttentionAxis::Column => (0..=j).map(|j2| pos(l, i, j2)).collect(),
                });
            }
        }
    }
    SparseAttentionPattern {
        axis,
        frames,
        height,
        width,
        video_keys,
    }
}

impl SparseAttentionPattern {
    pub fn axis(&self) -> AttentionAxis {
        self.axis
    }

    pub fn grid(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.video_keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.video_keys.is_empty()
    }

    /// Video positions attendable from `query`, ascending, self included.
    pub fn video_keys(&self, query: usize) -> &[usize] {
        &self.video_keys[query]
    }

    /// Attended video/video pairs over all queries.
    pub fn video_pairs(&self) -> usize {
        self.video_keys.iter().map(Vec::len).sum()
    }

    /// Key lists over rows laid out as `[text (N rows); video]` for the first
    /// `queries` video positions. Every non-pad text row is attendable from
    /// every query; pad rows never are.
    pub fn with_text(&self, text_mask: &[bool], queries: usize) -> Arc<AttentionKeys> {
        let n = text_mask.len();
        let text: Vec<usize> = (0..n).filter(|&t| text_mask[t]).collect();
        let lists = self.video_keys[..queries]
            .iter()
            .map(|keys| text.iter().copied().chain(keys.iter().map(|&k| n + k)).collect())
            .collect();
        Arc::new(AttentionKeys::new(lists))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coords(m: usize, h: usize, w: usize) -> (usize, usize, usize) {
        (m / (h * w), (m / w) % h, m % w)
    }

    #[test]
    fn last_token_of_two_by_two_by_two_grid() {
        let t = build_pattern(AttentionAxis::Temporal, 2, 2, 2);
        let r = build_pattern(AttentionAxis::Row, 2, 2, 2);
        let c = build_pattern(AttentionAxis::Column, 2, 2, 2);
        assert_eq!(t.video_keys(7), &[3, 7]);
        assert_eq!(r.video_keys(7), &[5, 7]);
        assert_eq!(c.video_keys(7), &[6, 7]);
    }

    #[test]
    fn first_token_sees_only_itself_and_text() {
        for axis in AttentionAxis::ALL {
            let p = build_pattern(axis, 3, 2, 4);
            assert_eq!(p.video_keys(0), &[0]);
            let keys = p.with_text(&[true, true, false], 1);
            assert_eq!(keys.keys(0), &[0, 1, 3]);
        }
    }

    #[test]
    fn pattern_is_sound_and_complete_on_small_grids() {
        for l in 1..=4 {
            for h in 1..=4 {
                for w in 1..=4 {
                    for axis in AttentionAxis::ALL {
                        let p = build_pattern(axis, l, h, w);
                        for q in 0..l * h * w {
                            let (ql, qi, qj) = coords(q, h, w);
                            let expected: Vec<usize> = (0..l * h * w)
                                .filter(|&k| {
                                    let (kl, ki, kj) = coords(k, h, w);
                                    k <= q
                                        && match axis {
                                            AttentionAxis::Temporal => ki == qi && kj == qj && kl <= ql,
                                            AttentionAxis::Row => kl == ql && kj == qj && ki <= qi,
                                            AttentionAxis::Column => kl == ql && ki == qi && kj <= qj,
                                        }
                                })
                                .collect();
                            assert_eq!(p.video_keys(q), expected.as_slice());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn layers_cycle_through_axes() {
        let axes: Vec<_> = (0..6).map(AttentionAxis::for_layer).collect();
        use AttentionAxis::*;
        assert_eq!(axes, [Temporal, Row, Column, Temporal, Row, Column]);
    }
}
