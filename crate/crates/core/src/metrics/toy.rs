//! A hand-built oracle for the synthetic digit corpus.
//!
//! An embedding has three blocks:
//!
//! * digit evidence, 10 entries: for text, the indicator of the digits named
//!   in the caption; for a frame, `exp(sharpness · (s_d − 1))` where `s_d` is
//!   the best normalized cross-correlation of glyph `d` over all placements;
//! * coarse occupancy, `G × G` entries: the share of ink falling in each cell
//!   of a `G × G` partition of the canvas. For text this is averaged over the
//!   frames of the caption's canonical rendering;
//! * one "blank" entry, set only for frames without ink.
//!
//! The digit and occupancy blocks are normalized separately, weighted
//! equally and the whole vector is scaled to unit length.

use crate::dataset::{parse_caption, render_scene, Glyphs, SceneGeometry, SceneSpec};
use crate::error::{Error, Result};
use crate::video::Frame;

use super::oracle::{normalize, SimilarityOracle};

#[derive(Clone, Debug)]
pub struct ToyOracle {
    glyphs: Glyphs,
    geometry: SceneGeometry,
    cells: usize,
    sharpness: f64,
}

impl ToyOracle {
    /// `geometry` fixes how captions are rendered; `cells` is `G`.
    pub fn new(glyphs: Glyphs, geometry: SceneGeometry, cells: usize) -> Result<Self> {
        if cells == 0 || cells > geometry.height || cells > geometry.width {
            return Err(Error::config("oracle.cells", "must lie in 1..=min(height, width)"));
        }
        Ok(Self {
            glyphs,
            geometry,
            cells,
            sharpness: 20.0,
        })
    }

    /// Built-in glyphs at scale 1, desk geometry, a 4 × 4 grid.
    pub fn desk() -> Self {
        Self::new(Glyphs::builtin(1), SceneGeometry::default(), 4).expect("valid desk settings")
    }

    fn digit_block(&self) -> usize {
        10
    }

    fn occupancy(&self, frame: Frame<'_>) -> Vec<f64> {
        let g = self.cells;
        let mut cells = vec![0.0; g * g];
        let mut total = 0.0;
        for r in 0..frame.height {
            for c in 0..frame.width {
                let v = frame.intensity(r, c);
                cells[(r * g / frame.height) * g + c * g / frame.width] += v;
                total += v;
            }
        }
        if total > 0.0 {
            cells.iter_mut().for_each(|x| *x /= total);
        }
        cells
    }

    fn template_scores(&self, frame: Frame<'_>) -> Vec<f64> {
        let (gh, gw) = self.glyphs.size();
        if gh > frame.height || gw > frame.width {
            return vec![0.0; 10];
        }
        (0..10u8)
            .map(|d| {
                let glyph = self.glyphs.get(d);
                let n = (gh * gw) as f64;
                let gmean = glyph.pixels.iter().sum::<f64>() / n;
                let gdev: Vec<f64> = glyph.pixels.iter().map(|p| p - gmean).collect();
                let gnorm = gdev.iter().map(|x| x * x).sum::<f64>().sqrt();
                let mut best: f64 = 0.0;
                for r0 in 0..=frame.height - gh {
                    for c0 in 0..=frame.width - gw {
                        let mut sum = 0.0;
                        let mut sq = 0.0;
                        let mut cross = 0.0;
                        for r in 0..gh {
                            for c in 0..gw {
                                let v = frame.intensity(r0 + r, c0 + c);
                                sum += v;
                                sq += v * v;
                                cross += v * gdev[r * gw + c];
                            }
                        }
                        let var = sq - sum * sum / n;
                        if var > 1e-12 && gnorm > 0.0 {
                            best = best.max(cross / (var.sqrt() * gnorm));
                        }
                    }
                }
                (self.sharpness * (best - 1.0)).exp()
            })
            .collect()
    }

    fn combine(&self, digits: Vec<f64>, occupancy: Vec<f64>) -> Result<Vec<f64>> {
        let dim = self.dim();
        let (Some(d), Some(o)) = (normalize(digits), normalize(occupancy)) else {
            let mut blank = vec![0.0; dim];
            blank[dim - 1] = 1.0;
            return Ok(blank);
        };
        let w = std::f64::consts::FRAC_1_SQRT_2;
        let mut out: Vec<f64> = d.into_iter().map(|x| x * w).chain(o.into_iter().map(|x| x * w)).collect();
        out.push(0.0);
        normalize(out).ok_or_else(|| Error::Oracle("degenerate embedding".into()))
    }
}

impl SimilarityOracle for ToyOracle {
    fn dim(&self) -> usize {
        self.digit_block() + self.cells * self.cells + 1
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let (digits, motions) = parse_caption(text.trim())
            .ok_or_else(|| Error::Oracle(format!("toy oracle only reads template captions, got `{text}`")))?;
        let mut digit_block = vec![0.0; 10];
        for &d in &digits {
            digit_block[d as usize] = 1.0;
        }
        let spec = SceneSpec::canonical(&digits, &motions, self.geometry, &self.glyphs)?;
        let video = render_scene(&spec, &self.glyphs, 1)?;
        let mut occ = vec![0.0; self.cells * self.cells];
        for l in 0..video.frames() {
            for (acc, v) in occ.iter_mut().zip(self.occupancy(video.frame(l))) {
                *acc += v / video.frames() as f64;
            }
        }
        self.combine(digit_block, occ)
    }

    fn embed_frame(&self, frame: Frame<'_>) -> Result<Vec<f64>> {
        self.combine(self.template_scores(frame), self.occupancy(frame))
    }
}
