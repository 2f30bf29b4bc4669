use serde::{Deserialize, Serialize};

use super::glyphs::Glyphs;
use super::motion::{Axis, MotionType};
use crate::error::{Error, Result};
use crate::video::VideoTensor;

/// Canvas and timing shared by every scene in a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Pixels per frame.
    pub speed: usize,
}

impl Default for SceneGeometry {
    fn default() -> Self {
        Self {
            frames: 4,
            height: 16,
            width: 16,
            channels: 1,
            speed: 2,
        }
    }
}

/// One or two digits, each with its own motion and top-left start position
/// `(row, col)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub digits: Vec<u8>,
    pub motions: Vec<MotionType>,
    pub starts: Vec<(usize, usize)>,
    pub speed: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl SceneSpec {
    /// A scene with default start positions: the moving axis starts where
    /// [`MotionType::canonical_start`] puts it, the other axis is centered
    /// (or split in thirds for two digits).
    pub fn canonical(digits: &[u8], motions: &[MotionType], geometry: SceneGeometry, glyphs: &Glyphs) -> Result<Self> {
        let (gh, gw) = glyphs.size();
        let (max_r, max_c) = max_positions(geometry, gh, gw)?;
        let n = digits.len() as i64;
        let starts = motions
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let static_at = |max: i64| (max * (k as i64 + 1) / (n + 1)) as usize;
                match m.axis() {
                    Axis::Vertical => (m.canonical_start(max_r) as usize, static_at(max_c)),
                    Axis::Horizontal => (static_at(max_r), m.canonical_start(max_c) as usize),
                }
            })
            .collect();
        let spec = Self {
            digits: digits.to_vec(),
            motions: motions.to_vec(),
            starts,
            speed: geometry.speed,
            frames: geometry.frames,
            height: geometry.height,
            width: geometry.width,
        };
        spec.validate(glyphs)?;
        Ok(spec)
    }

    pub fn validate(&self, glyphs: &Glyphs) -> Result<()> {
        let n = self.digits.len();
        if !(1..=2).contains(&n) {
            return Err(Error::config("scene.digits", format!("need 1 or 2 digits, got {n}")));
        }
        if self.motions.len() != n || self.starts.len() != n {
            return Err(Error::config("scene", "digits, motions and starts differ in length"));
        }
        if let Some(d) = self.digits.iter().find(|&&d| d > 9) {
            return Err(Error::config("scene.digits", format!("digit {d} out of range")));
        }
        if self.frames == 0 {
            return Err(Error::config("scene.frames", "must be at least 1"));
        }
        let (gh, gw) = glyphs.size();
        let (max_r, max_c) = max_positions(self.geometry(1), gh, gw)?;
        for &(r, c) in &self.starts {
            if r as i64 > max_r || c as i64 > max_c {
                return Err(Error::config("scene.starts", format!("({r}, {c}) puts the glyph off canvas")));
            }
        }
        Ok(())
    }

    pub fn geometry(&self, channels: usize) -> SceneGeometry {
        SceneGeometry {
            frames: self.frames,
            height: self.height,
            width: self.width,
            channels,
            speed: self.speed,
        }
    }

    /// Top-left glyph position of every digit at every frame, indexed
    /// `[digit][frame]`.
    pub fn positions(&self, glyphs: &Glyphs) -> Result<Vec<Vec<(usize, usize)>>> {
        let (gh, gw) = glyphs.size();
        let (max_r, max_c) = max_positions(self.geometry(1), gh, gw)?;
        Ok(self
            .motions
            .iter()
            .zip(&self.starts)
            .map(|(m, &(r, c))| match m.axis() {
                Axis::Vertical => m
                    .trajectory(r as i64, self.speed as i64, self.frames, max_r)
                    .into_iter()
                    .map(|p| (p as usize, c))
                    .collect(),
                Axis::Horizontal => m
                    .trajectory(c as i64, self.speed as i64, self.frames, max_c)
                    .into_iter()
                    .map(|p| (r, p as usize))
                    .collect(),
            })
            .collect())
    }
}

fn max_positions(g: SceneGeometry, gh: usize, gw: usize) -> Result<(i64, i64)> {
    if gh > g.height || gw > g.width {
        return Err(Error::config(
            "glyphs",
            format!("{gh}x{gw} glyph larger than {}x{} canvas", g.height, g.width),
        ));
    }
    Ok(((g.height - gh) as i64, (g.width - gw) as i64))
}

/// Renders a scene; overlapping digits combine by per-pixel maximum and the
/// gray value is replicated across `channels`.
pub fn render_scene(spec: &SceneSpec, glyphs: &Glyphs, channels: usize) -> Result<VideoTensor> {
    spec.validate(glyphs)?;
    if channels == 0 {
        return Err(Error::config("channels", "must be at least 1"));
    }
    let positions = spec.positions(glyphs)?;
    let mut video = VideoTensor::zeros(spec.frames, spec.height, spec.width, channels);
    let width = spec.width;
    for (k, &digit) in spec.digits.iter().enumerate() {
        let glyph = glyphs.get(digit);
        for (l, &(r0, c0)) in positions[k].iter().enumerate() {
            let frame = video.frame_mut(l);
            for r in 0..glyph.height {
                for c in 0..glyph.width {
                    let v = glyph.at(r, c);
                    let base = ((r0 + r) * width + c0 + c) * channels;
                    for px in &mut frame[base..base + channels] {
                        *px = px.max(v);
                    }
                }
            }
        }
    }
    Ok(video)
}

/// Intensity-weighted centroid `(row, col)` of each frame; `None` for a
/// blank frame.
pub fn centroids(video: &VideoTensor) -> Vec<Option<(f64, f64)>> {
    (0..video.frames())
        .map(|l| {
            let f = video.frame(l);
            let (mut m, mut r, mut c) = (0.0, 0.0, 0.0);
            for row in 0..f.height {
                for col in 0..f.width {
                    let v = f.intensity(row, col);
                    m += v;
                    r += v * row as f64;
                    c += v * col as f64;
                }
            }
            (m > 0.0).then(|| (r / m, c / m))
        })
        .collect()
}

/// Names the motion of a single moving object from its centroid track.
///
/// The axis with the larger total displacement wins. A single reversal at
/// frame `⌊L/2⌋` marks a turning motion; a track without reversal (or with
/// a reversal elsewhere) is a bouncing motion. Returns `None` for a static
/// or blank video.
pub fn classify_motion(video: &VideoTensor) -> Option<MotionType> {
    let track: Vec<(f64, f64)> = centroids(video).into_iter().collect::<Option<_>>()?;
    if track.len() < 2 {
        return None;
    }
    let travel = |f: fn(&(f64, f64)) -> f64| -> f64 { track.windows(2).map(|w| (f(&w[1]) - f(&w[0])).abs()).sum() };
    let (dr, dc) = (travel(|p| p.0), travel(|p| p.1));
    if dr.max(dc) < 0.5 {
        return None;
    }
    let vertical = dr >= dc;
    let coord = |p: &(f64, f64)| if vertical { p.0 } else { p.1 };
    let steps: Vec<(usize, f64)> = track
        .windows(2)
        .enumerate()
        .map(|(i, w)| (i + 1, coord(&w[1]) - coord(&w[0])))
        .filter(|(_, d)| d.abs() > 0.25)
        .collect();
    let first_sign = steps[0].1.signum();
    let reversal = steps.windows(2).find(|w| w[0].1.signum() != w[1].1.signum()).map(|w| w[1].0);
    let turn_frame = track.len() / 2 + 1;
    Some(match (vertical, reversal == Some(turn_frame), first_sign < 0.0) {
        (true, false, _) => MotionType::UpDown,
        (false, false, _) => MotionType::LeftRight,
        (true, true, true) => MotionType::UpThenDown,
        (true, true, false) => MotionType::DownThenUp,
        (false, true, true) => MotionType::LeftThenRight,
        (false, true, false) => MotionType::RightThenLeft,
    })
}
