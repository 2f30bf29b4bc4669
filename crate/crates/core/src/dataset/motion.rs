use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Vertical,
    Horizontal,
}

/// The six digit motions. "Up" decreases the row index, "left" decreases
/// the column index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionType {
    UpDown,
    LeftRight,
    LeftThenRight,
    RightThenLeft,
    UpThenDown,
    DownThenUp,
}

impl MotionType {
    pub const ALL: [MotionType; 6] = [
        MotionType::UpDown,
        MotionType::LeftRight,
        MotionType::LeftThenRight,
        MotionType::RightThenLeft,
        MotionType::UpThenDown,
        MotionType::DownThenUp,
    ];

    pub fn axis(self) -> Axis {
        match self {
            MotionType::UpDown | MotionType::UpThenDown | MotionType::DownThenUp => Axis::Vertical,
            _ => Axis::Horizontal,
        }
    }

    /// Whether the motion reverses once at frame `⌊L/2⌋` rather than
    /// bouncing between the canvas edges.
    pub fn turns(self) -> bool {
        !matches!(self, MotionType::UpDown | MotionType::LeftRight)
    }

    /// Sign of the first step along the motion axis.
    pub fn initial_direction(self) -> i64 {
        match self {
            MotionType::LeftThenRight | MotionType::UpThenDown => -1,
            _ => 1,
        }
    }

    /// Words used in captions.
    pub fn phrase(self) -> &'static str {
        match self {
            MotionType::UpDown => "up and down",
            MotionType::LeftRight => "left and right",
            MotionType::LeftThenRight => "left then right",
            MotionType::RightThenLeft => "right then left",
            MotionType::UpThenDown => "up then down",
            MotionType::DownThenUp => "down then up",
        }
    }

    pub fn from_phrase(phrase: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.phrase() == phrase)
    }

    fn slug(self) -> &'static str {
        match self {
            MotionType::UpDown => "up-down",
            MotionType::LeftRight => "left-right",
            MotionType::LeftThenRight => "left-then-right",
            MotionType::RightThenLeft => "right-then-left",
            MotionType::UpThenDown => "up-then-down",
            MotionType::DownThenUp => "down-then-up",
        }
    }

    /// Positions along the motion axis for `frames` frames, starting at
    /// `start`, moving `speed` units per frame and reflecting off `0` and
    /// `max`. Turning motions also reverse after frame `⌊frames/2⌋`.
    pub fn trajectory(self, start: i64, speed: i64, frames: usize, max: i64) -> Vec<i64> {
        let turn = frames / 2;
        let mut pos = start;
        let mut dir = self.initial_direction();
        let mut out = Vec::with_capacity(frames);
        out.push(pos);
        for t in 1..frames {
            if self.turns() && t == turn + 1 {
                dir = -dir;
            }
            pos += dir * speed;
            if max <= 0 {
                pos = 0;
            } else {
                while pos < 0 || pos > max {
                    if pos > max {
                        pos = 2 * max - pos;
                    } else {
                        pos = -pos;
                    }
                    dir = -dir;
                }
            }
            out.push(pos);
        }
        out
    }

    /// Default start along the motion axis: the low edge for bouncing
    /// motions, the middle for turning motions.
    pub fn canonical_start(self, max: i64) -> i64 {
        if self.turns() {
            max / 2
        } else {
            0
        }
    }
}

impl fmt::Display for MotionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for MotionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.slug() == s)
            .ok_or_else(|| Error::config("motion", format!("unknown motion `{s}`")))
    }
}
