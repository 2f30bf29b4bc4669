//! Seeded train/validation corpus on disk.
//!
//! ```text
//! <out>/manifest.jsonl        one DatasetItem per line, train items first
//! <out>/videos/<id>.gdvv
//! <out>/tokens/<id>.gdtk      only when an encoder is supplied
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::caption::caption;
use super::glyphs::Glyphs;
use super::motion::MotionType;
use super::scene::{render_scene, SceneGeometry, SceneSpec};
use crate::error::{Error, Result};
use crate::video::VideoTensor;
use crate::vq::TokenGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    /// Total number of scenes.
    pub count: usize,
    /// Fraction of scenes in the training split.
    pub train_ratio: f64,
    pub seed: u64,
    pub geometry: SceneGeometry,
    /// Probability that a random scene has two digits.
    pub two_digit_fraction: f64,
    /// Draw start positions uniformly instead of using canonical starts.
    pub random_starts: bool,
    /// `(digit, motion)` pairs that never appear in training; each gets a
    /// single-digit validation scene.
    pub holdout: Vec<(u8, MotionType)>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 100,
            train_ratio: 0.8,
            seed: 0,
            geometry: SceneGeometry::default(),
            two_digit_fraction: 0.0,
            random_starts: false,
            holdout: vec![(9, MotionType::DownThenUp)],
        }
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub split: Split,
    pub caption: String,
    pub scene: SceneSpec,
    /// Paths relative to the dataset directory.
    pub video: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<PathBuf>,
}

impl DatasetItem {
    pub fn pairs(&self) -> impl Iterator<Item = (u8, MotionType)> + '_ {
        self.scene.digits.iter().copied().zip(self.scene.motions.iter().copied())
    }
}

pub const MANIFEST: &str = "manifest.jsonl";

fn random_scene(cfg: &DatasetConfig, glyphs: &Glyphs, rng: &mut ChaCha8Rng) -> Result<SceneSpec> {
    let n = if rng.random_bool(cfg.two_digit_fraction.clamp(0.0, 1.0)) { 2 } else { 1 };
    let digits: Vec<u8> = (0..n).map(|_| rng.random_range(0..10)).collect();
    let motions: Vec<MotionType> = (0..n).map(|_| MotionType::ALL[rng.random_range(0..6)]).collect();
    let mut spec = SceneSpec::canonical(&digits, &motions, cfg.geometry, glyphs)?;
    if cfg.random_starts {
        let (gh, gw) = glyphs.size();
        let (max_r, max_c) = (cfg.geometry.height - gh, cfg.geometry.width - gw);
        for s in &mut spec.starts {
            *s = (rng.random_range(0..=max_r), rng.random_range(0..=max_c));
        }
    }
    Ok(spec)
}

/// Chooses scenes for both splits. Validation is filled first: one scene
/// per held-out pair, then random scenes. Training scenes are drawn at
/// random, rejecting any that use a held-out pair or repeat a validation
/// caption.
pub fn plan_dataset(cfg: &DatasetConfig, glyphs: &Glyphs) -> Result<(Vec<SceneSpec>, Vec<SceneSpec>)> {
    if !(0.0..=1.0).contains(&cfg.train_ratio) {
        return Err(Error::config("train_ratio", "must lie in [0, 1]"));
    }
    let n_val = ((cfg.count as f64) * (1.0 - cfg.train_ratio)).round() as usize;
    let n_train = cfg.count - n_val.min(cfg.count);
    if cfg.holdout.len() > n_val {
        return Err(Error::Validation(format!(
            "{} held-out pairs do not fit in {n_val} validation scenes",
            cfg.holdout.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut val = Vec::with_capacity(n_val);
    for &(d, m) in &cfg.holdout {
        if d > 9 {
            return Err(Error::config("holdout", format!("digit {d} out of range")));
        }
        val.push(SceneSpec::canonical(&[d], &[m], cfg.geometry, glyphs)?);
    }
    while val.len() < n_val {
        val.push(random_scene(cfg, glyphs, &mut rng)?);
    }
    let val_captions: BTreeSet<String> = val.iter().map(caption).collect();
    let holdout: BTreeSet<(u8, MotionType)> = cfg.holdout.iter().copied().collect();

    let limit = 1000 * (n_train + 1);
    let mut train = Vec::with_capacity(n_train);
    let mut attempts = 0;
    while train.len() < n_train {
        attempts += 1;
        if attempts > limit {
            return Err(Error::Validation(format!(
                "found only {} of {n_train} training scenes disjoint from validation after {limit} draws",
                train.len()
            )));
        }
        let spec = random_scene(cfg, glyphs, &mut rng)?;
        let blocked = spec.digits.iter().zip(&spec.motions).any(|(&d, &m)| holdout.contains(&(d, m)));
        if blocked || val_captions.contains(&caption(&spec)) {
            continue;
        }
        train.push(spec);
    }
    Ok((train, val))
}

/// Renders and writes the corpus. When `encode` is given, each video's
/// token grid is stored too.
pub fn build_dataset(
    cfg: &DatasetConfig,
    glyphs: &Glyphs,
    out_dir: impl AsRef<Path>,
    encode: Option<&dyn Fn(&VideoTensor) -> Result<TokenGrid>>,
) -> Result<Vec<DatasetItem>> {
    let out = out_dir.as_ref();
    let (train, val) = plan_dataset(cfg, glyphs)?;
    fs::create_dir_all(out.join("videos"))?;
    if encode.is_some() {
        fs::create_dir_all(out.join("tokens"))?;
    }
    let mut items = Vec::with_capacity(train.len() + val.len());
    let tagged = train
        .into_iter()
        .enumerate()
        .map(|(i, s)| (Split::Train, i, s))
        .chain(val.into_iter().enumerate().map(|(i, s)| (Split::Val, i, s)));
    for (split, i, scene) in tagged {
        let id = format!("{}-{i:05}", if split == Split::Train { "train" } else { "val" });
        let video = render_scene(&scene, glyphs, cfg.geometry.channels)?;
        let video_rel = PathBuf::from("videos").join(format!("{id}.gdvv"));
        video.save(out.join(&video_rel))?;
        let tokens = match encode {
            Some(f) => {
                let rel = PathBuf::from("tokens").join(format!("{id}.gdtk"));
                f(&video)?.save(out.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        items.push(DatasetItem {
            id,
            split,
            caption: caption(&scene),
            scene,
            video: video_rel,
            tokens,
        });
    }
    write_manifest(out.join(MANIFEST), &items)?;
    Ok(items)
}

pub fn write_manifest(path: impl AsRef<Path>, items: &[DatasetItem]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<DatasetItem>> {
    let file = fs::File::open(path)?;
    let mut items = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            items.push(serde_json::from_str(&line)?);
        }
    }
    Ok(items)
}
