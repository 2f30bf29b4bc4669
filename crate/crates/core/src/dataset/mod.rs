//! Synthetic moving-digit videos with templated captions.

mod build;
mod caption;
mod glyphs;
mod motion;
mod scene;
mod tokenizer;

pub use build::{build_dataset, plan_dataset, read_manifest, write_manifest, DatasetConfig, DatasetItem, Split, MANIFEST};
pub use caption::{caption, caption_for, parse_caption};
pub use glyphs::{Glyph, Glyphs};
pub use motion::{Axis, MotionType};
pub use scene::{centroids, classify_motion, render_scene, SceneGeometry, SceneSpec};
pub use tokenizer::{detokenize, tokenize, vocab_size, PAD_ID, VOCAB};
