//! Token grids and their binary form.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic    4 bytes  "GDTK"
//! version  1
//! L h w K
//! indices  L·h·w values in raster order (frame, then row, then column)
//! ```

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use crate::checkpoint::{expect_magic, read_u32};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GDTK";
pub const VERSION: u32 = 1;

/// Codebook indices for a whole video, `frames × height × width`, flattened
/// frame-major, then row, then column.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    frames: usize,
    height: usize,
    width: usize,
    codebook_size: usize,
    indices: Vec<usize>,
}

impl TokenGrid {
    pub fn new(frames: usize, height: usize, width: usize, codebook_size: usize, indices: Vec<usize>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::dim("token grid", "extents must be positive"));
        }
        if indices.len() != frames * height * width {
            return Err(Error::dim(
                "token grid",
                format!("{} indices for a {frames}x{height}x{width} grid", indices.len()),
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= codebook_size) {
            return Err(Error::Index {
                what: "codebook",
                index: bad,
                bound: codebook_size,
            });
        }
        Ok(Self {
            frames,
            height,
            width,
            codebook_size,
            indices,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Raster position of `(frame, row, col)`.
    pub fn position(&self, l: usize, i: usize, j: usize) -> usize {
        (l * self.height + i) * self.width + j
    }

    pub fn get(&self, l: usize, i: usize, j: usize) -> usize {
        self.indices[self.position(l, i, j)]
    }

    /// Tokens of frame `l`.
    pub fn frame(&self, l: usize) -> &[usize] {
        let n = self.height * self.width;
        &self.indices[l * n..(l + 1) * n]
    }

    /// Fraction of positions where `self` and `other` agree.
    pub fn agreement(&self, other: &TokenGrid) -> Result<f64> {
        if self.indices.len() != other.indices.len() {
            return Err(Error::dim("token agreement", "grid sizes differ"));
        }
        let same = self.indices.iter().zip(&other.indices).filter(|(a, b)| a == b).count();
        Ok(same as f64 / self.indices.len() as f64)
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + 4 * self.indices.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        for e in [self.frames, self.height, self.width, self.codebook_size] {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &i in &self.indices {
            buf.extend_from_slice(&(i as u32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        expect_magic(&mut r, MAGIC, VERSION)?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = read_u32(&mut r)? as usize;
        }
        let [l, h, w, k] = dims;
        let indices = (0..l * h * w)
            .map(|_| read_u32(&mut r).map(|v| v as usize))
            .collect::<Result<_>>()?;
        Self::new(l, h, w, k, indices)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
