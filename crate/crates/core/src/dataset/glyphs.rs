use std::path::Path;

use crate::error::{Error, Result};

/// 8×8 bitmap digits, one byte per row, least significant bit leftmost.
/// From the public-domain `font8x8` basic set.
const FONT_8X8: [[u8; 8]; 10] = [
    [0x3E, 0x63, 0x73, 0x7B, 0x6F, 0x67, 0x3E, 0x00],
    [0x0C, 0x0E, 0x0C, 0x0C, 0x0C, 0x0C, 0x3F, 0x00],
    [0x1E, 0x33, 0x30, 0x1C, 0x06, 0x33, 0x3F, 0x00],
    [0x1E, 0x33, 0x30, 0x1C, 0x30, 0x33, 0x1E, 0x00],
    [0x38, 0x3C, 0x36, 0x33, 0x7F, 0x30, 0x78, 0x00],
    [0x3F, 0x03, 0x1F, 0x30, 0x30, 0x33, 0x1E, 0x00],
    [0x1C, 0x06, 0x03, 0x1F, 0x33, 0x33, 0x1E, 0x00],
    [0x3F, 0x33, 0x30, 0x18, 0x0C, 0x0C, 0x0C, 0x00],
    [0x1E, 0x33, 0x33, 0x1E, 0x33, 0x33, 0x1E, 0x00],
    [0x1E, 0x33, 0x33, 0x3E, 0x30, 0x18, 0x0E, 0x00],
];

/// A grayscale digit bitmap with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Glyph {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Glyph {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn flip_vertical(&self) -> Glyph {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for r in (0..self.height).rev() {
            pixels.extend_from_slice(&self.pixels[r * self.width..(r + 1) * self.width]);
        }
        Glyph { pixels, ..self.clone() }
    }

    /// Intensity-weighted centroid `(row, col)`.
    pub fn centroid(&self) -> (f64, f64) {
        let mut mass = 0.0;
        let (mut r, mut c) = (0.0, 0.0);
        for row in 0..self.height {
            for col in 0..self.width {
                let v = self.at(row, col);
                mass += v;
                r += v * row as f64;
                c += v * col as f64;
            }
        }
        (r / mass, c / mass)
    }
}

/// The ten digit glyphs used to render scenes. All glyphs share one size.
#[derive(Clone, Debug, PartialEq)]
pub struct Glyphs {
    digits: Vec<Glyph>,
}

impl Glyphs {
    /// The built-in 8×8 font, upscaled by an integer factor.
    pub fn builtin(scale: usize) -> Self {
        let scale = scale.max(1);
        let digits = FONT_8X8
            .iter()
            .map(|rows| {
                let size = 8 * scale;
                let mut pixels = vec![0.0; size * size];
                for r in 0..size {
                    for c in 0..size {
                        if rows[r / scale] >> (c / scale) & 1 == 1 {
                            pixels[r * size + c] = 1.0;
                        }
                    }
                }
                Glyph {
                    height: size,
                    width: size,
                    pixels,
                }
            })
            .collect();
        Self { digits }
    }

    /// Loads ten raster images (digits 0 through 9, in order), converted to
    /// grayscale. All images must share one size and contain ink.
    pub fn from_images<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        if paths.len() != 10 {
            return Err(Error::config("glyphs", format!("need 10 images, got {}", paths.len())));
        }
        let mut digits = Vec::with_capacity(10);
        for p in paths {
            let img = image::open(p)?.to_luma8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let pixels: Vec<f64> = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
            if pixels.iter().all(|&v| v == 0.0) {
                return Err(Error::config("glyphs", format!("{} is blank", p.as_ref().display())));
            }
            digits.push(Glyph {
                height: h,
                width: w,
                pixels,
            });
        }
        Self::from_glyphs(digits)
    }

    /// Ten glyphs of one shared size, digits 0 through 9 in order.
    pub fn from_glyphs(digits: Vec<Glyph>) -> Result<Self> {
        if digits.len() != 10 {
            return Err(Error::config("glyphs", format!("need 10 glyphs, got {}", digits.len())));
        }
        if digits.iter().any(|g| g.height != digits[0].height || g.width != digits[0].width) {
            return Err(Error::config("glyphs", "glyphs differ in size"));
        }
        Ok(Self { digits })
    }

    pub fn get(&self, digit: u8) -> &Glyph {
        &self.digits[digit as usize]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.digits[0].height, self.digits[0].width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_digits_are_distinct_and_inked() {
        let g = Glyphs::builtin(1);
        assert_eq!(g.size(), (8, 8));
        for a in 0..10u8 {
            assert!(g.get(a).pixels.iter().any(|&v| v > 0.0));
            for b in a + 1..10 {
                assert_ne!(g.get(a), g.get(b));
            }
        }
    }

    #[test]
    fn upscaling_replicates_pixels() {
        let g1 = Glyphs::builtin(1);
        let g3 = Glyphs::builtin(3);
        assert_eq!(g3.size(), (24, 24));
        for r in 0..24 {
            for c in 0..24 {
                assert_eq!(g3.get(7).at(r, c), g1.get(7).at(r / 3, c / 3));
            }
        }
    }

    #[test]
    fn loads_images() {
        let dir = tempfile::tempdir().unwrap();
        let paths: Vec<_> = (0..10)
            .map(|d| {
                let p = dir.path().join(format!("{d}.png"));
                let mut img = image::GrayImage::new(5, 5);
                img.put_pixel(d % 5, 2, image::Luma([255]));
                img.save(&p).unwrap();
                p
            })
            .collect();
        let g = Glyphs::from_images(&paths).unwrap();
        assert_eq!(g.size(), (5, 5));
        assert_eq!(g.get(3).at(2, 3), 1.0);
        assert!(Glyphs::from_images(&paths[..3]).is_err());
    }
}
