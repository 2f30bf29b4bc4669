//! Pixel videos, their raw on-disk format, and PNG/GIF export.
//!
//! Raw format (`.gdvv`), little-endian:
//!
//! ```text
//! magic   "GDVV"
//! version u32 (1)
//! frames, height, width, channels: u32 each
//! pixels  frames·height·width·channels × f32, frame-major then row,
//!         column, channel
//! ```

use std::fs::{self, File};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::checkpoint::{expect_magic, read_u32};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GDVV";
pub const VERSION: u32 = 1;

/// A video with pixel values in `[0, 1]`, stored frame-major as
/// `frames × height × width × channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl VideoTensor {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(Error::dim("video", format!("{frames}x{height}x{width}x{channels}")));
        }
        if data.len() != frames * height * width * channels {
            return Err(Error::dim(
                "video",
                format!("{} pixels for {frames}x{height}x{width}x{channels}", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("pixel {bad} outside [0, 1]")));
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self::new(frames, height, width, channels, vec![0.0; frames * height * width * channels])
            .expect("zeros: positive extents")
    }

    /// Builds a video from a `[frames, height, width, channels]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 {
            return Err(Error::dim("video", format!("expected rank 4, got {s:?}")));
        }
        Self::new(s[0], s[1], s[2], s[3], t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.frames, self.height, self.width, self.channels], self.data.clone())
            .expect("consistent extents")
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

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame(&self, l: usize) -> Frame<'_> {
        let n = self.frame_len();
        Frame {
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels: &self.data[l * n..(l + 1) * n],
        }
    }

    pub fn frame_mut(&mut self, l: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[l * n..(l + 1) * n]
    }

    /// Frames in reverse order.
    pub fn reversed(&self) -> Self {
        let n = self.frame_len();
        let data = self.data.chunks(n).rev().flatten().copied().collect();
        Self { data, ..self.clone() }
    }

    /// Mean squared error per pixel.
    pub fn mse(&self, other: &VideoTensor) -> Result<f64> {
        if self.data.len() != other.data.len() {
            return Err(Error::dim("video mse", "extent mismatch"));
        }
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(s / self.data.len() as f64)
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + self.data.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        for e in [self.frames, self.height, self.width, self.channels] {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        expect_magic(&mut r, MAGIC, VERSION)?;
        let dims: Vec<usize> = (0..4).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<Result<_>>()?;
        let n = dims.iter().product::<usize>();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect();
        Self::new(dims[0], dims[1], dims[2], dims[3], data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

/// Borrowed view of one frame, `height × width × channels`.
#[derive(Clone, Copy, Debug)]
pub struct Frame<'a> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: &'a [f64],
}

impl Frame<'_> {
    /// Channel-averaged intensity at `(row, col)`.
    pub fn intensity(&self, row: usize, col: usize) -> f64 {
        let base = (row * self.width + col) * self.channels;
        self.pixels[base..base + self.channels].iter().sum::<f64>() / self.channels as f64
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `frame_000.png`, `frame_001.png`, … into `dir`; grayscale for one
/// channel, RGB for three.
pub fn export_png_frames(video: &VideoTensor, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (w, h) = (video.width() as u32, video.height() as u32);
    let mut paths = Vec::with_capacity(video.frames());
    for l in 0..video.frames() {
        let frame = video.frame(l);
        let path = dir.join(format!("frame_{l:03}.png"));
        match video.channels() {
            1 => {
                let buf: Vec<u8> = frame.pixels.iter().map(|&v| to_u8(v)).collect();
                image::GrayImage::from_raw(w, h, buf)
                    .expect("buffer matches extents")
                    .save(&path)?;
            }
            3 => {
                let buf: Vec<u8> = frame.pixels.iter().map(|&v| to_u8(v)).collect();
                image::RgbImage::from_raw(w, h, buf)
                    .expect("buffer matches extents")
                    .save(&path)?;
            }
            c => return Err(Error::Contract(format!("PNG export supports 1 or 3 channels, got {c}"))),
        }
        paths.push(path);
    }
    Ok(paths)
}

/// Reads frames written by [`export_png_frames`] back into a video.
pub fn import_png_frames(paths: &[PathBuf], channels: usize) -> Result<VideoTensor> {
    let mut data = Vec::new();
    let (mut h, mut w) = (0, 0);
    for p in paths {
        let img = image::open(p)?;
        h = img.height() as usize;
        w = img.width() as usize;
        match channels {
            1 => data.extend(img.to_luma8().into_raw().into_iter().map(|b| b as f64 / 255.0)),
            3 => data.extend(img.to_rgb8().into_raw().into_iter().map(|b| b as f64 / 255.0)),
            c => return Err(Error::Contract(format!("PNG import supports 1 or 3 channels, got {c}"))),
        }
    }
    VideoTensor::new(paths.len(), h, w, channels, data)
}

/// Writes an animated GIF89a with a fixed 256-entry palette: gray levels
/// for one-channel video, 3-3-2 RGB for three-channel video.
pub fn export_gif(video: &VideoTensor, path: impl AsRef<Path>, frame_delay_cs: u16) -> Result<()> {
    let palette: Vec<u8> = match video.channels() {
        1 => (0..=255u8).flat_map(|g| [g, g, g]).collect(),
        3 => (0..=255u8)
            .flat_map(|i| {
                let r = (i >> 5) as u32 * 255 / 7;
                let g = ((i >> 2) & 7) as u32 * 255 / 7;
                let b = (i & 3) as u32 * 255 / 3;
                [r as u8, g as u8, b as u8]
            })
            .collect(),
        c => return Err(Error::Contract(format!("GIF export supports 1 or 3 channels, got {c}"))),
    };
    let (w, h) = (video.width() as u16, video.height() as u16);
    let file = File::create(path)?;
    let mut enc = gif::Encoder::new(file, w, h, &palette).map_err(|e| Error::Format(e.to_string()))?;
    enc.set_repeat(gif::Repeat::Infinite)
        .map_err(|e| Error::Format(e.to_string()))?;
    for l in 0..video.frames() {
        let px = video.frame(l).pixels;
        let indices: Vec<u8> = match video.channels() {
            1 => px.iter().map(|&v| to_u8(v)).collect(),
            _ => px
                .chunks(3)
                .map(|c| {
                    let r = (c[0].clamp(0.0, 1.0) * 7.0).round() as u8;
                    let g = (c[1].clamp(0.0, 1.0) * 7.0).round() as u8;
                    let b = (c[2].clamp(0.0, 1.0) * 3.0).round() as u8;
                    (r << 5) | (g << 2) | b
                })
                .collect(),
        };
        let mut frame = gif::Frame::from_indexed_pixels(w, h, indices, None);
        frame.delay = frame_delay_cs;
        enc.write_frame(&frame).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(())
}

/// Decodes a grayscale GIF written by [`export_gif`].
pub fn import_gray_gif(path: impl AsRef<Path>) -> Result<VideoTensor> {
    let mut opts = gif::DecodeOptions::new();
    opts.set_color_output(gif::ColorOutput::Indexed);
    let mut dec = opts
        .read_info(File::open(path)?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let (w, h) = (dec.width() as usize, dec.height() as usize);
    let mut data = Vec::new();
    let mut frames = 0;
    while let Some(frame) = dec.read_next_frame().map_err(|e| Error::Format(e.to_string()))? {
        data.extend(frame.buffer.iter().map(|&b| b as f64 / 255.0));
        frames += 1;
    }
    VideoTensor::new(frames, h, w, 1, data)
}
