//! Raster and point types shared by every stage, plus PNG / NetPBM file I/O.
//!
//! Integer coordinates name pixel centers and `(0, 0)` is the top-left pixel.
//! All rasters are row-major; color rasters interleave channels.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid raster dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    InvalidChannels(usize),
    #[error("data length {actual} does not match {expected} = width * height * channels")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("sample {index} is {value}, outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("score maps must have exactly one channel, got {0}")]
    NotSingleChannel(usize),
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[error("corrupt image data in {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("cannot write {path}: {reason}")]
    Unwritable { path: PathBuf, reason: String },
}

/// A continuous pixel coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// Dense float raster with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidDimensions { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::InvalidChannels(channels));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImageError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(ImageError::ValueOutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self, ImageError> {
        Self::new(
            width,
            height,
            channels,
            vec![0.0; width * height * channels],
        )
    }

    /// Builds a raster by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Extracts one channel as a single-channel raster.
    pub fn channel(&self, c: usize) -> ImageBuffer {
        assert!(c < self.channels, "channel {c} out of range");
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }
}

/// Single-channel probability raster (pointer map, key-scale map, number map).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap(ImageBuffer);

impl ScoreMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        ImageBuffer::new(width, height, 1, data).map(ScoreMap)
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        let data = mask
            .bits()
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        ScoreMap(ImageBuffer {
            width: mask.width(),
            height: mask.height(),
            channels: 1,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn values(&self) -> &[f64] {
        &self.0.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.data[y * self.0.width + x]
    }

    pub fn as_image(&self) -> &ImageBuffer {
        &self.0
    }

    pub fn into_image(self) -> ImageBuffer {
        self.0
    }
}

impl TryFrom<ImageBuffer> for ScoreMap {
    type Error = ImageError;

    fn try_from(img: ImageBuffer) -> Result<Self, ImageError> {
        if img.channels != 1 {
            return Err(ImageError::NotSingleChannel(img.channels));
        }
        Ok(ScoreMap(img))
    }
}

/// One boolean per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, ImageError> {
        if bits.len() != width * height {
            return Err(ImageError::LengthMismatch {
                expected: width * height,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    /// Mask with the listed pixels set; out-of-range points are ignored.
    pub fn from_points(
        width: usize,
        height: usize,
        points: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut mask = Self::empty(width, height);
        for (x, y) in points {
            if x < width && y < height {
                mask.set(x, y, true);
            }
        }
        mask
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Like [`get`](Self::get) but treats everything outside the raster as unset.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// Reads a PNG or NetPBM file into `[0, 1]` samples. Grayscale stays one channel,
/// color becomes three; an alpha channel is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer, ImageError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(ImageError::MissingFile(path.to_path_buf()));
    }
    let corrupt = |reason: String| ImageError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| corrupt(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| corrupt(e.to_string()))?;
    if reader.format().is_none() {
        return Err(ImageError::Unsupported(path.display().to_string()));
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => ImageError::Unsupported(u.to_string()),
        other => corrupt(other.to_string()),
    })?;

    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, bytes) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageLumaA8(_) => (1, decoded.to_luma8().into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        DynamicImage::ImageRgba8(_) => (3, decoded.to_rgb8().into_raw()),
        other => {
            return Err(ImageError::Unsupported(format!(
                "{:?} samples in {}",
                other.color(),
                path.display()
            )))
        }
    };
    let data = bytes.into_iter().map(|b| f64::from(b) / 255.0).collect();
    ImageBuffer::new(width, height, channels, data)
}

/// 8-bit quantization with round-half-to-even.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round_ties_even().clamp(0.0, 255.0) as u8
}

/// Writes `img` as PNG (`.png`) or plain-text NetPBM (`.pgm`, `.ppm`, `.pnm`).
/// NetPBM output is P2 for one channel and P3 for three.
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let color = if img.channels == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    let unwritable = |reason: String| ImageError::Unwritable {
        path: path.to_path_buf(),
        reason,
    };

    let is_pnm = matches!(ext.as_str(), "pgm" | "ppm" | "pnm");
    if ext != "png" && !is_pnm {
        return Err(ImageError::Unsupported(format!(
            "cannot infer output format from {}",
            path.display()
        )));
    }
    let file = File::create(path).map_err(|e| unwritable(e.to_string()))?;
    let writer = BufWriter::new(file);
    let (w, h) = (img.width as u32, img.height as u32);
    let result = if is_pnm {
        let subtype = if img.channels == 1 {
            PnmSubtype::Graymap(SampleEncoding::Ascii)
        } else {
            PnmSubtype::Pixmap(SampleEncoding::Ascii)
        };
        PnmEncoder::new(writer)
            .with_subtype(subtype)
            .write_image(&bytes, w, h, color)
    } else {
        PngEncoder::new(writer).write_image(&bytes, w, h, color)
    };
    result.map_err(|e| unwritable(e.to_string()))
}
