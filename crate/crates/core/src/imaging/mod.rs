//! Raster representation and the capture-side image operations.
//!
//! Everything here works on [`ImageBuffer`], a packed 8-bit RGB raster.
//! Geometry ([`center_square_crop`], [`roi_crop`]), the synthetic
//! distortion generator and the classical quality features are pure
//! functions over it.

mod distort;
mod features;
mod geometry;
pub mod synth;

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use distort::{apply_distortion, DistortionKind, DistortionSpec};
pub use features::{quality_features, QualityFeatures, MIN_FEATURE_SIDE};
pub use geometry::{center_square_crop, center_square_rect, roi_crop, roi_rect, CropSpec, Rect, RoiCircle};

/// Row-major packed RGB raster, 3 bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::InvalidImage(format!(
                "expected {expected} bytes for {width}x{height} RGB, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Image of a single color.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self::new(width, height, pixels)
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn min_side(&self) -> u32 {
        self.width.min(self.height)
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Copies the `w`x`h` window whose top-left corner is `(x, y)`.
    pub fn sub_image(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 || x as u64 + w as u64 > self.width as u64 || y as u64 + h as u64 > self.height as u64 {
            return Err(Error::InvalidCrop(format!(
                "window ({x},{y}) {w}x{h} outside {}x{}",
                self.width, self.height
            )));
        }
        let row = self.width as usize * 3;
        let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
        for yy in y..y + h {
            let start = yy as usize * row + x as usize * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w as usize * 3]);
        }
        Self::new(w, h, pixels)
    }

    /// ITU-R BT.601 luma, one `f64` per pixel in [0, 255].
    pub fn luminance(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    /// Stable content identifier over dimensions and pixel bytes.
    pub fn content_id(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        hasher.update(&self.pixels);
        let digest = hasher.finalize();
        format!("img-{}", hex::encode(&digest[..12]))
    }

    /// Decodes a PNG. Grayscale, alpha and 16-bit inputs are converted to 8-bit RGB.
    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
        buf.truncate(info.buffer_size());
        let (w, h) = (info.width, info.height);
        let pixels = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Rgba => buf
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => buf
                .chunks_exact(2)
                .flat_map(|p| [p[0], p[0], p[0]])
                .collect(),
            png::ColorType::Indexed => {
                return Err(Error::Png("palette output not expanded".into()));
            }
        };
        Self::new(w, h, pixels)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width, self.height);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header().map_err(|e| Error::Png(e.to_string()))?;
            writer
                .write_image_data(&self.pixels)
                .map_err(|e| Error::Png(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_png(&bytes)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Reference to a stored raster, as recorded in case records and manifests.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl std::fmt::Display for ImageRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths() {
        assert!(ImageBuffer::new(2, 2, vec![0; 11]).is_err());
        assert!(ImageBuffer::new(0, 2, vec![]).is_err());
        assert!(ImageBuffer::new(2, 2, vec![0; 12]).is_ok());
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let img = ImageBuffer::from_fn(7, 5, |x, y| [(x * 30) as u8, (y * 50) as u8, (x ^ y) as u8]).unwrap();
        let bytes = img.encode_png().unwrap();
        assert_eq!(ImageBuffer::decode_png(&bytes).unwrap(), img);
    }

    #[test]
    fn content_id_tracks_pixels_and_shape() {
        let a = ImageBuffer::filled(4, 2, [1, 2, 3]).unwrap();
        let b = ImageBuffer::filled(2, 4, [1, 2, 3]).unwrap();
        assert_ne!(a.content_id(), b.content_id());
        assert_eq!(a.content_id(), a.clone().content_id());
    }

    #[test]
    fn luminance_uses_bt601_weights() {
        let img = ImageBuffer::filled(1, 1, [100, 200, 50]).unwrap();
        let y = img.luminance()[0];
        assert!((y - (29.9 + 117.4 + 5.7)).abs() < 1e-9);
    }
}
