//! Synthetic acquisition defects used to supervise the quality model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ImageBuffer;
use crate::error::{Error, Result};

/// One of the four defect families the quality gate reports on.
///
/// The declaration order is the indicator order of the quality model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    /// Resolution loss: box downscale then nearest-neighbour upscale.
    SharpnessLoss,
    Blur,
    Exposure,
    Compression,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 4] = [
        DistortionKind::SharpnessLoss,
        DistortionKind::Blur,
        DistortionKind::Exposure,
        DistortionKind::Compression,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistortionKind::SharpnessLoss => "sharpness_loss",
            DistortionKind::Blur => "blur",
            DistortionKind::Exposure => "exposure",
            DistortionKind::Compression => "compression",
        }
    }

    /// Position of the quality indicator this kind supervises.
    pub fn indicator(self) -> usize {
        self as usize
    }

    /// Magnitude at which the distortion leaves the image untouched.
    pub fn neutral_magnitude(self) -> f64 {
        match self {
            DistortionKind::Blur | DistortionKind::Compression => 0.0,
            DistortionKind::SharpnessLoss | DistortionKind::Exposure => 1.0,
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sharpness_loss" | "sharpness" => Ok(DistortionKind::SharpnessLoss),
            "blur" => Ok(DistortionKind::Blur),
            "exposure" => Ok(DistortionKind::Exposure),
            "compression" => Ok(DistortionKind::Compression),
            other => Err(Error::InvalidDistortion(format!("unknown distortion kind `{other}`"))),
        }
    }
}

/// Distortion kind plus its kind-specific magnitude.
///
/// | kind | magnitude | neutral |
/// |---|---|---|
/// | blur | Gaussian sigma, >= 0 | 0 |
/// | sharpness_loss | downscale factor, >= 1 | 1 |
/// | exposure | channel gain, > 0 | 1 |
/// | compression | block quantization step, >= 0 | 0 |
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub magnitude: f64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, magnitude: f64) -> Result<Self> {
        let spec = Self { kind, magnitude };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.magnitude;
        let ok = m.is_finite()
            && match self.kind {
                DistortionKind::Blur | DistortionKind::Compression => m >= 0.0,
                DistortionKind::SharpnessLoss => m >= 1.0,
                DistortionKind::Exposure => m > 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDistortion(format!("magnitude {m} out of range for {}", self.kind)))
        }
    }
}

/// Applies one synthetic defect. Output depends only on the image and spec.
pub fn apply_distortion(img: &ImageBuffer, spec: DistortionSpec) -> Result<ImageBuffer> {
    spec.validate()?;
    match spec.kind {
        DistortionKind::Blur => gaussian_blur(img, spec.magnitude),
        DistortionKind::SharpnessLoss => resolution_loss(img, spec.magnitude),
        DistortionKind::Exposure => exposure(img, spec.magnitude),
        DistortionKind::Compression => block_quantize(img, spec.magnitude),
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian with replicated borders.
fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> Result<ImageBuffer> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let src = img.pixels();
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (j, kv) in kernel.iter().enumerate() {
                    let xx = (x + j as i64 - radius).clamp(0, w - 1);
                    acc += kv * src[((y * w + xx) * 3 + c) as usize] as f64;
                }
                tmp[((y * w + x) * 3 + c) as usize] = acc;
            }
        }
    }
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (j, kv) in kernel.iter().enumerate() {
                    let yy = (y + j as i64 - radius).clamp(0, h - 1);
                    acc += kv * tmp[((yy * w + x) * 3 + c) as usize];
                }
                out[((y * w + x) * 3 + c) as usize] = to_u8(acc);
            }
        }
    }
    ImageBuffer::new(img.width(), img.height(), out)
}

/// Box-average down to `floor(side / factor)` then nearest-neighbour back up.
fn resolution_loss(img: &ImageBuffer, factor: f64) -> Result<ImageBuffer> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let dw = ((w as f64 / factor).floor() as usize).max(1);
    let dh = ((h as f64 / factor).floor() as usize).max(1);
    if dw == w && dh == h {
        return Ok(img.clone());
    }
    let src = img.pixels();
    let mut small = vec![0u8; dw * dh * 3];
    for sy in 0..dh {
        let (y0, y1) = (sy * h / dh, (sy + 1) * h / dh);
        for sx in 0..dw {
            let (x0, x1) = (sx * w / dw, (sx + 1) * w / dw);
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            for c in 0..3 {
                let mut acc = 0u64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += src[(y * w + x) * 3 + c] as u64;
                    }
                }
                small[(sy * dw + sx) * 3 + c] = to_u8(acc as f64 / n);
            }
        }
    }
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        let sy = y * dh / h;
        for x in 0..w {
            let sx = x * dw / w;
            let s = (sy * dw + sx) * 3;
            out[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&small[s..s + 3]);
        }
    }
    ImageBuffer::new(img.width(), img.height(), out)
}

fn exposure(img: &ImageBuffer, gain: f64) -> Result<ImageBuffer> {
    if gain == 1.0 {
        return Ok(img.clone());
    }
    let out = img.pixels().iter().map(|&v| to_u8(v as f64 * gain)).collect();
    ImageBuffer::new(img.width(), img.height(), out)
}

/// Per 8x8 block and channel, snaps every value to a `step`-wide bin grid
/// anchored at the block mean. Flattens block interiors and leaves steps at
/// block boundaries, the signature of a coarse block codec.
fn block_quantize(img: &ImageBuffer, step: f64) -> Result<ImageBuffer> {
    if step == 0.0 {
        return Ok(img.clone());
    }
    const BLOCK: usize = 8;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src = img.pixels();
    let mut out = src.to_vec();
    for by in (0..h).step_by(BLOCK) {
        for bx in (0..w).step_by(BLOCK) {
            let (y1, x1) = ((by + BLOCK).min(h), (bx + BLOCK).min(w));
            let n = ((y1 - by) * (x1 - bx)) as f64;
            for c in 0..3 {
                let mut sum = 0u64;
                for y in by..y1 {
                    for x in bx..x1 {
                        sum += src[(y * w + x) * 3 + c] as u64;
                    }
                }
                let mean = sum as f64 / n;
                for y in by..y1 {
                    for x in bx..x1 {
                        let i = (y * w + x) * 3 + c;
                        let v = src[i] as f64;
                        out[i] = to_u8(mean + ((v - mean) / step).round() * step);
                    }
                }
            }
        }
    }
    ImageBuffer::new(img.width(), img.height(), out)
}
