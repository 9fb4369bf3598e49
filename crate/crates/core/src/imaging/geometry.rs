use serde::{Deserialize, Serialize};

use super::ImageBuffer;
use crate::error::{Error, Result};

/// Side of the centered square crop, as a fraction of the shorter image side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub fraction: f64,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self { fraction: 1.0 }
    }
}

impl CropSpec {
    pub fn new(fraction: f64) -> Result<Self> {
        let spec = Self { fraction };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::InvalidCrop(format!(
                "fraction must lie in (0, 1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }
}

/// Axis-aligned square window in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub side: u32,
}

impl Rect {
    pub fn right(&self) -> u32 {
        self.x + self.side
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.side
    }
}

/// Lesion center mark plus radius, in pixels of the image it was drawn on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiCircle {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
}

impl RoiCircle {
    pub fn validate_for(&self, width: u32, height: u32) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::InvalidRoi(format!("radius must be positive, got {}", self.radius)));
        }
        let inside = self.center_x.is_finite()
            && self.center_y.is_finite()
            && self.center_x >= 0.0
            && self.center_y >= 0.0
            && self.center_x < width as f64
            && self.center_y < height as f64;
        if !inside {
            return Err(Error::InvalidRoi(format!(
                "center ({}, {}) outside {width}x{height}",
                self.center_x, self.center_y
            )));
        }
        Ok(())
    }
}

/// The window [`center_square_crop`] copies out of a `width`x`height` image.
pub fn center_square_rect(width: u32, height: u32, spec: CropSpec) -> Result<Rect> {
    spec.validate()?;
    let side = (spec.fraction * width.min(height) as f64).floor() as u32;
    if side == 0 {
        return Err(Error::InvalidCrop(format!(
            "fraction {} of {}x{} floors to an empty square",
            spec.fraction, width, height
        )));
    }
    Ok(Rect {
        x: (width - side) / 2,
        y: (height - side) / 2,
        side,
    })
}

/// Copies the centered square of side `floor(fraction * min(W, H))`.
pub fn center_square_crop(img: &ImageBuffer, spec: CropSpec) -> Result<ImageBuffer> {
    let r = center_square_rect(img.width(), img.height(), spec)?;
    img.sub_image(r.x, r.y, r.side, r.side)
}

/// Square box of side `round(2 * radius * padding)` centered on the ROI,
/// clamped to the short image side and translated to lie inside the image.
pub fn roi_rect(width: u32, height: u32, roi: RoiCircle, padding: f64) -> Result<Rect> {
    roi.validate_for(width, height)?;
    if !(padding.is_finite() && padding >= 1.0) {
        return Err(Error::InvalidRoi(format!("padding must be >= 1, got {padding}")));
    }
    let wanted = (2.0 * roi.radius * padding).round().max(1.0);
    let side = (wanted.min(width.min(height) as f64)) as u32;
    let half = side as f64 / 2.0;
    let place = |center: f64, extent: u32| -> u32 {
        let start = (center - half).floor();
        start.clamp(0.0, (extent - side) as f64) as u32
    };
    Ok(Rect {
        x: place(roi.center_x, width),
        y: place(roi.center_y, height),
        side,
    })
}

pub fn roi_crop(img: &ImageBuffer, roi: RoiCircle, padding: f64) -> Result<ImageBuffer> {
    let r = roi_rect(img.width(), img.height(), roi, padding)?;
    img.sub_image(r.x, r.y, r.side, r.side)
}
