use serde::{Deserialize, Serialize};

use super::ImageBuffer;
use crate::error::{Error, Result};

/// Smallest side for which two 8-pixel blocks (and one block boundary) exist.
pub const MIN_FEATURE_SIDE: u32 = 16;

const HIGH_LUMA: f64 = 250.0;
const LOW_LUMA: f64 = 5.0;
const BLOCK: usize = 8;

/// Classical no-reference descriptors computed on the BT.601 luma plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityFeatures {
    /// Variance of the 4-neighbour Laplacian over interior pixels.
    pub laplacian_variance: f64,
    /// Mean squared central-difference gradient magnitude over interior pixels.
    pub gradient_energy: f64,
    /// Fraction of pixels with luma >= 250.
    pub high_luminance_fraction: f64,
    /// Fraction of pixels with luma <= 5.
    pub low_luminance_fraction: f64,
    pub luminance_mean: f64,
    pub luminance_std: f64,
    /// Mean absolute step across 8-pixel block boundaries minus the mean step
    /// between neighbours inside blocks, floored at zero.
    pub blockiness: f64,
}

impl QualityFeatures {
    pub const DIM: usize = 7;

    pub const NAMES: [&'static str; Self::DIM] = [
        "laplacian_variance",
        "gradient_energy",
        "high_luminance_fraction",
        "low_luminance_fraction",
        "luminance_mean",
        "luminance_std",
        "blockiness",
    ];

    pub fn to_array(&self) -> [f64; Self::DIM] {
        [
            self.laplacian_variance,
            self.gradient_energy,
            self.high_luminance_fraction,
            self.low_luminance_fraction,
            self.luminance_mean,
            self.luminance_std,
            self.blockiness,
        ]
    }

    /// Feature vector with the heavy-tailed energies (Laplacian variance,
    /// gradient energy, blockiness) on a `ln(1 + x)` scale.
    pub fn log_scaled(&self) -> [f64; Self::DIM] {
        let mut v = self.to_array();
        for i in [0, 1, 6] {
            v[i] = v[i].ln_1p();
        }
        v
    }
}

pub fn quality_features(img: &ImageBuffer) -> Result<QualityFeatures> {
    if img.width() < MIN_FEATURE_SIDE || img.height() < MIN_FEATURE_SIDE {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: MIN_FEATURE_SIDE,
        });
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let luma = img.luminance();
    let at = |x: usize, y: usize| luma[y * w + x];

    let n = luma.len() as f64;
    let mean = luma.iter().sum::<f64>() / n;
    let var = luma.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let high = luma.iter().filter(|&&v| v >= HIGH_LUMA).count() as f64 / n;
    let low = luma.iter().filter(|&&v| v <= LOW_LUMA).count() as f64 / n;

    let mut lap_sum = 0.0;
    let mut lap_sq = 0.0;
    let mut grad = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = at(x, y);
            let lap = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * c;
            lap_sum += lap;
            lap_sq += lap * lap;
            let gx = (at(x + 1, y) - at(x - 1, y)) / 2.0;
            let gy = (at(x, y + 1) - at(x, y - 1)) / 2.0;
            grad += gx * gx + gy * gy;
        }
    }
    let interior = ((w - 2) * (h - 2)) as f64;
    let lap_mean = lap_sum / interior;
    let laplacian_variance = (lap_sq / interior - lap_mean * lap_mean).max(0.0);
    let gradient_energy = grad / interior;

    let (mut edge_sum, mut edge_n, mut inner_sum, mut inner_n) = (0.0, 0usize, 0.0, 0usize);
    let mut push = |step: f64, boundary: bool| {
        if boundary {
            edge_sum += step;
            edge_n += 1;
        } else {
            inner_sum += step;
            inner_n += 1;
        }
    };
    for y in 0..h {
        for x in 1..w {
            push((at(x, y) - at(x - 1, y)).abs(), x % BLOCK == 0);
        }
    }
    for y in 1..h {
        for x in 0..w {
            push((at(x, y) - at(x, y - 1)).abs(), y % BLOCK == 0);
        }
    }
    let blockiness = (edge_sum / edge_n as f64 - inner_sum / inner_n as f64).max(0.0);

    Ok(QualityFeatures {
        laplacian_variance,
        gradient_energy,
        high_luminance_fraction: high,
        low_luminance_fraction: low,
        luminance_mean: mean,
        luminance_std: var.sqrt(),
        blockiness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight-line reference for the Laplacian variance, kept separate
    /// from the fused single-pass loop above.
    fn reference_laplacian_variance(img: &ImageBuffer) -> f64 {
        let (w, h) = (img.width() as i64, img.height() as i64);
        let y = |x: i64, yy: i64| {
            let p = img.pixel(x as u32, yy as u32);
            0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
        };
        let mut vals = Vec::new();
        for yy in 1..h - 1 {
            for x in 1..w - 1 {
                vals.push(y(x - 1, yy) + y(x + 1, yy) + y(x, yy - 1) + y(x, yy + 1) - 4.0 * y(x, yy));
            }
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64
    }

    fn checkerboard() -> ImageBuffer {
        ImageBuffer::from_fn(64, 64, |x, y| if (x + y) % 2 == 0 { [255; 3] } else { [0; 3] }).unwrap()
    }

    #[test]
    fn constant_image_has_no_structure() {
        let img = ImageBuffer::filled(32, 32, [120, 120, 120]).unwrap();
        let f = quality_features(&img).unwrap();
        assert_eq!(f.laplacian_variance, 0.0);
        assert_eq!(f.gradient_energy, 0.0);
        assert_eq!(f.blockiness, 0.0);
        assert_eq!(f.luminance_std, 0.0);
    }

    #[test]
    fn saturated_image_is_all_high() {
        let f = quality_features(&ImageBuffer::filled(16, 16, [255; 3]).unwrap()).unwrap();
        assert_eq!(f.high_luminance_fraction, 1.0);
        assert_eq!(f.low_luminance_fraction, 0.0);
    }

    #[test]
    fn checkerboard_laplacian_matches_reference() {
        let board = checkerboard();
        let flat = ImageBuffer::filled(64, 64, [128; 3]).unwrap();
        let fb = quality_features(&board).unwrap();
        let reference = reference_laplacian_variance(&board);
        assert!((fb.laplacian_variance - reference).abs() <= 1e-9 * reference);
        assert!(fb.laplacian_variance > quality_features(&flat).unwrap().laplacian_variance);
        // ±255 alternation gives a Laplacian of ±4*255 everywhere inside.
        assert!((reference / (4.0 * 255.0f64).powi(2) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn too_small_is_rejected() {
        let img = ImageBuffer::filled(15, 64, [0; 3]).unwrap();
        assert!(matches!(quality_features(&img), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn block_steps_register_as_blockiness() {
        let img = ImageBuffer::from_fn(32, 32, |x, y| {
            let v = ((x / 8 + y / 8) % 2 * 100 + 50) as u8;
            [v, v, v]
        })
        .unwrap();
        let f = quality_features(&img).unwrap();
        assert!(f.blockiness > 10.0, "{f:?}");
    }
}
