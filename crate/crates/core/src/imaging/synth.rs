//! Deterministic synthetic skin-like textures.
//!
//! Used for quality-model supervision, fixtures and demos where no clinical
//! data is available. Each image is a skin-tone field with low-frequency
//! shading, pixel-level grain and a darker irregular lesion near the center.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImageBuffer;

/// Knobs for [`skin_texture_with`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TextureParams {
    /// Lesion color as RGB; `None` draws a brownish tone from the seed.
    pub lesion_rgb: Option<[f64; 3]>,
    /// Lesion radius as a fraction of the side; `None` draws from the seed.
    pub lesion_radius: Option<f64>,
}

pub fn skin_texture(seed: u64, side: u32) -> ImageBuffer {
    skin_texture_with(seed, side, TextureParams::default())
}

pub fn skin_texture_with(seed: u64, side: u32, params: TextureParams) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tone = rng.gen_range(120.0..175.0);
    let skin = [tone + 25.0, tone - 5.0, tone - 25.0];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let freq = rng.gen_range(0.5..3.0) * std::f64::consts::TAU / side as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = rng.gen_range(6.0..16.0);
            (angle, freq, phase, amp)
        })
        .collect();
    let grain = rng.gen_range(10.0..22.0);
    let lesion = params.lesion_rgb.unwrap_or_else(|| {
        let d = rng.gen_range(50.0..85.0);
        [d + 30.0, d, d - 20.0]
    });
    let radius = params.lesion_radius.unwrap_or_else(|| rng.gen_range(0.12..0.28)) * side as f64;
    let cx = side as f64 * rng.gen_range(0.42..0.58);
    let cy = side as f64 * rng.gen_range(0.42..0.58);
    let lobes: Vec<(f64, f64)> = (0..4)
        .map(|k| (rng.gen_range(0.05..0.2), rng.gen_range(0.0..std::f64::consts::TAU) + k as f64))
        .collect();

    let mut pixels = Vec::with_capacity(side as usize * side as usize * 3);
    for y in 0..side {
        for x in 0..side {
            let (fx, fy) = (x as f64, y as f64);
            let shade: f64 = waves
                .iter()
                .map(|&(a, f, p, amp)| amp * (f * (fx * a.cos() + fy * a.sin()) + p).sin())
                .sum();
            let (dx, dy) = (fx - cx, fy - cy);
            let theta = dy.atan2(dx);
            let wobble: f64 = lobes
                .iter()
                .enumerate()
                .map(|(k, &(amp, ph))| amp * ((k as f64 + 2.0) * theta + ph).sin())
                .sum();
            let r = (dx * dx + dy * dy).sqrt() / (radius * (1.0 + wobble));
            // soft edge over ~15% of the radius
            let inside = ((1.0 - r) / 0.15).clamp(0.0, 1.0);
            let noise = rng.gen_range(-grain..grain);
            for c in 0..3 {
                let base = skin[c] + shade;
                let v = base * (1.0 - inside) + lesion[c] * inside + noise;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageBuffer::new(side, side, pixels).expect("synthetic dimensions are consistent")
}
