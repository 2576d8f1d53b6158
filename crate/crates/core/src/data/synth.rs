//! Synthetic fundus-like images: dark, smoothly curving vessels of width
//! 1-3 px on a vignetted, noisy reddish background.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::fundus::FundusSample;
use crate::error::{Error, Result};
use crate::raster::Plane;

pub const MIN_SYNTH_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub vessels: usize,
    /// Standard deviation of additive Gaussian noise, in [0, 1] intensity units.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            vessels: 8,
            noise: 0.04,
        }
    }
}

const BACKGROUND: [f64; 3] = [0.78, 0.45, 0.22];
const STEP: f64 = 1.5;
const TURN_STD: f64 = 0.18;

/// Stamp offsets for a vessel of the given pixel width.
fn stamp(width: usize) -> &'static [isize] {
    match width {
        1 => &[0],
        2 => &[0, 1],
        _ => &[-1, 0, 1],
    }
}

pub fn synth_vessel_sample<R: Rng + ?Sized>(config: &SynthConfig, rng: &mut R) -> Result<FundusSample> {
    let SynthConfig { width, height, vessels, noise } = *config;
    if width < MIN_SYNTH_SIZE || height < MIN_SYNTH_SIZE {
        return Err(Error::Config(format!(
            "synthetic images need at least {MIN_SYNTH_SIZE}x{MIN_SYNTH_SIZE} pixels, got {width}x{height}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise level must be >= 0, got {noise}")));
    }

    let mut label = Plane::filled(height, width, 0u8);
    // Per-pixel attenuation; overlapping vessels keep the darkest value.
    let mut attenuation = Plane::filled(height, width, 1.0f64);

    for _ in 0..vessels {
        let mut x = rng.random_range(0.0..width as f64);
        let mut y = rng.random_range(0.0..height as f64);
        let mut angle = rng.random_range(0.0..std::f64::consts::TAU);
        let steps = rng.random_range(40..160usize);
        let vessel_width = rng.random_range(1..=3usize);
        let contrast = 0.18 + 0.07 * vessel_width as f64 + rng.random_range(0.0..0.08);
        let turn = Normal::new(0.0, TURN_STD).expect("valid std");

        for _ in 0..steps {
            let (cx, cy) = (x.floor() as isize, y.floor() as isize);
            for &dy in stamp(vessel_width) {
                for &dx in stamp(vessel_width) {
                    let (px, py) = (cx + dx, cy + dy);
                    if px >= 0 && py >= 0 && (px as usize) < width && (py as usize) < height {
                        let (r, c) = (py as usize, px as usize);
                        label.set(r, c, 1);
                        let a = attenuation.get(r, c).min(1.0 - contrast);
                        attenuation.set(r, c, a);
                    }
                }
            }
            angle += turn.sample(rng);
            x += STEP * angle.cos();
            y += STEP * angle.sin();
            if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
                break;
            }
        }
    }

    let noise_dist = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let rmax2 = cx * cx + cy * cy;
    let mut image = RgbImage::new(width as u32, height as u32);
    for r in 0..height {
        for c in 0..width {
            let d2 = (c as f64 + 0.5 - cx).powi(2) + (r as f64 + 0.5 - cy).powi(2);
            let light = 1.0 - 0.3 * d2 / rmax2;
            let att = attenuation.get(r, c);
            let mut px = [0u8; 3];
            for (k, out) in px.iter_mut().enumerate() {
                let n = if noise > 0.0 { noise_dist.sample(rng) } else { 0.0 };
                let v = BACKGROUND[k] * light * att + n;
                *out = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            image.put_pixel(c as u32, r as u32, Rgb(px));
        }
    }

    FundusSample::new(image, label, None)
}
