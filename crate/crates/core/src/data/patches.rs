//! Random and grid patch extraction with paired augmentation.

use rand::Rng;

use super::fundus::PreparedSample;
use crate::error::{Error, Result};

pub const DEFAULT_PATCH: usize = 48;

/// Which paired transforms may be applied. Each enabled flip fires with
/// probability 1/2; rotation picks a uniform multiple of 90 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augment {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: bool,
}

impl Augment {
    pub fn any(&self) -> bool {
        self.hflip || self.vflip || self.rot90
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchOrigin {
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

/// Transform actually applied to a patch, in application order: horizontal
/// flip, vertical flip, then `quarter_turns` clockwise rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    /// `channels x size x size`, values in [0, 1].
    pub input: Vec<f64>,
    /// `size x size` label values.
    pub target: Vec<f64>,
    pub channels: usize,
    pub size: usize,
    pub origin: PatchOrigin,
    pub transform: Transform,
}

pub fn hflip(plane: &[f64], size: usize) -> Vec<f64> {
    plane
        .chunks_exact(size)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}

pub fn vflip(plane: &[f64], size: usize) -> Vec<f64> {
    plane.chunks_exact(size).rev().flatten().copied().collect()
}

/// Clockwise quarter turn of a square plane.
pub fn rot90(plane: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            out[c * size + (size - 1 - r)] = plane[r * size + c];
        }
    }
    out
}

impl Transform {
    pub fn apply(&self, plane: &[f64], size: usize) -> Vec<f64> {
        let mut p = plane.to_vec();
        if self.hflip {
            p = hflip(&p, size);
        }
        if self.vflip {
            p = vflip(&p, size);
        }
        for _ in 0..self.quarter_turns {
            p = rot90(&p, size);
        }
        p
    }

    /// Undo [`apply`](Self::apply).
    pub fn invert(&self, plane: &[f64], size: usize) -> Vec<f64> {
        let mut p = plane.to_vec();
        for _ in 0..(4 - self.quarter_turns % 4) % 4 {
            p = rot90(&p, size);
        }
        if self.vflip {
            p = vflip(&p, size);
        }
        if self.hflip {
            p = hflip(&p, size);
        }
        p
    }
}

fn draw_transform<R: Rng + ?Sized>(augment: &Augment, rng: &mut R) -> Transform {
    Transform {
        hflip: augment.hflip && rng.random_bool(0.5),
        vflip: augment.vflip && rng.random_bool(0.5),
        quarter_turns: if augment.rot90 { rng.random_range(0..4u8) } else { 0 },
    }
}

/// Top-left corners whose window fits the image and, with a mask, whose
/// center pixel lies inside it.
fn valid_origins(sample: &PreparedSample, size: usize) -> Result<Vec<(usize, usize)>> {
    let (h, w) = sample.dims();
    if h < size || w < size {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            patch: size,
        });
    }
    let all = (0..=h - size).flat_map(|r| (0..=w - size).map(move |c| (r, c)));
    Ok(match &sample.fov_mask {
        Some(mask) => all.filter(|&(r, c)| mask.get(r + size / 2, c + size / 2) != 0).collect(),
        None => all.collect(),
    })
}

pub fn extract_patch(sample: &PreparedSample, image: usize, row: usize, col: usize, size: usize, transform: Transform) -> PatchPair {
    let mut input = Vec::with_capacity(sample.channels() * size * size);
    for plane in &sample.input {
        input.extend(transform.apply(&plane.window(row, col, size), size));
    }
    let target: Vec<f64> = sample.label.window(row, col, size).iter().map(|&v| v as f64).collect();
    PatchPair {
        input,
        target: transform.apply(&target, size),
        channels: sample.channels(),
        size,
        origin: PatchOrigin { image, row, col },
        transform,
    }
}

/// Positions and transforms for `n` random patches, without copying pixels.
pub fn sample_patch_origins<R: Rng + ?Sized>(
    sample: &PreparedSample,
    image: usize,
    n: usize,
    size: usize,
    augment: &Augment,
    rng: &mut R,
) -> Result<Vec<(PatchOrigin, Transform)>> {
    let origins = valid_origins(sample, size)?;
    if origins.is_empty() && n > 0 {
        return Err(Error::Config("field-of-view mask leaves no valid patch position".into()));
    }
    Ok((0..n)
        .map(|_| {
            let (row, col) = origins[rng.random_range(0..origins.len())];
            let transform = draw_transform(augment, rng);
            (PatchOrigin { image, row, col }, transform)
        })
        .collect())
}

/// `n` patches at uniform random positions. `image` tags the origins.
pub fn sample_patches<R: Rng + ?Sized>(
    sample: &PreparedSample,
    image: usize,
    n: usize,
    size: usize,
    augment: &Augment,
    rng: &mut R,
) -> Result<Vec<PatchPair>> {
    Ok(sample_patch_origins(sample, image, n, size, augment, rng)?
        .into_iter()
        .map(|(o, t)| extract_patch(sample, image, o.row, o.col, size, t))
        .collect())
}

/// Window positions along one axis with the given stride; the last window
/// is pinned to the far edge so every pixel is covered.
fn axis_positions(len: usize, size: usize, stride: usize) -> Vec<usize> {
    let last = len - size;
    let mut v: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

/// Grid of top-left corners covering an `h x w` image.
pub fn grid_origins(h: usize, w: usize, size: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if h < size || w < size {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            patch: size,
        });
    }
    let rows = axis_positions(h, size, stride);
    let cols = axis_positions(w, size, stride);
    Ok(rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect())
}
