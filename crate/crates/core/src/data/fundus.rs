use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::raster::{check_same_dims, Plane};

/// Labels and masks are binarized at this 8-bit level.
pub const BINARIZE_AT: u8 = 128;

/// One color fundus image with its vessel label and optional field-of-view mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FundusSample {
    pub image: RgbImage,
    /// Values in {0, 1}.
    pub label: Plane<u8>,
    /// Values in {0, 1}; 1 marks pixels inside the field of view.
    pub fov_mask: Option<Plane<u8>>,
}

impl FundusSample {
    pub fn new(image: RgbImage, label: Plane<u8>, fov_mask: Option<Plane<u8>>) -> Result<Self> {
        let dims = (image.height() as usize, image.width() as usize);
        let probe = Plane::filled(dims.0, dims.1, 0u8);
        check_same_dims("label", &probe, &label)?;
        if let Some(mask) = &fov_mask {
            check_same_dims("fov mask", &probe, mask)?;
        }
        if let Some(&bad) = label.data().iter().find(|&&v| v > 1) {
            return Err(Error::InvalidLabel(bad as f64));
        }
        Ok(Self { image, label, fov_mask })
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        self.label.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputMode {
    #[default]
    Green,
    Gray,
    Rgb,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::Green | InputMode::Gray => 1,
            InputMode::Rgb => 3,
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "green" => Ok(InputMode::Green),
            "gray" => Ok(InputMode::Gray),
            "rgb" => Ok(InputMode::Rgb),
            other => Err(Error::Config(format!("unknown input mode `{other}` (green|gray|rgb)"))),
        }
    }
}

impl std::fmt::Display for InputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputMode::Green => "green",
            InputMode::Gray => "gray",
            InputMode::Rgb => "rgb",
        })
    }
}

fn open_8bit(path: &Path) -> Result<DynamicImage> {
    let img = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })?;
    match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => Ok(img),
        other => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            format: format!("{:?}", other.color()),
        }),
    }
}

pub fn binarize(gray: &GrayImage) -> Plane<u8> {
    Plane::from_fn(gray.height() as usize, gray.width() as usize, |r, c| {
        (gray.get_pixel(c as u32, r as u32).0[0] >= BINARIZE_AT) as u8
    })
}

/// Load an image, its label and an optional mask. Labels and masks are
/// binarized at 128.
pub fn load_sample(image: &Path, label: &Path, mask: Option<&Path>) -> Result<FundusSample> {
    let rgb = open_8bit(image)?.to_rgb8();
    let label_plane = binarize(&open_8bit(label)?.to_luma8());
    let dims = (rgb.height() as usize, rgb.width() as usize);
    if label_plane.dims() != dims {
        return Err(Error::SizeMismatch {
            what: label.display().to_string(),
            expected: dims,
            found: label_plane.dims(),
        });
    }
    let mask_plane = match mask {
        Some(path) => {
            let m = binarize(&open_8bit(path)?.to_luma8());
            if m.dims() != dims {
                return Err(Error::SizeMismatch {
                    what: path.display().to_string(),
                    expected: dims,
                    found: m.dims(),
                });
            }
            Some(m)
        }
        None => None,
    };
    FundusSample::new(rgb, label_plane, mask_plane)
}

/// Network input planes with values in [0, 1].
pub fn to_input_planes(image: &RgbImage, mode: InputMode) -> Vec<Plane<f64>> {
    let (h, w) = (image.height() as usize, image.width() as usize);
    let channel = |f: &dyn Fn([u8; 3]) -> f64| {
        Plane::from_fn(h, w, |r, c| f(image.get_pixel(c as u32, r as u32).0))
    };
    match mode {
        InputMode::Green => vec![channel(&|p| p[1] as f64 / 255.0)],
        InputMode::Gray => vec![channel(&|p| {
            (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
        })],
        InputMode::Rgb => (0..3).map(|k| channel(&|p| p[k] as f64 / 255.0)).collect(),
    }
}

/// A sample converted to input planes once, ready for patch extraction and
/// inference.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub input: Vec<Plane<f64>>,
    pub label: Plane<u8>,
    pub fov_mask: Option<Plane<u8>>,
}

impl PreparedSample {
    pub fn new(sample: &FundusSample, mode: InputMode) -> Self {
        Self {
            input: to_input_planes(&sample.image, mode),
            label: sample.label.clone(),
            fov_mask: sample.fov_mask.clone(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.label.dims()
    }

    pub fn channels(&self) -> usize {
        self.input.len()
    }
}

fn save_png<I: Into<DynamicImage>>(img: I, path: &Path) -> Result<()> {
    img.into().save(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })
}

fn plane_to_gray(plane: &Plane<u8>, scale: u8) -> GrayImage {
    let (h, w) = plane.dims();
    GrayImage::from_fn(w as u32, h as u32, |c, r| image::Luma([plane.get(r as usize, c as usize) * scale]))
}

/// Write the image and label (and mask, if both exist) as PNG files. Binary
/// planes are stored as 0/255.
pub fn save_sample(sample: &FundusSample, image: &Path, label: &Path, mask: Option<&Path>) -> Result<()> {
    save_png(sample.image.clone(), image)?;
    save_png(plane_to_gray(&sample.label, 255), label)?;
    if let (Some(path), Some(m)) = (mask, &sample.fov_mask) {
        save_png(plane_to_gray(m, 255), path)?;
    }
    Ok(())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    save_png(img.clone(), path)
}

/// Store probabilities as 8-bit gray, `round(255 p)`.
pub fn save_probability_map(prob: &Plane<f64>, path: &Path) -> Result<()> {
    let (h, w) = prob.dims();
    let img = GrayImage::from_fn(w as u32, h as u32, |c, r| {
        image::Luma([(prob.get(r as usize, c as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    save_png(img, path)
}

/// Read an 8-bit gray image as probabilities `v / 255`.
pub fn load_probability_map(path: &Path) -> Result<Plane<f64>> {
    let gray = open_8bit(path)?.to_luma8();
    Ok(Plane::from_fn(gray.height() as usize, gray.width() as usize, |r, c| {
        gray.get_pixel(c as u32, r as u32).0[0] as f64 / 255.0
    }))
}

/// Read and binarize a single label or mask image.
pub fn load_binary(path: &Path) -> Result<Plane<u8>> {
    Ok(binarize(&open_8bit(path)?.to_luma8()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb};

    #[test]
    fn green_gray_rgb_planes() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(0, 0, Rgb([10, 200, 30]));
        let g = to_input_planes(&img, InputMode::Green);
        assert_eq!(g.len(), 1);
        assert!((g[0].get(0, 0) - 200.0 / 255.0).abs() < 1e-12);
        assert_eq!(g[0].get(0, 1), 0.0);

        let rgb = to_input_planes(&img, InputMode::Rgb);
        assert_eq!(rgb.len(), 3);
        assert!((rgb[0].get(0, 0) - 10.0 / 255.0).abs() < 1e-12);

        let black = to_input_planes(&RgbImage::new(4, 4), InputMode::Gray);
        assert!(black[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn load_binarizes_and_checks_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.png");
        let lab = dir.path().join("lab.png");
        let small = dir.path().join("small.png");
        RgbImage::from_pixel(6, 4, Rgb([1, 2, 3])).save(&img).unwrap();
        let mut l = GrayImage::new(6, 4);
        l.put_pixel(1, 2, Luma([255]));
        l.put_pixel(2, 2, Luma([127]));
        l.save(&lab).unwrap();
        GrayImage::new(5, 4).save(&small).unwrap();

        let s = load_sample(&img, &lab, None).unwrap();
        assert_eq!(s.dims(), (4, 6));
        assert_eq!(s.label.get(2, 1), 1);
        assert_eq!(s.label.get(2, 2), 0);
        assert_eq!(s.label.data().iter().map(|&v| v as usize).sum::<usize>(), 1);

        assert!(matches!(load_sample(&img, &small, None), Err(Error::SizeMismatch { .. })));
        assert!(matches!(load_sample(&img, &lab, Some(&small)), Err(Error::SizeMismatch { .. })));
        assert!(matches!(
            load_sample(&dir.path().join("missing.png"), &lab, None),
            Err(Error::Io { .. })
        ));

        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not an image").unwrap();
        assert!(matches!(load_sample(&junk, &lab, None), Err(Error::Image { .. })));
    }

    #[test]
    fn drive_sized_raster() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("01_test.png");
        let lab = dir.path().join("01_manual1.png");
        RgbImage::new(565, 584).save(&img).unwrap();
        GrayImage::new(565, 584).save(&lab).unwrap();
        let s = load_sample(&img, &lab, None).unwrap();
        assert_eq!((s.image.width(), s.image.height()), (565, 584));
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let label = Plane::from_fn(5, 7, |r, c| ((r + c) % 3 == 0) as u8);
        let mask = Plane::from_fn(5, 7, |r, _| (r > 0) as u8);
        let sample = FundusSample::new(RgbImage::from_pixel(7, 5, Rgb([9, 99, 199])), label, Some(mask)).unwrap();
        let (i, l, m) = (dir.path().join("i.png"), dir.path().join("l.png"), dir.path().join("m.png"));
        save_sample(&sample, &i, &l, Some(&m)).unwrap();
        assert_eq!(load_sample(&i, &l, Some(&m)).unwrap(), sample);

        let prob = Plane::from_fn(3, 4, |r, c| (r * 4 + c) as f64 / 11.0);
        let p = dir.path().join("p.png");
        save_probability_map(&prob, &p).unwrap();
        let back = load_probability_map(&p).unwrap();
        assert!(prob.data().iter().zip(back.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));
    }
}
