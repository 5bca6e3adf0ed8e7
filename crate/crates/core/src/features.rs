//! Crops around a query point and the image featurizer.
//!
//! Three views condition every prediction: a square of side equal to the
//! image height centered on the point, a square of half that side, and the
//! whole frame. Windows that would leave the image are shifted back inside
//! (never padded); a window wider than the image is shrunk to fit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Point;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    /// The window was moved or shrunk to stay inside the image.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub full: CropRect,
    pub half: CropRect,
    pub whole: CropRect,
}

fn centered_square(side: f64, at: Point, width: f64, height: f64) -> CropRect {
    let side_x = side.min(width);
    let side_y = side.min(height);
    let x = (at.x - side / 2.0).clamp(0.0, width - side_x);
    let y = (at.y - side / 2.0).clamp(0.0, height - side_y);
    let clamped = side_x != side
        || side_y != side
        || x != at.x - side / 2.0
        || y != at.y - side / 2.0;
    CropRect {
        x,
        y,
        width: side_x,
        height: side_y,
        clamped,
    }
}

pub fn make_crops(width: u32, height: u32, point: Point) -> Result<CropSpec> {
    let (w, h) = (width as f64, height as f64);
    if width == 0
        || height == 0
        || !point.is_finite()
        || point.x < 0.0
        || point.y < 0.0
        || point.x > w
        || point.y > h
    {
        return Err(Error::OutOfBounds {
            x: point.x,
            y: point.y,
            width,
            height,
        });
    }
    Ok(CropSpec {
        full: centered_square(h, point, w, h),
        half: centered_square(h / 2.0, point, w, h),
        whole: CropRect {
            x: 0.0,
            y: 0.0,
            width: w,
            height: h,
            clamped: false,
        },
    })
}

/// Grayscale raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    width: u32,
    height: u32,
    pixels: Vec<f32>,
}

impl SceneImage {
    pub fn from_pixels(width: u32, height: u32, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != (width * height) as usize {
            return Err(Error::Shape(format!(
                "{width}x{height} image with {} pixels",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        let (width, height) = img.dimensions();
        let pixels = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Self::from_pixels(width, height, pixels)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw: Vec<u8> = self
            .pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = image::GrayImage::from_raw(self.width, self.height, raw)
            .expect("buffer matches dimensions");
        img.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel(&self, x: u32, y: u32) -> f32 {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Bilinear sample at continuous pixel coordinates, edge-clamped.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as u32;
        let y0 = fy.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let p = |x, y| self.pixel(x, y) as f64;
        (1.0 - ty) * ((1.0 - tx) * p(x0, y0) + tx * p(x1, y0))
            + ty * ((1.0 - tx) * p(x0, y1) + tx * p(x1, y1))
    }

    /// Box-filtered resize of `crop` to `side x side`, row-major.
    pub fn resample(&self, crop: &CropRect, side: usize) -> Vec<f64> {
        const SUB: usize = 4;
        let cell_w = crop.width / side as f64;
        let cell_h = crop.height / side as f64;
        let mut out = Vec::with_capacity(side * side);
        for r in 0..side {
            for c in 0..side {
                let mut acc = 0.0;
                for sy in 0..SUB {
                    for sx in 0..SUB {
                        let x = crop.x + (c as f64 + (sx as f64 + 0.5) / SUB as f64) * cell_w;
                        let y = crop.y + (r as f64 + (sy as f64 + 0.5) / SUB as f64) * cell_h;
                        acc += self.sample(x, y);
                    }
                }
                out.push(acc / (SUB * SUB) as f64);
            }
        }
        out
    }
}

/// Features of the three crops around one query point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropFeatures {
    pub full: Vec<f64>,
    pub half: Vec<f64>,
    pub whole: Vec<f64>,
}

impl CropFeatures {
    pub fn dim(&self) -> usize {
        self.full.len()
    }

    pub fn views(&self) -> [&[f64]; 3] {
        [&self.full, &self.half, &self.whole]
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for v in self.views() {
            if v.len() != dim {
                return Err(Error::Shape(format!(
                    "crop feature has {} entries, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidFeature("non-finite crop feature".into()));
            }
        }
        Ok(())
    }
}

/// Model conditioning: crop features plus a class vector (one-hot while
/// training, classifier probabilities at inference).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionInput {
    pub crops: CropFeatures,
    pub class_vec: Vec<f64>,
}

impl ConditionInput {
    pub fn one_hot(crops: CropFeatures, class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::InvalidLabel { label: class, classes });
        }
        let mut class_vec = vec![0.0; classes];
        class_vec[class] = 1.0;
        Ok(Self { crops, class_vec })
    }
}

pub trait Featurizer: Send + Sync {
    fn dim(&self) -> usize;

    /// Feature vector for one crop of `image`.
    fn featurize(&self, image: &SceneImage, crop: &CropRect) -> Result<Vec<f64>>;

    /// Features for all three crops around `point`.
    fn featurize_point(&self, image: &SceneImage, point: Point) -> Result<CropFeatures> {
        let spec = make_crops(image.width(), image.height(), point)?;
        Ok(CropFeatures {
            full: self.featurize(image, &spec.full)?,
            half: self.featurize(image, &spec.half)?,
            whole: self.featurize(image, &spec.whole)?,
        })
    }
}

/// Fixed random projection of a 16x16 grayscale thumbnail.
///
/// The thumbnail is mean-centered, its mean is appended as one extra
/// component, the 257 values are multiplied by a seeded Gaussian matrix, and
/// the result is L2-normalized.
#[derive(Debug, Clone)]
pub struct RandomProjectionFeaturizer {
    seed: u64,
    dim: usize,
    projection: Vec<f64>,
}

impl RandomProjectionFeaturizer {
    pub const THUMB: usize = 16;
    const INPUT: usize = Self::THUMB * Self::THUMB + 1;

    pub fn new(dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0xFEA7);
        let scale = 1.0 / (dim as f64).sqrt();
        let projection = rng::standard_normal(&mut r, dim * Self::INPUT)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        Self {
            seed,
            dim,
            projection,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Featurizer for RandomProjectionFeaturizer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn featurize(&self, image: &SceneImage, crop: &CropRect) -> Result<Vec<f64>> {
        if !(crop.width > 0.0 && crop.height > 0.0) {
            return Err(Error::Shape("crop has no area".into()));
        }
        let mut thumb = image.resample(crop, Self::THUMB);
        let mean = thumb.iter().sum::<f64>() / thumb.len() as f64;
        thumb.iter_mut().for_each(|v| *v -= mean);
        thumb.push(mean);
        let mut out: Vec<f64> = self
            .projection
            .chunks_exact(Self::INPUT)
            .map(|row| row.iter().zip(&thumb).map(|(a, b)| a * b).sum())
            .collect();
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(out)
    }
}
