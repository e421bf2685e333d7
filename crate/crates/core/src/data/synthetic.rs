//! Procedural polyp-like data for desk-scale runs.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{sample_rng, ImageSample};
use crate::error::{config_err, Result};
use crate::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub size: usize,
    /// Inclusive range of blobs per image.
    pub blobs_per_image: [usize; 2],
    /// Semi-axis range in pixels.
    pub blob_radius: [f64; 2],
    pub background_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 16,
            size: crate::INPUT_SIZE,
            blobs_per_image: [1, 3],
            blob_radius: [16.0, 48.0],
            background_noise_sigma: 0.03,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(config_err!("synthetic n_samples must be at least 1"));
        }
        if self.size < 8 {
            return Err(config_err!("synthetic size must be at least 8"));
        }
        let [lo, hi] = self.blobs_per_image;
        if lo == 0 || lo > hi {
            return Err(config_err!("blobs_per_image must be a range starting at 1 or more"));
        }
        let [rlo, rhi] = self.blob_radius;
        if !(rlo >= 1.0 && rlo <= rhi && rhi < self.size as f64 / 2.0) {
            return Err(config_err!("blob_radius must satisfy 1 <= low <= high < size / 2"));
        }
        if !(self.background_noise_sigma >= 0.0 && self.background_noise_sigma.is_finite()) {
            return Err(config_err!("background_noise_sigma must be non-negative"));
        }
        Ok(())
    }
}

struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
}

impl Blob {
    /// Squared normalized radius; `<= 1` inside the ellipse.
    fn r2(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = self.cos * dx + self.sin * dy;
        let v = -self.sin * dx + self.cos * dy;
        (u / self.rx) * (u / self.rx) + (v / self.ry) * (v / self.ry)
    }
}

fn one_sample(spec: &SyntheticSpec, index: usize) -> ImageSample {
    let mut rng = sample_rng(spec.seed, u64::MAX, index as u64);
    let size = spec.size;
    let range = |rng: &mut dyn rand::RngCore, [lo, hi]: [f64; 2]| lo + (hi - lo) * rng.random::<f64>();

    // mucosa-like base colour with a slow sinusoidal texture
    let base = [range(&mut rng, [0.55, 0.75]), range(&mut rng, [0.30, 0.45]), range(&mut rng, [0.25, 0.40])];
    let (fy, fx, phase) = (range(&mut rng, [2.0, 5.0]), range(&mut rng, [2.0, 5.0]), range(&mut rng, [0.0, 6.28]));
    let n_blobs = rng.random_range(spec.blobs_per_image[0]..=spec.blobs_per_image[1]);
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| {
            let theta = range(&mut rng, [0.0, core::f64::consts::PI]);
            Blob {
                cy: rng.random_range(0..size) as f64,
                cx: rng.random_range(0..size) as f64,
                ry: range(&mut rng, spec.blob_radius),
                rx: range(&mut rng, spec.blob_radius),
                cos: libm::cos(theta),
                sin: libm::sin(theta),
            }
        })
        .collect();
    let tint = [range(&mut rng, [0.20, 0.30]), range(&mut rng, [0.10, 0.20]), range(&mut rng, [0.0, 0.10])];
    let noise = Normal::new(0.0, spec.background_noise_sigma).expect("validated sigma");

    let shape = Shape::new(1, size, size, 3);
    let mut image = Vec::with_capacity(shape.len());
    let mut mask = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (yf, xf) = (y as f64 / size as f64, x as f64 / size as f64);
            let texture = 0.04 * libm::sin(core::f64::consts::TAU * (fy * yf + fx * xf) + phase);
            let r2 = blobs.iter().map(|b| b.r2(y as f64, x as f64)).fold(f64::INFINITY, f64::min);
            let inside = r2 <= 1.0;
            // dome shading, brightest at the centre
            let lift = if inside { 1.0 - 0.5 * r2 } else { 0.0 };
            for c in 0..3 {
                let v = base[c] + texture + lift * tint[c] + noise.sample(&mut rng);
                image.push(v.clamp(0.0, 1.0) as f32);
            }
            mask.push(inside as u8 as f32);
        }
    }
    ImageSample {
        id: format!("synth_{index:04}"),
        image: Tensor::from_vec(shape, image).expect("sized buffer"),
        mask: Tensor::from_vec(shape.with_channels(1), mask).expect("sized buffer"),
    }
}

/// `spec.n_samples` samples; sample `i` depends only on `(spec, i)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<ImageSample>> {
    spec.validate()?;
    Ok((0..spec.n_samples).map(|i| one_sample(spec, i)).collect())
}
