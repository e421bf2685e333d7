//! Training-time augmentation.
//!
//! Parameters are drawn in a fixed order (horizontal flip, vertical flip,
//! angle, brightness, contrast), one uniform draw each, whatever the
//! configuration. Geometric ops hit image and mask alike; photometric ops
//! touch the image only.

use alloc::vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ImageSample;
use crate::error::{config_err, Result};
use crate::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub p_flip_h: f64,
    pub p_flip_v: f64,
    /// Rotation angle range in degrees.
    pub rot_degrees: [f64; 2],
    pub brightness_range: [f64; 2],
    pub contrast_range: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            p_flip_h: 0.5,
            p_flip_v: 0.5,
            rot_degrees: [-10.0, 10.0],
            brightness_range: [0.9, 1.1],
            contrast_range: [0.9, 1.1],
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip_h: bool,
    pub flip_v: bool,
    pub angle_deg: f64,
    pub brightness: f64,
    pub contrast: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams =
        AugmentParams { flip_h: false, flip_v: false, angle_deg: 0.0, brightness: 1.0, contrast: 1.0 };
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

impl AugmentConfig {
    /// Everything off: no flips, no rotation, unit factors.
    pub fn identity() -> Self {
        Self {
            p_flip_h: 0.0,
            p_flip_v: 0.0,
            rot_degrees: [0.0, 0.0],
            brightness_range: [1.0, 1.0],
            contrast_range: [1.0, 1.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.p_flip_h, self.p_flip_v] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err!("flip probabilities must lie in [0, 1]"));
            }
        }
        for (name, [lo, hi]) in
            [("rot_degrees", self.rot_degrees), ("brightness_range", self.brightness_range), ("contrast_range", self.contrast_range)]
        {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(config_err!("{name} must be a finite [low, high] range"));
            }
        }
        if self.brightness_range[0] < 0.0 || self.contrast_range[0] < 0.0 {
            return Err(config_err!("brightness and contrast factors must be non-negative"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentParams {
        let flip_h = rng.random::<f64>() < self.p_flip_h;
        let flip_v = rng.random::<f64>() < self.p_flip_v;
        let angle_deg = uniform(rng, self.rot_degrees);
        let brightness = uniform(rng, self.brightness_range);
        let contrast = uniform(rng, self.contrast_range);
        AugmentParams { flip_h, flip_v, angle_deg, brightness, contrast }
    }

    /// Draw parameters from `rng` and apply them.
    pub fn augment<R: Rng + ?Sized>(&self, s: &ImageSample, rng: &mut R) -> ImageSample {
        apply(s, &self.sample(rng))
    }
}

fn flip(t: &Tensor, horizontal: bool) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(s, |n, y, x, c| {
        if horizontal {
            t.at(n, y, s.w - 1 - x, c)
        } else {
            t.at(n, s.h - 1 - y, x, c)
        }
    })
}

/// Symmetric reflection of `i` into `0..n` (edge pixel repeated).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

/// Source coordinates of output pixel `(y, x)` under a rotation by `deg`
/// about the image centre.
fn rotation_source(deg: f64, s: Shape) -> impl Fn(usize, usize) -> (f64, f64) {
    let theta = deg.to_radians();
    let (sin, cos) = (libm::sin(theta), libm::cos(theta));
    let (cy, cx) = ((s.h as f64 - 1.0) / 2.0, (s.w as f64 - 1.0) / 2.0);
    move |y, x| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        (cy - sin * dx + cos * dy, cx + cos * dx + sin * dy)
    }
}

/// Bilinear rotation with reflected borders.
fn rotate_image(t: &Tensor, deg: f64) -> Tensor {
    let s = t.shape();
    let src = rotation_source(deg, s);
    let mut out = Tensor::zeros(s);
    let mut k = 0;
    let data = out.data_mut();
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let (sy, sx) = src(y, x);
                let (y0, x0) = (libm::floor(sy), libm::floor(sx));
                let (fy, fx) = ((sy - y0) as f32, (sx - x0) as f32);
                let (y0, x0) = (y0 as isize, x0 as isize);
                let (ya, yb) = (reflect(y0, s.h), reflect(y0 + 1, s.h));
                let (xa, xb) = (reflect(x0, s.w), reflect(x0 + 1, s.w));
                for c in 0..s.c {
                    let top = t.at(n, ya, xa, c) * (1.0 - fx) + t.at(n, ya, xb, c) * fx;
                    let bottom = t.at(n, yb, xa, c) * (1.0 - fx) + t.at(n, yb, xb, c) * fx;
                    data[k] = (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0);
                    k += 1;
                }
            }
        }
    }
    out
}

/// Nearest-neighbour rotation with zero fill; keeps binary masks binary.
fn rotate_mask(t: &Tensor, deg: f64) -> Tensor {
    let s = t.shape();
    let src = rotation_source(deg, s);
    Tensor::from_fn(s, |n, y, x, c| {
        let (sy, sx) = src(y, x);
        let (iy, ix) = (libm::round(sy), libm::round(sx));
        if iy < 0.0 || ix < 0.0 || iy >= s.h as f64 || ix >= s.w as f64 {
            0.0
        } else {
            t.at(n, iy as usize, ix as usize, c)
        }
    })
}

/// Applies `p` to a sample. Factors of exactly 1 and a zero angle leave
/// the data bit-identical.
pub fn apply(s: &ImageSample, p: &AugmentParams) -> ImageSample {
    let (mut image, mut mask) = (s.image.clone(), s.mask.clone());
    if p.flip_h {
        image = flip(&image, true);
        mask = flip(&mask, true);
    }
    if p.flip_v {
        image = flip(&image, false);
        mask = flip(&mask, false);
    }
    if p.angle_deg != 0.0 {
        image = rotate_image(&image, p.angle_deg);
        mask = rotate_mask(&mask, p.angle_deg);
    }
    if p.brightness != 1.0 {
        let b = p.brightness as f32;
        image.map_inplace(|v| (v * b).clamp(0.0, 1.0));
    }
    if p.contrast != 1.0 {
        let mean = image.data().iter().map(|&v| v as f64).sum::<f64>() / image.data().len() as f64;
        let (m, k) = (mean as f32, p.contrast as f32);
        image.map_inplace(|v| ((v - m) * k + m).clamp(0.0, 1.0));
    }
    ImageSample { id: s.id.clone(), image, mask }
}

impl ImageSample {
    /// Image replicated from the mask, for geometric-consistency checks.
    pub fn mask_as_image(mask: &Tensor) -> Tensor {
        let s = mask.shape();
        let mut data = vec![0.0f32; s.pixels() * 3];
        for (px, &m) in data.chunks_exact_mut(3).zip(mask.data()) {
            px.fill(m);
        }
        Tensor::from_vec(s.with_channels(3), data).expect("matching length")
    }
}
