//! Segmentation and adversarial objectives.
//!
//! Single-image losses work on flat slices and accumulate in `f64`. Batch
//! losses take `(N, H, W, 1)` tensors, evaluate each image separately and
//! average over the batch; their gradients are with respect to that mean.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::Tensor;

/// Which segmentation terms are combined, and how.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "alloc::string::String", into = "alloc::string::String")]
pub enum LossCombo {
    WiouOnly,
    BceOnly,
    DiceOnly,
    Bwiou,
    Biou,
    Bdice,
    ThreeA,
    ThreeB,
    ThreeC,
}

impl LossCombo {
    pub const ALL: [LossCombo; 9] = [
        LossCombo::WiouOnly,
        LossCombo::BceOnly,
        LossCombo::DiceOnly,
        LossCombo::Bwiou,
        LossCombo::Biou,
        LossCombo::Bdice,
        LossCombo::ThreeA,
        LossCombo::ThreeB,
        LossCombo::ThreeC,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossCombo::WiouOnly => "wiou",
            LossCombo::BceOnly => "bce_only",
            LossCombo::DiceOnly => "dice_only",
            LossCombo::Bwiou => "bwiou",
            LossCombo::Biou => "biou",
            LossCombo::Bdice => "bdice",
            LossCombo::ThreeA => "3loss_a",
            LossCombo::ThreeB => "3loss_b",
            LossCombo::ThreeC => "3loss_c",
        }
    }

    /// Coefficients of (BCE, weighted IoU, plain IoU, Dice).
    pub fn weights(self) -> [f64; 4] {
        match self {
            LossCombo::WiouOnly => [0.0, 1.0, 0.0, 0.0],
            LossCombo::BceOnly => [1.0, 0.0, 0.0, 0.0],
            LossCombo::DiceOnly => [0.0, 0.0, 0.0, 1.0],
            LossCombo::Bwiou => [0.5, 0.5, 0.0, 0.0],
            LossCombo::Biou => [0.5, 0.0, 0.5, 0.0],
            LossCombo::Bdice => [0.5, 0.0, 0.0, 0.5],
            LossCombo::ThreeA => [0.4, 0.3, 0.0, 0.3],
            LossCombo::ThreeB => [0.3, 0.4, 0.0, 0.3],
            LossCombo::ThreeC => [1.0 / 3.0, 0.0, 1.0 / 3.0, 1.0 / 3.0],
        }
    }
}

impl fmt::Display for LossCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossCombo {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        LossCombo::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| config_err!("unknown loss combo `{s}` (expected one of wiou, bce_only, dice_only, bwiou, biou, bdice, 3loss_a, 3loss_b, 3loss_c)"))
    }
}

impl TryFrom<alloc::string::String> for LossCombo {
    type Error = crate::Error;

    fn try_from(s: alloc::string::String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossCombo> for alloc::string::String {
    fn from(c: LossCombo) -> Self {
        c.name().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub combo: LossCombo,
    /// Foreground weight of the weighted IoU.
    pub alpha: f64,
    pub eps: f64,
    /// Weight of the adversarial term in the generator objective.
    pub lambda_adv: f64,
    /// Probabilities are clipped to `[clip, 1 - clip]` before logarithms.
    pub clip: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { combo: LossCombo::ThreeA, alpha: 0.7, eps: 1e-6, lambda_adv: 0.1, clip: 1e-7 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(config_err!("loss.alpha must lie in [0, 1]"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(config_err!("loss.eps must be positive"));
        }
        if !(self.lambda_adv >= 0.0 && self.lambda_adv.is_finite()) {
            return Err(config_err!("loss.lambda_adv must be non-negative"));
        }
        if !(self.clip > 0.0 && self.clip < 0.5) {
            return Err(config_err!("loss.clip must lie in (0, 0.5)"));
        }
        Ok(())
    }

    /// `(λ1, λ2, λ3)` applied to BCE, the IoU term and Dice.
    pub fn lambdas(&self) -> [f64; 3] {
        let [b, w, i, d] = self.combo.weights();
        [b, w + i, d]
    }
}

fn check_len(t: &[f32], p: &[f32]) -> Result<()> {
    if t.len() != p.len() || t.is_empty() {
        return Err(shape_err!("mask and prediction lengths differ or are empty ({} vs {})", t.len(), p.len()));
    }
    Ok(())
}

/// `(Σt, Σp, Σtp)` in `f64`.
fn sums(t: &[f32], p: &[f32]) -> (f64, f64, f64) {
    t.iter().zip(p).fold((0.0, 0.0, 0.0), |(st, sp, stp), (&t, &p)| {
        let (t, p) = (t as f64, p as f64);
        (st + t, sp + p, stp + t * p)
    })
}

/// Mean binary cross-entropy with clipped predictions.
pub fn bce_loss(t: &[f32], p: &[f32], clip: f64) -> Result<f64> {
    check_len(t, p)?;
    let total: f64 = t
        .iter()
        .zip(p)
        .map(|(&y, &p)| {
            let (y, p) = (y as f64, (p as f64).clamp(clip, 1.0 - clip));
            -(y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
        })
        .sum();
    Ok(total / t.len() as f64)
}

/// Gradient of [`bce_loss`]; zero where the clip is active.
pub fn bce_grad(t: &[f32], p: &[f32], clip: f64) -> Result<Vec<f64>> {
    check_len(t, p)?;
    let n = t.len() as f64;
    Ok(t.iter()
        .zip(p)
        .map(|(&y, &p)| {
            let (y, p) = (y as f64, p as f64);
            if p < clip || p > 1.0 - clip {
                0.0
            } else {
                -(y / p - (1.0 - y) / (1.0 - p)) / n
            }
        })
        .collect())
}

/// `1 − (2Σtp + ε)/(Σt + Σp + ε)`.
pub fn dice_loss(t: &[f32], p: &[f32], eps: f64) -> Result<f64> {
    check_len(t, p)?;
    let (st, sp, i) = sums(t, p);
    Ok(1.0 - (2.0 * i + eps) / (st + sp + eps))
}

pub fn dice_grad(t: &[f32], p: &[f32], eps: f64) -> Result<Vec<f64>> {
    check_len(t, p)?;
    let (st, sp, i) = sums(t, p);
    let den = st + sp + eps;
    let num = 2.0 * i + eps;
    Ok(t.iter().map(|&t| -(2.0 * t as f64 * den - num) / (den * den)).collect())
}

/// Foreground IoU: `(Σtp + ε)/(Σt + Σp − Σtp + ε)`.
pub fn foreground_iou(t: &[f32], p: &[f32], eps: f64) -> Result<f64> {
    check_len(t, p)?;
    let (st, sp, i) = sums(t, p);
    Ok((i + eps) / (st + sp - i + eps))
}

/// Background IoU: `(A + ε)/(B + C − A + ε)` with `A = Σ(1−t)(1−p)`,
/// `B = Σ(1−t)`, `C = Σ(1−p)`.
pub fn background_iou(t: &[f32], p: &[f32], eps: f64) -> Result<f64> {
    check_len(t, p)?;
    let (a, b, c) = background_sums(t, p);
    Ok((a + eps) / (b + c - a + eps))
}

fn background_sums(t: &[f32], p: &[f32]) -> (f64, f64, f64) {
    t.iter().zip(p).fold((0.0, 0.0, 0.0), |(a, b, c), (&t, &p)| {
        let (u, q) = (1.0 - t as f64, 1.0 - p as f64);
        (a + u * q, b + u, c + q)
    })
}

fn foreground_iou_grad(t: &[f32], p: &[f32], eps: f64) -> Vec<f64> {
    let (st, sp, i) = sums(t, p);
    let (num, den) = (i + eps, st + sp - i + eps);
    t.iter().map(|&t| (t as f64 * den - num * (1.0 - t as f64)) / (den * den)).collect()
}

fn background_iou_grad(t: &[f32], p: &[f32], eps: f64) -> Vec<f64> {
    let (a, b, c) = background_sums(t, p);
    let (num, den) = (a + eps, b + c - a + eps);
    t.iter().map(|&t| (-(1.0 - t as f64) * den + num * t as f64) / (den * den)).collect()
}

/// `1 − IoU_fg`.
pub fn plain_iou_loss(t: &[f32], p: &[f32], eps: f64) -> Result<f64> {
    Ok(1.0 - foreground_iou(t, p, eps)?)
}

pub fn plain_iou_grad(t: &[f32], p: &[f32], eps: f64) -> Result<Vec<f64>> {
    check_len(t, p)?;
    Ok(foreground_iou_grad(t, p, eps).into_iter().map(|g| -g).collect())
}

/// `1 − [α·IoU_fg + (1−α)·IoU_bg]`.
pub fn weighted_iou_loss(t: &[f32], p: &[f32], alpha: f64, eps: f64) -> Result<f64> {
    let fg = foreground_iou(t, p, eps)?;
    let bg = background_iou(t, p, eps)?;
    Ok(1.0 - (alpha * fg + (1.0 - alpha) * bg))
}

pub fn weighted_iou_grad(t: &[f32], p: &[f32], alpha: f64, eps: f64) -> Result<Vec<f64>> {
    check_len(t, p)?;
    let fg = foreground_iou_grad(t, p, eps);
    let bg = background_iou_grad(t, p, eps);
    Ok(fg.iter().zip(&bg).map(|(f, b)| -(alpha * f + (1.0 - alpha) * b)).collect())
}

/// The individual segmentation terms for one image.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub bce: f64,
    pub wiou: f64,
    pub iou: f64,
    pub dice: f64,
}

impl LossTerms {
    pub fn compute(t: &[f32], p: &[f32], cfg: &LossConfig) -> Result<Self> {
        Ok(Self {
            bce: bce_loss(t, p, cfg.clip)?,
            wiou: weighted_iou_loss(t, p, cfg.alpha, cfg.eps)?,
            iou: plain_iou_loss(t, p, cfg.eps)?,
            dice: dice_loss(t, p, cfg.eps)?,
        })
    }

    /// Weighted sum for `combo`, with absent terms contributing nothing.
    pub fn combine(&self, combo: LossCombo) -> f64 {
        let [b, w, i, d] = combo.weights();
        let mut total = 0.0;
        for (weight, value) in [(b, self.bce), (w, self.wiou), (i, self.iou), (d, self.dice)] {
            if weight != 0.0 {
                total += weight * value;
            }
        }
        total
    }
}

/// Segmentation objective for one image.
pub fn generator_seg_loss(t: &[f32], p: &[f32], cfg: &LossConfig) -> Result<f64> {
    Ok(LossTerms::compute(t, p, cfg)?.combine(cfg.combo))
}

/// Gradient of [`generator_seg_loss`] with respect to `p`.
pub fn generator_seg_grad(t: &[f32], p: &[f32], cfg: &LossConfig) -> Result<Vec<f64>> {
    check_len(t, p)?;
    let [b, w, i, d] = cfg.combo.weights();
    let mut g = vec![0.0f64; t.len()];
    let mut add = |weight: f64, part: Vec<f64>| {
        if weight != 0.0 {
            g.iter_mut().zip(part).for_each(|(g, v)| *g += weight * v);
        }
    };
    add(b, bce_grad(t, p, cfg.clip)?);
    add(w, weighted_iou_grad(t, p, cfg.alpha, cfg.eps)?);
    add(i, plain_iou_grad(t, p, cfg.eps)?);
    add(d, dice_grad(t, p, cfg.eps)?);
    Ok(g)
}

fn check_masks(t: &Tensor, p: &Tensor) -> Result<()> {
    if t.shape() != p.shape() || t.shape().c != 1 {
        return Err(shape_err!("expected matching (N,H,W,1) masks, got {} and {}", t.shape(), p.shape()));
    }
    Ok(())
}

/// Batch-mean segmentation loss, its gradient, and the batch-mean terms.
pub fn batch_seg_loss(t: &Tensor, p: &Tensor, cfg: &LossConfig) -> Result<(f64, Tensor, LossTerms)> {
    check_masks(t, p)?;
    let n = t.shape().n;
    let mut total = 0.0;
    let mut mean_terms = LossTerms::default();
    let mut grad = Vec::with_capacity(t.data().len());
    for k in 0..n {
        let (ti, pi) = (t.item_slice(k), p.item_slice(k));
        let terms = LossTerms::compute(ti, pi, cfg)?;
        total += terms.combine(cfg.combo);
        mean_terms.bce += terms.bce / n as f64;
        mean_terms.wiou += terms.wiou / n as f64;
        mean_terms.iou += terms.iou / n as f64;
        mean_terms.dice += terms.dice / n as f64;
        grad.extend(generator_seg_grad(ti, pi, cfg)?.into_iter().map(|g| (g / n as f64) as f32));
    }
    Ok((total / n as f64, Tensor::from_vec(t.shape(), grad)?, mean_terms))
}

/// BCE of a patch map against a constant target, with its gradient.
fn patch_bce(patch: &Tensor, target: f32, clip: f64) -> Result<(f64, Tensor)> {
    let t = vec![target; patch.data().len()];
    let value = bce_loss(&t, patch.data(), clip)?;
    let grad = bce_grad(&t, patch.data(), clip)?.into_iter().map(|g| g as f32).collect();
    Ok((value, Tensor::from_vec(patch.shape(), grad)?))
}

/// Non-saturating generator term: BCE of the patch map against all ones.
pub fn adversarial_generator_term(patch: &Tensor, clip: f64) -> Result<f64> {
    Ok(patch_bce(patch, 1.0, clip)?.0)
}

pub fn adversarial_generator_grad(patch: &Tensor, clip: f64) -> Result<(f64, Tensor)> {
    patch_bce(patch, 1.0, clip)
}

/// Mean of BCE(real, 1) and BCE(fake, 0), each averaged over patches.
pub fn discriminator_loss(real: &Tensor, fake: &Tensor, clip: f64) -> Result<f64> {
    Ok(discriminator_loss_grad(real, fake, clip)?.0)
}

/// Loss plus gradients with respect to the real and fake patch maps.
pub fn discriminator_loss_grad(real: &Tensor, fake: &Tensor, clip: f64) -> Result<(f64, Tensor, Tensor)> {
    let (lr, mut gr) = patch_bce(real, 1.0, clip)?;
    let (lf, mut gf) = patch_bce(fake, 0.0, clip)?;
    gr.map_inplace(|g| 0.5 * g);
    gf.map_inplace(|g| 0.5 * g);
    Ok((0.5 * (lr + lf), gr, gf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Shape;

    const CLIP: f64 = 1e-7;
    const EPS: f64 = 1e-6;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn bce_values() {
        assert!(close(bce_loss(&[1.0], &[0.5], CLIP).unwrap(), 0.693147, 1e-6));
        assert!(close(bce_loss(&[1.0, 0.0], &[0.9, 0.1], CLIP).unwrap(), 0.105361, 1e-6));
        let perfect = bce_loss(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0], CLIP).unwrap();
        assert!(perfect <= -libm::log(1.0 - CLIP) + 1e-15);
    }

    #[test]
    fn dice_values() {
        let t = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(dice_loss(&t, &t, EPS).unwrap(), 0.0);
        let disjoint = dice_loss(&[1.0, 0.0], &[0.0, 1.0], EPS).unwrap();
        assert!(close(disjoint, 1.0 - EPS / (2.0 + EPS), 1e-15));
        assert!(close(dice_loss(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0], EPS).unwrap(), 1.0 / 3.0, 1e-6));
    }

    #[test]
    fn iou_values() {
        let t = [1.0, 0.0, 0.0, 0.0];
        let p = [1.0, 1.0, 0.0, 0.0];
        assert!(close(plain_iou_loss(&t, &p, EPS).unwrap(), 0.5, 1e-6));
        assert!(close(foreground_iou(&t, &p, EPS).unwrap(), 0.5, 1e-6));
        assert!(close(background_iou(&t, &p, EPS).unwrap(), 2.0 / 3.0, 1e-6));
        assert!(close(weighted_iou_loss(&t, &p, 0.7, EPS).unwrap(), 0.45, 1e-6));
        assert!(close(plain_iou_loss(&[1.0, 0.0], &[0.0, 1.0], EPS).unwrap(), 1.0, 1e-5));
    }

    #[test]
    fn combo_names_round_trip() {
        for c in LossCombo::ALL {
            assert_eq!(c.name().parse::<LossCombo>().unwrap(), c);
        }
        assert!("bce".parse::<LossCombo>().is_err());
    }

    #[test]
    fn combination_weights() {
        let terms = LossTerms { bce: 0.693147, wiou: 0.45, iou: 0.0, dice: 0.5 };
        assert!(close(terms.combine(LossCombo::ThreeA), 0.562259, 1e-6));
        let cfg = LossConfig::default();
        assert_eq!(cfg.lambdas(), [0.4, 0.3, 0.3]);
        let b = LossConfig { combo: LossCombo::ThreeB, ..cfg };
        assert_eq!(b.lambdas(), [0.3, 0.4, 0.3]);
    }

    #[test]
    fn single_term_combos_are_exact() {
        let t = [1.0, 0.0, 1.0, 0.0];
        let p = [0.8, 0.3, 0.4, 0.1];
        let cfg = |combo| LossConfig { combo, ..LossConfig::default() };
        assert_eq!(generator_seg_loss(&t, &p, &cfg(LossCombo::BceOnly)).unwrap(), bce_loss(&t, &p, CLIP).unwrap());
        assert_eq!(generator_seg_loss(&t, &p, &cfg(LossCombo::DiceOnly)).unwrap(), dice_loss(&t, &p, EPS).unwrap());
        assert_eq!(
            generator_seg_loss(&t, &p, &cfg(LossCombo::WiouOnly)).unwrap(),
            weighted_iou_loss(&t, &p, 0.7, EPS).unwrap()
        );
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(bce_loss(&[1.0], &[0.5, 0.5], CLIP).is_err());
        assert!(dice_loss(&[], &[], EPS).is_err());
    }

    #[test]
    fn adversarial_and_discriminator_values() {
        let half = Tensor::full(Shape::new(1, 8, 8, 1), 0.5);
        assert!(close(adversarial_generator_term(&half, CLIP).unwrap(), 0.693147, 1e-6));
        assert!(close(discriminator_loss(&half, &half, CLIP).unwrap(), 0.693147, 1e-6));
        let ones = Tensor::full(Shape::new(1, 8, 8, 1), 1.0);
        let zeros = Tensor::zeros(Shape::new(1, 8, 8, 1));
        assert!(adversarial_generator_term(&ones, CLIP).unwrap() < 1e-6);
        assert!(discriminator_loss(&ones, &zeros, CLIP).unwrap() < 1e-6);
        assert!(close(discriminator_loss(&zeros, &ones, CLIP).unwrap(), -libm::log(CLIP), 1e-6));
    }

    #[test]
    fn batch_loss_averages_images() {
        let t = Tensor::from_fn(Shape::new(2, 2, 2, 1), |n, y, _, _| (n == 0 && y == 0) as u8 as f32);
        let p = Tensor::from_fn(Shape::new(2, 2, 2, 1), |n, y, x, _| 0.2 + 0.1 * (n + y + x) as f32);
        let cfg = LossConfig::default();
        let (total, grad, _) = batch_seg_loss(&t, &p, &cfg).unwrap();
        let a = generator_seg_loss(t.item_slice(0), p.item_slice(0), &cfg).unwrap();
        let b = generator_seg_loss(t.item_slice(1), p.item_slice(1), &cfg).unwrap();
        assert!(close(total, 0.5 * (a + b), 1e-12));
        let g0 = generator_seg_grad(t.item_slice(0), p.item_slice(0), &cfg).unwrap();
        for (x, y) in grad.item_slice(0).iter().zip(&g0) {
            assert!(close(*x as f64, 0.5 * y, 1e-7));
        }
    }
}
