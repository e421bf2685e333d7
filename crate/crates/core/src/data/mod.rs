//! In-memory samples, augmentation and synthetic data.

mod augment;
mod synthetic;

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{apply, AugmentConfig, AugmentParams};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::error::{shape_err, Result};
use crate::{Error, Tensor};

/// One preprocessed (image, mask) pair, each a batch of one.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub id: String,
    /// `(1, H, W, 3)` in `[0, 1]`.
    pub image: Tensor,
    /// `(1, H, W, 1)` with values in `{0, 1}`.
    pub mask: Tensor,
}

impl ImageSample {
    pub fn new(id: impl Into<String>, image: Tensor, mask: Tensor) -> Result<Self> {
        let s = Self { id: id.into(), image, mask };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (si, sm) = (self.image.shape(), self.mask.shape());
        if si.n != 1 || si.c != 3 || sm != si.with_channels(1) {
            return Err(shape_err!("sample `{}` needs a (1,H,W,3) image and (1,H,W,1) mask, got {si} and {sm}", self.id));
        }
        if self.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input(alloc::format!("sample `{}` has image values outside [0, 1]", self.id)));
        }
        if self.mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Input(alloc::format!("sample `{}` has a non-binary mask", self.id)));
        }
        Ok(())
    }

    pub fn size(&self) -> (usize, usize) {
        (self.image.shape().h, self.image.shape().w)
    }
}

/// Stacks samples into `(images, masks)` batches.
pub fn collate(samples: &[&ImageSample]) -> Result<(Tensor, Tensor)> {
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<&Tensor> = samples.iter().map(|s| &s.mask).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

/// Independent random stream for `(seed, epoch, index)`; parallel or
/// reordered consumers see the same draws.
pub fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}
