//! Core of a lightweight adversarial polyp segmentation model.
//!
//! Everything in this crate is pure computation over in-memory buffers and
//! builds without `std` (only `alloc` is required). File formats, image
//! decoding and the command line live in the `polyseg` companion crate.
//!
//! Layout:
//!
//! - [`tensor`]: NHWC feature maps.
//! - [`nn`]: the small backprop engine (convolutions, normalization,
//!   resampling, activations) the networks are built from.
//! - [`generator`]: halved-width inverted-residual encoder, ReSE blocks and
//!   the skip-connected decoder.
//! - [`discriminator`]: patch discriminator with the ConvCRF refinement stack.
//! - [`losses`], [`metrics`], [`data`], [`optim`], [`training`].
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
mod gemm;

pub mod data;
pub mod discriminator;
pub mod generator;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};

/// Spatial size every network in this crate operates at.
pub const INPUT_SIZE: usize = 256;
