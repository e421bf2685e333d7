//! A deliberately small backprop engine.
//!
//! Layers own their parameters and cache whatever their backward pass needs
//! during [`Module::forward_train`]. [`Module::forward`] is the pure path: it
//! takes `&self`, caches nothing and is safe to call from many threads at
//! once. Gradients accumulate into [`Param::grad`] until [`zero_grad`].

mod activation;
mod conv;
mod norm;
mod resample;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::Tensor;

pub use activation::{flush_subnormal, sigmoid, Activation, ActivationKind};
pub use conv::{Conv2d, DepthwiseConv2d};
pub use norm::{BatchNorm, NormConfig};
pub use resample::{resize_bilinear, resize_bilinear_backward, Upsample};

/// Which statistics batch normalization uses on the pure forward path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormStats {
    /// Running averages collected during training (inference mode).
    Running,
    /// Statistics of the batch being evaluated, as in training, without
    /// touching the running averages.
    Batch,
}

/// What a backward pass should produce besides the input gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Backprop {
    /// Accumulate parameter gradients. Off when a network is frozen and only
    /// routes gradient through to its input.
    pub params: bool,
}

impl Backprop {
    pub const FULL: Backprop = Backprop { params: true };
    pub const INPUT_ONLY: Backprop = Backprop { params: false };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Scale,
    Shift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

/// A named-by-position parameter or buffer. Buffers (running statistics)
/// carry an empty gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub kind: ParamKind,
    pub dims: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(kind: ParamKind, dims: &[usize], value: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), value.len());
        let grad = if kind.is_trainable() { vec![0.0; value.len()] } else { Vec::new() };
        Self { kind, dims: dims.to_vec(), value, grad }
    }

    pub fn zeros(kind: ParamKind, dims: &[usize]) -> Self {
        Self::new(kind, dims, vec![0.0; dims.iter().product()])
    }

    pub fn filled(kind: ParamKind, dims: &[usize], v: f32) -> Self {
        Self::new(kind, dims, vec![v; dims.iter().product()])
    }

    /// He-style fan-in normal initialization, `N(0, 2 / fan_in)`.
    pub fn he_normal<R: Rng + ?Sized>(dims: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let std = libm::sqrtf(2.0 / fan_in.max(1) as f32);
        let normal = Normal::new(0.0f32, std).expect("finite std");
        let len = dims.iter().product();
        let value = (0..len).map(|_| normal.sample(rng)).collect();
        Self::new(ParamKind::Weight, dims, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn is_trainable(&self) -> bool {
        self.kind.is_trainable()
    }
}

/// Common surface of every layer and block.
pub trait Module {
    fn forward(&self, x: &Tensor, stats: NormStats) -> Tensor;

    fn forward_train(&mut self, x: &Tensor) -> Tensor;

    /// Consumes the cache left by the last `forward_train` and returns the
    /// gradient with respect to that call's input.
    fn backward(&mut self, grad: &Tensor, pass: Backprop) -> Tensor;

    fn visit(&self, f: &mut dyn FnMut(&Param));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param));
}

/// Exact number of trainable scalars.
pub fn count_parameters(m: &dyn Module) -> usize {
    let mut total = 0;
    m.visit(&mut |p| {
        if p.is_trainable() {
            total += p.len();
        }
    });
    total
}

pub fn zero_grad(m: &mut dyn Module) {
    m.visit_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.0));
}

/// Every parameter and buffer value, in visiting order.
pub fn export_values(m: &dyn Module) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    m.visit(&mut |p| out.push(p.value.clone()));
    out
}

/// Overwrite parameters and buffers from [`export_values`] output.
pub fn import_values(m: &mut dyn Module, values: &[Vec<f32>]) -> crate::Result<()> {
    let mut expected = Vec::new();
    m.visit(&mut |p| expected.push(p.len()));
    if expected.len() != values.len() {
        return Err(crate::Error::Checkpoint(alloc::format!(
            "expected {} parameter tensors, found {}",
            expected.len(),
            values.len()
        )));
    }
    if let Some(i) = expected.iter().zip(values).position(|(&n, v)| n != v.len()) {
        return Err(crate::Error::Checkpoint(alloc::format!(
            "parameter tensor {} holds {} values, model expects {}",
            i,
            values[i].len(),
            expected[i]
        )));
    }
    let mut i = 0;
    m.visit_mut(&mut |p| {
        p.value.copy_from_slice(&values[i]);
        i += 1;
    });
    Ok(())
}

/// An ordered chain of boxed modules.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<alloc::boxed::Box<dyn Module + Send + Sync>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, m: impl Module + Send + Sync + 'static) {
        self.layers.push(alloc::boxed::Box::new(m));
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Module for Sequential {
    fn forward(&self, x: &Tensor, stats: NormStats) -> Tensor {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h, stats);
        }
        h
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward_train(&h);
        }
        h
    }

    fn backward(&mut self, grad: &Tensor, pass: Backprop) -> Tensor {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g, pass);
        }
        g
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.layers.iter().for_each(|l| l.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }
}
