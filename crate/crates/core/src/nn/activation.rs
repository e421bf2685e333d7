use super::{Backprop, Module, NormStats, Param};
use crate::Tensor;

/// Numerically stable logistic function. Outputs that would be subnormal
/// are returned as 0.
#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::expf(-x))
    } else {
        let e = libm::expf(x);
        flush_subnormal(e / (1.0 + e))
    }
}

/// Zero for magnitudes below the smallest normal `f32`.
#[inline]
pub fn flush_subnormal(x: f32) -> f32 {
    if x.abs() < f32::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Relu,
    Relu6,
    LeakyRelu(f32),
    Sigmoid,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Relu6 => x.clamp(0.0, 6.0),
            ActivationKind::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            ActivationKind::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, y: f32) -> f32 {
        match self {
            ActivationKind::Relu => (y > 0.0) as u8 as f32,
            ActivationKind::Relu6 => (y > 0.0 && y < 6.0) as u8 as f32,
            ActivationKind::LeakyRelu(slope) => {
                if y > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            ActivationKind::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Elementwise activation layer; caches its output.
#[derive(Clone, Debug)]
pub struct Activation {
    kind: ActivationKind,
    output: Option<Tensor>,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Self { kind, output: None }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }
}

impl Module for Activation {
    fn forward(&self, x: &Tensor, _stats: NormStats) -> Tensor {
        let k = self.kind;
        x.map(|v| k.apply(v))
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let y = self.forward(x, NormStats::Batch);
        self.output = Some(y.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor, _pass: Backprop) -> Tensor {
        let y = self.output.take().expect("Activation::backward without forward_train");
        let k = self.kind;
        let mut g = grad.clone();
        for (d, &o) in g.data_mut().iter_mut().zip(y.data()) {
            *d = flush_subnormal(*d * k.derivative_from_output(o));
        }
        g
    }

    fn visit(&self, _f: &mut dyn FnMut(&Param)) {}

    fn visit_mut(&mut self, _f: &mut dyn FnMut(&mut Param)) {}
}
