//! Halved-width inverted-residual backbone.

use alloc::vec::Vec;

use rand::Rng;

use crate::nn::{
    Activation, ActivationKind, Backprop, BatchNorm, Conv2d, DepthwiseConv2d, Module, NormConfig, NormStats, Param,
    Sequential,
};
use crate::Tensor;

/// Optional 1×1 expansion, 3×3 depthwise, linear 1×1 projection; identity
/// skip when stride is 1 and the width is unchanged.
pub struct InvertedResidual {
    body: Sequential,
    residual: bool,
}

impl InvertedResidual {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        expansion: usize,
        stride: usize,
        norm: NormConfig,
        rng: &mut R,
    ) -> Self {
        let hidden = in_channels * expansion;
        let mut body = Sequential::new();
        if expansion != 1 {
            body.push(Conv2d::new(in_channels, hidden, 1, 1, false, rng));
            body.push(BatchNorm::new(hidden, norm));
            body.push(Activation::new(ActivationKind::Relu6));
        }
        body.push(DepthwiseConv2d::new(hidden, stride, rng));
        body.push(BatchNorm::new(hidden, norm));
        body.push(Activation::new(ActivationKind::Relu6));
        body.push(Conv2d::new(hidden, out_channels, 1, 1, false, rng));
        body.push(BatchNorm::new(out_channels, norm));
        Self { body, residual: stride == 1 && in_channels == out_channels }
    }
}

impl Module for InvertedResidual {
    fn forward(&self, x: &Tensor, stats: NormStats) -> Tensor {
        let mut y = self.body.forward(x, stats);
        if self.residual {
            y.add_assign(x);
        }
        y
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut y = self.body.forward_train(x);
        if self.residual {
            y.add_assign(x);
        }
        y
    }

    fn backward(&mut self, grad: &Tensor, pass: Backprop) -> Tensor {
        let mut dx = self.body.backward(grad, pass);
        if self.residual {
            dx.add_assign(grad);
        }
        dx
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.body.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.body.visit_mut(f);
    }
}

/// One backbone stage: a run of inverted residual blocks, the first of which
/// carries the stage stride.
pub(crate) struct Stage {
    pub blocks: Sequential,
    pub width: usize,
}

pub(crate) struct Encoder {
    pub stem: Sequential,
    pub stages: Vec<Stage>,
    /// For each skip tap, the index of the stage whose output it reads.
    pub tap_stages: Vec<usize>,
}

impl Encoder {
    /// Stage outputs needed by the decoder: the taps, then the bottleneck.
    pub fn forward(&self, image: &Tensor, stats: NormStats) -> (Vec<Tensor>, Tensor) {
        let mut h = self.stem.forward(image, stats);
        let mut taps = Vec::with_capacity(self.tap_stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            h = stage.blocks.forward(&h, stats);
            if self.tap_stages.contains(&i) {
                taps.push(h.clone());
            }
        }
        (taps, h)
    }

    pub fn forward_train(&mut self, image: &Tensor) -> (Vec<Tensor>, Tensor) {
        let mut h = self.stem.forward_train(image);
        let mut taps = Vec::with_capacity(self.tap_stages.len());
        for (i, stage) in self.stages.iter_mut().enumerate() {
            h = stage.blocks.forward_train(&h);
            if self.tap_stages.contains(&i) {
                taps.push(h.clone());
            }
        }
        (taps, h)
    }

    /// `tap_grads` in the same order as the taps returned by `forward_train`.
    pub fn backward(&mut self, tap_grads: &[Tensor], bottleneck_grad: &Tensor, pass: Backprop) {
        let mut g = bottleneck_grad.clone();
        for i in (0..self.stages.len()).rev() {
            if let Some(t) = self.tap_stages.iter().position(|&s| s == i) {
                g.add_assign(&tap_grads[t]);
            }
            g = self.stages[i].blocks.backward(&g, pass);
        }
        self.stem.backward(&g, pass);
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.stem.visit(f);
        self.stages.iter().for_each(|s| s.blocks.visit(f));
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stem.visit_mut(f);
        self.stages.iter_mut().for_each(|s| s.blocks.visit_mut(f));
    }
}
