//! Residual squeeze-and-excitation (ReSE) block and its plain replacement.

use rand::Rng;

use super::se::SqueezeExcite;
use crate::error::{shape_err, Result};
use crate::nn::{
    Activation, ActivationKind, Backprop, BatchNorm, Conv2d, Module, NormConfig, NormStats, Param,
};
use crate::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReSeSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub use_se: bool,
    pub se_ratio: usize,
    pub norm: NormConfig,
}

impl ReSeSpec {
    /// Channel reduction of the 1×1 bottleneck.
    pub const BOTTLENECK_FACTOR: usize = 4;

    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self { in_channels, out_channels, use_se: true, se_ratio: 8, norm: NormConfig::default() }
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.in_channels.div_ceil(Self::BOTTLENECK_FACTOR).max(1)
    }

    pub fn has_projection(&self) -> bool {
        self.in_channels != self.out_channels
    }
}

/// `SE(ReLU(shortcut(x) + BN(conv3×3(ReLU(BN(conv1×1(x)))))))`, with the
/// shortcut a 1×1 conv + BN when the channel count changes and the identity
/// otherwise.
#[derive(Clone, Debug)]
pub struct ReSeBlock {
    spec: ReSeSpec,
    reduce: Conv2d,
    reduce_bn: BatchNorm,
    reduce_act: Activation,
    spatial: Conv2d,
    spatial_bn: BatchNorm,
    shortcut: Option<(Conv2d, BatchNorm)>,
    out_act: Activation,
    se: Option<SqueezeExcite>,
}

impl ReSeBlock {
    pub fn new<R: Rng + ?Sized>(spec: ReSeSpec, rng: &mut R) -> Self {
        let b = spec.bottleneck_channels();
        let (cin, cout) = (spec.in_channels, spec.out_channels);
        Self {
            spec,
            reduce: Conv2d::new(cin, b, 1, 1, false, rng),
            reduce_bn: BatchNorm::new(b, spec.norm),
            reduce_act: Activation::new(ActivationKind::Relu),
            spatial: Conv2d::new(b, cout, 3, 1, false, rng),
            spatial_bn: BatchNorm::new(cout, spec.norm),
            shortcut: spec
                .has_projection()
                .then(|| (Conv2d::new(cin, cout, 1, 1, false, rng), BatchNorm::new(cout, spec.norm))),
            out_act: Activation::new(ActivationKind::Relu),
            se: spec.use_se.then(|| SqueezeExcite::new(cout, spec.se_ratio, rng)),
        }
    }

    pub fn spec(&self) -> &ReSeSpec {
        &self.spec
    }

    pub fn spatial_conv_mut(&mut self) -> &mut Conv2d {
        &mut self.spatial
    }

    pub fn se(&self) -> Option<&SqueezeExcite> {
        self.se.as_ref()
    }

    pub fn se_mut(&mut self) -> Option<&mut SqueezeExcite> {
        self.se.as_mut()
    }

    /// Returns the post-ReLU residual sum and the block output (equal when
    /// SE is disabled).
    pub fn forward_parts(&self, x: &Tensor, stats: NormStats) -> Result<(Tensor, Tensor)> {
        if x.shape().c != self.spec.in_channels {
            return Err(shape_err!(
                "ReSE block expects {} input channels, got {}",
                self.spec.in_channels,
                x.shape().c
            ));
        }
        let b = self.reduce_act.forward(&self.reduce_bn.forward(&self.reduce.forward(x, stats), stats), stats);
        let mut sum = self.spatial_bn.forward(&self.spatial.forward(&b, stats), stats);
        match &self.shortcut {
            Some((conv, bn)) => sum.add_assign(&bn.forward(&conv.forward(x, stats), stats)),
            None => sum.add_assign(x),
        }
        let residual = self.out_act.forward(&sum, stats);
        let out = match &self.se {
            Some(se) => se.forward(&residual, stats),
            None => residual.clone(),
        };
        Ok((residual, out))
    }
}

impl Module for ReSeBlock {
    fn forward(&self, x: &Tensor, stats: NormStats) -> Tensor {
        self.forward_parts(x, stats).expect("ReSE input channels").1
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let b = self.reduce.forward_train(x);
        let b = self.reduce_bn.forward_train(&b);
        let b = self.reduce_act.forward_train(&b);
        let s = self.spatial.forward_train(&b);
        let mut sum = self.spatial_bn.forward_train(&s);
        match &mut self.shortcut {
            Some((conv, bn)) => {
                let p = conv.forward_train(x);
                sum.add_assign(&bn.forward_train(&p));
            }
            None => sum.add_assign(x),
        }
        let r = self.out_act.forward_train(&sum);
        match &mut self.se {
            Some(se) => se.forward_train(&r),
            None => r,
        }
    }

    fn backward(&mut self, grad: &Tensor, pass: Backprop) -> Tensor {
        let g = match &mut self.se {
            Some(se) => se.backward(grad, pass),
            None => grad.clone(),
        };
        let g_sum = self.out_act.backward(&g, pass);
        let g = self.spatial_bn.backward(&g_sum, pass);
        let g = self.spatial.backward(&g, pass);
        let g = self.reduce_act.backward(&g, pass);
        let g = self.reduce_bn.backward(&g, pass);
        let mut dx = self.reduce.backward(&g, pass);
        match &mut self.shortcut {
            Some((conv, bn)) => {
                let g = bn.backward(&g_sum, pass);
                dx.add_assign(&conv.backward(&g, pass));
            }
            None => dx.add_assign(&g_sum),
        }
        dx
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.reduce.visit(f);
        self.reduce_bn.visit(f);
        self.spatial.visit(f);
        self.spatial_bn.visit(f);
        if let Some((conv, bn)) = &self.shortcut {
            conv.visit(f);
            bn.visit(f);
        }
        if let Some(se) = &self.se {
            se.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.reduce.visit_mut(f);
        self.reduce_bn.visit_mut(f);
        self.spatial.visit_mut(f);
        self.spatial_bn.visit_mut(f);
        if let Some((conv, bn)) = &mut self.shortcut {
            conv.visit_mut(f);
            bn.visit_mut(f);
        }
        if let Some(se) = &mut self.se {
            se.visit_mut(f);
        }
    }
}

/// 3×3 conv → BN → ReLU; stands in for a ReSE block in the ablations.
#[derive(Clone, Debug)]
pub struct PlainBlock {
    conv: Conv2d,
    bn: BatchNorm,
    act: Activation,
}

impl PlainBlock {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, norm: NormConfig, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(in_channels, out_channels, 3, 1, false, rng),
            bn: BatchNorm::new(out_channels, norm),
            act: Activation::new(ActivationKind::Relu),
        }
    }
}

impl Module for PlainBlock {
    fn forward(&self, x: &Tensor, stats: NormStats) -> Tensor {
        self.act.forward(&self.bn.forward(&self.conv.forward(x, stats), stats), stats)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let h = self.conv.forward_train(x);
        let h = self.bn.forward_train(&h);
        self.act.forward_train(&h)
    }

    fn backward(&mut self, grad: &Tensor, pass: Backprop) -> Tensor {
        let g = self.act.backward(grad, pass);
        let g = self.bn.backward(&g, pass);
        self.conv.backward(&g, pass)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.conv.visit(f);
        self.bn.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }
}
