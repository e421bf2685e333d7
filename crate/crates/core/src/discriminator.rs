//! Patch discriminator over (image, mask) pairs with a ConvCRF refinement
//! stack.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::nn::{count_parameters, Activation, ActivationKind, Backprop, Conv2d, Module, NormStats, Param};
use crate::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    /// Output widths of the five stride-2 feature convolutions.
    pub conv_filters: Vec<usize>,
    pub leaky_slope: f32,
    pub convcrf_channels: Vec<usize>,
    /// `false` replaces the ConvCRF stack with one 3×3 conv + sigmoid.
    pub use_convcrf: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            conv_filters: vec![64, 128, 256, 512, 512],
            leaky_slope: 0.2,
            convcrf_channels: vec![64, 32, 16, 1],
            use_convcrf: true,
        }
    }
}

impl DiscriminatorConfig {
    pub const FEATURE_LAYERS: usize = 5;

    pub fn validate(&self) -> Result<()> {
        if self.conv_filters.len() != Self::FEATURE_LAYERS {
            return Err(config_err!("conv_filters needs exactly {} entries", Self::FEATURE_LAYERS));
        }
        if self.conv_filters.contains(&0) || self.conv_filters.windows(2).any(|w| w[0] > w[1]) {
            return Err(config_err!("conv_filters must be positive and non-decreasing"));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(config_err!("leaky_slope must lie in [0, 1)"));
        }
        if self.convcrf_channels.is_empty() || self.convcrf_channels.contains(&0) {
            return Err(config_err!("convcrf_channels must be non-empty and positive"));
        }
        if self.convcrf_channels.last() != Some(&1) {
            return Err(config_err!("the last ConvCRF stage must output 1 channel"));
        }
        Ok(())
    }

    /// Patch-map side length for a square input of side `size`.
    pub fn patch_size(&self, size: usize) -> usize {
        (0..Self::FEATURE_LAYERS).fold(size, |s, _| s.div_ceil(2))
    }
}

/// Same-padded 3×3 convolution followed by a sigmoid.
#[derive(Clone, Debug)]
pub struct ConvCrfLayer {
    conv: Conv2d,
    act: Activation,
}

impl ConvCrfLayer {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        Self::from_conv(Conv2d::new(in_channels, out_channels, 3, 1, true, rng))
    }

    /// Wraps an existing 3×3 stride-1 convolution.
    pub fn from_conv(conv: Conv2d) -> Self {
        assert!(conv.kernel() == 3 && conv.stride() == 1, "ConvCRF layers are 3×3 stride 1");
        Self { conv, act: Activation::new(ActivationKind::Sigmoid) }
    }

    pub fn conv_mut(&mut self) -> &mut Conv2d {
        &mut self.conv
    }

    /// Checked application to a feature map.
    pub fn apply(&self, f: &Tensor) -> Result<Tensor> {
        convcrf_layer(f, &self.conv)
    }
}

/// `sigmoid(conv3×3(f))` with same padding; spatial size is preserved.
pub fn convcrf_layer(f: &Tensor, conv: &Conv2d) -> Result<Tensor> {
    if conv.kernel() != 3 || conv.stride() != 1 {
        return Err(shape_err!("ConvCRF needs a 3×3 stride-1 convolution"));
    }
    if f.shape().c != conv.in_channels() {
        return Err(shape_err!("ConvCRF weights expect {} channels, feature map {} has {}", conv.in_channels(), f.shape(), f.shape().c));
    }
    let y = conv.forward(f, NormStats::Running);
    Ok(y.map(crate::nn::sigmoid))
}

impl Module for ConvCrfLayer {
    fn forward(&self, x: &Tensor, stats: NormStats) -> Tensor {
        self.act.forward(&self.conv.forward(x, stats), stats)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let h = self.conv.forward_train(x);
        self.act.forward_train(&h)
    }

    fn backward(&mut self, grad: &Tensor, pass: Backprop) -> Tensor {
        let g = self.act.backward(grad, pass);
        self.conv.backward(&g, pass)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.conv.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit_mut(f);
    }
}

pub struct Discriminator {
    cfg: DiscriminatorConfig,
    convs: Vec<Conv2d>,
    acts: Vec<Activation>,
    /// The ConvCRF stack, or the single replacement layer.
    head: Vec<ConvCrfLayer>,
}

impl Discriminator {
    /// Image (3) plus mask (1) channels.
    pub const INPUT_CHANNELS: usize = 4;

    pub fn new<R: Rng + ?Sized>(cfg: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut convs = Vec::with_capacity(DiscriminatorConfig::FEATURE_LAYERS);
        let mut acts = Vec::with_capacity(DiscriminatorConfig::FEATURE_LAYERS);
        let mut cin = Self::INPUT_CHANNELS;
        for &f in &cfg.conv_filters {
            convs.push(Conv2d::new(cin, f, 3, 2, true, rng));
            acts.push(Activation::new(ActivationKind::LeakyRelu(cfg.leaky_slope)));
            cin = f;
        }
        let head = if cfg.use_convcrf {
            cfg.convcrf_channels
                .iter()
                .map(|&c| {
                    let layer = ConvCrfLayer::new(cin, c, rng);
                    cin = c;
                    layer
                })
                .collect()
        } else {
            vec![ConvCrfLayer::new(cin, 1, rng)]
        };
        Ok(Self { cfg, convs, acts, head })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn num_parameters(&self) -> usize {
        count_parameters(self)
    }

    pub fn head_mut(&mut self) -> &mut [ConvCrfLayer] {
        &mut self.head
    }

    /// Validated channel concatenation of an image batch and a mask batch.
    pub fn pair(image: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (si, sm) = (image.shape(), mask.shape());
        if si.c != 3 || sm.c != 1 || si.n != sm.n || si.h != sm.h || si.w != sm.w {
            return Err(shape_err!("discriminator needs (N,H,W,3) images and matching (N,H,W,1) masks, got {si} and {sm}"));
        }
        if image.data().iter().chain(mask.data()).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(crate::Error::Input("discriminator inputs must lie in [0, 1]".into()));
        }
        Tensor::concat_channels(image, mask)
    }

    /// Patch-wise real probabilities, `(N, H/32, W/32, 1)`.
    pub fn forward(&self, image: &Tensor, mask: &Tensor) -> Result<Tensor> {
        Ok(Module::forward(self, &Self::pair(image, mask)?, NormStats::Running))
    }

    /// Training-mode forward that caches for [`Discriminator::backward_to_mask`].
    pub fn forward_train_pair(&mut self, image: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let x = Self::pair(image, mask)?;
        Ok(self.forward_train(&x))
    }

    /// Backward from the patch-map gradient. Returns the gradient with respect
    /// to the mask channel when `mask_grad` is set; the image gradient is never
    /// needed and is skipped where that saves work.
    pub fn backward_to_mask(&mut self, grad: &Tensor, pass: Backprop, mask_grad: bool) -> Option<Tensor> {
        let mut g = grad.clone();
        for layer in self.head.iter_mut().rev() {
            g = layer.backward(&g, pass);
        }
        for i in (0..self.convs.len()).rev() {
            g = self.acts[i].backward(&g, pass);
            if i == 0 {
                return self.convs[0]
                    .backward_parts(&g, pass.params, mask_grad)
                    .map(|d| d.split_channels(3).1);
            }
            g = self.convs[i].backward(&g, pass);
        }
        unreachable!("at least one feature layer")
    }
}

impl Module for Discriminator {
    fn forward(&self, x: &Tensor, stats: NormStats) -> Tensor {
        let mut h = x.clone();
        for (conv, act) in self.convs.iter().zip(&self.acts) {
            h = act.forward(&conv.forward(&h, stats), stats);
        }
        for layer in &self.head {
            h = layer.forward(&h, stats);
        }
        h
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for (conv, act) in self.convs.iter_mut().zip(&mut self.acts) {
            h = conv.forward_train(&h);
            h = act.forward_train(&h);
        }
        for layer in &mut self.head {
            h = layer.forward_train(&h);
        }
        h
    }

    fn backward(&mut self, grad: &Tensor, pass: Backprop) -> Tensor {
        let mut g = grad.clone();
        for layer in self.head.iter_mut().rev() {
            g = layer.backward(&g, pass);
        }
        for (conv, act) in self.convs.iter_mut().zip(&mut self.acts).rev() {
            g = act.backward(&g, pass);
            g = conv.backward(&g, pass);
        }
        g
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.convs.iter().for_each(|c| c.visit(f));
        self.head.iter().for_each(|l| l.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.convs.iter_mut().for_each(|c| c.visit_mut(f));
        self.head.iter_mut().for_each(|l| l.visit_mut(f));
    }
}
