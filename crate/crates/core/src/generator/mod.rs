//! Segmentation generator: inverted-residual encoder with four skip taps,
//! four (bilinear ×2 → concat → ReSE) decoder stages, a last ×2 upsample and
//! a 1×1 sigmoid head.

mod encoder;
mod rese;
mod se;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use encoder::InvertedResidual;
pub use rese::{PlainBlock, ReSeBlock, ReSeSpec};
pub use se::{squeeze_width, SqueezeExcite};

use crate::error::{config_err, shape_err, Result};
use crate::nn::{
    count_parameters, Activation, ActivationKind, Backprop, BatchNorm, Conv2d, Module, NormConfig, NormStats, Param,
    Sequential, Upsample,
};
use crate::Tensor;
use encoder::{Encoder, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub input_size: usize,
    pub stem_width: usize,
    pub stage_widths: Vec<usize>,
    pub stage_repeats: Vec<usize>,
    pub stage_strides: Vec<usize>,
    /// Expansion of every stage but the first, which keeps expansion 1.
    pub expansion_factor: usize,
    pub skip_tap_strides: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub se_ratio: usize,
    pub use_se: bool,
    /// `false` swaps every ReSE block for a plain conv-BN-ReLU block.
    pub use_rese: bool,
    pub norm: NormConfig,
    /// Inclusive `[min, max]` trainable parameter count enforced at
    /// construction; empty disables the check.
    pub parameter_budget: Vec<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            input_size: crate::INPUT_SIZE,
            stem_width: 16,
            stage_widths: vec![8, 12, 16, 32, 48, 80],
            stage_repeats: vec![1, 2, 3, 4, 3, 3],
            stage_strides: vec![1, 2, 2, 2, 1, 2],
            expansion_factor: 3,
            skip_tap_strides: vec![2, 4, 8, 16],
            decoder_widths: vec![576, 192, 64, 32],
            se_ratio: 8,
            use_se: true,
            use_rese: true,
            norm: NormConfig::default(),
            parameter_budget: vec![900_000, 1_200_000],
        }
    }
}

impl GeneratorConfig {
    pub const STEM_STRIDE: usize = 2;

    /// Cumulative output stride after each stage.
    pub fn stage_output_strides(&self) -> Vec<usize> {
        self.stage_strides
            .iter()
            .scan(Self::STEM_STRIDE, |acc, &s| {
                *acc *= s;
                Some(*acc)
            })
            .collect()
    }

    pub fn bottleneck_stride(&self) -> usize {
        self.stage_output_strides().last().copied().unwrap_or(Self::STEM_STRIDE)
    }

    /// Index of the stage each skip tap reads (the last stage at that stride).
    pub fn tap_stages(&self) -> Result<Vec<usize>> {
        let strides = self.stage_output_strides();
        self.skip_tap_strides
            .iter()
            .map(|&t| {
                strides
                    .iter()
                    .rposition(|&s| s == t)
                    .ok_or_else(|| config_err!("no encoder stage ends at stride {t}"))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stage_widths.len();
        if n == 0 || self.stage_repeats.len() != n || self.stage_strides.len() != n {
            return Err(config_err!(
                "stage_widths, stage_repeats and stage_strides must be non-empty and of equal length"
            ));
        }
        if self.stage_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0)
            || self.stem_width == 0
            || self.stage_repeats.contains(&0)
        {
            return Err(config_err!("widths and repeats must be positive"));
        }
        if self.stage_strides.iter().any(|s| !matches!(s, 1 | 2)) {
            return Err(config_err!("stage strides must be 1 or 2"));
        }
        if self.expansion_factor == 0 || self.se_ratio == 0 {
            return Err(config_err!("expansion_factor and se_ratio must be positive"));
        }
        let taps = &self.skip_tap_strides;
        if taps.len() != 4 || self.decoder_widths.len() != 4 {
            return Err(config_err!("exactly 4 skip taps and 4 decoder widths are required"));
        }
        if taps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err!("skip tap strides must be strictly increasing"));
        }
        if taps.iter().any(|&t| self.input_size % t != 0) {
            return Err(config_err!("every skip tap stride must divide input_size {}", self.input_size));
        }
        // each decoder stage upsamples by 2, and a last ×2 restores full size
        let bottleneck = self.bottleneck_stride();
        if taps[0] != 2 || taps.windows(2).any(|w| w[1] != 2 * w[0]) || bottleneck != 2 * taps[3] {
            return Err(config_err!(
                "taps must sit at strides 2, 4, 8, 16 relative to a stride-32 bottleneck (got taps {:?}, bottleneck {})",
                taps,
                bottleneck
            ));
        }
        if self.input_size % bottleneck != 0 {
            return Err(config_err!("input_size {} is not a multiple of stride {bottleneck}", self.input_size));
        }
        if !(self.parameter_budget.is_empty() || self.parameter_budget.len() == 2) {
            return Err(config_err!("parameter_budget must be empty or [min, max]"));
        }
        self.tap_stages().map(|_| ())
    }
}

/// Encoder output: skip taps from shallow to deep, then the bottleneck.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub taps: Vec<Tensor>,
    pub bottleneck: Tensor,
}

struct DecoderStage {
    up: Upsample,
    block: Box<dyn Module + Send + Sync>,
    prev_channels: usize,
}

pub struct Generator {
    cfg: GeneratorConfig,
    encoder: Encoder,
    decoder: Vec<DecoderStage>,
    final_up: Upsample,
    head: Conv2d,
    head_act: Activation,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(cfg: GeneratorConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let norm = cfg.norm;

        let mut stem = Sequential::new();
        stem.push(Conv2d::new(3, cfg.stem_width, 3, GeneratorConfig::STEM_STRIDE, false, rng));
        stem.push(BatchNorm::new(cfg.stem_width, norm));
        stem.push(Activation::new(ActivationKind::Relu6));

        let mut stages = Vec::with_capacity(cfg.stage_widths.len());
        let mut channels = cfg.stem_width;
        for (i, ((&width, &repeats), &stride)) in
            cfg.stage_widths.iter().zip(&cfg.stage_repeats).zip(&cfg.stage_strides).enumerate()
        {
            let expansion = if i == 0 { 1 } else { cfg.expansion_factor };
            let mut blocks = Sequential::new();
            for r in 0..repeats {
                let s = if r == 0 { stride } else { 1 };
                blocks.push(InvertedResidual::new(channels, width, expansion, s, norm, rng));
                channels = width;
            }
            stages.push(Stage { blocks, width });
        }
        let tap_stages = cfg.tap_stages()?;
        let tap_widths: Vec<usize> = tap_stages.iter().map(|&i| stages[i].width).collect();
        let encoder = Encoder { stem, stages, tap_stages };

        let mut decoder = Vec::with_capacity(4);
        let mut prev = channels;
        for (stage, &width) in cfg.decoder_widths.iter().enumerate() {
            let skip = tap_widths[3 - stage];
            let block: Box<dyn Module + Send + Sync> = if cfg.use_rese {
                let spec = ReSeSpec {
                    in_channels: prev + skip,
                    out_channels: width,
                    use_se: cfg.use_se,
                    se_ratio: cfg.se_ratio,
                    norm,
                };
                Box::new(ReSeBlock::new(spec, rng))
            } else {
                Box::new(PlainBlock::new(prev + skip, width, norm, rng))
            };
            decoder.push(DecoderStage { up: Upsample::new(2), block, prev_channels: prev });
            prev = width;
        }

        let generator = Self {
            encoder,
            decoder,
            final_up: Upsample::new(2),
            head: Conv2d::new(prev, 1, 1, 1, true, rng),
            head_act: Activation::new(ActivationKind::Sigmoid),
            cfg,
        };
        if let [lo, hi] = generator.cfg.parameter_budget[..] {
            let n = generator.num_parameters();
            if n < lo || n > hi {
                return Err(config_err!("generator has {n} trainable parameters, outside the budget [{lo}, {hi}]"));
            }
        }
        Ok(generator)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn num_parameters(&self) -> usize {
        count_parameters(self)
    }

    /// The final 1×1 projection to mask logits.
    pub fn head_mut(&mut self) -> &mut Conv2d {
        &mut self.head
    }

    pub fn check_image(&self, image: &Tensor) -> Result<()> {
        let s = image.shape();
        let size = self.cfg.input_size;
        if s.n == 0 || s.h != size || s.w != size || s.c != 3 {
            return Err(shape_err!("generator expects (N, {size}, {size}, 3) images, got {s}"));
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(crate::Error::Input("image values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn encode(&self, image: &Tensor, stats: NormStats) -> Result<Encoded> {
        self.check_image(image)?;
        let (taps, bottleneck) = self.encoder.forward(image, stats);
        Ok(Encoded { taps, bottleneck })
    }

    pub fn decode(&self, enc: &Encoded, stats: NormStats) -> Result<Tensor> {
        if enc.taps.len() != 4 {
            return Err(shape_err!("decoder needs 4 skip taps, got {}", enc.taps.len()));
        }
        let mut h = enc.bottleneck.clone();
        for (i, stage) in self.decoder.iter().enumerate() {
            let tap = &enc.taps[3 - i];
            let hs = h.shape();
            if hs.c != stage.prev_channels || tap.shape().n != hs.n || tap.shape().h != 2 * hs.h || tap.shape().w != 2 * hs.w {
                return Err(shape_err!("decoder stage {i}: cannot join {} with skip {}", hs, tap.shape()));
            }
            let cat = Tensor::concat_channels(&stage.up.forward(&h, stats), tap)?;
            if cat.shape().c != stage.prev_channels + tap.shape().c || !self.stage_accepts(i, cat.shape().c) {
                return Err(shape_err!("decoder stage {i}: unexpected skip width {}", tap.shape().c));
            }
            h = stage.block.forward(&cat, stats);
        }
        let h = self.final_up.forward(&h, stats);
        Ok(self.head_act.forward(&self.head.forward(&h, stats), stats))
    }

    fn stage_accepts(&self, i: usize, channels: usize) -> bool {
        let widths = self.tap_widths();
        self.decoder[i].prev_channels + widths[3 - i] == channels
    }

    fn tap_widths(&self) -> Vec<usize> {
        self.encoder.tap_stages.iter().map(|&i| self.encoder.stages[i].width).collect()
    }

    /// Mask probabilities using running normalization statistics.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor> {
        self.forward_with(image, NormStats::Running)
    }

    pub fn forward_with(&self, image: &Tensor, stats: NormStats) -> Result<Tensor> {
        let enc = self.encode(image, stats)?;
        self.decode(&enc, stats)
    }

    /// Channel-mean of the bottleneck activations, bilinearly resized to the
    /// input resolution.
    pub fn bottleneck_heatmap(&self, image: &Tensor) -> Result<Tensor> {
        let enc = self.encode(image, NormStats::Running)?;
        let size = self.cfg.input_size;
        Ok(crate::nn::resize_bilinear(&enc.bottleneck.channel_mean(), size, size))
    }
}

impl Module for Generator {
    fn forward(&self, x: &Tensor, stats: NormStats) -> Tensor {
        self.forward_with(x, stats).expect("generator input")
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let (taps, mut h) = self.encoder.forward_train(x);
        for (i, stage) in self.decoder.iter_mut().enumerate() {
            let up = stage.up.forward_train(&h);
            let cat = Tensor::concat_channels(&up, &taps[3 - i]).expect("decoder shapes");
            h = stage.block.forward_train(&cat);
        }
        let h = self.final_up.forward_train(&h);
        let logits = self.head.forward_train(&h);
        self.head_act.forward_train(&logits)
    }

    /// The returned image gradient is all zeros; the stem never needs it.
    fn backward(&mut self, grad: &Tensor, pass: Backprop) -> Tensor {
        let g = self.head_act.backward(grad, pass);
        let g = self.head.backward(&g, pass);
        let mut g = self.final_up.backward(&g, pass);
        let mut tap_grads: Vec<Option<Tensor>> = vec![None; 4];
        for i in (0..self.decoder.len()).rev() {
            let stage = &mut self.decoder[i];
            let g_cat = stage.block.backward(&g, pass);
            let (g_up, g_tap) = g_cat.split_channels(stage.prev_channels);
            tap_grads[3 - i] = Some(g_tap);
            g = stage.up.backward(&g_up, pass);
        }
        let tap_grads: Vec<Tensor> = tap_grads.into_iter().map(|t| t.expect("one gradient per tap")).collect();
        self.encoder.backward(&tap_grads, &g, pass);
        Tensor::zeros(grad.shape().with_channels(3))
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.encoder.visit(f);
        for stage in &self.decoder {
            stage.block.visit(f);
        }
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.encoder.visit_mut(f);
        for stage in &mut self.decoder {
            stage.block.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}
