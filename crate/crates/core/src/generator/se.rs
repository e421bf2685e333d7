//! Squeeze-and-excitation channel recalibration.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::{sigmoid, Backprop, Module, NormStats, Param, ParamKind};
use crate::Tensor;

/// Width of the excitation bottleneck for `channels` inputs at reduction
/// `ratio`. Never below one.
pub fn squeeze_width(channels: usize, ratio: usize) -> usize {
    (channels / ratio.max(1)).max(1)
}

/// Global average pool, `FC → ReLU → FC → sigmoid`, then channel-wise
/// scaling of the input by the resulting weights.
///
/// `reduce` is stored `[channels, hidden]` and `expand` `[hidden, channels]`.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    channels: usize,
    hidden: usize,
    reduce: Param,
    reduce_bias: Param,
    expand: Param,
    expand_bias: Param,
    cache: Option<Cache>,
}

#[derive(Clone, Debug)]
struct Cache {
    input: Tensor,
    pooled: Vec<f32>,
    hidden: Vec<f32>,
    scale: Vec<f32>,
}

impl SqueezeExcite {
    pub fn new<R: Rng + ?Sized>(channels: usize, ratio: usize, rng: &mut R) -> Self {
        let hidden = squeeze_width(channels, ratio);
        Self {
            channels,
            hidden,
            reduce: Param::he_normal(&[channels, hidden], channels, rng),
            reduce_bias: Param::zeros(ParamKind::Bias, &[hidden]),
            expand: Param::he_normal(&[hidden, channels], hidden, rng),
            expand_bias: Param::zeros(ParamKind::Bias, &[channels]),
            cache: None,
        }
    }

    /// All weights and biases zero.
    pub fn zeros(channels: usize, ratio: usize) -> Self {
        let hidden = squeeze_width(channels, ratio);
        Self {
            channels,
            hidden,
            reduce: Param::zeros(ParamKind::Weight, &[channels, hidden]),
            reduce_bias: Param::zeros(ParamKind::Bias, &[hidden]),
            expand: Param::zeros(ParamKind::Weight, &[hidden, channels]),
            expand_bias: Param::zeros(ParamKind::Bias, &[channels]),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `(reduce, reduce_bias, expand, expand_bias)`.
    pub fn weights(&self) -> (&Param, &Param, &Param, &Param) {
        (&self.reduce, &self.reduce_bias, &self.expand, &self.expand_bias)
    }

    pub fn weights_mut(&mut self) -> (&mut Param, &mut Param, &mut Param, &mut Param) {
        (&mut self.reduce, &mut self.reduce_bias, &mut self.expand, &mut self.expand_bias)
    }

    /// Excitation weights in `(0, 1)` for pooled descriptors laid out
    /// `n × channels`. Returns the post-ReLU hidden layer too.
    fn excite(&self, pooled: &[f32]) -> (Vec<f32>, Vec<f32>) {
        let (c, m) = (self.channels, self.hidden);
        let n = pooled.len() / c;
        let mut hidden = vec![0.0f32; n * m];
        let mut scale = vec![0.0f32; n * c];
        for b in 0..n {
            let z = &pooled[b * c..(b + 1) * c];
            let h = &mut hidden[b * m..(b + 1) * m];
            for j in 0..m {
                let mut acc = self.reduce_bias.value[j];
                for i in 0..c {
                    acc += z[i] * self.reduce.value[i * m + j];
                }
                h[j] = acc.max(0.0);
            }
            for i in 0..c {
                let mut acc = self.expand_bias.value[i];
                for j in 0..m {
                    acc += h[j] * self.expand.value[j * c + i];
                }
                scale[b * c + i] = sigmoid(acc);
            }
        }
        (hidden, scale)
    }

    fn apply_scale(x: &Tensor, scale: &[f32]) -> Tensor {
        let s = x.shape();
        let mut y = x.clone();
        let plane = s.plane() * s.c;
        for (n, item) in y.data_mut().chunks_exact_mut(plane).enumerate() {
            let sc = &scale[n * s.c..(n + 1) * s.c];
            for px in item.chunks_exact_mut(s.c) {
                for (v, k) in px.iter_mut().zip(sc) {
                    *v *= k;
                }
            }
        }
        y
    }

    /// Per-item, per-channel excitation weights for `x`.
    pub fn channel_weights(&self, x: &Tensor) -> Result<Vec<f32>> {
        self.check(x)?;
        Ok(self.excite(&x.spatial_mean()).1)
    }

    /// Recalibrate `x`, validating the channel count first.
    pub fn recalibrate(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        Ok(self.forward(x, NormStats::Running))
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().c != self.channels {
            return Err(shape_err!(
                "squeeze-excitation expects {} channels, input {} has {}",
                self.channels,
                x.shape(),
                x.shape().c
            ));
        }
        Ok(())
    }
}

impl Module for SqueezeExcite {
    fn forward(&self, x: &Tensor, _stats: NormStats) -> Tensor {
        assert_eq!(x.shape().c, self.channels);
        let (_, scale) = self.excite(&x.spatial_mean());
        Self::apply_scale(x, &scale)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.shape().c, self.channels);
        let pooled = x.spatial_mean();
        let (hidden, scale) = self.excite(&pooled);
        let y = Self::apply_scale(x, &scale);
        self.cache = Some(Cache { input: x.clone(), pooled, hidden, scale });
        y
    }

    fn backward(&mut self, grad: &Tensor, pass: Backprop) -> Tensor {
        let Cache { input, pooled, hidden, scale } = self.cache.take().expect("SqueezeExcite::backward without forward_train");
        let s = input.shape();
        let (c, m) = (self.channels, self.hidden);
        let plane = s.plane() * c;

        // ∂L/∂s_c = Σ_hw g · x
        let mut dscale = vec![0.0f32; s.n * c];
        for n in 0..s.n {
            let ds = &mut dscale[n * c..(n + 1) * c];
            for (g, x) in grad.item_slice(n).chunks_exact(c).zip(input.item_slice(n).chunks_exact(c)) {
                for i in 0..c {
                    ds[i] += g[i] * x[i];
                }
            }
        }

        let mut dpooled = vec![0.0f32; s.n * c];
        for n in 0..s.n {
            let sc = &scale[n * c..(n + 1) * c];
            let h = &hidden[n * m..(n + 1) * m];
            let dpre2: Vec<f32> = (0..c).map(|i| dscale[n * c + i] * sc[i] * (1.0 - sc[i])).collect();
            let mut dh = vec![0.0f32; m];
            for j in 0..m {
                for i in 0..c {
                    dh[j] += dpre2[i] * self.expand.value[j * c + i];
                }
                if h[j] <= 0.0 {
                    dh[j] = 0.0;
                }
            }
            if pass.params {
                for j in 0..m {
                    for i in 0..c {
                        self.expand.grad[j * c + i] += h[j] * dpre2[i];
                    }
                }
                for i in 0..c {
                    self.expand_bias.grad[i] += dpre2[i];
                }
                let z = &pooled[n * c..(n + 1) * c];
                for i in 0..c {
                    for j in 0..m {
                        self.reduce.grad[i * m + j] += z[i] * dh[j];
                    }
                }
                for j in 0..m {
                    self.reduce_bias.grad[j] += dh[j];
                }
            }
            for i in 0..c {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += dh[j] * self.reduce.value[i * m + j];
                }
                dpooled[n * c + i] = acc / s.plane() as f32;
            }
        }

        let mut dx = Tensor::zeros(s);
        for (n, item) in dx.data_mut().chunks_exact_mut(plane).enumerate() {
            let sc = &scale[n * c..(n + 1) * c];
            let dz = &dpooled[n * c..(n + 1) * c];
            for (d, g) in item.chunks_exact_mut(c).zip(grad.item_slice(n).chunks_exact(c)) {
                for i in 0..c {
                    d[i] = g[i] * sc[i] + dz[i];
                }
            }
        }
        dx
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.reduce);
        f(&self.reduce_bias);
        f(&self.expand);
        f(&self.expand_bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.reduce);
        f(&mut self.reduce_bias);
        f(&mut self.expand);
        f(&mut self.expand_bias);
    }
}
