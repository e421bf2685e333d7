use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Backprop, Module, NormStats, Param, ParamKind};
use crate::Tensor;

/// Constants shared by every batch normalization layer of a network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormConfig {
    pub eps: f32,
    /// Weight of the old running average in each update.
    pub momentum: f32,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self { eps: 1e-3, momentum: 0.99 }
    }
}

/// Per-channel batch normalization over the batch and both spatial axes.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    gamma: Param,
    beta: Param,
    running_mean: Param,
    running_var: Param,
    cfg: NormConfig,
    cache: Option<Cache>,
}

#[derive(Clone, Debug)]
struct Cache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm {
    pub fn new(channels: usize, cfg: NormConfig) -> Self {
        Self {
            gamma: Param::filled(ParamKind::Scale, &[channels], 1.0),
            beta: Param::zeros(ParamKind::Shift, &[channels]),
            running_mean: Param::zeros(ParamKind::RunningMean, &[channels]),
            running_var: Param::filled(ParamKind::RunningVar, &[channels], 1.0),
            cfg,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn batch_stats(x: &Tensor) -> (Vec<f32>, Vec<f32>) {
        let c = x.shape().c;
        let count = x.shape().pixels() as f64;
        let mut sum = vec![0.0f64; c];
        for px in x.data().chunks_exact(c) {
            for (s, &v) in sum.iter_mut().zip(px) {
                *s += v as f64;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let mut sq = vec![0.0f64; c];
        for px in x.data().chunks_exact(c) {
            for ((s, &v), m) in sq.iter_mut().zip(px).zip(&mean) {
                let d = v as f64 - m;
                *s += d * d;
            }
        }
        (
            mean.iter().map(|&m| m as f32).collect(),
            sq.iter().map(|&s| (s / count) as f32).collect(),
        )
    }

    fn normalize(&self, x: &Tensor, mean: &[f32], var: &[f32]) -> (Tensor, Vec<f32>) {
        let c = self.channels();
        let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / libm::sqrtf(v + self.cfg.eps)).collect();
        let mut y = x.clone();
        for px in y.data_mut().chunks_exact_mut(c) {
            for i in 0..c {
                px[i] = (px[i] - mean[i]) * inv_std[i];
            }
        }
        (y, inv_std)
    }

    fn affine(&self, xhat: &Tensor) -> Tensor {
        let c = self.channels();
        let mut y = xhat.clone();
        for px in y.data_mut().chunks_exact_mut(c) {
            for i in 0..c {
                px[i] = px[i] * self.gamma.value[i] + self.beta.value[i];
            }
        }
        y
    }
}

impl Module for BatchNorm {
    fn forward(&self, x: &Tensor, stats: NormStats) -> Tensor {
        assert_eq!(x.shape().c, self.channels(), "batch norm channels");
        let (xhat, _) = match stats {
            NormStats::Running => self.normalize(x, &self.running_mean.value, &self.running_var.value),
            NormStats::Batch => {
                let (m, v) = Self::batch_stats(x);
                self.normalize(x, &m, &v)
            }
        };
        self.affine(&xhat)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.shape().c, self.channels(), "batch norm channels");
        let (mean, var) = Self::batch_stats(x);
        let count = x.shape().pixels();
        let unbias = if count > 1 { count as f32 / (count - 1) as f32 } else { 1.0 };
        let m = self.cfg.momentum;
        for i in 0..self.channels() {
            self.running_mean.value[i] = m * self.running_mean.value[i] + (1.0 - m) * mean[i];
            self.running_var.value[i] = m * self.running_var.value[i] + (1.0 - m) * var[i] * unbias;
        }
        let (xhat, inv_std) = self.normalize(x, &mean, &var);
        let y = self.affine(&xhat);
        self.cache = Some(Cache { xhat, inv_std });
        y
    }

    fn backward(&mut self, grad: &Tensor, pass: Backprop) -> Tensor {
        let Cache { xhat, inv_std } = self.cache.take().expect("BatchNorm::backward without forward_train");
        let c = self.channels();
        let count = grad.shape().pixels() as f32;
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for (g, xh) in grad.data().chunks_exact(c).zip(xhat.data().chunks_exact(c)) {
            for i in 0..c {
                sum_g[i] += g[i] as f64;
                sum_gx[i] += (g[i] * xh[i]) as f64;
            }
        }
        if pass.params {
            for i in 0..c {
                self.gamma.grad[i] += sum_gx[i] as f32;
                self.beta.grad[i] += sum_g[i] as f32;
            }
        }
        // dx = γ·inv_std/M · (M·g − Σg − x̂·Σ(g·x̂))
        let mean_g: Vec<f32> = sum_g.iter().map(|&s| s as f32 / count).collect();
        let mean_gx: Vec<f32> = sum_gx.iter().map(|&s| s as f32 / count).collect();
        let scale: Vec<f32> = (0..c).map(|i| self.gamma.value[i] * inv_std[i]).collect();
        let mut dx = xhat;
        for (d, g) in dx.data_mut().chunks_exact_mut(c).zip(grad.data().chunks_exact(c)) {
            for i in 0..c {
                d[i] = scale[i] * (g[i] - mean_g[i] - d[i] * mean_gx[i]);
            }
        }
        dx
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}
