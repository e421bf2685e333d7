use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Backprop, Module, NormStats, Param, ParamKind};
use crate::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::{Shape, Tensor};

/// Square convolution with symmetric `kernel / 2` zero padding.
///
/// The weight is stored `[kernel, kernel, in, out]`, i.e. as a
/// `(kernel² · in) × out` matrix whose rows line up with the im2col layout
/// of an NHWC input.
#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Param,
    bias: Option<Param>,
    kernel: usize,
    stride: usize,
    in_channels: usize,
    out_channels: usize,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = kernel * kernel * in_channels;
        let weight = Param::he_normal(&[kernel, kernel, in_channels, out_channels], fan_in, rng);
        Self::with_weight(weight, bias, kernel, stride, in_channels, out_channels)
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, bias: bool) -> Self {
        let weight = Param::zeros(ParamKind::Weight, &[kernel, kernel, in_channels, out_channels]);
        Self::with_weight(weight, bias, kernel, stride, in_channels, out_channels)
    }

    fn with_weight(weight: Param, bias: bool, kernel: usize, stride: usize, cin: usize, cout: usize) -> Self {
        assert!(kernel % 2 == 1 && stride >= 1 && cin >= 1 && cout >= 1);
        Self {
            weight,
            bias: bias.then(|| Param::zeros(ParamKind::Bias, &[cout])),
            kernel,
            stride,
            in_channels: cin,
            out_channels: cout,
            input: None,
        }
    }

    pub fn weight(&self) -> &Param {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Param {
        &mut self.weight
    }

    pub fn bias(&self) -> Option<&Param> {
        self.bias.as_ref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut Param> {
        self.bias.as_mut()
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn out_shape(&self, s: Shape) -> Shape {
        let pad = self.kernel / 2;
        Shape::new(
            s.n,
            (s.h + 2 * pad - self.kernel) / self.stride + 1,
            (s.w + 2 * pad - self.kernel) / self.stride + 1,
            self.out_channels,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    fn im2col(&self, x: &Tensor, out: Shape) -> Vec<f32> {
        let s = x.shape();
        let (k, cin, kk) = (self.kernel, self.in_channels, self.patch_len());
        let pad = (k / 2) as isize;
        let mut cols = vec![0.0f32; out.pixels() * kk];
        let mut rows = cols.chunks_exact_mut(kk);
        for n in 0..out.n {
            for oy in 0..out.h {
                for ox in 0..out.w {
                    let row = rows.next().expect("row per output pixel");
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let dst = (ky * k + kx) * cin;
                            row[dst..dst + cin].copy_from_slice(x.pixel(n, iy as usize, ix as usize));
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], in_shape: Shape, out: Shape) -> Tensor {
        let (k, cin, kk) = (self.kernel, self.in_channels, self.patch_len());
        let pad = (k / 2) as isize;
        let mut dx = Tensor::zeros(in_shape);
        let mut rows = cols.chunks_exact(kk);
        for n in 0..out.n {
            for oy in 0..out.h {
                for ox in 0..out.w {
                    let row = rows.next().expect("row per output pixel");
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= in_shape.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if ix < 0 || ix >= in_shape.w as isize {
                                continue;
                            }
                            let at = dx.index(n, iy as usize, ix as usize, 0);
                            let src = &row[(ky * k + kx) * cin..(ky * k + kx + 1) * cin];
                            for (d, s) in dx.data_mut()[at..at + cin].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn compute(&self, x: &Tensor) -> Tensor {
        let s = x.shape();
        assert_eq!(s.c, self.in_channels, "conv input channels");
        let out = self.out_shape(s);
        let mut y = Tensor::zeros(out);
        let beta = match &self.bias {
            Some(b) => {
                for px in y.data_mut().chunks_exact_mut(self.out_channels) {
                    px.copy_from_slice(&b.value);
                }
                1.0
            }
            None => 0.0,
        };
        let p = out.pixels();
        if self.is_pointwise() {
            gemm_nn(p, self.in_channels, self.out_channels, x.data(), &self.weight.value, beta, y.data_mut());
        } else {
            let cols = self.im2col(x, out);
            gemm_nn(p, self.patch_len(), self.out_channels, &cols, &self.weight.value, beta, y.data_mut());
        }
        y
    }

    /// Backward pass with independent control over the parameter and input
    /// gradients. Returns `None` when `input` is false.
    pub fn backward_parts(&mut self, grad: &Tensor, params: bool, input: bool) -> Option<Tensor> {
        let x = self.input.take().expect("Conv2d::backward without forward_train");
        let out = grad.shape();
        let (p, kk, cout) = (out.pixels(), self.patch_len(), self.out_channels);
        let owned;
        let cols: &[f32] = if self.is_pointwise() {
            x.data()
        } else {
            owned = self.im2col(&x, out);
            &owned
        };
        if params {
            gemm_tn(kk, p, cout, cols, grad.data(), 1.0, &mut self.weight.grad);
            if let Some(b) = &mut self.bias {
                for px in grad.data().chunks_exact(cout) {
                    for (g, v) in b.grad.iter_mut().zip(px) {
                        *g += v;
                    }
                }
            }
        }
        if !input {
            return None;
        }
        if self.is_pointwise() {
            let mut dx = Tensor::zeros(x.shape());
            gemm_nt(p, cout, kk, grad.data(), &self.weight.value, 0.0, dx.data_mut());
            Some(dx)
        } else {
            let mut dcols = vec![0.0f32; p * kk];
            gemm_nt(p, cout, kk, grad.data(), &self.weight.value, 0.0, &mut dcols);
            Some(self.col2im(&dcols, x.shape(), out))
        }
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor, _stats: NormStats) -> Tensor {
        self.compute(x)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let y = self.compute(x);
        self.input = Some(x.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor, pass: Backprop) -> Tensor {
        self.backward_parts(grad, pass.params, true).expect("input gradient requested")
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// 3×3 depthwise convolution (one filter per channel, padding 1, no bias).
/// Weight stored `[3, 3, channels]`.
#[derive(Clone, Debug)]
pub struct DepthwiseConv2d {
    weight: Param,
    stride: usize,
    channels: usize,
    input: Option<Tensor>,
}

impl DepthwiseConv2d {
    pub fn new<R: Rng + ?Sized>(channels: usize, stride: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::he_normal(&[3, 3, channels], 9, rng),
            stride,
            channels,
            input: None,
        }
    }

    pub fn out_shape(&self, s: Shape) -> Shape {
        Shape::new(s.n, (s.h - 1) / self.stride + 1, (s.w - 1) / self.stride + 1, s.c)
    }

    fn compute(&self, x: &Tensor) -> Tensor {
        let s = x.shape();
        assert_eq!(s.c, self.channels, "depthwise input channels");
        let out = self.out_shape(s);
        let c = self.channels;
        let mut y = Tensor::zeros(out);
        let w = &self.weight.value;
        for n in 0..out.n {
            for oy in 0..out.h {
                for ox in 0..out.w {
                    let at = y.index(n, oy, ox, 0);
                    let acc = &mut y.data_mut()[at..at + c];
                    for ky in 0..3 {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let src = x.pixel(n, iy as usize, ix as usize);
                            let wk = &w[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                            for ((a, v), k) in acc.iter_mut().zip(src).zip(wk) {
                                *a += v * k;
                            }
                        }
                    }
                }
            }
        }
        y
    }
}

impl Module for DepthwiseConv2d {
    fn forward(&self, x: &Tensor, _stats: NormStats) -> Tensor {
        self.compute(x)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let y = self.compute(x);
        self.input = Some(x.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor, pass: Backprop) -> Tensor {
        let x = self.input.take().expect("DepthwiseConv2d::backward without forward_train");
        let s = x.shape();
        let out = grad.shape();
        let c = self.channels;
        let mut dx = Tensor::zeros(s);
        let w = &self.weight.value;
        let dw = &mut self.weight.grad;
        for n in 0..out.n {
            for oy in 0..out.h {
                for ox in 0..out.w {
                    let g = grad.pixel(n, oy, ox);
                    for ky in 0..3 {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let k0 = (ky * 3 + kx) * c;
                            let at = dx.index(n, iy as usize, ix as usize, 0);
                            for ((d, gv), k) in dx.data_mut()[at..at + c].iter_mut().zip(g).zip(&w[k0..k0 + c]) {
                                *d += gv * k;
                            }
                            if pass.params {
                                let src = x.pixel(n, iy as usize, ix as usize);
                                for ((d, gv), v) in dw[k0..k0 + c].iter_mut().zip(g).zip(src) {
                                    *d += gv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use crate::nn::count_parameters;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct-definition convolution used as an oracle.
    fn conv_oracle(conv: &Conv2d, x: &Tensor) -> Tensor {
        let out = conv.out_shape(x.shape());
        let (k, cin, cout) = (conv.kernel, conv.in_channels, conv.out_channels);
        let pad = (k / 2) as isize;
        let w = &conv.weight.value;
        Tensor::from_fn(out, |n, oy, ox, co| {
            let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[co]) as f64;
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (oy * conv.stride + ky) as isize - pad;
                    let ix = (ox * conv.stride + kx) as isize - pad;
                    if iy < 0 || ix < 0 || iy >= x.shape().h as isize || ix >= x.shape().w as isize {
                        continue;
                    }
                    for ci in 0..cin {
                        acc += x.at(n, iy as usize, ix as usize, ci) as f64
                            * w[((ky * k + kx) * cin + ci) * cout + co] as f64;
                    }
                }
            }
            acc as f32
        })
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s) in &[(1, 1), (3, 1), (3, 2), (1, 2)] {
            let mut conv = Conv2d::new(3, 5, k, s, true, &mut rng);
            conv.bias_mut().unwrap().value = vec![0.1, -0.2, 0.3, 0.0, 0.5];
            let x = gradcheck::random_tensor(Shape::new(2, 7, 6, 3), 5);
            let y = conv.forward(&x, NormStats::Running);
            let e = conv_oracle(&conv, &x);
            assert_eq!(y.shape(), e.shape());
            for (a, b) in y.data().iter().zip(e.data()) {
                assert!((a - b).abs() < 1e-5, "k={k} s={s}");
            }
        }
    }

    #[test]
    fn stride_two_halves_even_inputs() {
        let conv = Conv2d::zeros(4, 64, 3, 2, true);
        assert_eq!(conv.out_shape(Shape::new(1, 256, 256, 4)), Shape::new(1, 128, 128, 64));
    }

    #[test]
    fn pointwise_conv_parameter_count() {
        let conv = Conv2d::zeros(3, 8, 1, 1, true);
        assert_eq!(count_parameters(&conv), 3 * 8 + 8);
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(k, s) in &[(1, 1), (3, 1), (3, 2)] {
            let mut conv = Conv2d::new(3, 4, k, s, true, &mut rng);
            let x = gradcheck::random_tensor(Shape::new(2, 6, 5, 3), 1);
            assert_eq!(gradcheck::check(&mut conv, &x, 2e-3), 0.0, "k={k} s={s}");
        }
    }

    #[test]
    fn depthwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for s in [1, 2] {
            let mut dw = DepthwiseConv2d::new(4, s, &mut rng);
            let x = gradcheck::random_tensor(Shape::new(2, 6, 7, 4), 2);
            assert_eq!(gradcheck::check(&mut dw, &x, 2e-3), 0.0, "stride {s}");
        }
    }

    #[test]
    fn depthwise_matches_grouped_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dw = DepthwiseConv2d::new(3, 2, &mut rng);
        let x = gradcheck::random_tensor(Shape::new(1, 5, 5, 3), 4);
        let y = dw.forward(&x, NormStats::Running);
        assert_eq!(y.shape(), Shape::new(1, 3, 3, 3));
        let w = &dw.weight.value;
        for oy in 0..3 {
            for ox in 0..3 {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                acc += x.at(0, iy as usize, ix as usize, c) * w[(ky * 3 + kx) * 3 + c];
                            }
                        }
                    }
                    assert!((acc - y.at(0, oy, ox, c)).abs() < 1e-6);
                }
            }
        }
    }
}
