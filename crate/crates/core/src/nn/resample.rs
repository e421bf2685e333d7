use alloc::vec::Vec;

use super::{Backprop, Module, NormStats, Param};
use crate::{Shape, Tensor};

/// Source taps `(i0, i1, frac)` for half-pixel-centred linear interpolation.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinear resize of every item and channel to `out_h × out_w`.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let s = x.shape();
    let (ty, tx) = (axis_taps(s.h, out_h), axis_taps(s.w, out_w));
    let c = s.c;
    let mut y = Tensor::zeros(Shape::new(s.n, out_h, out_w, c));
    for n in 0..s.n {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (p00, p01) = (x.pixel(n, y0, x0), x.pixel(n, y0, x1));
                let (p10, p11) = (x.pixel(n, y1, x0), x.pixel(n, y1, x1));
                let at = y.index(n, oy, ox, 0);
                let dst = &mut y.data_mut()[at..at + c];
                for i in 0..c {
                    let top = p00[i] + (p01[i] - p00[i]) * fx;
                    let bot = p10[i] + (p11[i] - p10[i]) * fx;
                    dst[i] = top + (bot - top) * fy;
                }
            }
        }
    }
    y
}

/// Adjoint of [`resize_bilinear`]: scatters `grad` back onto an
/// `in_h × in_w` grid.
pub fn resize_bilinear_backward(grad: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let s = grad.shape();
    let (ty, tx) = (axis_taps(in_h, s.h), axis_taps(in_w, s.w));
    let c = s.c;
    let mut dx = Tensor::zeros(Shape::new(s.n, in_h, in_w, c));
    for n in 0..s.n {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = grad.pixel(n, oy, ox);
                let taps = [
                    (y0, x0, (1.0 - fy) * (1.0 - fx)),
                    (y0, x1, (1.0 - fy) * fx),
                    (y1, x0, fy * (1.0 - fx)),
                    (y1, x1, fy * fx),
                ];
                for (yy, xx, wgt) in taps {
                    let at = dx.index(n, yy, xx, 0);
                    for (d, &gv) in dx.data_mut()[at..at + c].iter_mut().zip(g) {
                        *d += gv * wgt;
                    }
                }
            }
        }
    }
    dx
}

/// Bilinear upsampling by an integer factor.
#[derive(Clone, Debug)]
pub struct Upsample {
    factor: usize,
    input: Option<Shape>,
}

impl Upsample {
    pub fn new(factor: usize) -> Self {
        Self { factor, input: None }
    }
}

impl Module for Upsample {
    fn forward(&self, x: &Tensor, _stats: NormStats) -> Tensor {
        let s = x.shape();
        resize_bilinear(x, s.h * self.factor, s.w * self.factor)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.input = Some(x.shape());
        self.forward(x, NormStats::Batch)
    }

    fn backward(&mut self, grad: &Tensor, _pass: Backprop) -> Tensor {
        let s = self.input.take().expect("Upsample::backward without forward_train");
        resize_bilinear_backward(grad, s.h, s.w)
    }

    fn visit(&self, _f: &mut dyn FnMut(&Param)) {}

    fn visit_mut(&mut self, _f: &mut dyn FnMut(&mut Param)) {}
}
