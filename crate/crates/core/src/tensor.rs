//! Dense `f32` feature maps in NHWC layout.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{shape_err, Result};

/// Batch, height, width, channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self { n, h, w, c }
    }

    pub const fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of pixel positions across the batch.
    pub const fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn with_channels(self, c: usize) -> Self {
        Self { c, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.h, self.w, self.c)
    }
}

/// An `n × h × w × c` block of activations, channels fastest.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor").field("shape", &self.shape).finish_non_exhaustive()
    }
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![0.0; shape.len()] }
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Self { shape, data: vec![value; shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(shape_err!("{} needs {} values, got {}", shape, shape.len(), data.len()));
        }
        if shape.h == 0 || shape.w == 0 || shape.c == 0 {
            return Err(shape_err!("{} has an empty dimension", shape));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    for c in 0..shape.c {
                        data.push(f(n, y, x, c));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        let s = self.shape;
        ((n * s.h + y) * s.w + x) * s.c + c
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(n, y, x, c)]
    }

    /// Channel vector at one pixel.
    #[inline]
    pub fn pixel(&self, n: usize, y: usize, x: usize) -> &[f32] {
        let i = self.index(n, y, x, 0);
        &self.data[i..i + self.shape.c]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f32) -> f32) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Item `i` of the batch as a batch of one.
    pub fn item(&self, i: usize) -> Tensor {
        let len = self.shape.h * self.shape.w * self.shape.c;
        Tensor {
            shape: Shape { n: 1, ..self.shape },
            data: self.data[i * len..(i + 1) * len].to_vec(),
        }
    }

    pub fn item_slice(&self, i: usize) -> &[f32] {
        let len = self.shape.h * self.shape.w * self.shape.c;
        &self.data[i * len..(i + 1) * len]
    }

    /// Concatenate along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| shape_err!("cannot stack zero tensors"))?.shape;
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.h, s.w, s.c) != (first.h, first.w, first.c) {
                return Err(shape_err!("cannot stack {} with {}", s, first));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape: Shape { n, ..first }, data })
    }

    /// Concatenate along the channel axis: `[a | b]` per pixel.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape, b.shape);
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(shape_err!("cannot concatenate {} and {} along channels", sa, sb));
        }
        let shape = sa.with_channels(sa.c + sb.c);
        let mut data = Vec::with_capacity(shape.len());
        for (pa, pb) in a.data.chunks_exact(sa.c).zip(b.data.chunks_exact(sb.c)) {
            data.extend_from_slice(pa);
            data.extend_from_slice(pb);
        }
        Ok(Tensor { shape, data })
    }

    /// Inverse of [`Tensor::concat_channels`]: the first `left` channels and the rest.
    pub fn split_channels(&self, left: usize) -> (Tensor, Tensor) {
        let s = self.shape;
        assert!(left <= s.c);
        let right = s.c - left;
        let mut a = Vec::with_capacity(s.pixels() * left);
        let mut b = Vec::with_capacity(s.pixels() * right);
        for px in self.data.chunks_exact(s.c) {
            a.extend_from_slice(&px[..left]);
            b.extend_from_slice(&px[left..]);
        }
        (
            Tensor { shape: s.with_channels(left), data: a },
            Tensor { shape: s.with_channels(right), data: b },
        )
    }

    /// Per-(item, channel) mean over the spatial plane, laid out `n × c`.
    pub fn spatial_mean(&self) -> Vec<f32> {
        let s = self.shape;
        let mut out = vec![0.0f32; s.n * s.c];
        let inv = 1.0 / s.plane() as f32;
        for n in 0..s.n {
            let acc = &mut out[n * s.c..(n + 1) * s.c];
            for px in self.item_slice(n).chunks_exact(s.c) {
                for (a, v) in acc.iter_mut().zip(px) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a *= inv);
        }
        out
    }

    /// Mean over channels at each pixel, giving a 1-channel map.
    pub fn channel_mean(&self) -> Tensor {
        let s = self.shape;
        let inv = 1.0 / s.c as f32;
        let data = self.data.chunks_exact(s.c).map(|px| px.iter().sum::<f32>() * inv).collect();
        Tensor { shape: s.with_channels(1), data }
    }
}
