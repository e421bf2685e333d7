//! Adam over the trainable parameters of a [`Module`].

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{flush_subnormal, Module};
use crate::Error;

/// First and second moment estimates plus the step count, in parameter
/// visiting order (trainable tensors only).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: AdamState,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, state: AdamState::default() }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn set_state(&mut self, state: AdamState) {
        self.state = state;
    }

    /// One update from the accumulated gradients. Gradients are left in
    /// place; callers zero them.
    pub fn step(&mut self, model: &mut dyn Module) -> Result<()> {
        let mut sizes = Vec::new();
        model.visit(&mut |p| {
            if p.is_trainable() {
                sizes.push(p.len());
            }
        });
        let st = &mut self.state;
        if st.m.is_empty() && st.t == 0 {
            st.m = sizes.iter().map(|&n| alloc::vec![0.0; n]).collect();
            st.v = st.m.clone();
        }
        let shapes_match = st.m.len() == sizes.len()
            && st.v.len() == sizes.len()
            && st.m.iter().zip(&st.v).zip(&sizes).all(|((m, v), &n)| m.len() == n && v.len() == n);
        if !shapes_match {
            return Err(Error::Checkpoint("optimizer state does not match the model's parameters".into()));
        }
        st.t += 1;
        let t = st.t as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let lr_t = (self.lr * libm::sqrt(1.0 - libm::pow(b2, t as f64)) / (1.0 - libm::pow(b1, t as f64))) as f32;
        let (b1, b2, eps) = (b1 as f32, b2 as f32, self.eps as f32);
        let mut i = 0;
        model.visit_mut(&mut |p| {
            if !p.is_trainable() {
                return;
            }
            let (m, v) = (&mut st.m[i], &mut st.v[i]);
            for (((w, &g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = flush_subnormal(b1 * *m + (1.0 - b1) * g);
                *v = flush_subnormal(b2 * *v + (1.0 - b2) * g * g);
                *w -= lr_t * *m / (libm::sqrtf(*v) + eps);
            }
            i += 1;
        });
        Ok(())
    }
}
