use serde::{Deserialize, Serialize};

use super::param::Parameterized;
use crate::scalar::Real;

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam optimizer. Moment buffers follow the trainable-parameter visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn update<P: Parameterized<T> + ?Sized>(&mut self, model: &mut P) {
        if self.m.is_empty() {
            model.visit(&mut |p| {
                if p.trainable {
                    self.m.push(vec![T::zero(); p.len()]);
                    self.v.push(vec![T::zero(); p.len()]);
                }
            });
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let step_size = T::of(c.lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.eps);
        let mut slot = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_mut(&mut |p| {
            if p.trainable {
                let (m, v) = (&mut ms[slot], &mut vs[slot]);
                for i in 0..p.value.len() {
                    let g = p.grad[i];
                    m[i] = b1 * m[i] + (T::one() - b1) * g;
                    v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                    p.value[i] = p.value[i] - step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
                }
                slot += 1;
            }
            p.zero_grad();
        });
    }
}
