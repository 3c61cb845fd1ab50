//! Single LSTM layer advanced one time step at a time.

use rand_chacha::ChaCha8Rng;

use super::param::Param;
use super::tensor::Tensor;
use crate::scalar::{matmul, Real};

/// Gate order in the stacked weights is input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmLayer<T> {
    pub w_ih: Param<T>,
    pub w_hh: Param<T>,
    pub bias: Param<T>,
    pub inputs: usize,
    pub hidden: usize,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmStepCache<T> {
    x: Tensor<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

/// Gradients flowing back into the previous step.
#[derive(Debug, Clone)]
pub struct LstmGrad<T> {
    pub dx: Tensor<T>,
    pub dh_prev: Vec<T>,
    pub dc_prev: Vec<T>,
}

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<T: Real> LstmLayer<T> {
    pub fn new(prefix: &str, inputs: usize, hidden: usize, forget_bias: f64, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = Param::uniform(format!("{prefix}.bias"), vec![4 * hidden], bound, rng);
        for v in &mut bias.value[hidden..2 * hidden] {
            *v = *v + T::of(forget_bias);
        }
        Self {
            w_ih: Param::uniform(format!("{prefix}.w_ih"), vec![4 * hidden, inputs], bound, rng),
            w_hh: Param::uniform(format!("{prefix}.w_hh"), vec![4 * hidden, hidden], bound, rng),
            bias,
            inputs,
            hidden,
        }
    }

    /// Advances `(h, c)` in place by one step for a batch of inputs `x` of shape `(B, inputs)`.
    /// Returns the new hidden state as a tensor and the step cache.
    pub fn step(&self, x: &Tensor<T>, h: &mut Vec<T>, c: &mut Vec<T>) -> (Tensor<T>, LstmStepCache<T>) {
        let b = x.dim(0);
        let hd = self.hidden;
        assert_eq!(x.len(), b * self.inputs, "lstm input width");
        assert_eq!(h.len(), b * hd, "lstm hidden state size");
        let mut gates = vec![T::zero(); b * 4 * hd];
        for row in gates.chunks_exact_mut(4 * hd) {
            row.copy_from_slice(&self.bias.value);
        }
        matmul(&x.data, false, &self.w_ih.value, true, b, self.inputs, 4 * hd, &mut gates, true);
        matmul(h, false, &self.w_hh.value, true, b, hd, 4 * hd, &mut gates, true);

        let mut c_new = vec![T::zero(); b * hd];
        let mut h_new = vec![T::zero(); b * hd];
        let mut tanh_c = vec![T::zero(); b * hd];
        for bi in 0..b {
            let g = &mut gates[bi * 4 * hd..(bi + 1) * 4 * hd];
            for j in 0..hd {
                g[j] = sigmoid(g[j]);
                g[hd + j] = sigmoid(g[hd + j]);
                g[2 * hd + j] = g[2 * hd + j].tanh();
                g[3 * hd + j] = sigmoid(g[3 * hd + j]);
                let k = bi * hd + j;
                c_new[k] = g[hd + j] * c[k] + g[j] * g[2 * hd + j];
                tanh_c[k] = c_new[k].tanh();
                h_new[k] = g[3 * hd + j] * tanh_c[k];
            }
        }
        let cache = LstmStepCache {
            x: x.clone(),
            h_prev: std::mem::replace(h, h_new.clone()),
            c_prev: std::mem::replace(c, c_new),
            gates,
            tanh_c,
        };
        (Tensor::new(vec![b, hd], h_new), cache)
    }

    /// Backward through one step. `dh` is the total gradient on this step's
    /// hidden output, `dc` the gradient carried into its cell state.
    pub fn backward_step(&mut self, cache: &LstmStepCache<T>, dh: &[T], dc: &[T]) -> LstmGrad<T> {
        let hd = self.hidden;
        let b = cache.x.dim(0);
        let one = T::one();
        let mut dgates = vec![T::zero(); b * 4 * hd];
        let mut dc_prev = vec![T::zero(); b * hd];
        for bi in 0..b {
            let g = &cache.gates[bi * 4 * hd..(bi + 1) * 4 * hd];
            let dg = &mut dgates[bi * 4 * hd..(bi + 1) * 4 * hd];
            for j in 0..hd {
                let k = bi * hd + j;
                let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let tc = cache.tanh_c[k];
                let d_o = dh[k] * tc;
                let dcell = dc[k] + dh[k] * o * (one - tc * tc);
                dg[j] = dcell * gg * i * (one - i);
                dg[hd + j] = dcell * cache.c_prev[k] * f * (one - f);
                dg[2 * hd + j] = dcell * i * (one - gg * gg);
                dg[3 * hd + j] = d_o * o * (one - o);
                dc_prev[k] = dcell * f;
            }
        }
        matmul(&dgates, true, &cache.x.data, false, 4 * hd, b, self.inputs, &mut self.w_ih.grad, true);
        matmul(&dgates, true, &cache.h_prev, false, 4 * hd, b, hd, &mut self.w_hh.grad, true);
        for row in dgates.chunks_exact(4 * hd) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g = *g + d;
            }
        }
        let mut dx = vec![T::zero(); b * self.inputs];
        matmul(&dgates, false, &self.w_ih.value, false, b, 4 * hd, self.inputs, &mut dx, false);
        let mut dh_prev = vec![T::zero(); b * hd];
        matmul(&dgates, false, &self.w_hh.value, false, b, 4 * hd, hd, &mut dh_prev, false);
        LstmGrad { dx: Tensor::new(vec![b, self.inputs], dx), dh_prev, dc_prev }
    }

    pub fn params(&self) -> [&Param<T>; 3] {
        [&self.w_ih, &self.w_hh, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 3] {
        [&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn step_matches_scalar_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = LstmLayer::<f64>::new("l", 2, 3, 1.0, &mut rng);
        let x = Tensor::new(vec![1, 2], vec![0.3, -0.7]);
        let mut h = vec![0.1, -0.2, 0.05];
        let mut c = vec![0.4, 0.0, -0.3];
        let (h0, c0) = (h.clone(), c.clone());
        let (out, _) = layer.step(&x, &mut h, &mut c);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for j in 0..3 {
            let pre = |gate: usize| {
                let r = gate * 3 + j;
                layer.bias.value[r]
                    + (0..2).map(|i| layer.w_ih.value[r * 2 + i] * x.data[i]).sum::<f64>()
                    + (0..3).map(|i| layer.w_hh.value[r * 3 + i] * h0[i]).sum::<f64>()
            };
            let cn = sig(pre(1)) * c0[j] + sig(pre(0)) * pre(2).tanh();
            let hn = sig(pre(3)) * cn.tanh();
            assert!((c[j] - cn).abs() < 1e-14);
            assert!((out.data[j] - hn).abs() < 1e-14);
            assert_eq!(h[j], out.data[j]);
        }
    }

    #[test]
    fn forget_bias_is_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = LstmLayer::<f64>::new("l", 1, 4, 1.0, &mut rng);
        let forget = &layer.bias.value[4..8];
        assert!(forget.iter().all(|&v| v > 0.5 && v < 1.5));
        assert!(layer.bias.value[..4].iter().all(|&v| v.abs() <= 0.5));
    }
}
