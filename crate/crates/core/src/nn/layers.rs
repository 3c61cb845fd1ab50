//! Feed-forward layers with explicit caches for the backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::param::Param;
use super::tensor::Tensor;
use crate::scalar::{matmul, Real};

/// 1-D convolution over `(batch, channels, length)` inputs.
#[derive(Debug, Clone)]
pub struct Conv1d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct Conv1dCache<T> {
    cols: Vec<T>,
    batch: usize,
    in_len: usize,
    out_len: usize,
}

impl<T: Real> Conv1d<T> {
    pub fn new(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{prefix}.weight"), vec![out_channels, in_channels, kernel], bound, rng),
            bias: Param::uniform(format!("{prefix}.bias"), vec![out_channels], bound, rng),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_len(&self, in_len: usize) -> usize {
        (in_len + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Conv1dCache<T>) {
        let (b, ci, l) = (x.dim(0), x.dim(1), x.dim(2));
        assert_eq!(ci, self.in_channels, "conv input channels");
        let lo = self.out_len(l);
        let ck = ci * self.kernel;
        let mut cols = vec![T::zero(); b * lo * ck];
        for bi in 0..b {
            for o in 0..lo {
                let row = &mut cols[(bi * lo + o) * ck..(bi * lo + o + 1) * ck];
                for c in 0..ci {
                    for k in 0..self.kernel {
                        let pos = (o * self.stride + k) as isize - self.padding as isize;
                        if pos >= 0 && (pos as usize) < l {
                            row[c * self.kernel + k] = x.data[(bi * ci + c) * l + pos as usize];
                        }
                    }
                }
            }
        }
        let co = self.out_channels;
        let mut tmp = vec![T::zero(); b * lo * co];
        matmul(&cols, false, &self.weight.value, true, b * lo, ck, co, &mut tmp, false);
        let mut y = vec![T::zero(); b * co * lo];
        for bi in 0..b {
            for o in 0..lo {
                for c in 0..co {
                    y[(bi * co + c) * lo + o] = tmp[(bi * lo + o) * co + c] + self.bias.value[c];
                }
            }
        }
        (Tensor::new(vec![b, co, lo], y), Conv1dCache { cols, batch: b, in_len: l, out_len: lo })
    }

    pub fn backward(&mut self, cache: &Conv1dCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (b, lo, co) = (cache.batch, cache.out_len, self.out_channels);
        let ck = self.in_channels * self.kernel;
        let mut dyt = vec![T::zero(); b * lo * co];
        for bi in 0..b {
            for c in 0..co {
                for o in 0..lo {
                    let g = dy.data[(bi * co + c) * lo + o];
                    dyt[(bi * lo + o) * co + c] = g;
                    self.bias.grad[c] = self.bias.grad[c] + g;
                }
            }
        }
        matmul(&dyt, true, &cache.cols, false, co, b * lo, ck, &mut self.weight.grad, true);
        let mut dcols = vec![T::zero(); b * lo * ck];
        matmul(&dyt, false, &self.weight.value, false, b * lo, co, ck, &mut dcols, false);

        let (ci, l) = (self.in_channels, cache.in_len);
        let mut dx = vec![T::zero(); b * ci * l];
        for bi in 0..b {
            for o in 0..lo {
                let row = &dcols[(bi * lo + o) * ck..(bi * lo + o + 1) * ck];
                for c in 0..ci {
                    for k in 0..self.kernel {
                        let pos = (o * self.stride + k) as isize - self.padding as isize;
                        if pos >= 0 && (pos as usize) < l {
                            let idx = (bi * ci + c) * l + pos as usize;
                            dx[idx] = dx[idx] + row[c * self.kernel + k];
                        }
                    }
                }
            }
        }
        Tensor::new(vec![b, ci, l], dx)
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Batch normalisation over the batch and length axes of `(B, C, L)` input.
#[derive(Debug, Clone)]
pub struct BatchNorm1d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Real> BatchNorm1d<T> {
    pub fn new(prefix: &str, channels: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: Param::filled(format!("{prefix}.gamma"), vec![channels], T::one()),
            beta: Param::filled(format!("{prefix}.beta"), vec![channels], T::zero()),
            running_mean: Param::buffer(format!("{prefix}.running_mean"), vec![channels], vec![T::zero(); channels]),
            running_var: Param::buffer(format!("{prefix}.running_var"), vec![channels], vec![T::one(); channels]),
            momentum,
            eps,
        }
    }

    /// Training mode uses batch statistics and updates the running moments.
    /// Inference mode uses the running moments and returns no cache.
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> (Tensor<T>, Option<BatchNormCache<T>>) {
        let (b, c, l) = (x.dim(0), x.dim(1), x.dim(2));
        let n = b * l;
        let eps = T::of(self.eps);
        let mut y = vec![T::zero(); x.len()];
        if !train {
            for ch in 0..c {
                let inv = T::one() / (self.running_var.value[ch] + eps).sqrt();
                let (g, be, m) = (self.gamma.value[ch], self.beta.value[ch], self.running_mean.value[ch]);
                for bi in 0..b {
                    let base = (bi * c + ch) * l;
                    for i in base..base + l {
                        y[i] = g * (x.data[i] - m) * inv + be;
                    }
                }
            }
            return (Tensor::new(x.shape.clone(), y), None);
        }

        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c];
        let nf = T::of(n as f64);
        let mom = T::of(self.momentum);
        for ch in 0..c {
            let mut sum = T::zero();
            for bi in 0..b {
                let base = (bi * c + ch) * l;
                sum = sum + x.data[base..base + l].iter().copied().sum::<T>();
            }
            let mean = sum / nf;
            let mut sq = T::zero();
            for bi in 0..b {
                let base = (bi * c + ch) * l;
                sq = sq + x.data[base..base + l].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
            }
            let var = sq / nf;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[ch] = inv;
            let (g, be) = (self.gamma.value[ch], self.beta.value[ch]);
            for bi in 0..b {
                let base = (bi * c + ch) * l;
                for i in base..base + l {
                    let h = (x.data[i] - mean) * inv;
                    xhat[i] = h;
                    y[i] = g * h + be;
                }
            }
            let unbiased = if n > 1 { sq / T::of((n - 1) as f64) } else { var };
            let rm = &mut self.running_mean.value[ch];
            *rm = (T::one() - mom) * *rm + mom * mean;
            let rv = &mut self.running_var.value[ch];
            *rv = (T::one() - mom) * *rv + mom * unbiased;
        }
        (Tensor::new(x.shape.clone(), y), Some(BatchNormCache { xhat, inv_std, shape: x.shape.clone() }))
    }

    pub fn backward(&mut self, cache: &BatchNormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (b, c, l) = (cache.shape[0], cache.shape[1], cache.shape[2]);
        let nf = T::of((b * l) as f64);
        let mut dx = vec![T::zero(); dy.len()];
        for ch in 0..c {
            let g = self.gamma.value[ch];
            let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
            for bi in 0..b {
                let base = (bi * c + ch) * l;
                for i in base..base + l {
                    sum_dy = sum_dy + dy.data[i];
                    sum_dy_xhat = sum_dy_xhat + dy.data[i] * cache.xhat[i];
                }
            }
            self.gamma.grad[ch] = self.gamma.grad[ch] + sum_dy_xhat;
            self.beta.grad[ch] = self.beta.grad[ch] + sum_dy;
            let k = g * cache.inv_std[ch] / nf;
            for bi in 0..b {
                let base = (bi * c + ch) * l;
                for i in base..base + l {
                    dx[i] = k * (nf * dy.data[i] - sum_dy - cache.xhat[i] * sum_dy_xhat);
                }
            }
        }
        Tensor::new(cache.shape.clone(), dx)
    }

    pub fn params(&self) -> [&Param<T>; 4] {
        [&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 4] {
        [&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}

/// In-place ReLU; the output itself serves as the backward mask.
pub fn relu_forward<T: Real>(x: &mut Tensor<T>) {
    x.data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

pub fn relu_backward<T: Real>(output: &Tensor<T>, dy: &mut Tensor<T>) {
    for (g, &y) in dy.data.iter_mut().zip(&output.data) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Global max over the length axis, `(B, C, L) -> (B, C)`. The first maximum wins.
pub fn global_max_pool<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let (b, c, l) = (x.dim(0), x.dim(1), x.dim(2));
    let mut y = vec![T::zero(); b * c];
    let mut arg = vec![0; b * c];
    for i in 0..b * c {
        let row = &x.data[i * l..(i + 1) * l];
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        y[i] = row[best];
        arg[i] = best;
    }
    (Tensor::new(vec![b, c], y), arg)
}

pub fn global_max_pool_backward<T: Real>(arg: &[usize], dy: &Tensor<T>, len: usize) -> Tensor<T> {
    let (b, c) = (dy.dim(0), dy.dim(1));
    let mut dx = vec![T::zero(); b * c * len];
    for i in 0..b * c {
        dx[i * len + arg[i]] = dy.data[i];
    }
    Tensor::new(vec![b, c, len], dx)
}

/// Fully connected layer, `y = x W^T + b` with `W` shaped `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub inputs: usize,
    pub outputs: usize,
}

impl<T: Real> Linear<T> {
    /// Fan-in uniform initialisation, multiplied by `scale`.
    pub fn new(prefix: &str, inputs: usize, outputs: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let bound = scale / (inputs as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{prefix}.weight"), vec![outputs, inputs], bound, rng),
            bias: Param::uniform(format!("{prefix}.bias"), vec![outputs], bound, rng),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let b = x.dim(0);
        assert_eq!(x.len(), b * self.inputs, "linear input width");
        let mut y = vec![T::zero(); b * self.outputs];
        for row in y.chunks_exact_mut(self.outputs) {
            row.copy_from_slice(&self.bias.value);
        }
        matmul(&x.data, false, &self.weight.value, true, b, self.inputs, self.outputs, &mut y, true);
        Tensor::new(vec![b, self.outputs], y)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let b = x.dim(0);
        matmul(&dy.data, true, &x.data, false, self.outputs, b, self.inputs, &mut self.weight.grad, true);
        for row in dy.data.chunks_exact(self.outputs) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g = *g + d;
            }
        }
        let mut dx = vec![T::zero(); b * self.inputs];
        matmul(&dy.data, false, &self.weight.value, false, b, self.outputs, self.inputs, &mut dx, false);
        Tensor::new(vec![b, self.inputs], dx)
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Inverted dropout. Returns the scaled keep-mask, or `None` when inactive.
pub fn dropout<T: Real>(x: &mut Tensor<T>, p: f64, train: bool, rng: &mut ChaCha8Rng) -> Option<Vec<T>> {
    if !train || p <= 0.0 {
        return None;
    }
    let scale = T::of(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.len()).map(|_| if rng.random::<f64>() < p { T::zero() } else { scale }).collect();
    x.data.iter_mut().zip(&mask).for_each(|(v, &m)| *v = *v * m);
    Some(mask)
}

pub fn dropout_backward<T: Real>(mask: &Option<Vec<T>>, dy: &mut Tensor<T>) {
    if let Some(mask) = mask {
        dy.data.iter_mut().zip(mask).for_each(|(g, &m)| *g = *g * m);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut r = rng();
        let conv = Conv1d::<f64>::new("c", 2, 3, 3, 3, 1, &mut r);
        let x = Tensor::new(vec![2, 2, 8], (0..32).map(|i| (i as f64 * 0.37).sin()).collect());
        let (y, _) = conv.forward(&x);
        assert_eq!(y.shape, vec![2, 3, 3]);
        for b in 0..2 {
            for co in 0..3 {
                for o in 0..3 {
                    let mut acc = conv.bias.value[co];
                    for ci in 0..2 {
                        for k in 0..3 {
                            let pos = (o * 3 + k) as isize - 1;
                            if (0..8).contains(&pos) {
                                acc +=
                                    conv.weight.value[(co * 2 + ci) * 3 + k] * x.data[(b * 2 + ci) * 8 + pos as usize];
                            }
                        }
                    }
                    assert!((y.data[(b * 3 + co) * 3 + o] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batchnorm_output_is_standardised() {
        let mut bn = BatchNorm1d::<f64>::new("bn", 2, 0.1, 1e-5);
        let x = Tensor::new(vec![3, 2, 4], (0..24).map(|i| (i * i) as f64 * 0.1).collect());
        let (y, _) = bn.forward(&x, true);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|b| y.data[(b * 2 + ch) * 4..(b * 2 + ch + 1) * 4].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 12.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean.value[0] > 0.0);
    }

    #[test]
    fn batchnorm_inference_uses_running_moments() {
        let mut bn = BatchNorm1d::<f64>::new("bn", 1, 0.1, 0.0);
        bn.running_mean.value[0] = 2.0;
        bn.running_var.value[0] = 4.0;
        let (y, cache) = bn.forward(&Tensor::new(vec![1, 1, 2], vec![2.0, 6.0]), false);
        assert!(cache.is_none());
        assert_eq!(y.data, vec![0.0, 2.0]);
    }

    #[test]
    fn maxpool_routes_gradient_to_first_max() {
        let x = Tensor::new(vec![1, 2, 3], vec![1.0, 5.0, 5.0, -1.0, -3.0, -2.0]);
        let (y, arg) = global_max_pool(&x);
        assert_eq!(y.data, vec![5.0, -1.0]);
        assert_eq!(arg, vec![1, 0]);
        let dx = global_max_pool_backward(&arg, &Tensor::new(vec![1, 2], vec![1.0, 2.0]), 3);
        assert_eq!(dx.data, vec![0.0, 1.0, 0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut r = rng();
        let mut x = Tensor::new(vec![1, 20000], vec![1.0f64; 20000]);
        let mask = dropout(&mut x, 0.3, true, &mut r).unwrap();
        let mean = x.data.iter().sum::<f64>() / 20000.0;
        assert!((mean - 1.0).abs() < 0.03);
        assert!(mask.iter().all(|&m| m == 0.0 || (m - 1.0 / 0.7).abs() < 1e-12));
        let mut y = Tensor::new(vec![1, 3], vec![1.0f64; 3]);
        assert!(dropout(&mut y, 0.3, false, &mut r).is_none());
        assert_eq!(y.data, vec![1.0; 3]);
    }

    #[test]
    fn linear_forward_is_affine() {
        let mut r = rng();
        let lin = Linear::<f64>::new("fc", 3, 2, 1.0, &mut r);
        let x = Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]);
        let y = lin.forward(&x);
        for o in 0..2 {
            let expect = lin.bias.value[o] + (0..3).map(|i| lin.weight.value[o * 3 + i] * x.data[i]).sum::<f64>();
            assert!((y.data[o] - expect).abs() < 1e-14);
        }
    }
}
