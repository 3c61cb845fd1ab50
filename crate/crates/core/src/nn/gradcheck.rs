//! Central finite-difference checks of every backward pass, in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::{
    dropout, dropout_backward, global_max_pool, global_max_pool_backward, relu_backward, relu_forward, BatchNorm1d,
    Conv1d, Linear,
};
use super::loss::softmax_cross_entropy;
use super::lstm::LstmLayer;
use super::model::{Architecture, BeamNet, NetShape};
use super::param::Parameterized;
use super::tensor::Tensor;
use super::{Mode, ModelConfig};

pub const STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const STACK_TOLERANCE: f64 = 1e-3;
/// Gradient magnitudes below this are compared on an absolute scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub suite: String,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub probes: usize,
    pub worst: String,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

/// A scalar function of several parameter groups with an analytic gradient.
pub trait Checkable {
    fn groups(&self) -> Vec<(String, usize)>;
    fn get(&mut self, group: usize, i: usize) -> f64;
    fn set(&mut self, group: usize, i: usize, v: f64);
    fn loss(&mut self) -> f64;
    fn gradient(&mut self) -> Vec<Vec<f64>>;
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Compares the analytic gradient with central differences on up to
/// `probes` entries of every group.
pub fn check(suite: &str, f: &mut dyn Checkable, probes: usize, threshold: f64, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let analytic = f.gradient();
    let mut report = CheckReport { suite: suite.into(), max_rel_err: 0.0, threshold, probes: 0, worst: String::new() };
    for (g, (name, len)) in f.groups().into_iter().enumerate() {
        let picks: Vec<usize> =
            if len <= probes { (0..len).collect() } else { (0..probes).map(|_| rng.random_range(0..len)).collect() };
        for i in picks {
            let orig = f.get(g, i);
            f.set(g, i, orig + STEP);
            let up = f.loss();
            f.set(g, i, orig - STEP);
            let down = f.loss();
            f.set(g, i, orig);
            let numeric = (up - down) / (2.0 * STEP);
            let err = relative_error(analytic[g][i], numeric);
            report.probes += 1;
            if err > report.max_rel_err || report.worst.is_empty() {
                report.max_rel_err = err;
                report.worst = format!("{name}[{i}] analytic {:.6e} numeric {numeric:.6e}", analytic[g][i]);
            }
        }
    }
    report
}

/// Parameter groups addressed as mutable slices of a state value.
struct Slices<S> {
    state: S,
    names: Vec<&'static str>,
    slot: fn(&mut S, usize) -> &mut [f64],
    loss: fn(&mut S) -> f64,
    grad: fn(&mut S) -> Vec<Vec<f64>>,
}

/// Wraps [`Slices`] so that group lengths can be computed up front.
struct Fixed<S> {
    inner: Slices<S>,
    lens: Vec<usize>,
}

impl<S> Fixed<S> {
    fn new(mut inner: Slices<S>) -> Self {
        let lens = (0..inner.names.len()).map(|g| (inner.slot)(&mut inner.state, g).len()).collect();
        Self { inner, lens }
    }
}

impl<S> Checkable for Fixed<S> {
    fn groups(&self) -> Vec<(String, usize)> {
        self.inner.names.iter().map(|n| n.to_string()).zip(self.lens.iter().copied()).collect()
    }
    fn get(&mut self, group: usize, i: usize) -> f64 {
        (self.inner.slot)(&mut self.inner.state, group)[i]
    }
    fn set(&mut self, group: usize, i: usize, v: f64) {
        (self.inner.slot)(&mut self.inner.state, group)[i] = v;
    }
    fn loss(&mut self) -> f64 {
        (self.inner.loss)(&mut self.inner.state)
    }
    fn gradient(&mut self) -> Vec<Vec<f64>> {
        (self.inner.grad)(&mut self.inner.state)
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Values bounded away from zero and from each other, so ReLU and max-pool
/// stay differentiable under the probe step.
fn separated(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * 0.07 - 0.035 * n as f64).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    v.iter().map(|x| if x.abs() < 0.02 { x + 0.05 } else { *x }).collect()
}

fn conv_suite(rng: &mut ChaCha8Rng) -> CheckReport {
    struct S {
        conv: Conv1d<f64>,
        x: Tensor<f64>,
        r: Vec<f64>,
    }
    let conv = Conv1d::new("conv", 2, 3, 3, 3, 1, rng);
    let x = Tensor::new(vec![2, 2, 16], random_vec(rng, 64));
    let r = random_vec(rng, 2 * 3 * 6);
    let mut f = Fixed::new(Slices {
        state: S { conv, x, r },
        names: vec!["weight", "bias", "input"],
        slot: |s, g| match g {
            0 => &mut s.conv.weight.value,
            1 => &mut s.conv.bias.value,
            _ => &mut s.x.data,
        },
        loss: |s| dot(&s.conv.forward(&s.x).0.data, &s.r),
        grad: |s| {
            s.conv.weight.zero_grad();
            s.conv.bias.zero_grad();
            let (y, cache) = s.conv.forward(&s.x);
            let dx = s.conv.backward(&cache, &Tensor::new(y.shape, s.r.clone()));
            vec![s.conv.weight.grad.clone(), s.conv.bias.grad.clone(), dx.data]
        },
    });
    check("conv1d", &mut f, 40, LAYER_TOLERANCE, 1)
}

fn batchnorm_suite(rng: &mut ChaCha8Rng) -> CheckReport {
    struct S {
        bn: BatchNorm1d<f64>,
        x: Tensor<f64>,
        r: Vec<f64>,
    }
    let mut bn = BatchNorm1d::new("bn", 3, 0.1, 1e-5);
    bn.gamma.value = random_vec(rng, 3);
    bn.beta.value = random_vec(rng, 3);
    let x = Tensor::new(vec![4, 3, 5], random_vec(rng, 60));
    let r = random_vec(rng, 60);
    let mut f = Fixed::new(Slices {
        state: S { bn, x, r },
        names: vec!["gamma", "beta", "input"],
        slot: |s, g| match g {
            0 => &mut s.bn.gamma.value,
            1 => &mut s.bn.beta.value,
            _ => &mut s.x.data,
        },
        loss: |s| dot(&s.bn.forward(&s.x, true).0.data, &s.r),
        grad: |s| {
            s.bn.gamma.zero_grad();
            s.bn.beta.zero_grad();
            let (y, cache) = s.bn.forward(&s.x, true);
            let dx = s.bn.backward(&cache.expect("train mode"), &Tensor::new(y.shape, s.r.clone()));
            vec![s.bn.gamma.grad.clone(), s.bn.beta.grad.clone(), dx.data]
        },
    });
    check("batchnorm", &mut f, 40, LAYER_TOLERANCE, 2)
}

fn relu_suite(rng: &mut ChaCha8Rng) -> CheckReport {
    let x = Tensor::new(vec![2, 3, 4], separated(rng, 24));
    let r = random_vec(rng, 24);
    let mut f = Fixed::new(Slices {
        state: (x, r),
        names: vec!["input"],
        slot: |s, _| &mut s.0.data,
        loss: |s| {
            let mut y = s.0.clone();
            relu_forward(&mut y);
            dot(&y.data, &s.1)
        },
        grad: |s| {
            let mut y = s.0.clone();
            relu_forward(&mut y);
            let mut d = Tensor::new(y.shape.clone(), s.1.clone());
            relu_backward(&y, &mut d);
            vec![d.data]
        },
    });
    check("relu", &mut f, 24, LAYER_TOLERANCE, 3)
}

fn maxpool_suite(rng: &mut ChaCha8Rng) -> CheckReport {
    let x = Tensor::new(vec![2, 3, 5], separated(rng, 30));
    let r = random_vec(rng, 6);
    let mut f = Fixed::new(Slices {
        state: (x, r),
        names: vec!["input"],
        slot: |s, _| &mut s.0.data,
        loss: |s| dot(&global_max_pool(&s.0).0.data, &s.1),
        grad: |s| {
            let (y, arg) = global_max_pool(&s.0);
            vec![global_max_pool_backward(&arg, &Tensor::new(y.shape, s.1.clone()), 5).data]
        },
    });
    check("maxpool_global", &mut f, 30, LAYER_TOLERANCE, 4)
}

fn linear_suite(rng: &mut ChaCha8Rng) -> CheckReport {
    struct S {
        fc: Linear<f64>,
        x: Tensor<f64>,
        r: Vec<f64>,
    }
    let fc = Linear::new("fc", 7, 5, 1.0, rng);
    let x = Tensor::new(vec![3, 7], random_vec(rng, 21));
    let r = random_vec(rng, 15);
    let mut f = Fixed::new(Slices {
        state: S { fc, x, r },
        names: vec!["weight", "bias", "input"],
        slot: |s, g| match g {
            0 => &mut s.fc.weight.value,
            1 => &mut s.fc.bias.value,
            _ => &mut s.x.data,
        },
        loss: |s| dot(&s.fc.forward(&s.x).data, &s.r),
        grad: |s| {
            s.fc.weight.zero_grad();
            s.fc.bias.zero_grad();
            let dx = s.fc.backward(&s.x, &Tensor::new(vec![3, 5], s.r.clone()));
            vec![s.fc.weight.grad.clone(), s.fc.bias.grad.clone(), dx.data]
        },
    });
    check("fully_connected", &mut f, 40, LAYER_TOLERANCE, 5)
}

fn dropout_suite(rng: &mut ChaCha8Rng) -> CheckReport {
    let x = Tensor::new(vec![4, 6], random_vec(rng, 24));
    let r = random_vec(rng, 24);
    let mut f = Fixed::new(Slices {
        state: (x, r),
        names: vec!["input"],
        slot: |s, _| &mut s.0.data,
        loss: |s| {
            let mut y = s.0.clone();
            dropout(&mut y, 0.3, true, &mut ChaCha8Rng::seed_from_u64(11));
            dot(&y.data, &s.1)
        },
        grad: |s| {
            let mut y = s.0.clone();
            let mask = dropout(&mut y, 0.3, true, &mut ChaCha8Rng::seed_from_u64(11));
            let mut d = Tensor::new(y.shape, s.1.clone());
            dropout_backward(&mask, &mut d);
            vec![d.data]
        },
    });
    check("dropout", &mut f, 24, LAYER_TOLERANCE, 6)
}

fn softmax_suite(rng: &mut ChaCha8Rng) -> CheckReport {
    let logits = Tensor::new(vec![3, 8], random_vec(rng, 24).iter().map(|v| 3.0 * v).collect());
    let mut f = Fixed::new(Slices {
        state: logits,
        names: vec!["logits"],
        slot: |s, _| &mut s.data,
        loss: |s| softmax_cross_entropy(s, &[1, 4, 7], 1.0).0,
        grad: |s| vec![softmax_cross_entropy(s, &[1, 4, 7], 1.0).1.data],
    });
    check("softmax_crossentropy", &mut f, 24, LAYER_TOLERANCE, 7)
}

fn lstm_suite(rng: &mut ChaCha8Rng) -> CheckReport {
    struct S {
        layer: LstmLayer<f64>,
        x: Tensor<f64>,
        h: Vec<f64>,
        c: Vec<f64>,
        rh: Vec<f64>,
        rc: Vec<f64>,
    }
    let layer = LstmLayer::new("lstm", 4, 3, 1.0, rng);
    let state = S {
        layer,
        x: Tensor::new(vec![2, 4], random_vec(rng, 8)),
        h: random_vec(rng, 6),
        c: random_vec(rng, 6),
        rh: random_vec(rng, 6),
        rc: random_vec(rng, 6),
    };
    let mut f = Fixed::new(Slices {
        state,
        names: vec!["w_ih", "w_hh", "bias", "input", "h_prev", "c_prev"],
        slot: |s, g| match g {
            0 => &mut s.layer.w_ih.value,
            1 => &mut s.layer.w_hh.value,
            2 => &mut s.layer.bias.value,
            3 => &mut s.x.data,
            4 => &mut s.h,
            _ => &mut s.c,
        },
        loss: |s| {
            let (mut h, mut c) = (s.h.clone(), s.c.clone());
            s.layer.step(&s.x, &mut h, &mut c);
            dot(&h, &s.rh) + dot(&c, &s.rc)
        },
        grad: |s| {
            for p in s.layer.params_mut() {
                p.zero_grad();
            }
            let (mut h, mut c) = (s.h.clone(), s.c.clone());
            let (_, cache) = s.layer.step(&s.x, &mut h, &mut c);
            let g = s.layer.backward_step(&cache, &s.rh.clone(), &s.rc.clone());
            vec![
                s.layer.w_ih.grad.clone(),
                s.layer.w_hh.grad.clone(),
                s.layer.bias.grad.clone(),
                g.dx.data,
                g.dh_prev,
                g.dc_prev,
            ]
        },
    });
    check("lstm_step", &mut f, 40, LAYER_TOLERANCE, 8)
}

/// A whole network over a short labelled sequence, trained-mode forward with
/// a dropout stream that restarts identically on every evaluation.
pub struct NetCheck {
    pub net: BeamNet<f64>,
    pub inputs: Vec<Tensor<f64>>,
    pub labels: Vec<Vec<usize>>,
    pub wide_labels: Vec<Vec<usize>>,
    pub mu: f64,
    pub dropout_seed: u64,
    input_grad: Vec<f64>,
}

impl NetCheck {
    fn run(&mut self, backward: bool) -> f64 {
        self.input_grad.clear();
        let batch = self.inputs[0].dim(0);
        let mut state = self.net.initial_state(batch);
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let steps = self.inputs.len();
        let mut caches = Vec::new();
        let mut dn = Vec::new();
        let mut dw = Vec::new();
        let mut loss = 0.0;
        for t in 0..steps {
            let out = self.net.step(&self.inputs[t], &mut state, Mode::Train, &mut rng);
            let (l, d) = softmax_cross_entropy(&out.narrow_logits, &self.labels[t], 1.0 / steps as f64);
            loss += l;
            dn.push(d);
            let wide = match (&out.wide_logits, t + 1 < steps) {
                (Some(w), true) => {
                    let (l, d) = softmax_cross_entropy(w, &self.wide_labels[t + 1], self.mu / (steps - 1) as f64);
                    loss += l;
                    Some(d)
                }
                _ => None,
            };
            dw.push(wide);
            caches.push(out.cache.expect("train mode"));
        }
        if backward {
            self.input_grad = self.net.backward(&caches, &dn, &dw).swap_remove(0).data;
        }
        loss
    }

    fn locate(&mut self, group: usize, i: usize, write: Option<f64>) -> f64 {
        let n_params = self.param_groups();
        if group >= n_params {
            let x = &mut self.inputs[0].data[i];
            if let Some(v) = write {
                *x = v;
            }
            return *x;
        }
        let mut k = 0;
        let mut out = 0.0;
        self.net.visit_mut(&mut |p| {
            if p.trainable {
                if k == group {
                    if let Some(v) = write {
                        p.value[i] = v;
                    }
                    out = p.value[i];
                }
                k += 1;
            }
        });
        out
    }

    fn param_groups(&self) -> usize {
        let mut k = 0;
        self.net.visit(&mut |p| k += p.trainable as usize);
        k
    }
}

impl Checkable for NetCheck {
    fn groups(&self) -> Vec<(String, usize)> {
        let mut g = Vec::new();
        self.net.visit(&mut |p| {
            if p.trainable {
                g.push((p.name.clone(), p.len()))
            }
        });
        g.push(("input[0]".into(), self.inputs[0].len()));
        g
    }
    fn get(&mut self, group: usize, i: usize) -> f64 {
        self.locate(group, i, None)
    }
    fn set(&mut self, group: usize, i: usize, v: f64) {
        self.locate(group, i, Some(v));
    }
    fn loss(&mut self) -> f64 {
        self.run(false)
    }
    fn gradient(&mut self) -> Vec<Vec<f64>> {
        self.net.zero_grad();
        self.run(true);
        let mut g = Vec::new();
        self.net.visit(&mut |p| {
            if p.trainable {
                g.push(p.grad.clone())
            }
        });
        g.push(self.input_grad.clone());
        g
    }
}

pub fn stack_check(arch: Architecture, steps: usize, seed: u64) -> NetCheck {
    let shape = NetShape { input_len: 8, n_narrow: 8, n_wide: 4 };
    stack_check_with(arch, &ModelConfig::small(), shape, 3, steps, seed)
}

/// Stack check at the given widths, e.g. the full default network.
pub fn stack_check_with(
    arch: Architecture,
    config: &ModelConfig,
    shape: NetShape,
    batch: usize,
    steps: usize,
    seed: u64,
) -> NetCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = BeamNet::new(arch, config, shape, seed);
    let len = shape.input_len;
    let inputs = (0..steps).map(|_| Tensor::new(vec![batch, 2, len], random_vec(&mut rng, batch * 2 * len))).collect();
    let labels = (0..steps).map(|_| (0..batch).map(|_| rng.random_range(0..shape.n_narrow)).collect()).collect();
    let wide_labels = (0..steps).map(|_| (0..batch).map(|_| rng.random_range(0..shape.n_wide)).collect()).collect();
    NetCheck { net, inputs, labels, wide_labels, mu: 1.0, dropout_seed: seed + 100, input_grad: Vec::new() }
}

/// Runs every suite; the gradient-check CLI and tests share this list.
pub fn run_all() -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut reports = vec![
        conv_suite(&mut rng),
        batchnorm_suite(&mut rng),
        relu_suite(&mut rng),
        maxpool_suite(&mut rng),
        linear_suite(&mut rng),
        dropout_suite(&mut rng),
        softmax_suite(&mut rng),
        lstm_suite(&mut rng),
    ];
    let stacks = [
        ("cnn_stack", Architecture::Cnn, 1),
        ("lstm_stack_10_steps", Architecture::Lstm, 10),
        ("enhanced_stack_10_steps", Architecture::Enhanced, 10),
    ];
    for (name, arch, steps) in stacks {
        let mut f = stack_check(arch, steps, 7);
        reports.push(check(name, &mut f, 6, STACK_TOLERANCE, 9));
    }
    // The default widths on a 16-beam wide sweep and 64 narrow beams.
    let full = NetShape { input_len: 16, n_narrow: 64, n_wide: 16 };
    for (name, arch, steps) in
        [("cnn_stack_full", Architecture::Cnn, 1), ("lstm_stack_full_10_steps", Architecture::Lstm, 10)]
    {
        let mut f = stack_check_with(arch, &ModelConfig::default(), full, 2, steps, 11);
        reports.push(check(name, &mut f, 4, STACK_TOLERANCE, 13));
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for r in run_all() {
            eprintln!("{:<26} {:.3e} over {} probes", r.suite, r.max_rel_err, r.probes);
            assert!(r.passed(), "{}: {:.3e} ({})", r.suite, r.max_rel_err, r.worst);
            assert!(r.probes > 0);
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::new(vec![1, 4], random_vec(&mut rng, 4));
        let mut f = Fixed::new(Slices {
            state: x,
            names: vec!["x"],
            slot: |s, _| &mut s.data,
            loss: |s| s.data.iter().map(|v| v * v).sum(),
            grad: |s| vec![s.data.iter().map(|v| 2.1 * v).collect()],
        });
        assert!(!check("wrong", &mut f, 4, LAYER_TOLERANCE, 0).passed());
    }
}
