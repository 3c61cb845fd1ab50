//! The beam-prediction networks: a shared convolutional trunk followed by
//! either a dense head (CNN), a stacked LSTM (sequence model), or a stacked
//! LSTM plus an auxiliary wide-beam LSTM (enhanced model).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    dropout, dropout_backward, global_max_pool, global_max_pool_backward, relu_backward, relu_forward, BatchNorm1d,
    BatchNormCache, Conv1d, Conv1dCache, Linear,
};
use super::lstm::{LstmLayer, LstmStepCache};
use super::param::{Param, Parameterized};
use super::tensor::Tensor;
use super::{Mode, ModelConfig};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Cnn,
    Lstm,
    Enhanced,
}

/// Problem-dependent sizes: input length (number of wide beams) and class counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input_len: usize,
    pub n_narrow: usize,
    pub n_wide: usize,
}

#[derive(Debug, Clone)]
pub struct BeamNet<T> {
    pub arch: Architecture,
    pub config: ModelConfig,
    pub shape: NetShape,
    pub conv1: Conv1d<T>,
    pub bn1: BatchNorm1d<T>,
    pub conv2: Conv1d<T>,
    pub bn2: BatchNorm1d<T>,
    pub lstm: Vec<LstmLayer<T>>,
    pub aux: Vec<LstmLayer<T>>,
    pub head: Linear<T>,
    pub wide_head: Option<Linear<T>>,
}

/// Recurrent state for a batch of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqState<T> {
    pub batch: usize,
    pub h: Vec<Vec<T>>,
    pub c: Vec<Vec<T>>,
    pub aux_h: Vec<Vec<T>>,
    pub aux_c: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
struct TrunkCache<T> {
    conv1: Conv1dCache<T>,
    bn1: BatchNormCache<T>,
    act1: Tensor<T>,
    conv2: Conv1dCache<T>,
    bn2: BatchNormCache<T>,
    act2: Tensor<T>,
    pool_arg: Vec<usize>,
}

#[derive(Debug, Clone)]
struct RecurrentCache<T> {
    steps: Vec<(LstmStepCache<T>, Option<Vec<T>>)>,
}

#[derive(Debug, Clone)]
struct HeadCache<T> {
    input: Tensor<T>,
    mask: Option<Vec<T>>,
}

/// Forward record of one time step, consumed by [`BeamNet::backward`].
#[derive(Debug, Clone)]
pub struct StepCache<T> {
    trunk: TrunkCache<T>,
    main: Option<RecurrentCache<T>>,
    head: HeadCache<T>,
    aux: Option<RecurrentCache<T>>,
    wide_head: Option<HeadCache<T>>,
}

#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    /// `(B, n_narrow)` logits for the current step.
    pub narrow_logits: Tensor<T>,
    /// `(B, n_wide)` auxiliary logits predicting the next step's best wide beam.
    pub wide_logits: Option<Tensor<T>>,
    pub cache: Option<StepCache<T>>,
}

impl<T: Real> BeamNet<T> {
    pub fn new(arch: Architecture, config: &ModelConfig, shape: NetShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config;
        let conv1 = Conv1d::new("conv1", 2, c.conv1_channels, c.kernel, c.conv1_stride, c.padding, &mut rng);
        let bn1 = BatchNorm1d::new("bn1", c.conv1_channels, c.bn_momentum, c.bn_eps);
        let conv2 =
            Conv1d::new("conv2", c.conv1_channels, c.conv2_channels, c.kernel, c.conv2_stride, c.padding, &mut rng);
        let bn2 = BatchNorm1d::new("bn2", c.conv2_channels, c.bn_momentum, c.bn_eps);
        let stack = |prefix: &str, rng: &mut ChaCha8Rng| -> Vec<LstmLayer<T>> {
            (0..c.lstm_layers)
                .map(|l| {
                    let inputs = if l == 0 { c.conv2_channels } else { c.hidden };
                    LstmLayer::new(&format!("{prefix}.{l}"), inputs, c.hidden, c.forget_bias, rng)
                })
                .collect()
        };
        let lstm = if arch == Architecture::Cnn { Vec::new() } else { stack("lstm", &mut rng) };
        let aux = if arch == Architecture::Enhanced { stack("aux", &mut rng) } else { Vec::new() };
        let head_in = if arch == Architecture::Cnn { c.conv2_channels } else { c.hidden };
        let head = Linear::new("head", head_in, shape.n_narrow, c.head_init_scale, &mut rng);
        let wide_head = (arch == Architecture::Enhanced)
            .then(|| Linear::new("wide_head", c.hidden, shape.n_wide, c.head_init_scale, &mut rng));
        Self { arch, config: config.clone(), shape, conv1, bn1, conv2, bn2, lstm, aux, head, wide_head }
    }

    pub fn is_recurrent(&self) -> bool {
        self.arch != Architecture::Cnn
    }

    pub fn initial_state(&self, batch: usize) -> SeqState<T> {
        let zeros = |n: usize| vec![vec![T::zero(); batch * self.config.hidden]; n];
        SeqState {
            batch,
            h: zeros(self.lstm.len()),
            c: zeros(self.lstm.len()),
            aux_h: zeros(self.aux.len()),
            aux_c: zeros(self.aux.len()),
        }
    }

    /// Pooled trunk features, `(B, 2, L) -> (B, conv2_channels)`.
    fn trunk(&mut self, x: &Tensor<T>, train: bool) -> (Tensor<T>, Option<TrunkCache<T>>) {
        assert_eq!(x.shape.len(), 3, "input must be (batch, 2, length)");
        assert_eq!(x.dim(1), 2, "input must have two feature channels");
        let (z1, conv1) = self.conv1.forward(x);
        let (mut act1, bn1) = self.bn1.forward(&z1, train);
        relu_forward(&mut act1);
        let (z2, conv2) = self.conv2.forward(&act1);
        let (mut act2, bn2) = self.bn2.forward(&z2, train);
        relu_forward(&mut act2);
        let (feat, pool_arg) = global_max_pool(&act2);
        let cache = match (bn1, bn2) {
            (Some(bn1), Some(bn2)) => Some(TrunkCache { conv1, bn1, act1, conv2, bn2, act2, pool_arg }),
            _ => None,
        };
        (feat, cache)
    }

    fn trunk_backward(&mut self, cache: &TrunkCache<T>, dfeat: &Tensor<T>) -> Tensor<T> {
        let mut d = global_max_pool_backward(&cache.pool_arg, dfeat, cache.act2.dim(2));
        relu_backward(&cache.act2, &mut d);
        let d = self.bn2.backward(&cache.bn2, &d);
        let mut d = self.conv2.backward(&cache.conv2, &d);
        relu_backward(&cache.act1, &mut d);
        let d = self.bn1.backward(&cache.bn1, &d);
        self.conv1.backward(&cache.conv1, &d)
    }

    fn run_stack(
        layers: &[LstmLayer<T>],
        h: &mut [Vec<T>],
        c: &mut [Vec<T>],
        input: Tensor<T>,
        p: f64,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> (Tensor<T>, RecurrentCache<T>) {
        let mut x = input;
        let mut steps = Vec::with_capacity(layers.len());
        for (l, layer) in layers.iter().enumerate() {
            let (mut out, cache) = layer.step(&x, &mut h[l], &mut c[l]);
            let mask = dropout(&mut out, p, train, rng);
            steps.push((cache, mask));
            x = out;
        }
        (x, RecurrentCache { steps })
    }

    /// One forward step. For the CNN the state is ignored.
    pub fn step(&mut self, x: &Tensor<T>, state: &mut SeqState<T>, mode: Mode, rng: &mut ChaCha8Rng) -> StepOutput<T> {
        let train = mode == Mode::Train;
        let p_rec = self.config.lstm_dropout;
        let p_fc = self.config.fc_dropout;
        let (feat, trunk) = self.trunk(x, train);

        let (head_in, main) = if self.is_recurrent() {
            assert_eq!(state.batch, x.dim(0), "state batch does not match input batch");
            let (out, cache) = Self::run_stack(&self.lstm, &mut state.h, &mut state.c, feat.clone(), p_rec, train, rng);
            (out, Some(cache))
        } else {
            (feat.clone(), None)
        };
        let mut narrow_logits = self.head.forward(&head_in);
        let head_mask = dropout(&mut narrow_logits, p_fc, train, rng);

        let mut wide_logits = None;
        let mut aux = None;
        let mut wide_cache = None;
        if let Some(wide_head) = &self.wide_head {
            let (out, cache) = Self::run_stack(&self.aux, &mut state.aux_h, &mut state.aux_c, feat, p_rec, train, rng);
            let mut logits = wide_head.forward(&out);
            let mask = dropout(&mut logits, p_fc, train, rng);
            aux = Some(cache);
            wide_cache = Some(HeadCache { input: out, mask });
            wide_logits = Some(logits);
        }

        let cache = trunk.map(|trunk| StepCache {
            trunk,
            main,
            head: HeadCache { input: head_in, mask: head_mask },
            aux,
            wide_head: wide_cache,
        });
        StepOutput { narrow_logits, wide_logits, cache }
    }

    /// Back-propagation through time over the cached steps of one sequence
    /// batch. `d_narrow[t]` and `d_wide[t]` are the logit gradients of step
    /// `t`; gradients accumulate into the parameters. Returns the input
    /// gradient of every step.
    pub fn backward(
        &mut self,
        caches: &[StepCache<T>],
        d_narrow: &[Tensor<T>],
        d_wide: &[Option<Tensor<T>>],
    ) -> Vec<Tensor<T>> {
        assert_eq!(caches.len(), d_narrow.len());
        let Some(first) = caches.first() else { return Vec::new() };
        let mut dx = vec![Tensor::zeros(vec![0]); caches.len()];
        let batch = first.head.input.dim(0);
        let zeros = || vec![T::zero(); batch * self.config.hidden];
        let mut carry_h: Vec<Vec<T>> = (0..self.lstm.len()).map(|_| zeros()).collect();
        let mut carry_c = carry_h.clone();
        let mut aux_h: Vec<Vec<T>> = (0..self.aux.len()).map(|_| zeros()).collect();
        let mut aux_c = aux_h.clone();

        for t in (0..caches.len()).rev() {
            let cache = &caches[t];
            let mut d = d_narrow[t].clone();
            dropout_backward(&cache.head.mask, &mut d);
            let d_head_in = self.head.backward(&cache.head.input, &d);
            let mut d_feat = match &cache.main {
                Some(rc) => Self::stack_backward(&mut self.lstm, rc, d_head_in, &mut carry_h, &mut carry_c),
                None => d_head_in,
            };

            if let (Some(wh), Some(rc), Some(wide_head)) = (&cache.wide_head, &cache.aux, self.wide_head.as_mut()) {
                let d_out = match d_wide.get(t).and_then(|d| d.as_ref()) {
                    Some(dw) => {
                        let mut dw = dw.clone();
                        dropout_backward(&wh.mask, &mut dw);
                        wide_head.backward(&wh.input, &dw)
                    }
                    None => Tensor::zeros(wh.input.shape.clone()),
                };
                let d_aux = Self::stack_backward(&mut self.aux, rc, d_out, &mut aux_h, &mut aux_c);
                d_feat.data.iter_mut().zip(&d_aux.data).for_each(|(a, &b)| *a = *a + b);
            }
            dx[t] = self.trunk_backward(&cache.trunk, &d_feat);
        }
        dx
    }

    fn stack_backward(
        layers: &mut [LstmLayer<T>],
        cache: &RecurrentCache<T>,
        d_top: Tensor<T>,
        carry_h: &mut [Vec<T>],
        carry_c: &mut [Vec<T>],
    ) -> Tensor<T> {
        let mut d = d_top;
        for l in (0..layers.len()).rev() {
            let (step, mask) = &cache.steps[l];
            dropout_backward(mask, &mut d);
            let dh: Vec<T> = d.data.iter().zip(&carry_h[l]).map(|(&a, &b)| a + b).collect();
            let g = layers[l].backward_step(step, &dh, &carry_c[l]);
            carry_h[l] = g.dh_prev;
            carry_c[l] = g.dc_prev;
            d = g.dx;
        }
        d
    }

    /// Multiply-accumulate count of one forward step for a single sample, times two.
    pub fn flops_per_step(&self) -> u64 {
        let l1 = self.conv1.out_len(self.shape.input_len);
        let l2 = self.conv2.out_len(l1);
        let conv = |c: &Conv1d<T>, lo: usize| (c.out_channels * c.in_channels * c.kernel * lo) as u64;
        let lstm = |ls: &[LstmLayer<T>]| ls.iter().map(|l| (4 * l.hidden * (l.inputs + l.hidden)) as u64).sum::<u64>();
        let fc = |f: &Linear<T>| (f.inputs * f.outputs) as u64;
        let macs = conv(&self.conv1, l1)
            + conv(&self.conv2, l2)
            + lstm(&self.lstm)
            + lstm(&self.aux)
            + fc(&self.head)
            + self.wide_head.as_ref().map_or(0, fc);
        2 * macs
    }

    /// Feature shape after the trunk: `(conv2_channels, length)` before pooling.
    pub fn trunk_shape(&self) -> [(usize, usize); 2] {
        let l1 = self.conv1.out_len(self.shape.input_len);
        let l2 = self.conv2.out_len(l1);
        [(self.conv1.out_channels, l1), (self.conv2.out_channels, l2)]
    }
}

impl<T: Real> Parameterized<T> for BeamNet<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv1.params().into_iter().for_each(&mut *f);
        self.bn1.params().into_iter().for_each(&mut *f);
        self.conv2.params().into_iter().for_each(&mut *f);
        self.bn2.params().into_iter().for_each(&mut *f);
        for l in self.lstm.iter().chain(&self.aux) {
            l.params().into_iter().for_each(&mut *f);
        }
        self.head.params().into_iter().for_each(&mut *f);
        if let Some(w) = &self.wide_head {
            w.params().into_iter().for_each(&mut *f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv1.params_mut().into_iter().for_each(&mut *f);
        self.bn1.params_mut().into_iter().for_each(&mut *f);
        self.conv2.params_mut().into_iter().for_each(&mut *f);
        self.bn2.params_mut().into_iter().for_each(&mut *f);
        for l in self.lstm.iter_mut().chain(self.aux.iter_mut()) {
            l.params_mut().into_iter().for_each(&mut *f);
        }
        self.head.params_mut().into_iter().for_each(&mut *f);
        if let Some(w) = &mut self.wide_head {
            w.params_mut().into_iter().for_each(&mut *f);
        }
    }
}
