//! Drives a network over batches of episodes, building each step's input
//! from the measurements the scheme would actually take.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::baselines::sampled_measurements;
use super::dataset::{Frontend, Sample};
use super::features::{batch, features_f64, preprocess};
use super::selection::{aggregate_wide, select_mpc, select_onc};
use super::{Criterion, Scheme, SchemeConfig};
use crate::error::{Error, Result};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::{Architecture, BeamNet, Mode, NetShape, SeqState, Tensor};
use crate::protocols::{argmax, MeasurementVector};
use crate::scalar::Real;

/// Everything a scheme needs besides the network weights.
#[derive(Debug, Clone)]
pub struct SchemeContext {
    pub scheme: Scheme,
    pub criterion: Criterion,
    pub k: usize,
    pub k_n: usize,
    pub mu: f64,
    pub fe: Frontend,
    /// Select partial sweeps from the labels instead of the predictions.
    pub teacher_forcing: bool,
    /// Centre the enhanced scheme's selection on the true wide beam.
    pub oracle_wide: bool,
}

impl SchemeContext {
    pub fn new(cfg: &SchemeConfig, fe: Frontend) -> Self {
        Self {
            scheme: cfg.scheme,
            criterion: cfg.criterion,
            k: cfg.k,
            k_n: cfg.k_n,
            mu: cfg.mu,
            fe,
            teacher_forcing: false,
            oracle_wide: false,
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        match self.scheme {
            Scheme::Cnn | Scheme::SampledDnn => Ok(Architecture::Cnn),
            Scheme::Lstm | Scheme::Adaptive => Ok(Architecture::Lstm),
            Scheme::Enhanced => Ok(Architecture::Enhanced),
            s => Err(Error::Config(format!("scheme {s} has no network"))),
        }
    }

    pub fn wide_beams(&self) -> usize {
        self.fe.wide.len()
    }

    pub fn net_shape(&self) -> NetShape {
        let input_len = match self.scheme {
            Scheme::SampledDnn => self.fe.narrow.len().div_ceil(self.fe.system.tx_ratio),
            _ => self.wide_beams(),
        };
        NetShape { input_len, n_narrow: self.fe.narrow.len(), n_wide: self.wide_beams() }
    }

    pub fn new_net<T: Real>(&self, model: &crate::nn::ModelConfig, seed: u64) -> Result<BeamNet<T>> {
        let shape = self.net_shape();
        model.check_input_len(shape.input_len)?;
        Ok(BeamNet::new(self.architecture()?, model, shape, seed))
    }

    /// Wide beams measured at step `t` (0-based) of one episode.
    fn selection(&self, t: usize, sample: &Sample, prev: Option<&StepPrediction>) -> Vec<usize> {
        let all: Vec<usize> = (0..self.wide_beams()).collect();
        let adaptive = matches!(self.scheme, Scheme::Adaptive | Scheme::Enhanced);
        let Some(prev) = prev.filter(|_| adaptive && t > 0) else { return all };
        let k = self.k;
        let ratio = self.fe.system.tx_ratio;
        match (self.scheme, self.criterion) {
            (Scheme::Adaptive, Criterion::Onc) => {
                let m = if self.teacher_forcing { sample.steps[t - 1].label } else { argmax(&prev.narrow) };
                select_onc(self.fe.narrow.directions[m], &self.fe.wide.directions, k)
            }
            (Scheme::Adaptive, Criterion::Mpc) => {
                if self.teacher_forcing {
                    let mut one_hot = vec![0.0; self.fe.narrow.len()];
                    one_hot[sample.steps[t - 1].label] = 1.0;
                    select_mpc(&aggregate_wide(&one_hot, ratio), k)
                } else {
                    select_mpc(&aggregate_wide(&prev.narrow, ratio), k)
                }
            }
            (_, criterion) => {
                let truth = sample.steps[t].wide_label;
                let forced = self.teacher_forcing || self.oracle_wide;
                let wide_probs = prev.wide.as_deref().expect("enhanced model has a wide head");
                match criterion {
                    Criterion::Onc => {
                        let w = if forced { truth } else { argmax(wide_probs) };
                        select_onc(self.fe.wide.directions[w], &self.fe.wide.directions, k)
                    }
                    Criterion::Mpc => {
                        if forced {
                            let mut one_hot = vec![0.0; self.wide_beams()];
                            one_hot[truth] = 1.0;
                            select_mpc(&one_hot, k)
                        } else {
                            select_mpc(wide_probs, k)
                        }
                    }
                }
            }
        }
    }

    /// Raw measurements and mask fed to the network at step `t`.
    pub fn measurement(&self, t: usize, sample: &Sample, selection: &[usize]) -> (Vec<Complex64>, Vec<bool>) {
        match self.scheme {
            Scheme::SampledDnn => {
                let h = sample.channel::<f64>(t);
                let y = sampled_measurements(
                    &h,
                    &self.fe.narrow,
                    self.fe.system.tx_ratio,
                    &self.fe.sounder(sample.noise_key, t),
                );
                let n = y.len();
                (y, vec![true; n])
            }
            _ => {
                let mut mask = vec![false; self.wide_beams()];
                for &i in selection {
                    mask[i] = true;
                }
                let values = sample.steps[t]
                    .wide
                    .iter()
                    .zip(&mask)
                    .map(|(z, &m)| if m { *z } else { Complex64::new(0.0, 0.0) })
                    .collect();
                (values, mask)
            }
        }
    }
}

/// Network output for one episode at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPrediction {
    pub narrow: Vec<f64>,
    /// Auxiliary prediction of the next step's best wide beam.
    pub wide: Option<Vec<f64>>,
    /// Wide beams measured to build this step's input.
    pub selection: Vec<usize>,
    /// Input had no usable measurement; `narrow` is uniform.
    pub degenerate: bool,
}

/// Per-episode predictions `[episode][step]` and the mean losses.
#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub predictions: Vec<Vec<StepPrediction>>,
    pub loss_n: f64,
    pub loss_w: f64,
}

fn probs_f64<T: Real>(logits: &Tensor<T>) -> Vec<Vec<f64>> {
    let n = logits.dim(1);
    logits
        .data
        .chunks_exact(n)
        .map(|row| {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let e: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Runs a batch of episodes through `net`. With `learn` set (training mode
/// only) the losses are back-propagated into the parameter gradients.
pub fn run_sequences<T: Real>(
    net: &mut BeamNet<T>,
    ctx: &SchemeContext,
    episodes: &[&Sample],
    mode: Mode,
    rng: &mut ChaCha8Rng,
    learn: bool,
) -> SequenceRun {
    assert!(!learn || mode == Mode::Train, "learning needs training mode");
    let b = episodes.len();
    let steps = episodes.first().map_or(0, |s| s.steps.len());
    let input_len = net.shape.input_len;
    let mut state: SeqState<T> = net.initial_state(b);
    let mut predictions: Vec<Vec<StepPrediction>> = vec![Vec::with_capacity(steps); b];
    let mut caches = Vec::new();
    let mut d_narrow = Vec::new();
    let mut d_wide = Vec::new();
    let (mut loss_n, mut loss_w) = (0.0, 0.0);
    let uniform = vec![1.0 / net.shape.n_narrow as f64; net.shape.n_narrow];

    for t in 0..steps {
        let mut rows = Vec::with_capacity(b);
        let mut selections = Vec::with_capacity(b);
        let mut degenerate = vec![false; b];
        for (e, sample) in episodes.iter().enumerate() {
            let sel = ctx.selection(t, sample, predictions[e].last());
            let (values, mask) = ctx.measurement(t, sample, &sel);
            rows.push(match features_f64(&values, &mask) {
                Ok(f) => f,
                Err(_) => {
                    log::warn!("all-zero measurement at step {t}; substituting a uniform prediction");
                    degenerate[e] = true;
                    vec![0.0; 2 * input_len]
                }
            });
            selections.push(sel);
        }
        let x = batch::<T>(&rows, input_len);
        let out = net.step(&x, &mut state, mode, rng);
        let narrow = probs_f64(&out.narrow_logits);
        let wide = out.wide_logits.as_ref().map(probs_f64);

        let labels: Vec<usize> = episodes.iter().map(|s| s.steps[t].label).collect();
        let (l, d) = softmax_cross_entropy(&out.narrow_logits, &labels, 1.0 / steps as f64);
        loss_n += l;
        let dw = match &out.wide_logits {
            Some(w) if t + 1 < steps => {
                let next: Vec<usize> = episodes.iter().map(|s| s.steps[t + 1].wide_label).collect();
                let (l, d) = softmax_cross_entropy(w, &next, 1.0 / (steps - 1) as f64);
                loss_w += l;
                (ctx.mu > 0.0)
                    .then(|| Tensor::new(d.shape.clone(), d.data.iter().map(|&g| g * T::of(ctx.mu)).collect()))
            }
            _ => None,
        };
        if learn {
            caches.push(out.cache.expect("training mode keeps caches"));
            d_narrow.push(d);
            d_wide.push(dw);
        }

        for (e, sel) in selections.into_iter().enumerate() {
            predictions[e].push(StepPrediction {
                narrow: if degenerate[e] { uniform.clone() } else { narrow[e].clone() },
                wide: wide.as_ref().map(|w| w[e].clone()),
                selection: sel,
                degenerate: degenerate[e],
            });
        }
    }
    if learn {
        net.backward(&caches, &d_narrow, &d_wide);
    }
    SequenceRun { predictions, loss_n, loss_w }
}

/// Inference over many episodes in fixed-size chunks.
pub fn predict_episodes<T: Real>(
    net: &mut BeamNet<T>,
    ctx: &SchemeContext,
    episodes: &[&Sample],
    chunk: usize,
) -> SequenceRun {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut all = SequenceRun { predictions: Vec::with_capacity(episodes.len()), loss_n: 0.0, loss_w: 0.0 };
    for part in episodes.chunks(chunk.max(1)) {
        let run = run_sequences(net, ctx, part, Mode::Infer, &mut rng, false);
        let w = part.len() as f64;
        all.loss_n += run.loss_n * w;
        all.loss_w += run.loss_w * w;
        all.predictions.extend(run.predictions);
    }
    let n = episodes.len().max(1) as f64;
    all.loss_n /= n;
    all.loss_w /= n;
    all
}

/// Probabilities, auxiliary wide probabilities and the chosen beam.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    pub narrow_probs: Vec<f64>,
    pub wide_probs: Option<Vec<f64>>,
    pub chosen: usize,
}

impl PredictorOutput {
    fn from_logits<T: Real>(narrow: &Tensor<T>, wide: Option<&Tensor<T>>) -> Self {
        let narrow_probs = probs_f64(narrow).swap_remove(0);
        let chosen = argmax(&narrow_probs);
        Self { narrow_probs, wide_probs: wide.map(|w| probs_f64(w).swap_remove(0)), chosen }
    }

    fn uniform(n: usize, wide: Option<usize>) -> Self {
        Self { narrow_probs: vec![1.0 / n as f64; n], wide_probs: wide.map(|w| vec![1.0 / w as f64; w]), chosen: 0 }
    }
}

fn single_input<T: Real>(y: &MeasurementVector<T>) -> Option<Tensor<T>> {
    match preprocess(y) {
        Ok(x) => {
            let l = x.dim(1);
            Some(x.reshape(vec![1, 2, l]))
        }
        Err(_) => {
            log::warn!("all-zero measurement vector; substituting a uniform prediction");
            None
        }
    }
}

/// One CNN inference on a single measurement vector.
pub fn predict_cnn<T: Real>(net: &mut BeamNet<T>, y: &MeasurementVector<T>) -> PredictorOutput {
    let Some(x) = single_input(y) else { return PredictorOutput::uniform(net.shape.n_narrow, None) };
    let mut state = net.initial_state(1);
    let out = net.step(&x, &mut state, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0));
    PredictorOutput::from_logits(&out.narrow_logits, None)
}

/// One recurrent inference step; `state` carries the history.
pub fn predict_lstm<T: Real>(
    net: &mut BeamNet<T>,
    y: &MeasurementVector<T>,
    state: &mut SeqState<T>,
) -> PredictorOutput {
    let x = single_input(y).unwrap_or_else(|| Tensor::zeros(vec![1, 2, y.len()]));
    let degenerate = x.data.iter().all(|v| *v == T::zero());
    let out = net.step(&x, state, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0));
    if degenerate {
        return PredictorOutput::uniform(net.shape.n_narrow, out.wide_logits.as_ref().map(|w| w.dim(1)));
    }
    PredictorOutput::from_logits(&out.narrow_logits, out.wide_logits.as_ref())
}
