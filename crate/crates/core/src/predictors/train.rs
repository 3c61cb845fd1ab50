//! Mini-batch training with per-epoch validation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Sample;
use super::features::{batch, features_f64};
use super::runner::{predict_episodes, run_sequences, SchemeContext};
use crate::error::{Error, Result};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::{Adam, AdamConfig, BeamNet, Mode, Parameterized};
use crate::scalar::Real;
use crate::seed::{derive, tag};

/// Episodes per chunk when scoring a split without gradients.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub restore_best: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

/// Mean losses of one split after one epoch. Epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss_n: f64,
    pub loss_w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation: f64,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,split,loss_n,loss_w")?;
        for r in &self.curve {
            writeln!(w, "{},{},{:.9},{:.9}", r.epoch, r.split.name(), r.loss_n, r.loss_w)?;
        }
        Ok(())
    }

    pub fn losses(&self, split: Split) -> Vec<f64> {
        self.curve.iter().filter(|r| r.split == split).map(|r| r.loss_n).collect()
    }
}

/// One optimisation step of a per-step model on `(episode, step)` pairs.
fn pair_step<T: Real>(
    net: &mut BeamNet<T>,
    ctx: &SchemeContext,
    pairs: &[(&Sample, usize)],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let len = net.shape.input_len;
    let all: Vec<usize> = (0..ctx.wide_beams()).collect();
    let rows: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(s, t)| {
            let (values, mask) = ctx.measurement(t, s, &all);
            features_f64(&values, &mask).unwrap_or_else(|_| vec![0.0; 2 * len])
        })
        .collect();
    let labels: Vec<usize> = pairs.iter().map(|&(s, t)| s.steps[t].label).collect();
    let x = batch::<T>(&rows, len);
    let mut state = net.initial_state(pairs.len());
    let out = net.step(&x, &mut state, Mode::Train, rng);
    let (loss, d) = softmax_cross_entropy(&out.narrow_logits, &labels, 1.0);
    net.backward(&[out.cache.expect("training mode keeps caches")], &[d], &[None]);
    loss
}

fn objective(loss_n: f64, loss_w: f64, mu: f64) -> f64 {
    loss_n + mu * loss_w
}

/// Trains `net` on `train`, scoring `validation` after every epoch, and
/// restores the weights of the best validation epoch when asked to.
pub fn train<T: Real>(
    net: &mut BeamNet<T>,
    ctx: &SchemeContext,
    train: &[&Sample],
    validation: &[&Sample],
    opts: &TrainOptions,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Config("training needs non-empty train and validation splits".into()));
    }
    let mut adam = Adam::new(AdamConfig { lr: opts.lr, ..AdamConfig::default() });
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive(opts.seed, tag::SHUFFLE));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive(opts.seed, tag::DROPOUT));
    let per_step = !net.is_recurrent();
    let steps = train[0].steps.len();

    let mut curve = Vec::new();
    let mut record = |curve: &mut Vec<EpochRecord>, epoch, split, loss_n: f64, loss_w: f64| {
        let r = EpochRecord { epoch, split, loss_n, loss_w };
        progress(&r);
        curve.push(r);
    };
    let score = |net: &mut BeamNet<T>, split: &[&Sample]| {
        let run = predict_episodes(net, ctx, split, EVAL_CHUNK);
        (run.loss_n, run.loss_w)
    };

    let (tn, tw) = score(net, train);
    record(&mut curve, 0, Split::Train, tn, tw);
    let (vn, vw) = score(net, validation);
    record(&mut curve, 0, Split::Validation, vn, vw);
    let mut best = (0, objective(vn, vw, ctx.mu), net.clone());

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut pairs: Vec<(usize, usize)> = (0..train.len()).flat_map(|e| (0..steps).map(move |t| (e, t))).collect();
    for epoch in 1..=opts.epochs {
        let (mut sum_n, mut sum_w, mut weight) = (0.0, 0.0, 0.0);
        if per_step {
            pairs.shuffle(&mut shuffle_rng);
            for chunk in pairs.chunks(opts.batch_size) {
                let batch: Vec<(&Sample, usize)> = chunk.iter().map(|&(e, t)| (train[e], t)).collect();
                let loss = pair_step(net, ctx, &batch, &mut dropout_rng);
                adam.update(net);
                sum_n += loss * chunk.len() as f64;
                weight += chunk.len() as f64;
            }
        } else {
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(opts.batch_size) {
                let episodes: Vec<&Sample> = chunk.iter().map(|&e| train[e]).collect();
                let run = run_sequences(net, ctx, &episodes, Mode::Train, &mut dropout_rng, true);
                adam.update(net);
                sum_n += run.loss_n * chunk.len() as f64;
                sum_w += run.loss_w * chunk.len() as f64;
                weight += chunk.len() as f64;
            }
        }
        let (tn, tw) = (sum_n / weight, sum_w / weight);
        if !objective(tn, tw, ctx.mu).is_finite() {
            return Err(Error::Diverged { epoch, loss: objective(tn, tw, ctx.mu) });
        }
        record(&mut curve, epoch, Split::Train, tn, tw);
        let (vn, vw) = score(net, validation);
        record(&mut curve, epoch, Split::Validation, vn, vw);
        let v = objective(vn, vw, ctx.mu);
        if v < best.1 {
            best = (epoch, v, net.clone());
        }
    }
    let (best_epoch, best_validation, best_net) = best;
    if opts.restore_best {
        *net = best_net;
    }
    debug_assert!(net.trainable_len() > 0);
    Ok(TrainReport { curve, best_epoch, best_validation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ClusterSpec, DataConfig, SystemConfig};
    use crate::nn::ModelConfig;
    use crate::predictors::dataset::generate_dataset;
    use crate::predictors::{Scheme, SchemeConfig};

    fn tiny() -> (crate::predictors::dataset::Dataset, SystemConfig) {
        let system =
            SystemConfig { tx_antennas: 16, tx_beams: 16, tx_ratio: 4, trainings: 4, ..SystemConfig::default() };
        let data = DataConfig { samples: 40, ..DataConfig::default() };
        (generate_dataset(&system, &ClusterSpec::default(), &data, 3).unwrap(), system)
    }

    fn run(scheme: Scheme, epochs: usize) -> TrainReport {
        let (ds, _) = tiny();
        let ctx = SchemeContext::new(&SchemeConfig { scheme, k: 2, ..SchemeConfig::default() }, ds.frontend());
        let mut net = ctx.new_net::<f64>(&ModelConfig::small(), 1).unwrap();
        let opts = TrainOptions { epochs, batch_size: 8, lr: 3e-3, restore_best: true, seed: 9 };
        train(&mut net, &ctx, &ds.train(), &ds.validation(), &opts, |_| {}).unwrap()
    }

    #[test]
    fn curve_has_two_rows_per_epoch_and_loss_falls() {
        for scheme in [Scheme::Cnn, Scheme::Lstm, Scheme::Enhanced, Scheme::SampledDnn] {
            let r = run(scheme, 6);
            assert_eq!(r.curve.len(), 14);
            let t = r.losses(Split::Train);
            assert!(t[6] < t[0], "{scheme}: {t:?}");
            assert!(r.best_epoch <= 6);
        }
    }

    #[test]
    fn training_is_deterministic() {
        assert_eq!(run(Scheme::Adaptive, 2), run(Scheme::Adaptive, 2));
    }

    #[test]
    fn csv_header() {
        let mut out = Vec::new();
        run(Scheme::Cnn, 1).write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("epoch,split,loss_n,loss_w\n0,train,"));
        assert_eq!(text.lines().count(), 5);
    }
}
