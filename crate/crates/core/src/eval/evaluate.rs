//! Scheme evaluation on the validation split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{cdf, gain_normalized, spectral_efficiency};
use crate::channel::NoiseModel;
use crate::codebook::best_beam_oracle;
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::nn::BeamNet;
use crate::predictors::baselines::baseline_power_ratio;
use crate::predictors::dataset::{Dataset, Frontend, Sample};
use crate::predictors::runner::{predict_episodes, SchemeContext, SequenceRun};
use crate::predictors::train::{train, EpochRecord, TrainOptions, TrainReport};
use crate::predictors::{Criterion, Scheme, SchemeConfig};
use crate::protocols::{exhaustive_search, refine_topk, two_level_search};
use crate::scalar::Real;
use crate::seed::{derive, tag};

/// Episodes per inference chunk.
const CHUNK: usize = 256;
/// Points of the emitted gain CDF.
pub const CDF_POINTS: usize = 101;

/// The beam a scheme settled on at one step and what it cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub chosen: usize,
    pub budget: usize,
    /// Cross-entropy of the narrow prediction; learned schemes only.
    pub loss_n: Option<f64>,
}

/// Per-episode, per-step metrics of one run, indexed `[episode][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub g_n: Vec<Vec<f64>>,
    pub e_bar: Vec<Vec<f64>>,
    pub budget: Vec<Vec<usize>>,
    pub loss_n: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    /// Training index, 1-based.
    pub t: usize,
    pub g_n: f64,
    pub e_bar: f64,
    /// Mean beam measurements at this step.
    pub budget: f64,
    pub loss_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub criterion: Criterion,
    pub k: usize,
    pub k_n: usize,
    pub runs: usize,
    pub per_step: Vec<StepSummary>,
    /// Mean G_N over the converged window.
    pub g_n_converged: f64,
    pub g_n_mean: f64,
    pub e_bar_mean: f64,
    pub budget_per_episode: f64,
    pub loss_n: Option<f64>,
    /// Empirical CDF of G_N pooled over runs, episodes and steps.
    pub cdf: Vec<(f64, f64)>,
}

/// Turns outcomes into metrics against the noise-free channel.
pub fn score(fe: &Frontend, samples: &[&Sample], outcomes: &[Vec<Outcome>], total_time_s: f64) -> RunMetrics {
    let mut m = RunMetrics { g_n: vec![], e_bar: vec![], budget: vec![], loss_n: vec![] };
    for (sample, steps) in samples.iter().zip(outcomes) {
        let (mut g, mut e, mut b, mut l) = (vec![], vec![], vec![], vec![]);
        for (t, o) in steps.iter().enumerate() {
            let h = sample.channel::<f64>(t);
            let oracle = best_beam_oracle(&h, &fe.narrow);
            let f = fe.narrow.beam(o.chosen);
            g.push(gain_normalized(&h, f, fe.narrow.beam(oracle)));
            e.push(spectral_efficiency(&h, f, &fe.system, o.budget, total_time_s));
            b.push(o.budget);
            l.push(o.loss_n);
        }
        m.g_n.push(g);
        m.e_bar.push(e);
        m.budget.push(b);
        m.loss_n.push(l);
    }
    m
}

/// Outcomes of a learned scheme, including the top-`K_n` refinement.
pub fn learned_outcomes(ctx: &SchemeContext, samples: &[&Sample], run: &SequenceRun) -> Vec<Vec<Outcome>> {
    let sensed = |sel: usize| match ctx.scheme {
        Scheme::SampledDnn => ctx.net_shape().input_len,
        _ => sel,
    };
    samples
        .iter()
        .zip(&run.predictions)
        .map(|(sample, preds)| {
            preds
                .iter()
                .enumerate()
                .map(|(t, p)| {
                    let h = sample.channel::<f64>(t);
                    let refined =
                        refine_topk(&h, &ctx.fe.narrow, &p.narrow, ctx.k_n, &ctx.fe.sounder(sample.noise_key, t));
                    let label = sample.steps[t].label;
                    Outcome {
                        chosen: refined.tx,
                        budget: sensed(p.selection.len()) + refined.budget,
                        loss_n: Some(-p.narrow[label].max(f64::MIN_POSITIVE).ln()),
                    }
                })
                .collect()
        })
        .collect()
}

/// Outcomes of the classical schemes.
pub fn baseline_outcomes(fe: &Frontend, scheme: Scheme, samples: &[&Sample]) -> Vec<Vec<Outcome>> {
    samples
        .iter()
        .map(|sample| {
            (0..sample.steps.len())
                .map(|t| {
                    let h = sample.channel::<f64>(t);
                    let sounder = fe.sounder(sample.noise_key, t);
                    let (chosen, budget) = match scheme {
                        Scheme::Exhaustive => {
                            let r = exhaustive_search(&h, &fe.narrow, &sounder);
                            (r.tx, r.budget)
                        }
                        Scheme::TwoLevel => {
                            let h_w = h.leading_columns(fe.wide.antennas);
                            let r = two_level_search(&h, &h_w, &fe.wide, &fe.narrow, &sounder);
                            (r.tx, r.budget)
                        }
                        Scheme::PowerRatio => {
                            (baseline_power_ratio(&sample.steps[t].wide, &fe.wide, &fe.narrow), fe.wide.len())
                        }
                        s => panic!("{s} is a learned scheme"),
                    };
                    Outcome { chosen, budget, loss_n: None }
                })
                .collect()
        })
        .collect()
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Averages runs step by step; runs share the same episodes.
pub fn summarize(cfg: &SchemeConfig, converged: (usize, usize), runs: &[RunMetrics]) -> SchemeSummary {
    let steps = runs.first().and_then(|r| r.g_n.first()).map_or(0, Vec::len);
    let column = |f: &dyn Fn(&RunMetrics, usize, usize) -> f64, t: usize| {
        mean(runs.iter().flat_map(|r| (0..r.g_n.len()).map(move |e| f(r, e, t))))
    };
    let learned = runs.iter().all(|r| r.loss_n.iter().flatten().all(Option::is_some));
    let per_step: Vec<StepSummary> = (0..steps)
        .map(|t| StepSummary {
            t: t + 1,
            g_n: column(&|r, e, t| r.g_n[e][t], t),
            e_bar: column(&|r, e, t| r.e_bar[e][t], t),
            budget: column(&|r, e, t| r.budget[e][t] as f64, t),
            loss_n: learned.then(|| column(&|r, e, t| r.loss_n[e][t].unwrap_or(0.0), t)),
        })
        .collect();
    let (from, to) = converged;
    let window = &per_step[(from - 1).min(steps)..to.min(steps)];
    let pooled: Vec<f64> = runs.iter().flat_map(|r| r.g_n.iter().flatten().copied()).collect();
    SchemeSummary {
        scheme: cfg.scheme,
        criterion: cfg.criterion,
        k: cfg.k,
        k_n: cfg.k_n,
        runs: runs.len(),
        g_n_converged: mean(window.iter().map(|s| s.g_n)),
        g_n_mean: mean(per_step.iter().map(|s| s.g_n)),
        e_bar_mean: mean(per_step.iter().map(|s| s.e_bar)),
        budget_per_episode: per_step.iter().map(|s| s.budget).sum(),
        loss_n: learned.then(|| mean(per_step.iter().filter_map(|s| s.loss_n))),
        cdf: cdf(&pooled, CDF_POINTS),
        per_step,
    }
}

/// Dataset and front end used for scoring; sweeps are re-measured without
/// noise when the evaluation is configured noise-free.
pub fn eval_view(ds: &Dataset, cfg: &ExperimentConfig) -> (Dataset, Frontend) {
    if cfg.eval.noise_free {
        let fe = Frontend::with_noise(&ds.header.system, NoiseModel::disabled());
        (ds.resounded(&fe), fe)
    } else {
        (ds.clone(), ds.frontend())
    }
}

/// Trains one model of the configured scheme with run seed `seed`.
pub fn train_model<T: Real>(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    progress: impl FnMut(&EpochRecord),
) -> Result<(BeamNet<T>, TrainReport)> {
    let mut ctx = SchemeContext::new(&cfg.scheme, ds.frontend());
    ctx.teacher_forcing = cfg.training.teacher_forcing;
    let mut net = ctx.new_net::<T>(&cfg.model, derive(seed, tag::INIT))?;
    let opts = TrainOptions {
        epochs: cfg.scheme.epochs,
        batch_size: cfg.training.batch_size,
        lr: cfg.scheme.learning_rate(),
        restore_best: cfg.training.restore_best,
        seed,
    };
    let report = train(&mut net, &ctx, &ds.train(), &ds.validation(), &opts, progress)?;
    Ok((net, report))
}

/// Scores a trained model on the validation split of `view`.
pub fn evaluate_model<T: Real>(
    net: &mut BeamNet<T>,
    view: &Dataset,
    fe: &Frontend,
    cfg: &ExperimentConfig,
) -> RunMetrics {
    let ctx = SchemeContext::new(&cfg.scheme, fe.clone());
    let samples = view.validation();
    let run = predict_episodes(net, &ctx, &samples, CHUNK);
    score(fe, &samples, &learned_outcomes(&ctx, &samples, &run), cfg.eval.total_time_s)
}

pub fn evaluate_baseline(view: &Dataset, fe: &Frontend, cfg: &ExperimentConfig) -> RunMetrics {
    let samples = view.validation();
    score(fe, &samples, &baseline_outcomes(fe, cfg.scheme.scheme, &samples), cfg.eval.total_time_s)
}

/// Trains (for learned schemes) and evaluates the configured scheme once per
/// run seed, returning one summary per refinement size in `k_ns`. Models are
/// shared across refinement sizes. Runs proceed in parallel; each is
/// single-threaded and seeded on its own, so results do not depend on the
/// pool size.
pub fn run_experiment<T: Real>(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    base_seed: u64,
    k_ns: &[usize],
    progress: impl Fn(u64, &EpochRecord) + Sync,
) -> Result<Vec<SchemeSummary>> {
    let (view, fe) = eval_view(ds, cfg);
    let converged = (cfg.eval.converged_from, cfg.eval.converged_to);
    let with_kn = |k_n: usize| {
        let mut c = cfg.clone();
        c.scheme.k_n = k_n;
        c
    };
    if !cfg.scheme.scheme.is_learned() {
        let m = evaluate_baseline(&view, &fe, cfg);
        return Ok(k_ns
            .iter()
            .map(|&k_n| summarize(&with_kn(k_n).scheme, converged, std::slice::from_ref(&m)))
            .collect());
    }
    let per_run: Vec<Result<Vec<RunMetrics>>> = cfg
        .eval
        .seeds(base_seed)
        .into_par_iter()
        .map(|seed| {
            let (mut net, _) = train_model::<T>(ds, cfg, seed, |r| progress(seed, r))?;
            Ok(k_ns.iter().map(|&k_n| evaluate_model(&mut net, &view, &fe, &with_kn(k_n))).collect())
        })
        .collect();
    let mut per_kn: Vec<Vec<RunMetrics>> = vec![Vec::new(); k_ns.len()];
    for run in per_run {
        for (slot, m) in per_kn.iter_mut().zip(run?) {
            slot.push(m);
        }
    }
    Ok(k_ns.iter().zip(&per_kn).map(|(&k_n, runs)| summarize(&with_kn(k_n).scheme, converged, runs)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::dirichlet;
    use crate::config::{ClusterSpec, DataConfig, SystemConfig};
    use crate::predictors::dataset::generate_dataset;

    fn los_only() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            system: SystemConfig {
                tx_antennas: 16,
                tx_beams: 16,
                tx_ratio: 4,
                trainings: 10,
                ..SystemConfig::default()
            },
            clusters: ClusterSpec { n_groups: 0, ..ClusterSpec::default() },
            data: DataConfig { samples: 50, ..DataConfig::default() },
            ..ExperimentConfig::default()
        };
        cfg.eval.noise_free = true;
        cfg
    }

    #[test]
    fn exhaustive_is_oracle_everywhere() {
        let mut cfg = los_only();
        cfg.scheme.scheme = Scheme::Exhaustive;
        let ds = generate_dataset(&cfg.system, &cfg.clusters, &cfg.data, 5).unwrap();
        let s = run_experiment::<f64>(&ds, &cfg, 1, &[0], |_, _| {}).unwrap().remove(0);
        assert!(s.per_step.iter().all(|p| p.g_n == 1.0 && p.budget == 16.0));
        assert_eq!(s.budget_per_episode, 160.0);
        assert_eq!(s.cdf.last().unwrap().1, 1.0);
        assert!(s.loss_n.is_none());
    }

    #[test]
    fn random_choice_matches_codebook_average() {
        let cfg = los_only();
        let ds = generate_dataset(&cfg.system, &cfg.clusters, &cfg.data, 6).unwrap();
        let (view, fe) = eval_view(&ds, &cfg);
        let samples = view.validation();
        let n = fe.narrow.len();
        // Beam chosen at random (seeded by position) versus the closed form.
        let mut got = Vec::new();
        let mut expected = Vec::new();
        for (e, s) in samples.iter().enumerate() {
            for t in 0..s.steps.len() {
                let m = (e * 7 + t * 3) % n;
                let outcome = vec![Outcome { chosen: m, budget: 0, loss_n: None }];
                let single = Sample { steps: vec![s.steps[t].clone()], ..(*s).clone() };
                got.push(score(&fe, &[&single], &[outcome], 1.0).g_n[0][0]);
                let u = s.steps[t].los_aod.sin();
                let gain = |k: usize| dirichlet(fe.narrow.directions[k].sin() - u, 16).norm_sqr();
                let best = (0..n).map(gain).fold(0.0, f64::max);
                expected.push(gain(m) / best);
            }
        }
        for (g, x) in got.iter().zip(&expected) {
            assert!((g - x).abs() < 1e-9, "{g} vs {x}");
        }
    }

    #[test]
    fn learned_budget_matches_closed_form() {
        let mut cfg = los_only();
        cfg.model = crate::nn::ModelConfig::small();
        cfg.scheme = SchemeConfig { scheme: Scheme::Enhanced, k: 2, epochs: 1, ..SchemeConfig::default() };
        cfg.training.batch_size = 16;
        cfg.eval.runs = 1;
        let ds = generate_dataset(&cfg.system, &cfg.clusters, &cfg.data, 7).unwrap();
        let out = run_experiment::<f64>(&ds, &cfg, 1, &[0, 3], |_, _| {}).unwrap();
        assert_eq!(out[0].budget_per_episode, (4 + 9 * 2) as f64);
        assert_eq!(out[1].budget_per_episode, (4 + 9 * 2 + 10 * 3) as f64);
        assert!(out[1].g_n_mean >= out[0].g_n_mean);
        for s in &out {
            assert!(s.per_step.iter().all(|p| (0.0..=1.0).contains(&p.g_n) && p.e_bar >= 0.0));
        }
    }
}
