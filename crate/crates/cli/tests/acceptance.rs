//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the lines always reach the console; exits nonzero if any
//! criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use beamtrain::channel::{assemble_sized, steering_vector, NoiseModel, NoiseStream};
use beamtrain::codebook::{best_beam_oracle, dirichlet, narrow_codebook, wide_codebook};
use beamtrain::eval::evaluate::{learned_outcomes, run_experiment};
use beamtrain::eval::metrics::overhead_factor;
use beamtrain::nn::gradcheck::{self, LAYER_TOLERANCE, STACK_TOLERANCE};
use beamtrain::nn::{Architecture, BeamNet, Mode, ModelConfig, NetShape, Parameterized, Tensor};
use beamtrain::predictors::dataset::generate_dataset;
use beamtrain::predictors::runner::{predict_episodes, SchemeContext};
use beamtrain::predictors::train::{train, TrainOptions};
use beamtrain::predictors::{Criterion, Scheme, SchemeConfig};
use beamtrain::protocols::{exhaustive_search, refine_topk, sweep_full_wide, two_level_search, Sounder};
use beamtrain::scenario::EpisodeState;
use beamtrain::{units, ClusterSpec, DataConfig, ExperimentConfig, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criterion 1.
const LEAKAGE_TOLERANCE: f64 = 1e-9;
const LEAKAGE_PAIRS: usize = 10_000;
const LEAKAGE_TIME: Duration = Duration::from_secs(1);
/// Criterion 2.
const GRADCHECK_TIME: Duration = Duration::from_secs(60);
/// Criterion 3.
const PROTOCOL_EPISODES: usize = 1_000;
const CONTAINMENT_MIN: f64 = 0.95;
/// Criterion 5.
const DESK_SEEDS: usize = 3;
const CNN_MIN_GAIN: f64 = 0.75;
const LSTM_SLACK: f64 = 0.02;
const REFINEMENT_LIFT: f64 = 0.03;
const DESK_TIME: Duration = Duration::from_secs(30 * 60);
/// Criterion 7.
const MONOTONE_INSTANCES: usize = 1_000;
/// Criterion 8.
const OVERHEAD_TOLERANCE: f64 = 1e-12;
const NOISE_DBM: f64 = -104.99;
const PATHLOSS_DB: f64 = 113.38;
const DB_TOLERANCE: f64 = 0.01;

type Check = (usize, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn leakage_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for m_ant in [8usize, 16, 64] {
        let cb = narrow_codebook::<f64>(m_ant, m_ant, PI);
        for _ in 0..LEAKAGE_PAIRS {
            let phi = rng.random_range(-PI / 2.0..PI / 2.0);
            let m = rng.random_range(0..m_ant);
            let a = steering_vector::<f64>(phi, m_ant);
            let direct: num_complex::Complex64 = a.iter().zip(cb.beam(m)).map(|(x, f)| x.conj() * f).sum();
            let closed = dirichlet(cb.directions[m].sin() - phi.sin(), m_ant).norm();
            worst = worst.max((closed - direct.norm()).abs());
        }
    }
    let took = start.elapsed();
    verdict(
        worst < LEAKAGE_TOLERANCE && took < LEAKAGE_TIME,
        format!(
            "max |closed - direct| = {worst:.2e} (< {LEAKAGE_TOLERANCE:e}) over 3x{LEAKAGE_PAIRS} pairs in {took:.2?}"
        ),
    )
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let reports = gradcheck::run_all();
    let took = start.elapsed();
    let required = [
        "conv1d",
        "batchnorm",
        "relu",
        "maxpool_global",
        "fully_connected",
        "dropout",
        "softmax_crossentropy",
        "lstm_step",
        "cnn_stack_full",
        "lstm_stack_full_10_steps",
    ];
    let missing: Vec<&str> = required.iter().copied().filter(|n| !reports.iter().any(|r| r.suite == *n)).collect();
    let failed: Vec<String> =
        reports.iter().filter(|r| !r.passed()).map(|r| format!("{}={:.2e}", r.suite, r.max_rel_err)).collect();
    let layer = reports.iter().filter(|r| r.threshold == LAYER_TOLERANCE).map(|r| r.max_rel_err).fold(0.0, f64::max);
    let stack = reports.iter().filter(|r| r.threshold == STACK_TOLERANCE).map(|r| r.max_rel_err).fold(0.0, f64::max);
    verdict(
        missing.is_empty() && failed.is_empty() && took < GRADCHECK_TIME,
        format!(
            "{} suites, worst layer {layer:.2e} (< {LAYER_TOLERANCE:e}), worst stack {stack:.2e} (< {STACK_TOLERANCE:e}), {took:.2?}{}{}",
            reports.len(),
            if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") },
            if missing.is_empty() { String::new() } else { format!(", missing {missing:?}") },
        ),
    )
}

fn protocol_oracle() -> Verdict {
    let system = SystemConfig::default();
    let clusters = ClusterSpec { n_groups: 0, ..ClusterSpec::default() };
    let narrow = narrow_codebook::<f64>(system.tx_antennas, system.tx_beams, system.tx_coverage());
    let wide = wide_codebook::<f64>(system.tx_antennas, system.tx_beams, system.tx_ratio, system.tx_coverage());
    let (mut exhaustive_ok, mut contained, mut two_level_ok, mut total) = (0usize, 0usize, 0usize, 0usize);
    for e in 0..PROTOCOL_EPISODES {
        let mut state = EpisodeState::new(&system, &clusters, 10_000 + e as u64);
        let sounder = Sounder::new(system.tx_power_mw(), NoiseModel::disabled(), NoiseStream::new(e as u64), 0);
        for t in 0..system.trainings {
            if t > 0 {
                state = state.advance(system.training_period_s);
            }
            let h = assemble_sized::<f64>(&state.snapshot_paths(), system.tx_antennas, 1);
            let h_w = h.leading_columns(wide.antennas);
            let oracle = best_beam_oracle(&h, &narrow);
            total += 1;
            exhaustive_ok += (exhaustive_search(&h, &narrow, &sounder.at(t)).tx == oracle) as usize;
            let winner = sweep_full_wide(&h_w, &wide, &sounder.at(t)).strongest().unwrap_or(0);
            if wide.block(winner).contains(&oracle) {
                contained += 1;
                two_level_ok += (two_level_search(&h, &h_w, &wide, &narrow, &sounder.at(t)).tx == oracle) as usize;
            }
        }
    }
    let rate = contained as f64 / total as f64;
    verdict(
        exhaustive_ok == total && two_level_ok == contained && rate > CONTAINMENT_MIN,
        format!(
            "exhaustive {exhaustive_ok}/{total}, two-level {two_level_ok}/{contained} when contained, containment {:.2}% (> {:.0}%)",
            100.0 * rate,
            100.0 * CONTAINMENT_MIN
        ),
    )
}

fn shape_and_budget() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    let shape = NetShape { input_len: 16, n_narrow: 64, n_wide: 16 };
    let mut net = BeamNet::<f64>::new(Architecture::Lstm, &ModelConfig::default(), shape, 1);
    let [(c1, l1), (c2, l2)] = net.trunk_shape();
    let mut state = net.initial_state(1);
    let x = Tensor::new(vec![1, 2, 16], (0..32).map(|i| (i as f64 * 0.37).sin()).collect());
    let out = net.step(&x, &mut state, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0));
    let pooled = state.h[0].len();
    ok &= x.shape == [1, 2, 16] && c2 == 256 && out.narrow_logits.shape == [1, 64] && pooled == 256;
    notes.push(format!("(2,16)->({c1},{l1})->({c2},{l2})->pool({c2})->lstm({pooled})->({})", out.narrow_logits.dim(1)));

    let system = SystemConfig::default();
    let fe_narrow = narrow_codebook::<f64>(64, 64, PI);
    let fe_wide = wide_codebook::<f64>(64, 64, 4, PI);
    let data = DataConfig { samples: 24, ..DataConfig::default() };
    let ds = generate_dataset(&system, &ClusterSpec::default(), &data, 3).expect("dataset");
    let s0 = &ds.samples[0];
    let h = s0.channel::<f64>(0);
    let sounder = ds.frontend().sounder(s0.noise_key, 0);
    let ex = exhaustive_search(&h, &fe_narrow, &sounder).budget;
    let tl = two_level_search(&h, &h.leading_columns(16), &fe_wide, &fe_narrow, &sounder).budget;
    let fw = sweep_full_wide(&h.leading_columns(16), &fe_wide, &sounder).budget_used;
    ok &= ex == 64 && tl == 20 && fw == 16;
    notes.push(format!("exhaustive {ex}, two-level {tl}, full wide {fw}"));

    let samples = ds.validation();
    let mut checked = 0;
    for scheme in [Scheme::Adaptive, Scheme::Enhanced] {
        for criterion in [Criterion::Onc, Criterion::Mpc] {
            for k in [1usize, 5, 16] {
                let cfg = SchemeConfig { scheme, criterion, k, ..SchemeConfig::default() };
                let ctx = SchemeContext::new(&cfg, ds.frontend());
                let mut net = ctx.new_net::<f32>(&ModelConfig::default(), 5).expect("net");
                let run = predict_episodes(&mut net, &ctx, &samples, 64);
                for k_n in [0usize, 3] {
                    let ctx = SchemeContext { k_n, ..ctx.clone() };
                    for episode in learned_outcomes(&ctx, &samples, &run) {
                        let total: usize = episode.iter().map(|o| o.budget).sum();
                        ok &= total == 16 + 9 * k + 10 * k_n;
                        checked += 1;
                    }
                }
            }
        }
    }
    notes.push(format!("adaptive/enhanced episodes = 16+9K+10K_n in {checked} checks"));
    verdict(ok, notes.join("; "))
}

fn desk_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.system.tx_antennas = 32;
    cfg.system.tx_beams = 32;
    cfg.system.tx_ratio = 4;
    cfg.system.tx_power_dbm = 15.0;
    cfg.data.samples = 4096;
    cfg.scheme.epochs = 40;
    cfg.eval.runs = DESK_SEEDS;
    cfg
}

fn desk_learning() -> Verdict {
    let start = Instant::now();
    let cfg = desk_config();
    let seed = 2024;
    let ds = generate_dataset(&cfg.system, &cfg.clusters, &cfg.data, seed).expect("dataset");
    let run = |scheme: Scheme, k_ns: &[usize]| {
        let mut c = cfg.clone();
        c.scheme.scheme = scheme;
        run_experiment::<f32>(&ds, &c, seed, k_ns, |_, _| {}).expect("experiment")
    };
    let cnn = run(Scheme::Cnn, &[0]).remove(0);
    let sampled = run(Scheme::SampledDnn, &[0]).remove(0);
    let lstm = run(Scheme::Lstm, &[0, 4]);
    let (lstm0, lstm4) = (&lstm[0], &lstm[1]);
    let took = start.elapsed();
    let a = cnn.g_n_mean >= CNN_MIN_GAIN && cnn.g_n_mean > sampled.g_n_mean;
    let b = lstm0.g_n_mean >= cnn.g_n_mean - LSTM_SLACK && lstm0.g_n_converged > lstm0.per_step[0].g_n;
    let c = lstm4.g_n_mean - lstm0.g_n_mean >= REFINEMENT_LIFT;
    verdict(
        a && b && c && took < DESK_TIME,
        format!(
            "(a) cnn {:.4} >= {CNN_MIN_GAIN} and > sampled {:.4}: {}; (b) lstm {:.4} >= cnn-{LSTM_SLACK}, t6-10 {:.4} > t1 {:.4}: {}; (c) K_n=4 lift {:+.4} >= {REFINEMENT_LIFT}: {}; {} seeds in {:.1} min (< 30)",
            cnn.g_n_mean,
            sampled.g_n_mean,
            ok(a),
            lstm0.g_n_mean,
            lstm0.g_n_converged,
            lstm0.per_step[0].g_n,
            ok(b),
            lstm4.g_n_mean - lstm0.g_n_mean,
            ok(c),
            cnn.runs,
            took.as_secs_f64() / 60.0
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn adaptive_equivalence() -> Verdict {
    let system = SystemConfig::default();
    let data = DataConfig { samples: 40, ..DataConfig::default() };
    let ds = generate_dataset(&system, &ClusterSpec::default(), &data, 8).expect("dataset");
    let opts = TrainOptions { epochs: 2, batch_size: 8, lr: 3e-4, restore_best: false, seed: 21 };
    let mut results = Vec::new();
    for (scheme, k) in [(Scheme::Lstm, 5), (Scheme::Adaptive, system.tx_wide_beams())] {
        let cfg = SchemeConfig { scheme, k, ..SchemeConfig::default() };
        let ctx = SchemeContext::new(&cfg, ds.frontend());
        let mut net = ctx.new_net::<f32>(&ModelConfig::default(), 77).expect("net");
        let report = train(&mut net, &ctx, &ds.train(), &ds.validation(), &opts, |_| {}).expect("train");
        let mut weights = Vec::new();
        net.visit(&mut |p| weights.extend(p.value.iter().map(|v| v.to_bits())));
        let run = predict_episodes(&mut net, &ctx, &ds.validation(), 16);
        let probs: Vec<u64> =
            run.predictions.iter().flatten().flat_map(|p| p.narrow.iter().map(|v| v.to_bits())).collect();
        let curve: Vec<u64> = report.curve.iter().flat_map(|r| [r.loss_n.to_bits(), r.loss_w.to_bits()]).collect();
        results.push((weights, probs, curve));
    }
    let (a, b) = (&results[0], &results[1]);
    verdict(
        a == b,
        format!(
            "K={} vs LSTM after 2 epochs: weights {}, loss curve {}, {} validation probabilities {}",
            system.tx_wide_beams(),
            same(a.0 == b.0),
            same(a.2 == b.2),
            a.1.len(),
            same(a.1 == b.1)
        ),
    )
}

fn same(b: bool) -> &'static str {
    if b {
        "bit-identical"
    } else {
        "DIFFER"
    }
}

fn refinement_monotone() -> Verdict {
    let system = SystemConfig::default();
    let clusters = ClusterSpec::default();
    let narrow = narrow_codebook::<f64>(64, 64, PI);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut violations = 0;
    for i in 0..MONOTONE_INSTANCES {
        let mut state = EpisodeState::new(&system, &clusters, 50_000 + i as u64);
        for _ in 0..rng.random_range(0..system.trainings) {
            state = state.advance(system.training_period_s);
        }
        let h = assemble_sized::<f64>(&state.snapshot_paths(), 64, 1);
        let raw: Vec<f64> = (0..64).map(|_| rng.random::<f64>().powi(3)).collect();
        let z: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|v| v / z).collect();
        let sounder = Sounder::new(system.tx_power_mw(), NoiseModel::disabled(), NoiseStream::new(i as u64), 0);
        let mut last = f64::NEG_INFINITY;
        for k_n in 0..=64 {
            let g = h.beam_gain(narrow.beam(refine_topk(&h, &narrow, &probs, k_n, &sounder).tx));
            if g < last {
                violations += 1;
            }
            last = g;
        }
    }
    verdict(violations == 0, format!("{violations} decreases over {MONOTONE_INSTANCES} instances x K_n = 0..=64"))
}

fn metric_arithmetic() -> Verdict {
    let system = SystemConfig::default();
    let factor = overhead_factor(system.training_period_s, 16, system.measurement_time_s, 1.0);
    let noise = system.noise_dbm();
    let pl = units::pathloss_db(100.0, 28e9);
    verdict(
        (factor - 0.984).abs() < OVERHEAD_TOLERANCE
            && (noise - NOISE_DBM).abs() <= DB_TOLERANCE
            && (pl - PATHLOSS_DB).abs() <= DB_TOLERANCE,
        format!("overhead {factor:.15} (0.984 +- {OVERHEAD_TOLERANCE:e}), noise {noise:.4} dBm, PL(100 m) {pl:.4} dB (+- {DB_TOLERANCE})"),
    )
}

fn cli(args: &[&str], cwd: &Path) -> bool {
    let out = Command::new(env!("CARGO_BIN_EXE_beamtrain")).args(args).current_dir(cwd).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("beamtrain {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.success()
}

fn identical(a: &Path, b: &Path, files: &[&str]) -> Vec<String> {
    files
        .iter()
        .filter(|f| match (std::fs::read(a.join(f)), std::fs::read(b.join(f))) {
            (Ok(x), Ok(y)) => x != y,
            _ => true,
        })
        .map(|f| f.to_string())
        .collect()
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    let mut cfg = ExperimentConfig::default();
    cfg.data.samples = 48;
    cfg.scheme.scheme = Scheme::Enhanced;
    cfg.scheme.epochs = 2;
    cfg.training.batch_size = 16;
    cfg.eval.runs = 1;
    std::fs::write(root.join("small.toml"), cfg.to_toml_string()).expect("config");
    let common = ["--config", "small.toml", "--seed", "7", "--precision", "32", "--threads", "1"];
    let with = |extra: &[&str]| -> Vec<String> { common.iter().chain(extra).map(|s| s.to_string()).collect() };
    let mut ran = true;
    for run in ["a", "b"] {
        let data = format!("{run}/dataset.btds");
        let model = format!("{run}/model.btck");
        for extra in [
            vec!["gen-data", "--out", run],
            vec!["train", "--data", &data, "--out", run],
            vec!["eval", "--data", &data, "--model", &model, "--out", run],
        ] {
            let args = with(&extra);
            ran &= cli(&args.iter().map(String::as_str).collect::<Vec<_>>(), root);
        }
    }
    let files = ["dataset.btds", "model.btck", "curve.csv", "eval_steps.csv", "eval_cdf.csv", "eval_summary.json"];
    let differ = identical(&root.join("a"), &root.join("b"), &files);
    verdict(
        ran && differ.is_empty(),
        if !ran {
            "a CLI invocation failed".to_string()
        } else if differ.is_empty() {
            format!("gen-data, train, eval re-runs byte-identical ({} files)", files.len())
        } else {
            format!("differing files: {differ:?}")
        },
    )
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [Check; 9] = [
        (1, "leakage oracle", leakage_oracle),
        (2, "gradient suite", gradient_suite),
        (3, "protocol oracle equivalence", protocol_oracle),
        (4, "shape/budget contract", shape_and_budget),
        (5, "desk-scale learning check", desk_learning),
        (6, "adaptive K=N_w equals LSTM", adaptive_equivalence),
        (7, "K_n monotonicity", refinement_monotone),
        (8, "metric arithmetic", metric_arithmetic),
        (9, "determinism", determinism),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let v = f();
        println!(
            "criterion {n} [{name}]: {} - {} ({:.1?})",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed()
        );
        failed += (!v.pass) as usize;
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
