use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use beamtrain::codebook::{narrow_codebook, wide_codebook, write_gain_profile};
use beamtrain::eval::evaluate::{self, SchemeSummary};
use beamtrain::eval::sweep;
use beamtrain::nn::{checkpoint, gradcheck, BeamNet};
use beamtrain::predictors::dataset::{generate_dataset, Dataset};
use beamtrain::predictors::train::EpochRecord;
use beamtrain::{ExperimentConfig, Real};
use clap::{Parser, Subcommand, ValueEnum};

const DATASET_FILE: &str = "dataset.btds";
const MODEL_FILE: &str = "model.btck";

#[derive(Parser)]
#[command(name = "beamtrain", version, about = "mmWave beam-training simulator and learned beam predictors")]
struct Cli {
    /// Experiment configuration (TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed; overrides `system.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Floating-point width of the networks.
    #[arg(long, global = true, value_enum, default_value = "32")]
    precision: Precision,
    /// Worker threads for data generation, evaluation and sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    #[value(name = "32")]
    F32,
    #[value(name = "64")]
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of episodes.
    GenData,
    /// Train one model of the configured scheme.
    Train {
        /// Dataset file; generated from the configuration when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate the configured scheme on the validation split.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Evaluate this checkpoint instead of training `eval.runs` models.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the configured parameter grid.
    Sweep,
    /// Write the beam-gain profiles of both codebooks.
    DumpCodebook {
        /// Angles sampled across [-90, 90] degrees.
        #[arg(long, default_value_t = 721)]
        points: usize,
    },
    /// Run the finite-difference gradient checks.
    Gradcheck,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if cli.threads > 0 {
        rayon_threads(cli.threads)?;
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.system.seed = seed;
    }
    cfg.validate().context("invalid configuration")?;
    let seed = cfg.system.seed;
    fs::create_dir_all(&cli.out).with_context(|| format!("cannot create output directory {}", cli.out.display()))?;
    let out = cli.out.as_path();
    match cli.command {
        Command::GenData => {
            let ds = generate_dataset(&cfg.system, &cfg.clusters, &cfg.data, seed)?;
            let path = out.join(DATASET_FILE);
            ds.save(&path).with_context(|| format!("cannot write {}", path.display()))?;
            println!(
                "wrote {} ({} episodes, {} train / {} validation)",
                path.display(),
                ds.samples.len(),
                ds.header.train.len(),
                ds.header.validation.len()
            );
        }
        Command::Train { data } => {
            let ds = dataset(data.as_deref(), &cfg, seed)?;
            match cli.precision {
                Precision::F32 => train::<f32>(&ds, &cfg, seed, out)?,
                Precision::F64 => train::<f64>(&ds, &cfg, seed, out)?,
            }
        }
        Command::Eval { data, model } => {
            let ds = dataset(data.as_deref(), &cfg, seed)?;
            let summary = match (cli.precision, model) {
                (Precision::F32, m) => eval::<f32>(&ds, &cfg, seed, m.as_deref())?,
                (Precision::F64, m) => eval::<f64>(&ds, &cfg, seed, m.as_deref())?,
            };
            write_summary(&summary, out)?;
        }
        Command::Sweep => {
            let rows = match cli.precision {
                Precision::F32 => sweep::run_sweep::<f32>(&cfg, seed)?,
                Precision::F64 => sweep::run_sweep::<f64>(&cfg, seed)?,
            };
            let path = out.join("sweep.csv");
            sweep::write_csv(&rows, create(&path)?).with_context(|| format!("cannot write {}", path.display()))?;
            println!("wrote {} ({} rows)", path.display(), rows.len());
        }
        Command::DumpCodebook { points } => dump_codebook(&cfg, points, out)?,
        Command::Gradcheck => {
            let reports = gradcheck::run_all();
            let mut ok = true;
            for r in &reports {
                println!(
                    "{:<28} max_rel_err={:.3e} threshold={:.0e} probes={} {}",
                    r.suite,
                    r.max_rel_err,
                    r.threshold,
                    r.probes,
                    if r.passed() { "PASS" } else { "FAIL" }
                );
                ok &= r.passed();
            }
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn rayon_threads(n: usize) -> Result<()> {
    beamtrain::set_worker_threads(n).context("cannot configure the worker pool")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn dataset(path: Option<&Path>, cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match path {
        Some(p) => Dataset::load(p).with_context(|| format!("cannot read dataset {}", p.display())),
        None => Ok(generate_dataset(&cfg.system, &cfg.clusters, &cfg.data, seed)?),
    }
}

fn print_epoch(r: &EpochRecord) {
    log::info!("epoch {:>3} {:<10} loss_n={:.5} loss_w={:.5}", r.epoch, r.split.name(), r.loss_n, r.loss_w);
}

fn train<T: Real>(ds: &Dataset, cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<()> {
    if !cfg.scheme.scheme.is_learned() {
        bail!("scheme {} has nothing to train", cfg.scheme.scheme);
    }
    let (net, report) = evaluate::train_model::<T>(ds, cfg, seed, print_epoch)?;
    let model = out.join(MODEL_FILE);
    checkpoint::save(&model, &net, None).with_context(|| format!("cannot write {}", model.display()))?;
    let curve = out.join("curve.csv");
    report.write_csv(create(&curve)?).with_context(|| format!("cannot write {}", curve.display()))?;
    println!(
        "wrote {} and {} (best epoch {}, validation loss {:.5})",
        model.display(),
        curve.display(),
        report.best_epoch,
        report.best_validation
    );
    Ok(())
}

fn eval<T: Real>(ds: &Dataset, cfg: &ExperimentConfig, seed: u64, model: Option<&Path>) -> Result<SchemeSummary> {
    let converged = (cfg.eval.converged_from, cfg.eval.converged_to);
    match model {
        Some(path) => {
            let (mut net, _): (BeamNet<T>, _) =
                checkpoint::load(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
            let (view, fe) = evaluate::eval_view(ds, cfg);
            let expected = beamtrain::predictors::runner::SchemeContext::new(&cfg.scheme, fe.clone()).net_shape();
            if net.shape != expected {
                bail!("checkpoint {} does not fit the configured scheme and system", path.display());
            }
            let m = evaluate::evaluate_model(&mut net, &view, &fe, cfg);
            Ok(evaluate::summarize(&cfg.scheme, converged, &[m]))
        }
        None => Ok(evaluate::run_experiment::<T>(ds, cfg, seed, &[cfg.scheme.k_n], |_, r| print_epoch(r))?.remove(0)),
    }
}

fn write_summary(s: &SchemeSummary, out: &Path) -> Result<()> {
    let steps = out.join("eval_steps.csv");
    let mut w = create(&steps)?;
    writeln!(w, "scheme,criterion,k,k_n,t,g_n,e_bar,budget,loss_n")?;
    for p in &s.per_step {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            s.scheme,
            s.criterion.name(),
            s.k,
            s.k_n,
            p.t,
            p.g_n,
            p.e_bar,
            p.budget,
            p.loss_n.map(|v| v.to_string()).unwrap_or_default()
        )?;
    }
    w.flush()?;
    let cdf = out.join("eval_cdf.csv");
    let mut w = create(&cdf)?;
    writeln!(w, "g_n,cdf")?;
    for (x, p) in &s.cdf {
        writeln!(w, "{x},{p}")?;
    }
    w.flush()?;
    let json = out.join("eval_summary.json");
    serde_json::to_writer_pretty(create(&json)?, s).with_context(|| format!("cannot write {}", json.display()))?;
    println!(
        "{}: G_N converged {:.4}, mean {:.4}, E {:.4} bit/s/Hz, {} measurements per episode",
        s.scheme, s.g_n_converged, s.g_n_mean, s.e_bar_mean, s.budget_per_episode
    );
    Ok(())
}

fn dump_codebook(cfg: &ExperimentConfig, points: usize, out: &Path) -> Result<()> {
    if points < 2 {
        bail!("--points must be at least 2");
    }
    let sys = &cfg.system;
    let phis: Vec<f64> = (0..points)
        .map(|i| -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / (points - 1) as f64)
        .collect();
    let narrow = narrow_codebook::<f64>(sys.tx_antennas, sys.tx_beams, sys.tx_coverage());
    let wide = wide_codebook::<f64>(sys.tx_antennas, sys.tx_beams, sys.tx_ratio, sys.tx_coverage());
    for (name, cb) in [("codebook_narrow.csv", &narrow), ("codebook_wide.csv", &wide)] {
        let path = out.join(name);
        let mut w = create(&path)?;
        write_gain_profile(cb, &phis, &mut w).with_context(|| format!("cannot write {}", path.display()))?;
        w.flush()?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
