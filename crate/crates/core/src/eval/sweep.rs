//! Cartesian parameter sweeps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::{run_experiment, SchemeSummary};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::predictors::dataset::generate_dataset;
use crate::predictors::{Criterion, Scheme};
use crate::scalar::Real;

/// Sweep axes. An empty axis keeps the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub schemes: Vec<Scheme>,
    pub k: Vec<usize>,
    pub k_n: Vec<usize>,
    /// UE speed in m/s; each value fixes the speed range to a point.
    pub speed: Vec<f64>,
    pub tx_power_dbm: Vec<f64>,
    pub tx_beams: Vec<usize>,
    pub training_period_s: Vec<f64>,
}

/// One row of a sweep table: the cell's coordinates and its summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub criterion: Criterion,
    pub k: usize,
    pub k_n: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    pub tx_power_dbm: f64,
    pub tx_beams: usize,
    pub training_period_s: f64,
    pub runs: usize,
    pub g_n_converged: f64,
    pub g_n_mean: f64,
    pub e_bar_mean: f64,
    pub budget_per_episode: f64,
    pub loss_n: Option<f64>,
}

pub const CSV_HEADER: &str = "scheme,criterion,k,k_n,speed_min,speed_max,tx_power_dbm,tx_beams,training_period_s,runs,g_n_converged,g_n_mean,e_bar_mean,budget_per_episode,loss_n";

impl SweepRow {
    fn new(cfg: &ExperimentConfig, s: &SchemeSummary) -> Self {
        let sys = &cfg.system;
        Self {
            scheme: s.scheme,
            criterion: s.criterion,
            k: s.k,
            k_n: s.k_n,
            speed_min: sys.speed_min,
            speed_max: sys.speed_max,
            tx_power_dbm: sys.tx_power_dbm,
            tx_beams: sys.tx_beams,
            training_period_s: sys.training_period_s,
            runs: s.runs,
            g_n_converged: s.g_n_converged,
            g_n_mean: s.g_n_mean,
            e_bar_mean: s.e_bar_mean,
            budget_per_episode: s.budget_per_episode,
            loss_n: s.loss_n,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scheme,
            self.criterion.name(),
            self.k,
            self.k_n,
            self.speed_min,
            self.speed_max,
            self.tx_power_dbm,
            self.tx_beams,
            self.training_period_s,
            self.runs,
            self.g_n_converged,
            self.g_n_mean,
            self.e_bar_mean,
            self.budget_per_episode,
            self.loss_n.map(|v| v.to_string()).unwrap_or_default(),
        )
    }
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// Configurations of every cell except the refinement axis, in output
/// order, each paired with the refinement sizes evaluated on its models.
pub fn groups(base: &ExperimentConfig) -> Vec<(ExperimentConfig, Vec<usize>)> {
    let g = &base.sweep;
    let sys = &base.system;
    let k_ns = axis(&g.k_n, base.scheme.k_n);
    let mut out = Vec::new();
    for scheme in axis(&g.schemes, base.scheme.scheme) {
        for k in axis(&g.k, base.scheme.k) {
            for speed in axis(&g.speed.iter().map(|&v| Some(v)).collect::<Vec<_>>(), None) {
                for power in axis(&g.tx_power_dbm, sys.tx_power_dbm) {
                    for beams in axis(&g.tx_beams, sys.tx_beams) {
                        for period in axis(&g.training_period_s, sys.training_period_s) {
                            let mut c = base.clone();
                            c.sweep = SweepGrid::default();
                            c.scheme.scheme = scheme;
                            c.scheme.k = k;
                            if let Some(v) = speed {
                                c.system.speed_min = v;
                                c.system.speed_max = v;
                            }
                            c.system.tx_power_dbm = power;
                            if beams != sys.tx_beams {
                                c.system.tx_beams = beams;
                                c.system.tx_antennas = beams;
                            }
                            c.system.training_period_s = period;
                            out.push((c, k_ns.clone()));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Runs every cell of the grid. Cells run in parallel; each derives all of
/// its randomness from `seed`, so the table does not depend on scheduling.
pub fn run_sweep<T: Real>(base: &ExperimentConfig, seed: u64) -> Result<Vec<SweepRow>> {
    let groups = groups(base);
    for (cfg, k_ns) in &groups {
        cfg.validate()?;
        for &k_n in k_ns {
            let mut c = cfg.clone();
            c.scheme.k_n = k_n;
            c.scheme.validate(&c.system)?;
        }
    }
    let tables: Vec<Result<Vec<SweepRow>>> = groups
        .par_iter()
        .map(|(cfg, k_ns)| {
            let ds = generate_dataset(&cfg.system, &cfg.clusters, &cfg.data, seed)?;
            let summaries = run_experiment::<T>(&ds, cfg, seed, k_ns, |_, _| {})?;
            log::info!("sweep cell {} k={} done", cfg.scheme.scheme, cfg.scheme.k);
            Ok(summaries.iter().map(|s| SweepRow::new(cfg, s)).collect())
        })
        .collect();
    let mut rows = Vec::new();
    for t in tables {
        rows.extend(t?);
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}
