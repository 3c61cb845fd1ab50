//! Metrics, scheme evaluation and parameter sweeps.

pub mod evaluate;
pub mod metrics;
pub mod sweep;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Independent training runs averaged per result.
    pub runs: usize,
    /// Explicit run seeds; derived from the top-level seed when empty.
    pub run_seeds: Vec<u64>,
    /// First and last training index (1-based, inclusive) of the converged average.
    pub converged_from: usize,
    pub converged_to: usize,
    /// Total time of the spectral-efficiency window in seconds.
    pub total_time_s: f64,
    /// Disable receiver noise during evaluation.
    pub noise_free: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            runs: 3,
            run_seeds: Vec::new(),
            converged_from: 6,
            converged_to: 10,
            total_time_s: 1.0,
            noise_free: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, trainings: usize) -> Result<()> {
        if self.runs == 0 && self.run_seeds.is_empty() {
            return Err(Error::Config("eval.runs must be positive".into()));
        }
        if self.converged_from == 0 || self.converged_from > self.converged_to || self.converged_to > trainings {
            return Err(Error::Config(format!("eval.converged_from..converged_to must lie within 1..={trainings}")));
        }
        if !(self.total_time_s > 0.0) {
            return Err(Error::Config("eval.total_time_s must be positive".into()));
        }
        Ok(())
    }

    /// Seeds of the training runs.
    pub fn seeds(&self, base: u64) -> Vec<u64> {
        if self.run_seeds.is_empty() {
            (0..self.runs as u64).map(|r| base.wrapping_add(r)).collect()
        } else {
            self.run_seeds.clone()
        }
    }
}
