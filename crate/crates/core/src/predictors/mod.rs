//! Learned and classical beam predictors, datasets and training loops.

pub mod baselines;
pub mod dataset;
pub mod features;
pub mod runner;
pub mod selection;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};

/// Beam-selection scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// CNN on the full wide-beam sweep of each step.
    Cnn,
    /// Convolutional trunk plus LSTM over the history of full sweeps.
    Lstm,
    /// LSTM fed with partial sweeps chosen from its previous prediction.
    Adaptive,
    /// Adaptive scheme whose sweep is chosen by an auxiliary wide-beam LSTM.
    Enhanced,
    /// CNN fed with every `s`-th narrow beam instead of wide beams.
    SampledDnn,
    /// Closed-form inversion of the power ratio of two neighbouring wide beams.
    PowerRatio,
    Exhaustive,
    TwoLevel,
}

impl Scheme {
    pub const ALL: [Scheme; 8] = [
        Scheme::Cnn,
        Scheme::Lstm,
        Scheme::Adaptive,
        Scheme::Enhanced,
        Scheme::SampledDnn,
        Scheme::PowerRatio,
        Scheme::Exhaustive,
        Scheme::TwoLevel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Cnn => "cnn",
            Scheme::Lstm => "lstm",
            Scheme::Adaptive => "adaptive",
            Scheme::Enhanced => "enhanced",
            Scheme::SampledDnn => "sampled-dnn",
            Scheme::PowerRatio => "power-ratio",
            Scheme::Exhaustive => "exhaustive",
            Scheme::TwoLevel => "two-level",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Scheme::Cnn | Scheme::Lstm | Scheme::Adaptive | Scheme::Enhanced | Scheme::SampledDnn)
    }

    pub fn default_lr(self) -> f64 {
        match self {
            Scheme::Adaptive | Scheme::Enhanced => 1e-4,
            _ => 3e-4,
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

/// How the adaptive schemes pick the wide beams to measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Nearest directions to a reference direction.
    Onc,
    /// Highest predicted probabilities.
    Mpc,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Onc => "onc",
            Criterion::Mpc => "mpc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub criterion: Criterion,
    /// Wide beams measured per partial sweep.
    pub k: usize,
    /// Narrow beams measured around the prediction.
    pub k_n: usize,
    /// Weight of the wide-beam loss.
    pub mu: f64,
    /// Learning rate; the scheme default when absent.
    pub lr: Option<f64>,
    pub epochs: usize,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self { scheme: Scheme::Lstm, criterion: Criterion::Onc, k: 5, k_n: 0, mu: 1.0, lr: None, epochs: 80 }
    }
}

impl SchemeConfig {
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.scheme.default_lr())
    }

    pub fn validate(&self, system: &SystemConfig) -> Result<()> {
        let wide = system.tx_wide_beams();
        if self.k == 0 || self.k > wide {
            return Err(Error::Config(format!("scheme.k must lie in [1, {wide}], got {}", self.k)));
        }
        if self.k_n > system.tx_beams {
            return Err(Error::Config(format!("scheme.k_n must not exceed {}", system.tx_beams)));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::Config("scheme.mu must be non-negative".into()));
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0) {
                return Err(Error::Config("scheme.lr must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Feed the adaptive schemes partial sweeps chosen from the labels
    /// rather than from their own predictions.
    pub teacher_forcing: bool,
    /// Keep the weights of the epoch with the lowest validation loss.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 128, teacher_forcing: false, restore_best: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be positive".into()));
        }
        Ok(())
    }
}
