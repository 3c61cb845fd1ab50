//! A small neural-network engine: layers with hand-written backward passes,
//! Adam, checkpoints and finite-difference gradient checks.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod lstm;
pub mod model;
pub mod param;
pub mod tensor;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use model::{Architecture, BeamNet, NetShape, SeqState, StepCache, StepOutput};
pub use param::{Param, Parameterized};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Training mode draws dropout masks and uses batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Layer widths and regularisation of the networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub conv1_stride: usize,
    pub conv2_stride: usize,
    pub padding: usize,
    pub hidden: usize,
    pub lstm_layers: usize,
    /// Applied to the output of every LSTM layer.
    pub lstm_dropout: f64,
    /// Applied to the output of the dense heads.
    pub fc_dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Multiplier on the fan-in bound of the output layers.
    pub head_init_scale: f64,
    pub forget_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv1_channels: 64,
            conv2_channels: 256,
            kernel: 3,
            conv1_stride: 3,
            conv2_stride: 1,
            padding: 1,
            hidden: 256,
            lstm_layers: 2,
            lstm_dropout: 0.2,
            fc_dropout: 0.3,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            head_init_scale: 0.5,
            forget_bias: 1.0,
        }
    }
}

impl ModelConfig {
    /// Narrow widths for tests and gradient checks.
    pub fn small() -> Self {
        Self { conv1_channels: 4, conv2_channels: 6, hidden: 5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("conv1_channels", self.conv1_channels),
            ("conv2_channels", self.conv2_channels),
            ("kernel", self.kernel),
            ("conv1_stride", self.conv1_stride),
            ("conv2_stride", self.conv2_stride),
            ("hidden", self.hidden),
            ("lstm_layers", self.lstm_layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        for (name, p) in [("lstm_dropout", self.lstm_dropout), ("fc_dropout", self.fc_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("model.{name} must lie in [0, 1)")));
            }
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("model.bn_eps must be positive and bn_momentum in [0, 1]".into()));
        }
        Ok(())
    }

    /// Checks that an input of `len` wide beams survives both convolutions.
    pub fn check_input_len(&self, len: usize) -> Result<()> {
        let out = |l: usize, s: usize| (l + 2 * self.padding).checked_sub(self.kernel).map(|v| v / s + 1);
        match out(len, self.conv1_stride).and_then(|l1| out(l1, self.conv2_stride)) {
            Some(_) => Ok(()),
            None => Err(Error::Config(format!("input length {len} is shorter than the convolution kernel"))),
        }
    }
}
