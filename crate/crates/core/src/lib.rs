//! Simulation of mmWave beam training with learned beam predictors.
//!
//! The simulator is generic over the scalar type (`f32` or `f64`); the
//! aliases below fix it for the common cases.

// `!(x > 0.0)` also rejects NaN; index loops mirror the maths in the kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channel;
pub mod codebook;
pub mod config;
pub mod error;
pub mod eval;
pub mod nn;
pub mod predictors;
pub mod protocols;
pub mod scalar;
pub mod scenario;
pub mod seed;
pub mod units;

pub use config::{ClusterSpec, DataConfig, ExperimentConfig, SystemConfig};
pub use error::{Error, Result};
pub use scalar::Real;

pub type ChannelMatrix32 = channel::ChannelMatrix<f32>;
pub type ChannelMatrix64 = channel::ChannelMatrix<f64>;
pub type Codebook32 = codebook::Codebook<f32>;
pub type Codebook64 = codebook::Codebook<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type BeamNet32 = nn::BeamNet<f32>;
pub type BeamNet64 = nn::BeamNet<f64>;

/// Sizes the global worker pool used by data generation, evaluation and
/// sweeps. Results do not depend on it. Must run before any parallel work.
pub fn set_worker_threads(n: usize) -> std::result::Result<(), rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()
}
