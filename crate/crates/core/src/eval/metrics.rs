//! Link metrics.

use num_complex::Complex;

use crate::channel::{ChannelMatrix, NoiseModel};
use crate::config::SystemConfig;
use crate::scalar::Real;

/// `|H f_chosen|^2 / |H f_oracle|^2`; 1 when both gains vanish.
pub fn gain_normalized<T: Real>(h: &ChannelMatrix<T>, chosen: &[Complex<T>], oracle: &[Complex<T>]) -> f64 {
    let g = h.beam_gain(chosen).as_f64();
    let best = h.beam_gain(oracle).as_f64();
    if best <= 0.0 {
        return 1.0;
    }
    (g / best).clamp(0.0, 1.0)
}

/// Fraction of the window left for data: `(T_tot - T_tra) / T_tot` with
/// `T_tra = (T_tot / tau) * budget * t_s`, floored at 0.
pub fn overhead_factor(training_period_s: f64, budget: usize, measurement_time_s: f64, total_time_s: f64) -> f64 {
    let t_tra = total_time_s / training_period_s * budget as f64 * measurement_time_s;
    ((total_time_s - t_tra) / total_time_s).max(0.0)
}

/// Received SNR (linear) of beam `f`.
pub fn snr<T: Real>(h: &ChannelMatrix<T>, f: &[Complex<T>], system: &SystemConfig) -> f64 {
    system.tx_power_mw() * h.beam_gain(f).as_f64() / NoiseModel::from_config(system).variance_mw()
}

/// Effective spectral efficiency in bit/s/Hz.
pub fn spectral_efficiency<T: Real>(
    h: &ChannelMatrix<T>,
    chosen: &[Complex<T>],
    system: &SystemConfig,
    budget: usize,
    total_time_s: f64,
) -> f64 {
    let factor = overhead_factor(system.training_period_s, budget, system.measurement_time_s, total_time_s);
    factor * (1.0 + snr(h, chosen, system)).log2()
}

/// Empirical CDF sampled at `points` evenly spaced values on `[0, 1]`.
pub fn cdf(values: &[f64], points: usize) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    (0..points)
        .map(|i| {
            let x = if points == 1 { 1.0 } else { i as f64 / (points - 1) as f64 };
            let below = sorted.partition_point(|&v| v <= x);
            (x, below as f64 / n)
        })
        .collect()
}
