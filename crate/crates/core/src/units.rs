//! dB / linear conversions. The linear power unit is the milliwatt.

/// Power in dBm to milliwatts. `-inf` maps to exactly zero.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    if dbm == f64::NEG_INFINITY {
        0.0
    } else {
        10f64.powf(dbm / 10.0)
    }
}

/// Milliwatts to dBm. Zero maps to `-inf`.
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Power ratio in dB to a linear factor.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Thermal noise power in dBm: `-174 + 10 log10(W) + NF`.
pub fn thermal_noise_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    -174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

/// Distance-dependent pathloss in dB, `26 log10(d) + 20 log10(fc) - 147.56`
/// with `d` in metres and `fc` in Hz.
pub fn pathloss_db(distance_m: f64, carrier_hz: f64) -> f64 {
    26.0 * distance_m.log10() + 20.0 * carrier_hz.log10() - 147.56
}
