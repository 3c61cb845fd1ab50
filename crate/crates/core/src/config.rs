//! System, cluster and experiment configuration.
//!
//! Every section of an experiment file is optional; missing keys fall back
//! to the default 28 GHz / 64-antenna setup. See `docs/CONFIG.md` for the
//! full key list.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::sweep::SweepGrid;
use crate::eval::EvalConfig;
use crate::nn::ModelConfig;
use crate::predictors::{SchemeConfig, TrainConfig};
use crate::units;

/// Link-level and mobility parameters of one simulated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    /// Narrow beams at the BS.
    pub tx_beams: usize,
    pub rx_beams: usize,
    /// Narrow beams covered by one wide beam at the BS.
    pub tx_ratio: usize,
    pub rx_ratio: usize,
    pub tx_coverage_deg: f64,
    pub rx_coverage_deg: f64,
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    /// Beam-training period in seconds.
    pub training_period_s: f64,
    /// Beam trainings per episode.
    pub trainings: usize,
    /// Duration of one beam measurement in seconds.
    pub measurement_time_s: f64,
    pub cell_radius_m: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 28e9,
            bandwidth_hz: 2e6,
            tx_antennas: 64,
            rx_antennas: 1,
            tx_beams: 64,
            rx_beams: 1,
            tx_ratio: 4,
            rx_ratio: 1,
            tx_coverage_deg: 180.0,
            rx_coverage_deg: 180.0,
            tx_power_dbm: 15.0,
            noise_figure_db: 6.0,
            training_period_s: 0.1,
            trainings: 10,
            measurement_time_s: 1e-4,
            cell_radius_m: 100.0,
            speed_min: 10.0,
            speed_max: 50.0,
            accel_min: -8.0,
            accel_max: 8.0,
            seed: 0,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("tx_antennas", self.tx_antennas),
            ("rx_antennas", self.rx_antennas),
            ("tx_beams", self.tx_beams),
            ("rx_beams", self.rx_beams),
            ("tx_ratio", self.tx_ratio),
            ("rx_ratio", self.rx_ratio),
            ("trainings", self.trainings),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if !self.tx_beams.is_multiple_of(self.tx_ratio) {
            return fail(format!("tx_beams ({}) must be a multiple of tx_ratio ({})", self.tx_beams, self.tx_ratio));
        }
        if !self.rx_beams.is_multiple_of(self.rx_ratio) {
            return fail(format!("rx_beams ({}) must be a multiple of rx_ratio ({})", self.rx_beams, self.rx_ratio));
        }
        if !self.tx_antennas.is_multiple_of(self.tx_ratio) {
            return fail(format!(
                "tx_antennas ({}) must be a multiple of tx_ratio ({})",
                self.tx_antennas, self.tx_ratio
            ));
        }
        if !self.rx_antennas.is_multiple_of(self.rx_ratio) {
            return fail(format!(
                "rx_antennas ({}) must be a multiple of rx_ratio ({})",
                self.rx_antennas, self.rx_ratio
            ));
        }
        for (name, deg) in [("tx_coverage_deg", self.tx_coverage_deg), ("rx_coverage_deg", self.rx_coverage_deg)] {
            if !(deg > 0.0 && deg <= 180.0) {
                return fail(format!("{name} must lie in (0, 180], got {deg}"));
            }
        }
        let positive = [
            ("carrier_hz", self.carrier_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("training_period_s", self.training_period_s),
            ("measurement_time_s", self.measurement_time_s),
            ("cell_radius_m", self.cell_radius_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.speed_min >= 0.0 && self.speed_min <= self.speed_max) {
            return fail(format!("speed range [{}, {}] is invalid", self.speed_min, self.speed_max));
        }
        if !(self.accel_min <= self.accel_max) {
            return fail(format!("acceleration range [{}, {}] is invalid", self.accel_min, self.accel_max));
        }
        if !self.tx_power_dbm.is_finite() || !self.noise_figure_db.is_finite() {
            return fail("tx_power_dbm and noise_figure_db must be finite".into());
        }
        Ok(())
    }

    pub fn tx_coverage(&self) -> f64 {
        self.tx_coverage_deg.to_radians()
    }

    pub fn rx_coverage(&self) -> f64 {
        self.rx_coverage_deg.to_radians()
    }

    /// Wide beams at the BS, `N_Tx / s_Tx`.
    pub fn tx_wide_beams(&self) -> usize {
        self.tx_beams / self.tx_ratio
    }

    /// Antennas switched on for wide beams, `M_Tx / s_Tx`.
    pub fn tx_wide_antennas(&self) -> usize {
        self.tx_antennas / self.tx_ratio
    }

    pub fn tx_power_mw(&self) -> f64 {
        units::dbm_to_mw(self.tx_power_dbm)
    }

    pub fn noise_dbm(&self) -> f64 {
        units::thermal_noise_dbm(self.bandwidth_hz, self.noise_figure_db)
    }
}

/// Far-scatterer group parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSpec {
    pub n_groups: usize,
    pub paths_per_cluster: usize,
    pub visible_radius_m: f64,
    pub aod_spread_deg: f64,
    /// Read for completeness; the narrowband channel ignores it.
    pub delay_spread_s: f64,
    pub shadow_sigma_db: f64,
    pub ricean_k_db: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            n_groups: 15,
            paths_per_cluster: 20,
            visible_radius_m: 40.0,
            aod_spread_deg: 2.4,
            delay_spread_s: 5e-9,
            shadow_sigma_db: 4.0,
            ricean_k_db: 8.0,
        }
    }
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.visible_radius_m > 0.0) {
            return Err(Error::Config("visible_radius_m must be positive".into()));
        }
        if self.paths_per_cluster == 0 {
            return Err(Error::Config("paths_per_cluster must be at least 1".into()));
        }
        if !(self.aod_spread_deg >= 0.0) {
            return Err(Error::Config("aod_spread_deg must be non-negative".into()));
        }
        if !(self.shadow_sigma_db >= 0.0) || !self.ricean_k_db.is_finite() {
            return Err(Error::Config("shadow_sigma_db must be >= 0 and ricean_k_db finite".into()));
        }
        Ok(())
    }

    pub fn aod_spread(&self) -> f64 {
        self.aod_spread_deg.to_radians()
    }
}

/// Dataset size and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub samples: usize,
    pub train_fraction: f64,
    /// Derive training labels from a noisy two-level search instead of the
    /// noise-free oracle.
    pub noisy_labels: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { samples: 20_480, train_fraction: 0.8, noisy_labels: false }
    }
}

/// Everything one experiment file can hold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub clusters: ClusterSpec,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub scheme: SchemeConfig,
    pub training: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepGrid,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::ConfigFile { path: path.to_path_buf(), source })?;
        let cfg =
            Self::from_toml_str(&text).map_err(|message| Error::ConfigParse { path: path.to_path_buf(), message })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.clusters.validate()?;
        self.scheme.validate(&self.system)?;
        self.model.validate()?;
        self.model.check_input_len(self.system.tx_wide_beams())?;
        self.training.validate()?;
        self.eval.validate(self.system.trainings)?;
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config("data.train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}
