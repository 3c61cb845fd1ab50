//! Episode datasets: channels, noisy wide-beam sweeps and beam labels.
//!
//! File layout (little-endian):
//!
//! ```text
//! "BTDS"  u32 version  u32 header_len  header JSON
//! per sample: u64 episode_seed, u64 noise_key,
//!   per step: u32 label, u32 wide_label, f64 los_aod, f64 distance,
//!             n_tx x (f64 re, f64 im) channel row,
//!             n_wide x (f64 re, f64 im) wide sweep
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelMatrix, NoiseModel, NoiseStream};
use crate::codebook::{best_beam_oracle, narrow_codebook, wide_codebook, Codebook};
use crate::config::{ClusterSpec, DataConfig, SystemConfig};
use crate::error::{Error, Result};
use crate::protocols::{sweep_full_wide, two_level_search, Sounder};
use crate::scenario::EpisodeState;
use crate::seed::{self, tag};

pub const MAGIC: &[u8; 4] = b"BTDS";
pub const VERSION: u32 = 1;

/// One training index of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// Best narrow beam of the noise-free channel (or of a noisy two-level
    /// search when noisy labels are enabled).
    pub label: usize,
    /// Strongest measured wide beam.
    pub wide_label: usize,
    pub los_aod: f64,
    pub distance_m: f64,
    /// Single-antenna channel row, one entry per transmit antenna.
    pub channel: Vec<Complex64>,
    /// Full noisy wide-beam sweep.
    pub wide: Vec<Complex64>,
}

/// One UE episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub episode_seed: u64,
    /// Key of the measurement-noise stream; regenerates any further
    /// measurement of this episode consistently with the stored sweep.
    pub noise_key: u64,
    pub steps: Vec<Step>,
}

impl Sample {
    pub fn labels(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.label).collect()
    }

    pub fn wide_labels(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.wide_label).collect()
    }

    pub fn channel<T: crate::Real>(&self, t: usize) -> ChannelMatrix<T> {
        ChannelMatrix::from_row(&self.steps[t].channel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub system: SystemConfig,
    pub clusters: ClusterSpec,
    pub data: DataConfig,
    pub seed: u64,
    pub samples: usize,
    pub steps: usize,
    pub tx_antennas: usize,
    pub wide_beams: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

/// Beam codebooks and the measurement setup shared by one dataset.
#[derive(Debug, Clone)]
pub struct Frontend {
    pub system: SystemConfig,
    pub narrow: Codebook<f64>,
    pub wide: Codebook<f64>,
    pub noise: NoiseModel,
}

impl Frontend {
    pub fn new(system: &SystemConfig) -> Self {
        Self::with_noise(system, NoiseModel::from_config(system))
    }

    pub fn with_noise(system: &SystemConfig, noise: NoiseModel) -> Self {
        let gamma = system.tx_coverage();
        Self {
            system: system.clone(),
            narrow: narrow_codebook(system.tx_antennas, system.tx_beams, gamma),
            wide: wide_codebook(system.tx_antennas, system.tx_beams, system.tx_ratio, gamma),
            noise,
        }
    }

    pub fn sounder(&self, noise_key: u64, t: usize) -> Sounder {
        Sounder::new(self.system.tx_power_mw(), self.noise, NoiseStream::new(noise_key), t)
    }
}

/// Seeded 80/20-style split of `n` indices.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(seed, tag::SPLIT)));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let validation = idx.split_off(n_train.min(n));
    (idx, validation)
}

fn generate_sample(fe: &Frontend, clusters: &ClusterSpec, noisy_labels: bool, seed: u64, i: usize) -> Sample {
    let system = &fe.system;
    let episode_seed = seed::derive(seed, tag::EPISODE + i as u64);
    let noise_key = seed::derive(seed, tag::NOISE + i as u64);
    let mut state = EpisodeState::new(system, clusters, episode_seed);
    let mut steps = Vec::with_capacity(system.trainings);
    for t in 0..system.trainings {
        if t > 0 {
            state = state.advance(system.training_period_s);
        }
        let paths = state.snapshot_paths();
        let h: ChannelMatrix<f64> = channel::assemble_sized(&paths, system.tx_antennas, 1);
        let h_w = h.leading_columns(fe.wide.antennas);
        let sounder = fe.sounder(noise_key, t);
        let sweep = sweep_full_wide(&h_w, &fe.wide, &sounder);
        let label = if noisy_labels {
            two_level_search(&h, &h_w, &fe.wide, &fe.narrow, &sounder).tx
        } else {
            best_beam_oracle(&h, &fe.narrow)
        };
        let wide_label = sweep.strongest().unwrap_or(0);
        steps.push(Step {
            label,
            wide_label,
            los_aod: paths.los.aod,
            distance_m: paths.los.distance_m,
            channel: h.row64(0),
            wide: sweep.values,
        });
    }
    Sample { episode_seed, noise_key, steps }
}

/// Generates `data.samples` episodes; the result depends only on the
/// configuration and `seed`, not on the number of worker threads.
pub fn generate_dataset(
    system: &SystemConfig,
    clusters: &ClusterSpec,
    data: &DataConfig,
    seed: u64,
) -> Result<Dataset> {
    system.validate()?;
    clusters.validate()?;
    if system.rx_antennas != 1 {
        return Err(Error::Config("datasets assume a single-antenna UE (system.rx_antennas = 1)".into()));
    }
    let fe = Frontend::new(system);
    let samples: Vec<Sample> =
        (0..data.samples).into_par_iter().map(|i| generate_sample(&fe, clusters, data.noisy_labels, seed, i)).collect();
    let (train, validation) = split_indices(data.samples, data.train_fraction, seed);
    let header = DatasetHeader {
        system: system.clone(),
        clusters: clusters.clone(),
        data: data.clone(),
        seed,
        samples: data.samples,
        steps: system.trainings,
        tx_antennas: system.tx_antennas,
        wide_beams: system.tx_wide_beams(),
        train,
        validation,
    };
    Ok(Dataset { header, samples })
}

fn bad(message: impl Into<String>) -> Error {
    Error::Format { kind: "dataset", message: message.into() }
}

impl Dataset {
    pub fn train(&self) -> Vec<&Sample> {
        self.header.train.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn validation(&self) -> Vec<&Sample> {
        self.header.validation.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn frontend(&self) -> Frontend {
        Frontend::new(&self.header.system)
    }

    /// Copy whose wide sweeps are re-measured through `fe`, e.g. without noise.
    pub fn resounded(&self, fe: &Frontend) -> Dataset {
        let mut out = self.clone();
        out.samples.par_iter_mut().for_each(|s| {
            for t in 0..s.steps.len() {
                let h_w = s.channel::<f64>(t).leading_columns(fe.wide.antennas);
                s.steps[t].wide = sweep_full_wide(&h_w, &fe.wide, &fe.sounder(s.noise_key, t)).values;
            }
        });
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        let header = serde_json::to_vec(&self.header)?;
        w.write_u32::<LE>(header.len() as u32)?;
        w.write_all(&header)?;
        for s in &self.samples {
            w.write_u64::<LE>(s.episode_seed)?;
            w.write_u64::<LE>(s.noise_key)?;
            for st in &s.steps {
                w.write_u32::<LE>(st.label as u32)?;
                w.write_u32::<LE>(st.wide_label as u32)?;
                w.write_f64::<LE>(st.los_aod)?;
                w.write_f64::<LE>(st.distance_m)?;
                for z in st.channel.iter().chain(&st.wide) {
                    w.write_f64::<LE>(z.re)?;
                    w.write_f64::<LE>(z.im)?;
                }
            }
        }
        Ok(w)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.read_u32::<LE>()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let len = r.read_u32::<LE>()? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let header: DatasetHeader = serde_json::from_slice(&buf)?;
        let read_c = |r: &mut R, n: usize| -> Result<Vec<Complex64>> {
            (0..n).map(|_| Ok(Complex64::new(r.read_f64::<LE>()?, r.read_f64::<LE>()?))).collect()
        };
        let mut samples = Vec::with_capacity(header.samples);
        for _ in 0..header.samples {
            let episode_seed = r.read_u64::<LE>()?;
            let noise_key = r.read_u64::<LE>()?;
            let mut steps = Vec::with_capacity(header.steps);
            for _ in 0..header.steps {
                let label = r.read_u32::<LE>()? as usize;
                let wide_label = r.read_u32::<LE>()? as usize;
                if label >= header.system.tx_beams || wide_label >= header.wide_beams {
                    return Err(bad(format!("label {label}/{wide_label} out of range")));
                }
                let los_aod = r.read_f64::<LE>()?;
                let distance_m = r.read_f64::<LE>()?;
                let channel = read_c(r, header.tx_antennas)?;
                let wide = read_c(r, header.wide_beams)?;
                steps.push(Step { label, wide_label, los_aod, distance_m, channel, wide });
            }
            samples.push(Sample { episode_seed, noise_key, steps });
        }
        let n = header.samples;
        if header.train.iter().chain(&header.validation).any(|&i| i >= n) {
            return Err(bad("split index out of range"));
        }
        Ok(Self { header, samples })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (SystemConfig, ClusterSpec, DataConfig) {
        let system = SystemConfig { tx_antennas: 16, tx_beams: 16, trainings: 4, ..Default::default() };
        (system, ClusterSpec::default(), DataConfig { samples: 10, ..Default::default() })
    }

    #[test]
    fn split_sizes_follow_fraction() {
        let (tr, va) = split_indices(20_480, 0.8, 3);
        assert_eq!((tr.len(), va.len()), (16_384, 4_096));
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20_480).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.8, 3), split_indices(100, 0.8, 3));
        assert_ne!(split_indices(100, 0.8, 3).0, split_indices(100, 0.8, 4).0);
    }

    #[test]
    fn generation_is_deterministic_and_round_trips() {
        let (s, c, d) = small();
        let a = generate_dataset(&s, &c, &d, 5).unwrap();
        let b = generate_dataset(&s, &c, &d, 5).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        let back = Dataset::read(&mut a.to_bytes().unwrap().as_slice()).unwrap();
        assert_eq!(back, a);
        assert_eq!(a.samples[0].steps.len(), 4);
        assert_eq!(a.samples[0].steps[0].wide.len(), 4);
    }

    #[test]
    fn labels_are_in_range_and_wide_label_is_strongest() {
        let (s, c, d) = small();
        let ds = generate_dataset(&s, &c, &d, 1).unwrap();
        for sample in &ds.samples {
            for st in &sample.steps {
                assert!(st.label < 16 && st.wide_label < 4);
                let p: Vec<f64> = st.wide.iter().map(|z| z.norm_sqr()).collect();
                assert!(p.iter().all(|&v| v <= p[st.wide_label]));
            }
        }
    }

    #[test]
    fn stored_sweep_is_reproducible_from_channel_and_key() {
        let (s, c, d) = small();
        let ds = generate_dataset(&s, &c, &d, 2).unwrap();
        let fe = ds.frontend();
        let sample = &ds.samples[3];
        let h: ChannelMatrix<f64> = sample.channel(2);
        let y = sweep_full_wide(&h.leading_columns(fe.wide.antennas), &fe.wide, &fe.sounder(sample.noise_key, 2));
        assert_eq!(y.values, sample.steps[2].wide);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(Dataset::read(&mut &b"XXXX\x01\0\0\0"[..]), Err(Error::Format { .. })));
        let (s, c, d) = small();
        let bytes = generate_dataset(&s, &c, &d, 2).unwrap().to_bytes().unwrap();
        assert!(Dataset::read(&mut &bytes[..bytes.len() - 3]).is_err());
    }
}
