//! Narrowband MIMO channel synthesis and the received-signal model.

use num_complex::{Complex, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::scalar::Real;
use crate::scenario::PathSet;
use crate::units;

/// Half-wavelength ULA response: entry `k` is `exp(j pi k sin(angle)) / sqrt(n)`.
pub fn steering_vector<T: Real>(angle: T, n: usize) -> Vec<Complex<T>> {
    assert!(n >= 1, "steering vector needs at least one antenna");
    let s = angle.as_f64().sin();
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| {
            let z = Complex64::from_polar(scale, std::f64::consts::PI * k as f64 * s);
            Complex::new(T::of(z.re), T::of(z.im))
        })
        .collect()
}

fn steering64(angle: f64, n: usize) -> Vec<Complex64> {
    steering_vector::<f64>(angle, n)
}

/// Complex `rows x cols` channel, row-major, with its LOS and NLOS parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub h: Vec<Complex<T>>,
    pub los: Vec<Complex<T>>,
    pub nlos: Vec<Complex<T>>,
}

impl<T: Real> ChannelMatrix<T> {
    /// `H f`, one entry per receive antenna.
    pub fn apply(&self, f: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(f.len(), self.cols, "beam length does not match channel width");
        self.h
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(f).fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a * b))
            .collect()
    }

    /// `||H f||^2`.
    pub fn beam_gain(&self, f: &[Complex<T>]) -> T {
        self.apply(f).iter().map(|z| z.norm_sqr()).sum()
    }

    /// `w^H H f`.
    pub fn bilinear(&self, w: &[Complex<T>], f: &[Complex<T>]) -> Complex<T> {
        assert_eq!(w.len(), self.rows, "receive beam length does not match channel height");
        self.apply(f).iter().zip(w).fold(Complex::new(T::zero(), T::zero()), |acc, (hf, w)| acc + w.conj() * hf)
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sqr(&self) -> T {
        self.h.iter().map(|z| z.norm_sqr()).sum()
    }

    /// First `cols` transmit columns (all rows kept).
    pub fn leading_columns(&self, cols: usize) -> ChannelMatrix<T> {
        let take = |m: &[Complex<T>]| -> Vec<Complex<T>> {
            m.chunks_exact(self.cols).flat_map(|row| row[..cols].iter().copied()).collect()
        };
        ChannelMatrix { rows: self.rows, cols, h: take(&self.h), los: take(&self.los), nlos: take(&self.nlos) }
    }

    /// Single-antenna channel row as `f64`, used by the dataset container.
    pub fn row64(&self, row: usize) -> Vec<Complex64> {
        self.h[row * self.cols..(row + 1) * self.cols]
            .iter()
            .map(|z| Complex64::new(z.re.as_f64(), z.im.as_f64()))
            .collect()
    }

    /// Rebuilds a single-antenna channel from a stored row. The LOS/NLOS
    /// split is not stored, so the whole row is reported as LOS.
    pub fn from_row(row: &[Complex64]) -> ChannelMatrix<T> {
        let h: Vec<Complex<T>> = row.iter().map(|z| Complex::new(T::of(z.re), T::of(z.im))).collect();
        let nlos = vec![Complex::new(T::zero(), T::zero()); h.len()];
        ChannelMatrix { rows: 1, cols: h.len(), los: h.clone(), h, nlos }
    }
}

fn outer_add(acc: &mut [Complex64], scale: Complex64, rx: &[Complex64], tx: &[Complex64]) {
    let cols = tx.len();
    for (i, r) in rx.iter().enumerate() {
        let a = scale * r;
        for (j, t) in tx.iter().enumerate() {
            acc[i * cols + j] += a * t.conj();
        }
    }
}

/// Assembles the channel for explicit array sizes.
pub fn assemble_sized<T: Real>(paths: &PathSet, tx_antennas: usize, rx_antennas: usize) -> ChannelMatrix<T> {
    let (rows, cols) = (rx_antennas, tx_antennas);
    let array_gain = (tx_antennas * rx_antennas) as f64;
    let mut los = vec![Complex64::new(0.0, 0.0); rows * cols];
    let mut nlos = los.clone();

    let los_amp = (array_gain * units::db_to_linear(-paths.los.pathloss_db)).sqrt();
    outer_add(&mut los, paths.los.gain * los_amp, &steering64(paths.los.aoa, rows), &steering64(paths.los.aod, cols));

    for c in &paths.clusters {
        let amp = (array_gain * units::db_to_linear(-c.pathloss_db)).sqrt() / (c.gains.len() as f64).sqrt();
        for ((g, dphi), dtheta) in c.gains.iter().zip(&c.aod_offsets).zip(&c.aoa_offsets) {
            outer_add(&mut nlos, g * amp, &steering64(c.aoa + dtheta, rows), &steering64(c.aod + dphi, cols));
        }
    }

    let cast =
        |v: &[Complex64]| -> Vec<Complex<T>> { v.iter().map(|z| Complex::new(T::of(z.re), T::of(z.im))).collect() };
    let h: Vec<Complex64> = los.iter().zip(&nlos).map(|(a, b)| a + b).collect();
    ChannelMatrix { rows, cols, h: cast(&h), los: cast(&los), nlos: cast(&nlos) }
}

/// Full-array channel `H` for the configured BS/UE arrays.
pub fn assemble<T: Real>(paths: &PathSet, cfg: &SystemConfig) -> ChannelMatrix<T> {
    assemble_sized(paths, cfg.tx_antennas, cfg.rx_antennas)
}

/// Sub-channel `H_w` seen by the switched-on antennas of the wide beams:
/// the first `M_Tx / s_Tx` transmit and `M_Rx / s_Rx` receive elements.
pub fn wide_subchannel<T: Real>(paths: &PathSet, cfg: &SystemConfig) -> ChannelMatrix<T> {
    assemble_sized(paths, cfg.tx_wide_antennas(), cfg.rx_antennas / cfg.rx_ratio)
}

/// Receiver noise power in dBm. `-inf` disables noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma2_dbm: f64,
}

impl NoiseModel {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self { sigma2_dbm: cfg.noise_dbm() }
    }

    pub fn disabled() -> Self {
        Self { sigma2_dbm: f64::NEG_INFINITY }
    }

    pub fn variance_mw(&self) -> f64 {
        units::dbm_to_mw(self.sigma2_dbm)
    }

    pub fn is_disabled(&self) -> bool {
        self.sigma2_dbm == f64::NEG_INFINITY
    }

    /// One `CN(0, sigma^2)` draw. Consumes nothing when noise is disabled.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        if self.is_disabled() {
            return Complex64::new(0.0, 0.0);
        }
        let s = (0.5 * self.variance_mw()).sqrt();
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re * s, im * s)
    }
}

fn widen<T: Real>(z: Complex<T>) -> Complex64 {
    Complex64::new(z.re.as_f64(), z.im.as_f64())
}

fn narrow<T: Real>(z: Complex64) -> Complex<T> {
    Complex::new(T::of(z.re), T::of(z.im))
}

/// Received signal of a single-antenna UE, `sqrt(P) H f + n` with `x = 1`.
///
/// With several receive antennas the first one acts as the omni element.
pub fn receive<T: Real, R: Rng + ?Sized>(
    h: &ChannelMatrix<T>,
    f: &[Complex<T>],
    tx_power_mw: f64,
    noise: &NoiseModel,
    rng: &mut R,
) -> Complex<T> {
    let hf = widen(h.apply(f)[0]);
    narrow(hf * tx_power_mw.sqrt() + noise.draw(rng))
}

/// Received signal with an explicit receive beam, `sqrt(P) w^H H f + w^H n`.
/// For a unit-norm `w` the projected noise is again `CN(0, sigma^2)`.
pub fn receive_with<T: Real, R: Rng + ?Sized>(
    h: &ChannelMatrix<T>,
    w: &[Complex<T>],
    f: &[Complex<T>],
    tx_power_mw: f64,
    noise: &NoiseModel,
    rng: &mut R,
) -> Complex<T> {
    let whf = widen(h.bilinear(w, f));
    narrow(whf * tx_power_mw.sqrt() + noise.draw(rng))
}

/// Which beam a noise sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Wide(usize),
    Narrow(usize),
    RxWide(usize),
    RxNarrow(usize),
}

impl Slot {
    fn code(self) -> u64 {
        let (kind, idx) = match self {
            Slot::Wide(i) => (1u64, i),
            Slot::Narrow(i) => (2, i),
            Slot::RxWide(i) => (3, i),
            Slot::RxNarrow(i) => (4, i),
        };
        assert!(idx < 1 << 24, "beam index too large for the noise stream");
        (kind << 56) | idx as u64
    }
}

/// Counter-keyed noise source: every `(training index, beam)` pair owns an
/// independent generator, so a partial sweep sees exactly the same noise on
/// the beams it shares with a full sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStream {
    pub key: u64,
}

impl NoiseStream {
    pub fn new(key: u64) -> Self {
        Self { key }
    }

    pub fn rng(&self, t: usize, slot: Slot) -> ChaCha8Rng {
        assert!(t < 1 << 24, "training index too large for the noise stream");
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(slot.code() | ((t as u64) << 32));
        rng
    }
}
