//! Classical beam-training procedures and the wide-beam measurement
//! primitives that feed the learned predictors.
//!
//! All indices are zero-based. Every measurement draws its noise from the
//! [`NoiseStream`] slot of its `(training index, beam)` pair, so partial and
//! full sweeps of the same training agree on the beams they share.

use std::io::Write;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::channel::{receive, receive_with, ChannelMatrix, NoiseModel, NoiseStream, Slot};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::units;

/// Transmit power, receiver noise and the noise stream of one training.
#[derive(Debug, Clone, Copy)]
pub struct Sounder {
    pub tx_power_mw: f64,
    pub noise: NoiseModel,
    pub stream: NoiseStream,
    /// Training index within the episode.
    pub t: usize,
}

impl Sounder {
    pub fn new(tx_power_mw: f64, noise: NoiseModel, stream: NoiseStream, t: usize) -> Self {
        Self { tx_power_mw, noise, stream, t }
    }

    pub fn at(self, t: usize) -> Self {
        Self { t, ..self }
    }

    pub fn measure<T: Real>(&self, h: &ChannelMatrix<T>, f: &[Complex<T>], slot: Slot) -> Complex<T> {
        receive(h, f, self.tx_power_mw, &self.noise, &mut self.stream.rng(self.t, slot))
    }

    pub fn measure_pair<T: Real>(
        &self,
        h: &ChannelMatrix<T>,
        w: &[Complex<T>],
        f: &[Complex<T>],
        slot: Slot,
    ) -> Complex<T> {
        receive_with(h, w, f, self.tx_power_mw, &self.noise, &mut self.stream.rng(self.t, slot))
    }
}

/// Received signals of a (possibly partial) wide-beam sweep. Unmeasured
/// entries are exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector<T> {
    pub values: Vec<Complex<T>>,
    pub mask: Vec<bool>,
    pub t: usize,
    pub budget_used: usize,
}

impl<T: Real> MeasurementVector<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// A fully measured vector.
    pub fn full(values: Vec<Complex<T>>, t: usize) -> Self {
        let n = values.len();
        Self { values, mask: vec![true; n], t, budget_used: n }
    }

    /// Keeps the entries listed in `indices` and zeroes the rest.
    pub fn masked(&self, indices: &[usize]) -> Result<Self> {
        let mask = selection_mask(indices, self.len())?;
        let zero = Complex::new(T::zero(), T::zero());
        let values = self.values.iter().zip(&mask).map(|(&v, &keep)| if keep { v } else { zero }).collect();
        Ok(Self { values, budget_used: indices.len(), mask, t: self.t })
    }

    pub fn measured(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    /// Strongest measured entry, ties to the lowest index.
    pub fn strongest(&self) -> Option<usize> {
        let mut best: Option<(usize, T)> = None;
        for i in self.measured() {
            let p = self.values[i].norm_sqr();
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((i, p));
            }
        }
        best.map(|(i, _)| i)
    }
}

fn selection_mask(indices: &[usize], len: usize) -> Result<Vec<bool>> {
    if indices.is_empty() {
        return Err(Error::Selection("no beams selected".into()));
    }
    let mut mask = vec![false; len];
    for &i in indices {
        if i >= len {
            return Err(Error::Selection(format!("beam {i} out of range 0..{len}")));
        }
        if mask[i] {
            return Err(Error::Selection(format!("beam {i} selected twice")));
        }
        mask[i] = true;
    }
    Ok(mask)
}

/// Measures every wide beam on the wide sub-channel.
pub fn sweep_full_wide<T: Real>(h_w: &ChannelMatrix<T>, wide: &Codebook<T>, sounder: &Sounder) -> MeasurementVector<T> {
    assert_eq!(h_w.cols, wide.antennas, "wide codebook does not match sub-channel width");
    let values = (0..wide.len()).map(|m| sounder.measure(h_w, wide.beam(m), Slot::Wide(m))).collect();
    MeasurementVector::full(values, sounder.t)
}

/// Measures only the listed wide beams.
pub fn sweep_partial_wide<T: Real>(
    h_w: &ChannelMatrix<T>,
    wide: &Codebook<T>,
    indices: &[usize],
    sounder: &Sounder,
) -> Result<MeasurementVector<T>> {
    assert_eq!(h_w.cols, wide.antennas, "wide codebook does not match sub-channel width");
    let mask = selection_mask(indices, wide.len())?;
    let zero = Complex::new(T::zero(), T::zero());
    let values = mask
        .iter()
        .enumerate()
        .map(|(m, &on)| if on { sounder.measure(h_w, wide.beam(m), Slot::Wide(m)) } else { zero })
        .collect();
    Ok(MeasurementVector { values, mask, t: sounder.t, budget_used: indices.len() })
}

/// Result of a search protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Chosen transmit (narrow) beam.
    pub tx: usize,
    /// Chosen receive beam; 0 when the receive stage is skipped.
    pub rx: usize,
    /// Beam measurements consumed.
    pub budget: usize,
    /// Every measured beam and its received power in mW, in measurement order.
    pub measured: Vec<(Slot, f64)>,
}

impl SearchOutcome {
    pub fn trace(&self, protocol: &str, t: usize) -> TraceRecord {
        TraceRecord {
            t,
            protocol: protocol.to_string(),
            measured: self.measured.iter().map(|(s, _)| slot_label(*s)).collect(),
            power_dbm: self.measured.iter().map(|(_, p)| units::mw_to_dbm(*p)).collect(),
            chosen: self.tx,
            budget: self.budget,
        }
    }
}

fn slot_label(s: Slot) -> String {
    match s {
        Slot::Wide(i) => format!("w{i}"),
        Slot::Narrow(i) => format!("n{i}"),
        Slot::RxWide(i) => format!("rw{i}"),
        Slot::RxNarrow(i) => format!("rn{i}"),
    }
}

fn argmax_power(entries: &[(Slot, f64)], pick: impl Fn(Slot) -> usize) -> usize {
    let mut best = None::<(usize, f64)>;
    for &(slot, p) in entries {
        let idx = pick(slot);
        match best {
            Some((bi, bp)) if p < bp || (p == bp && idx >= bi) => {}
            _ => best = Some((idx, p)),
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}

fn narrow_index(s: Slot) -> usize {
    match s {
        Slot::Narrow(i) | Slot::Wide(i) | Slot::RxNarrow(i) | Slot::RxWide(i) => i,
    }
}

fn measure_narrow<T: Real>(
    h: &ChannelMatrix<T>,
    narrow: &Codebook<T>,
    beams: impl IntoIterator<Item = usize>,
    sounder: &Sounder,
) -> Vec<(Slot, f64)> {
    beams
        .into_iter()
        .map(|m| {
            let y = sounder.measure(h, narrow.beam(m), Slot::Narrow(m));
            (Slot::Narrow(m), y.norm_sqr().as_f64())
        })
        .collect()
}

/// Brute-force sweep of every narrow beam.
pub fn exhaustive_search<T: Real>(h: &ChannelMatrix<T>, narrow: &Codebook<T>, sounder: &Sounder) -> SearchOutcome {
    let measured = measure_narrow(h, narrow, 0..narrow.len(), sounder);
    SearchOutcome { tx: argmax_power(&measured, narrow_index), rx: 0, budget: measured.len(), measured }
}

/// Wide sweep on `h_w`, then a narrow sweep inside the winning wide block.
pub fn two_level_search<T: Real>(
    h: &ChannelMatrix<T>,
    h_w: &ChannelMatrix<T>,
    wide: &Codebook<T>,
    narrow: &Codebook<T>,
    sounder: &Sounder,
) -> SearchOutcome {
    let y = sweep_full_wide(h_w, wide, sounder);
    let mut measured: Vec<(Slot, f64)> =
        y.values.iter().enumerate().map(|(m, v)| (Slot::Wide(m), v.norm_sqr().as_f64())).collect();
    let winner = argmax_power(&measured, narrow_index);
    let second = measure_narrow(h, narrow, wide.block(winner), sounder);
    let tx = argmax_power(&second, narrow_index);
    measured.extend(second);
    SearchOutcome { tx, rx: 0, budget: measured.len(), measured }
}

/// Transmit sweep with an omni receiver, then (for multi-antenna UEs) a
/// receive sweep with the chosen transmit beam.
pub fn interactive_search<T: Real>(
    h: &ChannelMatrix<T>,
    tx_codebook: &Codebook<T>,
    rx_codebook: Option<&Codebook<T>>,
    sounder: &Sounder,
) -> SearchOutcome {
    let mut measured = measure_narrow(h, tx_codebook, 0..tx_codebook.len(), sounder);
    let tx = argmax_power(&measured, narrow_index);
    let mut rx = 0;
    if let Some(rx_cb) = rx_codebook.filter(|_| h.rows > 1) {
        let f = tx_codebook.beam(tx);
        let stage: Vec<(Slot, f64)> = (0..rx_cb.len())
            .map(|n| {
                let y = sounder.measure_pair(h, rx_cb.beam(n), f, Slot::RxNarrow(n));
                (Slot::RxNarrow(n), y.norm_sqr().as_f64())
            })
            .collect();
        rx = argmax_power(&stage, narrow_index);
        measured.extend(stage);
    }
    SearchOutcome { tx, rx, budget: measured.len(), measured }
}

/// Indices of the `k` largest values, largest first; ties go to the lower
/// index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Argmax of `probs`, ties to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    top_k(probs, 1).first().copied().unwrap_or(0)
}

/// Measures the `k_n` most probable narrow beams and keeps the strongest.
/// With `k_n = 0` the most probable beam is returned without measuring.
pub fn refine_topk<T: Real>(
    h: &ChannelMatrix<T>,
    narrow: &Codebook<T>,
    probs: &[f64],
    k_n: usize,
    sounder: &Sounder,
) -> SearchOutcome {
    assert_eq!(probs.len(), narrow.len(), "probability vector does not match codebook");
    if k_n == 0 {
        return SearchOutcome { tx: argmax(probs), rx: 0, budget: 0, measured: vec![] };
    }
    let candidates = top_k(probs, k_n.min(probs.len()));
    let measured = measure_narrow(h, narrow, candidates, sounder);
    SearchOutcome { tx: argmax_power(&measured, narrow_index), rx: 0, budget: measured.len(), measured }
}

/// One JSON-lines record of a protocol trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub protocol: String,
    pub measured: Vec<String>,
    pub power_dbm: Vec<f64>,
    pub chosen: usize,
    pub budget: usize,
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
