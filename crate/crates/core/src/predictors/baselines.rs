//! Non-learned reference predictors and the sampled-narrow front end.

use num_complex::Complex64;

use crate::channel::{ChannelMatrix, Slot};
use crate::codebook::{dirichlet, Codebook};
use crate::protocols::Sounder;

/// Every `ratio`-th narrow beam, starting at the first.
pub fn sampled_indices(narrow_beams: usize, ratio: usize) -> Vec<usize> {
    (0..narrow_beams).step_by(ratio).collect()
}

/// Received signals of the sampled narrow beams, drawn from the same noise
/// stream slots an exhaustive search would use.
pub fn sampled_measurements(
    h: &ChannelMatrix<f64>,
    narrow: &Codebook<f64>,
    ratio: usize,
    sounder: &Sounder,
) -> Vec<Complex64> {
    sampled_indices(narrow.len(), ratio)
        .into_iter()
        .map(|m| sounder.measure(h, narrow.beam(m), Slot::Narrow(m)))
        .collect()
}

fn gain(sine_beam: f64, u: f64, antennas: usize) -> f64 {
    dirichlet(sine_beam - u, antennas).norm().max(f64::MIN_POSITIVE)
}

/// Points scanned across the strongest beam's cell.
const SCAN_POINTS: usize = 2048;

/// Estimated sine of the dominant direction from a full wide-beam sweep,
/// found by matching the gain ratios of the strongest beam's neighbours to
/// the array factor of the wide-beam sub-array.
///
/// Adjacent wide beams sit further apart than their main-lobe half-width, so
/// one ratio alone has mirror solutions inside the strongest beam's cell;
/// the scan fits both neighbours' ratios (linear amplitude, least squares)
/// over the sine interval where the strongest beam is nearest. Returns
/// `None` when there is no neighbour.
pub fn power_ratio_sine(y: &[Complex64], wide: &Codebook<f64>) -> Option<f64> {
    assert_eq!(y.len(), wide.len(), "sweep does not match the wide codebook");
    let amp: Vec<f64> = y.iter().map(|z| z.norm()).collect();
    let best = crate::protocols::argmax(&amp);
    let left = best.checked_sub(1);
    let right = (best + 1 < amp.len()).then_some(best + 1);
    if left.is_none() && right.is_none() {
        return None;
    }
    let sine = |i: usize| wide.directions[i].sin();
    let m = wide.antennas;
    let sb = sine(best);
    let lo = left.map_or(-1.0, |l| 0.5 * (sine(l) + sb));
    let hi = right.map_or(1.0, |r| 0.5 * (sine(r) + sb));
    if amp[best] == 0.0 {
        return Some(sb);
    }
    let neighbours: Vec<(f64, f64)> =
        [left, right].into_iter().flatten().map(|n| (sine(n), amp[n] / amp[best])).collect();
    let mut best_u = sb;
    let mut best_err = f64::INFINITY;
    for i in 0..=SCAN_POINTS {
        let u = lo + (hi - lo) * i as f64 / SCAN_POINTS as f64;
        let gb = gain(sb, u, m);
        let err: f64 = neighbours.iter().map(|&(sn, r)| (gain(sn, u, m) / gb - r).powi(2)).sum();
        if err < best_err {
            best_err = err;
            best_u = u;
        }
    }
    Some(best_u)
}

/// Narrow beam nearest (in sine) to the power-ratio estimate. Without a
/// neighbour the middle beam of the strongest wide beam's block is returned.
pub fn baseline_power_ratio(y: &[Complex64], wide: &Codebook<f64>, narrow: &Codebook<f64>) -> usize {
    match power_ratio_sine(y, wide) {
        Some(u) => crate::codebook::nearest_sine(&narrow.directions, u),
        None => {
            let amp: Vec<f64> = y.iter().map(|z| z.norm()).collect();
            let best = crate::protocols::argmax(&amp);
            wide.block(best).start + (wide.ratio - 1) / 2
        }
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::channel::{steering_vector, NoiseModel, NoiseStream};
    use crate::codebook::{narrow_codebook, wide_codebook};

    fn los_sweep(phi: f64, wide: &Codebook<f64>) -> Vec<Complex64> {
        let a = steering_vector::<f64>(phi, wide.antennas);
        (0..wide.len()).map(|m| a.iter().zip(wide.beam(m)).map(|(x, f)| x.conj() * f).sum()).collect()
    }

    #[test]
    fn sampled_indices_every_ratio() {
        let idx = sampled_indices(64, 4);
        assert_eq!(idx.len(), 16);
        assert_eq!(idx[0], 0);
        assert_eq!(idx[15], 60);
    }

    #[test]
    fn exact_recovery_at_narrow_centres() {
        let narrow = narrow_codebook::<f64>(64, 64, PI);
        let wide = wide_codebook::<f64>(64, 64, 4, PI);
        for m in 0..64 {
            let y = los_sweep(narrow.directions[m], &wide);
            assert_eq!(baseline_power_ratio(&y, &wide, &narrow), m, "centre {m}");
        }
    }

    #[test]
    fn wide_centre_maps_into_its_block() {
        let narrow = narrow_codebook::<f64>(64, 64, PI);
        let wide = wide_codebook::<f64>(64, 64, 4, PI);
        for w in 0..16 {
            let y = los_sweep(wide.directions[w], &wide);
            assert!(wide.block(w).contains(&baseline_power_ratio(&y, &wide, &narrow)), "wide {w}");
        }
    }

    #[test]
    fn single_wide_beam_gives_block_middle() {
        let narrow = narrow_codebook::<f64>(4, 4, PI);
        let wide = wide_codebook::<f64>(4, 4, 4, PI);
        assert_eq!(wide.len(), 1);
        assert_eq!(baseline_power_ratio(&[Complex64::new(1.0, 0.0)], &wide, &narrow), 1);
    }

    #[test]
    fn sampled_measurements_match_exhaustive_slots() {
        let narrow = narrow_codebook::<f64>(16, 16, PI);
        let h = ChannelMatrix::<f64>::from_row(&steering_vector::<f64>(0.3, 16));
        let sounder = Sounder::new(1.0, NoiseModel { sigma2_dbm: -10.0 }, NoiseStream::new(4), 2);
        let y = sampled_measurements(&h, &narrow, 4, &sounder);
        assert_eq!(y.len(), 4);
        assert_eq!(y[1], sounder.measure(&h, narrow.beam(4), Slot::Narrow(4)));
    }
}
