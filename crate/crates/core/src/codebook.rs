//! DFT narrow/wide codebooks and the closed-form power-leakage profile.

use std::io::Write;

use num_complex::{Complex, Complex64};
use serde::{Deserialize, Serialize};

use crate::channel::{steering_vector, ChannelMatrix};
use crate::error::Result;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeamKind {
    Narrow,
    Wide,
}

/// An ordered set of unit-norm steering codewords.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<T> {
    pub kind: BeamKind,
    /// Elements driven by each codeword.
    pub antennas: usize,
    /// Narrow beams per wide beam (1 for narrow codebooks).
    pub ratio: usize,
    pub coverage: f64,
    /// Beam directions in radians, strictly increasing.
    pub directions: Vec<f64>,
    pub beams: Vec<Vec<Complex<T>>>,
}

impl<T: Real> Codebook<T> {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    pub fn beam(&self, m: usize) -> &[Complex<T>] {
        &self.beams[m]
    }

    /// Narrow-beam index range covered by wide beam `m` of this codebook.
    pub fn block(&self, m: usize) -> std::ops::Range<usize> {
        m * self.ratio..(m + 1) * self.ratio
    }

    /// Index of the beam nearest to `angle` in the sine domain (ties to the
    /// lower index).
    pub fn nearest_in_sine(&self, angle: f64) -> usize {
        nearest_sine(&self.directions, angle.sin())
    }
}

pub(crate) fn nearest_sine(directions: &[f64], sine: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (m, g) in directions.iter().enumerate() {
        let d = (g.sin() - sine).abs();
        if d < best_d {
            best = m;
            best_d = d;
        }
    }
    best
}

fn directions(beams: usize, ratio: usize, coverage: f64) -> Vec<f64> {
    let n_total = (beams * ratio) as f64;
    (1..=beams).map(|m| -coverage / 2.0 + (2 * m - 1) as f64 * ratio as f64 * coverage / (2.0 * n_total)).collect()
}

/// `beams` narrow DFT codewords over `antennas` elements, directions
/// uniformly spread over `(-coverage/2, coverage/2)`.
pub fn narrow_codebook<T: Real>(antennas: usize, beams: usize, coverage: f64) -> Codebook<T> {
    assert!(beams >= 1 && antennas >= 1);
    assert!(coverage > 0.0 && coverage <= std::f64::consts::PI);
    let directions = directions(beams, 1, coverage);
    let beams = directions.iter().map(|&g| steering_vector(T::of(g), antennas)).collect();
    Codebook { kind: BeamKind::Narrow, antennas, ratio: 1, coverage, directions, beams }
}

/// `narrow_beams / ratio` wide codewords using the first `antennas / ratio`
/// elements.
pub fn wide_codebook<T: Real>(antennas: usize, narrow_beams: usize, ratio: usize, coverage: f64) -> Codebook<T> {
    assert!(ratio >= 1 && narrow_beams.is_multiple_of(ratio) && antennas.is_multiple_of(ratio));
    assert!(coverage > 0.0 && coverage <= std::f64::consts::PI);
    let count = narrow_beams / ratio;
    let sub = antennas / ratio;
    let directions = directions(count, ratio, coverage);
    let beams = directions.iter().map(|&g| steering_vector(T::of(g), sub)).collect();
    let kind = if ratio == 1 { BeamKind::Narrow } else { BeamKind::Wide };
    Codebook { kind, antennas: sub, ratio, coverage, directions, beams }
}

/// `sin(pi x)` with exact zeros at integers.
fn sinpi(x: f64) -> f64 {
    let k = x.round();
    let r = x - k;
    let s = (std::f64::consts::PI * r).sin();
    if (k as i64) % 2 == 0 {
        s
    } else {
        -s
    }
}

fn cospi(x: f64) -> f64 {
    sinpi(x + 0.5)
}

/// Array factor `(1/M) sum_k exp(j pi k delta)` in closed form, with the
/// removable singularities at `delta = 2k` evaluated as their limit.
pub fn dirichlet(delta: f64, antennas: usize) -> Complex64 {
    let m = antennas as f64;
    let den = sinpi(delta / 2.0);
    if den == 0.0 {
        // Numerator and denominator signs cancel the phase factor exactly.
        return Complex64::new(1.0, 0.0);
    }
    let num = sinpi(m * delta / 2.0);
    if num == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let mag = num / (m * den);
    let phase = (m - 1.0) * delta / 2.0;
    Complex64::new(mag * cospi(phase), mag * sinpi(phase))
}

/// Leakage of a path at angle `phi` into beam `m`: `a^H(phi) f_m`.
pub fn leakage_gain<T: Real>(phi: f64, m: usize, codebook: &Codebook<T>) -> Complex<T> {
    let delta = codebook.directions[m].sin() - phi.sin();
    let q = dirichlet(delta, codebook.antennas);
    Complex::new(T::of(q.re), T::of(q.im))
}

/// Beam maximizing `||H f_m||^2`; ties go to the lowest index.
pub fn best_beam_oracle<T: Real>(h: &ChannelMatrix<T>, codebook: &Codebook<T>) -> usize {
    let mut best = 0;
    let mut best_gain = T::neg_infinity();
    for (m, f) in codebook.beams.iter().enumerate() {
        let g = h.beam_gain(f);
        if g > best_gain {
            best = m;
            best_gain = g;
        }
    }
    best
}

/// Writes one row per beam: index, direction and `|q_m(phi)|` over `phis`.
pub fn write_gain_profile<T: Real, W: Write>(codebook: &Codebook<T>, phis: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["beam_index".to_string(), "direction_rad".to_string()];
    header.extend(phis.iter().map(|p| format!("q_at_{p:.6}")));
    w.write_record(&header).map_err(csv_err)?;
    for (m, dir) in codebook.directions.iter().enumerate() {
        let mut row = vec![m.to_string(), format!("{dir:.12}")];
        row.extend(phis.iter().map(|&p| format!("{:.12}", leakage_gain(p, m, codebook).norm().as_f64())));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{LosPath, PathSet};
    use std::f64::consts::PI;

    fn direct_inner(phi: f64, f: &[Complex64]) -> Complex64 {
        let a = steering_vector(phi, f.len());
        a.iter().zip(f).map(|(x, y)| x.conj() * y).sum()
    }

    #[test]
    fn narrow_directions() {
        let cb: Codebook<f64> = narrow_codebook(64, 64, PI);
        assert!((cb.directions[0] - (-PI / 2.0 + PI / 128.0)).abs() < 1e-12);
        assert!((cb.directions[0] - (-1.5462)).abs() < 1e-4);
        assert!((cb.directions[63] - (PI / 2.0 - PI / 128.0)).abs() < 1e-12);
        for m in 0..64 {
            assert!((cb.directions[m] + cb.directions[63 - m]).abs() < 1e-12);
            if m > 0 {
                assert!((cb.directions[m] - cb.directions[m - 1] - PI / 64.0).abs() < 1e-12);
            }
            let n: f64 = cb.beams[m].iter().map(|z| z.norm_sqr()).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_directions_are_block_means() {
        let n: Codebook<f64> = narrow_codebook(64, 64, PI);
        let w: Codebook<f64> = wide_codebook(64, 64, 4, PI);
        assert_eq!(w.len(), 16);
        assert_eq!(w.antennas, 16);
        for m in 0..16 {
            let mean: f64 = n.directions[w.block(m)].iter().sum::<f64>() / 4.0;
            assert!((w.directions[m] - mean).abs() < 1e-12);
            if m > 0 {
                assert!((w.directions[m] - w.directions[m - 1] - PI / 16.0).abs() < 1e-12);
            }
        }
        let w1: Codebook<f64> = wide_codebook(64, 64, 1, PI);
        assert_eq!(w1, n);
    }

    #[test]
    fn leakage_limits() {
        let cb: Codebook<f64> = narrow_codebook(16, 16, PI);
        for m in 0..16 {
            let q = leakage_gain(cb.directions[m], m, &cb);
            assert!((q.norm() - 1.0).abs() < 1e-15);
        }
        assert_eq!(dirichlet(2.0 / 16.0, 16), Complex64::new(0.0, 0.0));
        assert_eq!(dirichlet(-6.0 / 16.0, 16), Complex64::new(0.0, 0.0));
        assert_eq!(dirichlet(0.0, 16), Complex64::new(1.0, 0.0));
        assert_eq!(dirichlet(2.0, 16), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn leakage_profile_example() {
        let cb: Codebook<f64> = narrow_codebook(16, 16, PI);
        let phi = 0.02 * PI;
        let mags: Vec<f64> = (0..16).map(|m| leakage_gain(phi, m, &cb).norm()).collect();
        let best = (0..16).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
        assert!((cb.directions[best] - PI / 32.0).abs() < 1e-12);
        for m in 0..16 {
            let direct = direct_inner(phi, &cb.beams[m]);
            let q = leakage_gain(phi, m, &cb);
            assert!((q - direct).norm() < 1e-9);
        }
    }

    #[test]
    fn leakage_depends_on_sine_only() {
        let cb: Codebook<f64> = narrow_codebook(32, 32, PI);
        for phi in [0.1, 0.7, 1.3, -0.4] {
            for m in 0..32 {
                let a = leakage_gain(phi, m, &cb);
                let b = leakage_gain(PI - phi, m, &cb);
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_picks_nearest_sine_beam_for_los() {
        let cb: Codebook<f64> = narrow_codebook(64, 64, PI);
        for i in 0..200 {
            let phi = -1.5 + 3.0 * i as f64 / 199.0;
            let p = PathSet {
                los: LosPath {
                    aod: phi,
                    aoa: 0.0,
                    distance_m: 10.0,
                    pathloss_db: 80.0,
                    gain: Complex64::new(1.0, 0.0),
                },
                clusters: vec![],
            };
            let h: ChannelMatrix<f64> = crate::channel::assemble_sized(&p, 64, 1);
            assert_eq!(best_beam_oracle(&h, &cb), cb.nearest_in_sine(phi));
        }
        let one: Codebook<f64> = narrow_codebook(8, 1, PI);
        let h: ChannelMatrix<f64> = ChannelMatrix::from_row(&[Complex64::new(1.0, 0.0); 8]);
        assert_eq!(best_beam_oracle(&h, &one), 0);
    }

    #[test]
    fn oracle_ties_go_low() {
        let cb: Codebook<f64> = narrow_codebook(4, 4, PI);
        let h: ChannelMatrix<f64> = ChannelMatrix::from_row(&[Complex64::new(0.0, 0.0); 4]);
        assert_eq!(best_beam_oracle(&h, &cb), 0);
    }

    #[test]
    fn profile_csv_shape() {
        let cb: Codebook<f64> = narrow_codebook(16, 16, PI);
        let mut buf = Vec::new();
        write_gain_profile(&cb, &[0.0, 0.1, 0.2], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 17);
        assert_eq!(lines[0], "beam_index,direction_rad,q_at_0.000000,q_at_0.100000,q_at_0.200000");
    }
}
