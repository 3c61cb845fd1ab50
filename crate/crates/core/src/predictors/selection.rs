//! Choice of the wide beams measured in a partial sweep.

use std::f64::consts::PI;

use crate::protocols::top_k;

/// Distances closer than this are treated as ties.
const TIE_QUANTUM: f64 = 1e-9;

/// The `k` wide beams whose directions are nearest to `reference`, with the
/// distance `|gamma_m - reference| mod pi`. Returned in ascending index order.
pub fn select_onc(reference: f64, wide_directions: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<(i64, usize)> = wide_directions
        .iter()
        .enumerate()
        .map(|(m, &g)| (((g - reference).abs().rem_euclid(PI) / TIE_QUANTUM).round() as i64, m))
        .collect();
    idx.sort_unstable();
    let mut out: Vec<usize> = idx.into_iter().take(k).map(|(_, m)| m).collect();
    out.sort_unstable();
    out
}

/// Sums the narrow probabilities of each block of `ratio` consecutive beams.
pub fn aggregate_wide(narrow_probs: &[f64], ratio: usize) -> Vec<f64> {
    assert!(ratio > 0 && narrow_probs.len().is_multiple_of(ratio), "ratio must divide the codebook size");
    narrow_probs.chunks_exact(ratio).map(|c| c.iter().sum()).collect()
}

/// The `k` most probable wide beams, ascending; ties go to the lower index.
pub fn select_mpc(wide_probs: &[f64], k: usize) -> Vec<usize> {
    let mut out = top_k(wide_probs, k);
    out.sort_unstable();
    out
}
