//! Network inputs from measured signals.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::protocols::MeasurementVector;
use crate::scalar::Real;

/// Normalised two-channel features `(2, L)`: real parts, then imaginary
/// parts, divided by the largest measured magnitude. Unmeasured entries stay 0.
pub fn preprocess<T: Real>(y: &MeasurementVector<T>) -> Result<Tensor<T>> {
    let values: Vec<Complex64> = y.values.iter().map(|z| Complex64::new(z.re.as_f64(), z.im.as_f64())).collect();
    let data = features_f64(&values, &y.mask)?;
    Ok(Tensor::new(vec![2, values.len()], data.into_iter().map(T::of).collect()))
}

/// The same normalisation on `f64` values, returned flat as `[re..., im...]`.
pub fn features_f64(values: &[Complex64], mask: &[bool]) -> Result<Vec<f64>> {
    assert_eq!(values.len(), mask.len(), "mask does not match measurement length");
    let max = values.iter().zip(mask).filter(|(_, &m)| m).map(|(z, _)| z.norm()).fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::DegenerateInput);
    }
    let l = values.len();
    let mut out = vec![0.0; 2 * l];
    for (i, (z, &m)) in values.iter().zip(mask).enumerate() {
        if m {
            out[i] = z.re / max;
            out[l + i] = z.im / max;
        }
    }
    Ok(out)
}

/// Stacks per-sample feature rows of length `2 L` into a `(B, 2, L)` batch.
pub fn batch<T: Real>(rows: &[Vec<f64>], len: usize) -> Tensor<T> {
    let data = rows
        .iter()
        .flat_map(|r| {
            assert_eq!(r.len(), 2 * len, "feature row length");
            r.iter().map(|&v| T::of(v))
        })
        .collect();
    Tensor::new(vec![rows.len(), 2, len], data)
}
