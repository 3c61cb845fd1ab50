use super::tensor::Tensor;
use crate::scalar::Real;

/// Row-wise softmax of `(B, N)` logits, computed in `f64` with max subtraction.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let n = logits.dim(1);
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data.chunks_exact(n) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| T::of(e / z)));
    }
    Tensor::new(logits.shape.clone(), out)
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits, both multiplied by `weight`.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize], weight: f64) -> (f64, Tensor<T>) {
    let (b, n) = (logits.dim(0), logits.dim(1));
    assert_eq!(labels.len(), b, "one label per batch row");
    let mut grad = Vec::with_capacity(logits.len());
    let mut loss = 0.0;
    let scale = weight / b as f64;
    for (row, &label) in logits.data.chunks_exact(n).zip(labels) {
        assert!(label < n, "label {label} out of range for {n} classes");
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (row[label].as_f64() - max);
        for (j, e) in exps.iter().enumerate() {
            let p = e / z - if j == label { 1.0 } else { 0.0 };
            grad.push(T::of(p * scale));
        }
    }
    (loss * scale, Tensor::new(logits.shape.clone(), grad))
}
