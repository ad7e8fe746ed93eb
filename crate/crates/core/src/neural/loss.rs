use crate::error::{Error, Result};
use crate::features::DenseVector;

const LOG_FLOOR: f64 = 1e-12;

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<DenseVector> {
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {bad}")));
    }
    let mut out = logits.to_vec();
    super::layers::softmax_in_place(&mut out);
    Ok(DenseVector::from(out))
}

/// `-weight * ln(probs[label] + 1e-12)`
pub fn weighted_cross_entropy(probs: &[f64], label: usize, weight: f64) -> Result<f64> {
    let p = probs.get(label).ok_or(Error::Index {
        index: label,
        len: probs.len(),
    })?;
    if weight < 0.0 {
        return Err(Error::precondition(format!("negative sample weight {weight}")));
    }
    Ok(-weight * (p + LOG_FLOOR).ln())
}

/// Gradient of the fused softmax and weighted cross-entropy with respect to the logits.
pub fn softmax_xent_grad(probs: &[f64], label: usize, weight: f64) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(i, p)| weight * (p - if i == label { 1.0 } else { 0.0 }))
        .collect()
}
