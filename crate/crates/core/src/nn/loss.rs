use super::network::NetworkParams;
use super::tensor::Real;
use crate::error::{Error, Result};

/// Number of structured outputs per patch (a 5x5 block).
pub const OUTPUT_UNITS: usize = 25;

/// Predictions are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

/// Summed binary cross-entropy over the 25 outputs of one patch (natural log).
pub fn bce_loss<T: Real>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.len() != OUTPUT_UNITS || target.len() != OUTPUT_UNITS {
        return Err(Error::Shape(format!(
            "cross-entropy expects {OUTPUT_UNITS} predictions and targets, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(bce_unchecked(pred, target))
}

pub(crate) fn bce_unchecked<T: Real>(pred: &[T], target: &[T]) -> T {
    let eps = T::from_f64(EPS);
    let one = T::one();
    let mut loss = T::zero();
    for (&p, &y) in pred.iter().zip(target) {
        let p = p.max(eps).min(one - eps);
        loss = loss - (y * p.ln() + (one - y) * (one - p).ln());
    }
    loss
}

/// `loss + beta * 1/2 * sum(W^2)`, summed over weight tensors only.
pub fn total_loss<T: Real>(loss: T, params: &NetworkParams<T>, beta: f64) -> T {
    loss + T::from_f64(beta * 0.5) * params.weight_sum_squares()
}
