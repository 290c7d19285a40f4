use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean squared error after dropping the first `discard` samples.
pub fn mse<T: Scalar>(y_hat: &[T], y: &[T], discard: usize) -> Result<T> {
    if y_hat.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction has {} samples, measurement {}",
            y_hat.len(),
            y.len()
        )));
    }
    if discard >= y.len() {
        return Err(Error::InsufficientData(format!(
            "discard {discard} leaves nothing of {} samples",
            y.len()
        )));
    }
    let mut acc = T::zero();
    for (a, b) in y_hat[discard..].iter().zip(&y[discard..]) {
        let e = *a - *b;
        acc += e * e;
    }
    Ok(acc / T::of_usize(y.len() - discard))
}

/// Normalized fit `100 · (1 − ‖y − ŷ‖ / ‖y − mean(y)‖)` in percent.
pub fn fit_percent<T: Scalar>(y_hat: &[T], y: &[T]) -> Result<T> {
    if y_hat.len() != y.len() || y.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "fit needs equal non-empty series ({} vs {})",
            y_hat.len(),
            y.len()
        )));
    }
    let mean = y.iter().fold(T::zero(), |a, &b| a + b) / T::of_usize(y.len());
    let (mut num, mut den) = (T::zero(), T::zero());
    for (a, b) in y_hat.iter().zip(y) {
        num += (*b - *a) * (*b - *a);
        den += (*b - mean) * (*b - mean);
    }
    if den == T::zero() {
        return Err(Error::InsufficientData("measured series is constant".into()));
    }
    Ok(T::of(100.0) * (T::one() - (num / den).sqrt()))
}
