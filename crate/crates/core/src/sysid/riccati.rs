use nalgebra::DMatrix;

use crate::scalar::Scalar;

/// Stationary solution of the filtering Riccati equation for a
/// single-output system.
#[derive(Clone, Debug)]
pub struct RiccatiSolution<T: Scalar> {
    /// State error covariance.
    pub p: DMatrix<T>,
    /// Predictor gain (n × 1).
    pub k: DMatrix<T>,
    pub iterations: usize,
}

/// Solves `P = A P Aᵀ + Q − (A P Cᵀ + S)(C P Cᵀ + R)⁻¹(A P Cᵀ + S)ᵀ` by
/// fixed-point iteration from `P = Q`. `c` is 1 × n, `r` is 1 × 1 and `s`
/// is n × 1. Returns `None` if the iteration diverges or stalls.
pub fn dare<T: Scalar>(
    a: &DMatrix<T>,
    c: &DMatrix<T>,
    q: &DMatrix<T>,
    r: T,
    s: &DMatrix<T>,
    max_iter: usize,
    tol: T,
) -> Option<RiccatiSolution<T>> {
    let mut p = q.clone();
    for it in 1..=max_iter {
        let pct = &p * c.transpose();
        let e = (c * &pct)[(0, 0)] + r;
        if !(e > T::zero()) || !e.is_finite() {
            return None;
        }
        let g = (a * &pct + s) / e;
        let mut next = a * &p * a.transpose() + q - &g * g.transpose() * e;
        next = (&next + next.transpose()) * T::of(0.5);
        let scale = next.abs().max().max(T::one());
        let delta = (&next - &p).abs().max();
        p = next;
        if !delta.is_finite() {
            return None;
        }
        if delta <= tol * scale {
            let pct = &p * c.transpose();
            let e = (c * &pct)[(0, 0)] + r;
            let k = (a * &pct + s) / e;
            return Some(RiccatiSolution { p, k, iterations: it });
        }
    }
    None
}
