use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Probability floor applied before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Largest tolerated deviation of a voxel's class probabilities from 1.
pub const SUM_TOLERANCE: f64 = 1e-4;

/// Which stream produced a field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamId(pub usize);

/// Per-voxel uncertainty of one stream's prediction, shaped `[1, Z, Y, X]`.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyField<T> {
    pub values: Tensor<T>,
    pub source: StreamId,
}

/// `C^C * Π p_i` for one voxel's class distribution, evaluated in log space.
///
/// Exactly 1 for the uniform distribution and exactly 0 as soon as any class
/// probability is 0. Positive probabilities are floored at `eps` before the
/// logarithm; the result is clamped into `[0, 1]`.
pub fn uncertainty_value<T: Real>(probs: &[T], eps: T) -> T {
    if probs.iter().any(|&p| p <= T::zero()) {
        return T::zero();
    }
    let c = T::lit(probs.len() as f64);
    // Summing in sorted order makes the result exactly permutation invariant.
    let mut logs: Vec<T> = probs.iter().map(|&p| p.max(eps).ln()).collect();
    logs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let log_u = logs.into_iter().sum::<T>() + c * c.ln();
    log_u.exp().max(T::zero()).min(T::one())
}

/// Uncertainty for every voxel of a `[C, ...]` probability map, as `[1, ...]`.
pub(crate) fn uncertainty_map<T: Real>(prob: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let shape = prob.shape();
    if shape.len() < 2 || shape[0] < 2 {
        return Err(Error::dim("uncertainty", format!("need [C>=2, ...], got {shape:?}")));
    }
    let c = shape[0];
    let n = prob.spatial_len();
    let data = prob.data();
    let mut scratch = vec![T::zero(); c];
    let mut out = Vec::with_capacity(n);
    for v in 0..n {
        for (k, s) in scratch.iter_mut().enumerate() {
            *s = data[k * n + v];
        }
        let sum: f64 = scratch.iter().map(|p| p.as_f64()).sum();
        if !((sum - 1.0).abs() <= SUM_TOLERANCE) || scratch.iter().any(|p| p.is_sign_negative()) {
            return Err(Error::InvalidProbability {
                voxel: crate::tensor::unravel_voxel(v, prob.spatial()),
                sum,
            });
        }
        out.push(uncertainty_value(&scratch, eps));
    }
    let mut ushape = shape.to_vec();
    ushape[0] = 1;
    Tensor::new(ushape, out)
}

/// Uncertainty field of a stream's probability map.
///
/// Fails with [`Error::InvalidProbability`] when a voxel's probabilities do
/// not sum to 1 within [`SUM_TOLERANCE`].
pub fn compute_uncertainty<T: Real>(y: &Tensor<T>, source: StreamId) -> Result<UncertaintyField<T>> {
    Ok(UncertaintyField { values: uncertainty_map(y, T::lit(PROB_EPS))?, source })
}
