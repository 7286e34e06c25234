//! Sample and weighted population average treatment effects.

use thiserror::Error;

use crate::outcome::PotentialOutcomes;
use crate::stats::CompensatedSum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("no individuals to average over")]
    Empty,
    #[error("{weights} weights for {rows} outcomes")]
    LengthMismatch { weights: usize, rows: usize },
    #[error("weight at row {row} is not positive ({value})")]
    NonPositiveWeight { row: usize, value: f64 },
}

/// Mean individual treatment effect over the sample.
pub fn sate(outcomes: &PotentialOutcomes) -> Result<f64, EstimationError> {
    crate::stats::mean(&outcomes.te).ok_or(EstimationError::Empty)
}

/// `sum(w_i te_i) / sum(w_i)`.
pub fn pate_ipsw(weights: &[f64], outcomes: &PotentialOutcomes) -> Result<f64, EstimationError> {
    weighted_mean(weights, &outcomes.te)
}

pub(crate) fn weighted_mean(weights: &[f64], values: &[f64]) -> Result<f64, EstimationError> {
    if weights.len() != values.len() {
        return Err(EstimationError::LengthMismatch {
            weights: weights.len(),
            rows: values.len(),
        });
    }
    if values.is_empty() {
        return Err(EstimationError::Empty);
    }
    let mut num = CompensatedSum::new();
    let mut den = CompensatedSum::new();
    for (row, (&w, &v)) in weights.iter().zip(values).enumerate() {
        if !(w.is_finite() && w > 0.0) {
            return Err(EstimationError::NonPositiveWeight { row, value: w });
        }
        num.add(w * v);
        den.add(w);
    }
    Ok(num.value() / den.value())
}
