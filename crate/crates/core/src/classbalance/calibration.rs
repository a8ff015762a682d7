//! Threshold calibration for a per-class target count under `g = √`.
//!
//! With a one-hot classifier the gain of the next point of a class holding
//! `c` selections is `√(c+1) − √c`, so a uniform threshold `τ` stops a
//! class once its count reaches the `n` solving `√(n+1) − √n = τ`.

use serde::{Deserialize, Serialize};

use crate::value::CoreError;

/// `√(n+1) − √n`, evaluated as `1/(√(n+1) + √n)`.
pub fn threshold_for_target(n: u64) -> f64 {
    let n = n as f64;
    1.0 / ((n + 1.0).sqrt() + n.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceTarget {
    pub tau: f64,
    /// Real solution `((1−τ²)/(2τ))²`.
    pub real: f64,
    pub floor: u64,
}

impl BalanceTarget {
    /// Count at which selection of a class stops when it starts from zero
    /// and every candidate is confidently predicted.
    pub fn expected_count(&self) -> u64 {
        self.real.ceil() as u64
    }
}

/// Inverse of [`threshold_for_target`] for `τ ∈ (0, 1]`.
pub fn target_for_threshold(tau: f64) -> Result<BalanceTarget, CoreError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(CoreError::InvalidParameter(format!("threshold {tau} outside (0, 1]")));
    }
    let root = (1.0 - tau * tau) / (2.0 * tau);
    let real = root * root;
    Ok(BalanceTarget {
        tau,
        real,
        floor: real.floor() as u64,
    })
}
