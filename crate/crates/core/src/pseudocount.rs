//! Generalised visit-counts derived from a density pair, and the exploration
//! bonus built on them.

use serde::{Deserialize, Serialize};

use crate::density::DensityPair;

/// Default lower clamp applied to the pseudocount before taking the bonus;
/// caps the bonus at `10 * beta`.
pub const DEFAULT_COUNT_FLOOR: f64 = 0.01;

/// Everything derived from one state observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudocountReport {
    pub rho: f64,
    pub rho_after: f64,
    pub naive_count: f64,
    /// `f64::INFINITY` when the observation did not raise the density.
    pub count: f64,
    pub bonus: f64,
}

impl PseudocountReport {
    /// `steps` is the number of observations the density had seen *before*
    /// this pair was computed.
    pub fn from_pair(pair: DensityPair, steps: u64, beta: f64, count_floor: f64) -> Self {
        let rho = pair.rho();
        let count = pseudocount(pair.log_rho, pair.log_rho_after);
        Self {
            rho,
            rho_after: pair.rho_after(),
            naive_count: naive_pseudocount(rho, steps),
            count,
            bonus: exploration_bonus(count, beta, count_floor),
        }
    }
}

/// `t * rho`.
pub fn naive_pseudocount(rho: f64, t: u64) -> f64 {
    t as f64 * rho
}

/// Pseudocount from the log densities before and after an observation.
///
/// Evaluated as `(1 - rho') / (rho'/rho - 1)`, with both the numerator and
/// the denominator formed through `expm1` so that neither cancels when the
/// densities are tiny or close to one.
pub fn pseudocount(log_rho: f64, log_rho_after: f64) -> f64 {
    if log_rho == f64::NEG_INFINITY {
        // Zero prior density (empirical estimator): a fully novel state.
        return 0.0;
    }
    if log_rho.is_nan() || log_rho_after.is_nan() {
        return f64::NAN;
    }
    if log_rho_after <= log_rho {
        return f64::INFINITY;
    }
    -log_rho_after.exp_m1() / (log_rho_after - log_rho).exp_m1()
}

/// `beta / sqrt(max(count, count_floor))`, or zero for an infinite count. A
/// NaN count gives a NaN bonus.
pub fn exploration_bonus(count: f64, beta: f64, count_floor: f64) -> f64 {
    if count.is_infinite() {
        return 0.0;
    }
    if count.is_nan() {
        return f64::NAN;
    }
    beta / count.max(count_floor).sqrt()
}

pub fn augment_reward(reward: f64, bonus: f64) -> f64 {
    reward + bonus
}
