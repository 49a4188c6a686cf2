//! Executable similarity bounds for the factored density.
//!
//! Under the empirical estimator, the density of a binary feature vector is
//! bounded by its mean Hamming similarity to the history, and `t * rho` by the
//! total similarity. The checks here evaluate both sides on explicit
//! histories; [`sweep`] runs them over many random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{EstimatorKind, FeatureVisitDensity};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, map_indexed, Execution};
use crate::features::{check_dimension, BinaryFeatureVector};

/// Absolute tolerance for equalities and slack for inequalities.
pub const TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckResult {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
    pub holds: bool,
}

impl BoundCheckResult {
    /// `lhs <= rhs` up to [`TOLERANCE`].
    pub fn inequality(lhs: f64, rhs: f64) -> Self {
        let slack = rhs - lhs;
        Self { lhs, rhs, slack, holds: slack >= -TOLERANCE }
    }

    /// `lhs == rhs` up to [`TOLERANCE`].
    pub fn equality(lhs: f64, rhs: f64) -> Self {
        let slack = rhs - lhs;
        Self { lhs, rhs, slack, holds: slack.abs() <= TOLERANCE }
    }
}

/// `1 - |a xor b| / M`.
pub fn hamming_similarity(a: &BinaryFeatureVector, b: &BinaryFeatureVector) -> Result<f64> {
    let d = a.hamming_distance(b)?;
    Ok(1.0 - d as f64 / a.dimension() as f64)
}

/// `sqrt(rho(phi)) <= mean_i rho_i(phi_i)`.
///
/// The bound needs `M >= 2`: for a single feature it reads `sqrt(p) <= p`,
/// which fails for every `p` in `(0, 1)`. The result is reported as computed
/// either way.
pub fn check_amgm(phi: &BinaryFeatureVector, model: &FeatureVisitDensity) -> Result<BoundCheckResult> {
    let lhs = (0.5 * model.log_density(phi)?).exp();
    let m = model.dimension();
    let mut sum = 0.0;
    for i in 0..m {
        sum += model.factor_prob(i, phi.is_active(i))?;
    }
    Ok(BoundCheckResult::inequality(lhs, sum / m as f64))
}

/// Equality between the empirical factor probability of feature `i` taking
/// `value` and the mean per-coordinate agreement with the retained history.
pub fn check_factor_l1(model: &FeatureVisitDensity, i: usize, value: bool) -> Result<BoundCheckResult> {
    if model.kind() != EstimatorKind::Empirical {
        return Err(Error::InvalidInput("factor/l1 identity holds only for the empirical estimator".into()));
    }
    let history = model.history().ok_or_else(|| Error::InvalidInput("model does not retain its history".into()))?;
    let lhs = model.factor_prob(i, value)?;
    let agree = history.iter().filter(|phi| phi.is_active(i) == value).count();
    Ok(BoundCheckResult::equality(lhs, agree as f64 / history.len() as f64))
}

fn similarity_sides(
    history: &[BinaryFeatureVector],
    phi: &BinaryFeatureVector,
    kind: EstimatorKind,
) -> Result<(f64, f64)> {
    if history.is_empty() {
        return Err(Error::InvalidInput("similarity bound needs a non-empty history".into()));
    }
    for h in history {
        check_dimension(phi.dimension(), h.dimension())?;
    }
    let model = FeatureVisitDensity::from_history(phi.dimension(), kind, history)?;
    let rho = model.density(phi)?;
    let mut total = 0.0;
    for h in history {
        total += hamming_similarity(phi, h)?;
    }
    Ok((rho, total))
}

/// `rho_t(phi) <= (1/t) sum_k Sim(phi, phi_k)` under the empirical estimator.
pub fn check_similarity_bound(history: &[BinaryFeatureVector], phi: &BinaryFeatureVector) -> Result<BoundCheckResult> {
    check_similarity_bound_with(history, phi, EstimatorKind::Empirical)
}

/// Same comparison with a chosen estimator. Only the empirical case is a
/// guaranteed bound; for KT the result is informational.
pub fn check_similarity_bound_with(
    history: &[BinaryFeatureVector],
    phi: &BinaryFeatureVector,
    kind: EstimatorKind,
) -> Result<BoundCheckResult> {
    let (rho, total) = similarity_sides(history, phi, kind)?;
    Ok(BoundCheckResult::inequality(rho, total / history.len() as f64))
}

/// `t * rho_t(phi) <= sum_k Sim(phi, phi_k)` under the empirical estimator.
pub fn check_corollary(history: &[BinaryFeatureVector], phi: &BinaryFeatureVector) -> Result<BoundCheckResult> {
    let (rho, total) = similarity_sides(history, phi, EstimatorKind::Empirical)?;
    Ok(BoundCheckResult::inequality(history.len() as f64 * rho, total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub instances: usize,
    pub max_dim: usize,
    pub max_t: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { instances: 10_000, max_dim: 16, max_t: 32, seed: 0 }
    }
}

/// Pass/fail tally for one family of checks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckTally {
    pub checked: usize,
    pub violations: usize,
    /// Smallest `rhs - lhs` seen (largest `|rhs - lhs|` for equalities).
    pub extreme_slack: f64,
}

impl CheckTally {
    fn record_inequality(&mut self, r: &BoundCheckResult) {
        if self.checked == 0 || r.slack < self.extreme_slack {
            self.extreme_slack = r.slack;
        }
        self.checked += 1;
        self.violations += usize::from(!r.holds);
    }

    fn record_equality(&mut self, r: &BoundCheckResult) {
        let err = r.slack.abs();
        if self.checked == 0 || err > self.extreme_slack {
            self.extreme_slack = err;
        }
        self.checked += 1;
        self.violations += usize::from(!r.holds);
    }

    fn merge(&mut self, other: &CheckTally, equality: bool) {
        if other.checked == 0 {
            return;
        }
        let better =
            if equality { other.extreme_slack > self.extreme_slack } else { other.extreme_slack < self.extreme_slack };
        if self.checked == 0 || better {
            self.extreme_slack = other.extreme_slack;
        }
        self.checked += other.checked;
        self.violations += other.violations;
    }
}

/// One offending instance, kept for the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub instance: usize,
    pub check: String,
    pub dimension: usize,
    pub t: usize,
    pub result: BoundCheckResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub amgm: CheckTally,
    pub factor_l1: CheckTally,
    pub similarity: CheckTally,
    pub corollary: CheckTally,
    /// KT estimator against the same similarity bound; not asserted.
    pub kt_similarity_report_only: CheckTally,
    pub failures: Vec<Failure>,
}

impl SweepReport {
    /// True when every asserted check held.
    pub fn passed(&self) -> bool {
        self.amgm.violations == 0
            && self.factor_l1.violations == 0
            && self.similarity.violations == 0
            && self.corollary.violations == 0
    }
}

const MAX_REPORTED_FAILURES: usize = 20;

fn random_vector(rng: &mut ChaCha8Rng, dim: usize, p: f64) -> BinaryFeatureVector {
    let active = (0..dim).filter(|_| rng.gen_bool(p)).collect();
    BinaryFeatureVector::new(dim, active).expect("indices in range")
}

fn run_instance(index: usize, cfg: &SweepConfig) -> Result<SweepReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64));
    let dim = rng.gen_range(1..=cfg.max_dim.max(1));
    let t = rng.gen_range(1..=cfg.max_t.max(1));
    let p = rng.gen_range(0.05..0.95);
    // A small number of prototypes makes repeated vectors, and near-equality
    // cases, common.
    let protos: Vec<_> = (0..rng.gen_range(1..=4)).map(|_| random_vector(&mut rng, dim, p)).collect();
    let history: Vec<_> = (0..t)
        .map(|_| {
            if rng.gen_bool(0.5) {
                protos[rng.gen_range(0..protos.len())].clone()
            } else {
                random_vector(&mut rng, dim, p)
            }
        })
        .collect();
    let phi = if rng.gen_bool(0.3) { history[rng.gen_range(0..t)].clone() } else { random_vector(&mut rng, dim, p) };

    let mut report = SweepReport {
        config: cfg.clone(),
        amgm: CheckTally::default(),
        factor_l1: CheckTally::default(),
        similarity: CheckTally::default(),
        corollary: CheckTally::default(),
        kt_similarity_report_only: CheckTally::default(),
        failures: Vec::new(),
    };
    let fail = |name: &str, r: &BoundCheckResult, failures: &mut Vec<Failure>| {
        if !r.holds {
            failures.push(Failure { instance: index, check: name.into(), dimension: dim, t, result: *r });
        }
    };

    let model = FeatureVisitDensity::from_history(dim, EstimatorKind::Empirical, &history)?;
    if dim >= 2 {
        let r = check_amgm(&phi, &model)?;
        report.amgm.record_inequality(&r);
        fail("amgm", &r, &mut report.failures);

        let kt_model = FeatureVisitDensity::from_history(dim, EstimatorKind::Kt, &history)?;
        let r = check_amgm(&phi, &kt_model)?;
        report.amgm.record_inequality(&r);
        fail("amgm_kt", &r, &mut report.failures);
    }

    for i in 0..dim {
        for value in [false, true] {
            let r = check_factor_l1(&model, i, value)?;
            report.factor_l1.record_equality(&r);
            fail("factor_l1", &r, &mut report.failures);
        }
    }

    let r = check_similarity_bound(&history, &phi)?;
    report.similarity.record_inequality(&r);
    fail("similarity", &r, &mut report.failures);

    let r = check_corollary(&history, &phi)?;
    report.corollary.record_inequality(&r);
    fail("corollary", &r, &mut report.failures);

    let r = check_similarity_bound_with(&history, &phi, EstimatorKind::Kt)?;
    report.kt_similarity_report_only.record_inequality(&r);
    Ok(report)
}

/// Runs every check on `cfg.instances` random (history, query) instances.
/// Instance `k` draws from its own stream seeded by `derive_seed(seed, k)`.
pub fn sweep(cfg: &SweepConfig, mode: Execution) -> Result<SweepReport> {
    if cfg.instances == 0 || cfg.max_dim == 0 || cfg.max_t == 0 {
        return Err(Error::InvalidInput("sweep needs positive instances, max_dim and max_t".into()));
    }
    let parts = map_indexed(cfg.instances, mode, |k| run_instance(k, cfg));
    let mut total = SweepReport {
        config: cfg.clone(),
        amgm: CheckTally::default(),
        factor_l1: CheckTally::default(),
        similarity: CheckTally::default(),
        corollary: CheckTally::default(),
        kt_similarity_report_only: CheckTally::default(),
        failures: Vec::new(),
    };
    for part in parts {
        let part = part?;
        total.amgm.merge(&part.amgm, false);
        total.factor_l1.merge(&part.factor_l1, true);
        total.similarity.merge(&part.similarity, false);
        total.corollary.merge(&part.corollary, false);
        total.kt_similarity_report_only.merge(&part.kt_similarity_report_only, false);
        for f in part.failures {
            if total.failures.len() < MAX_REPORTED_FAILURES {
                total.failures.push(f);
            }
        }
    }
    Ok(total)
}
