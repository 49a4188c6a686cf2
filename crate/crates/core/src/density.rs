//! Factored visit-density over binary feature vectors.
//!
//! The density of a feature vector is the product of `M` independent
//! per-feature estimators, each of which only needs the number of times its
//! feature has been active and the global step count `t`. Features that have
//! never been active all share one implicit prototype estimator, so storage
//! and per-query cost grow with the number of *observed* features rather than
//! with `M`.
//!
//! All densities are evaluated in log space.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{check_dimension, BinaryFeatureVector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// Krichevsky-Trofimov: `(N + 1/2) / (t + 1)`.
    #[default]
    Kt,
    /// Relative frequency: `N / t`.
    Empirical,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kt" => Ok(EstimatorKind::Kt),
            "empirical" => Ok(EstimatorKind::Empirical),
            other => Err(Error::InvalidInput(format!("unknown estimator `{other}`"))),
        }
    }
}

impl EstimatorKind {
    /// Numerator of the factor probability for a feature active `ones` times
    /// out of `t`, taking `value`.
    #[inline]
    fn numerator(self, ones: u64, t: u64, value: bool) -> f64 {
        let n = if value { ones } else { t - ones } as f64;
        match self {
            EstimatorKind::Kt => n + 0.5,
            EstimatorKind::Empirical => n,
        }
    }

    #[inline]
    fn denominator(self, t: u64) -> f64 {
        match self {
            EstimatorKind::Kt => t as f64 + 1.0,
            EstimatorKind::Empirical => t as f64,
        }
    }
}

/// Count state of a single feature: how often it has taken value 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorEstimator {
    pub ones_count: u64,
}

impl FactorEstimator {
    pub fn prob(&self, value: bool, t: u64, kind: EstimatorKind) -> Result<f64> {
        factor_prob(*self, value, t, kind)
    }
}

/// Probability that a single factor takes `value` after `t` steps.
pub fn factor_prob(est: FactorEstimator, value: bool, t: u64, kind: EstimatorKind) -> Result<f64> {
    if est.ones_count > t {
        return Err(Error::InvalidInput(format!("ones count {} exceeds step count {t}", est.ones_count)));
    }
    if kind == EstimatorKind::Empirical && t == 0 {
        return Err(Error::UndefinedState("empirical estimator has no data at t = 0".into()));
    }
    Ok(kind.numerator(est.ones_count, t, value) / kind.denominator(t))
}

/// Accumulates `sum(ln x)` over many factors with a single final logarithm.
///
/// The running product is kept as a mantissa plus a binary exponent that is
/// renormalised before it can leave the normal range.
struct LogProduct {
    mantissa: f64,
    exponent: i64,
    extra: f64,
    pending: u32,
    zero: bool,
}

impl LogProduct {
    // Inputs in [2^-30, 2^30] are multiplied directly; 32 of them stay within
    // the exponent range of f64. Anything else goes through `ln`.
    const LO: f64 = 1.0 / (1u64 << 30) as f64;
    const HI: f64 = (1u64 << 30) as f64;
    const BATCH: u32 = 32;

    fn new() -> Self {
        Self { mantissa: 1.0, exponent: 0, extra: 0.0, pending: 0, zero: false }
    }

    #[inline]
    fn push(&mut self, x: f64) {
        if x == 0.0 {
            self.zero = true;
        } else if (Self::LO..=Self::HI).contains(&x) {
            self.mantissa *= x;
            self.pending += 1;
            if self.pending == Self::BATCH {
                self.renormalise();
            }
        } else {
            self.extra += x.ln();
        }
    }

    /// Adds `count * ln(num / den)` for `0 <= num <= den`.
    #[inline]
    fn push_pow(&mut self, num: f64, den: f64, count: u64) {
        if count == 0 {
            return;
        }
        if num == 0.0 {
            self.zero = true;
        } else {
            self.extra += count as f64 * ln_ratio(num, den);
        }
    }

    #[inline]
    fn renormalise(&mut self) {
        self.exponent += split_exponent(&mut self.mantissa);
        self.pending = 0;
    }

    fn ln(mut self) -> f64 {
        if self.zero {
            return f64::NEG_INFINITY;
        }
        self.renormalise();
        self.mantissa.ln() + self.exponent as f64 * std::f64::consts::LN_2 + self.extra
    }
}

/// `ln(num / den)`, through `ln_1p` when the ratio is close to one.
#[inline]
fn ln_ratio(num: f64, den: f64) -> f64 {
    if 2.0 * num < den {
        (num / den).ln()
    } else {
        ((num - den) / den).ln_1p()
    }
}

/// KT log-probabilities of every listed feature being inactive, before and
/// after one more step: `(sum ln((t + 1/2 - n) / (t + 1)), sum ln((t + 3/2 - n) / (t + 2)))`.
///
/// Both running products are kept as mantissa/exponent pairs; the chunk
/// length is chosen so that neither product can leave the normal range
/// between renormalisations.
fn kt_inactive_pair(counts: &[u64], t: f64) -> (f64, f64) {
    let bits_per_term = (2.0 * (t + 2.0)).log2().ceil() as usize + 1;
    let chunk = (1000 / bits_per_term).clamp(1, 64);
    let (inv, inv_after) = (1.0 / (t + 1.0), 1.0 / (t + 2.0));
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let (mut ea, mut eb) = (0i64, 0i64);
    for block in counts.chunks(chunk) {
        for &n in block {
            let z = t + 0.5 - n as f64;
            a *= z * inv;
            b *= (z + 1.0) * inv_after;
        }
        ea += split_exponent(&mut a);
        eb += split_exponent(&mut b);
    }
    let ln2 = std::f64::consts::LN_2;
    (a.ln() + ea as f64 * ln2, b.ln() + eb as f64 * ln2)
}

/// Scales a positive normal `x` into [1, 2) and returns the removed binary
/// exponent.
#[inline]
fn split_exponent(x: &mut f64) -> i64 {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64 - 1023;
    *x = f64::from_bits((bits & !(0x7ffu64 << 52)) | (1023u64 << 52));
    exp
}

/// Log densities of one feature vector before and after it is observed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityPair {
    pub log_rho: f64,
    pub log_rho_after: f64,
}

impl DensityPair {
    pub fn rho(&self) -> f64 {
        self.log_rho.exp()
    }

    pub fn rho_after(&self) -> f64 {
        self.log_rho_after.exp()
    }
}

/// Factored feature visit-density with sparse storage.
///
/// Explicit estimators exist only for features that have been active at
/// least once; they are kept in first-activation order, which also fixes the
/// floating-point evaluation order.
#[derive(Clone, Debug)]
pub struct FeatureVisitDensity {
    dimension: usize,
    kind: EstimatorKind,
    t: u64,
    slot_of: HashMap<usize, usize>,
    features: Vec<usize>,
    counts: Vec<u64>,
    history: Option<Vec<BinaryFeatureVector>>,
}

impl FeatureVisitDensity {
    pub fn new(dimension: usize, kind: EstimatorKind) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidInput("density dimension must be positive".into()));
        }
        Ok(Self {
            dimension,
            kind,
            t: 0,
            slot_of: HashMap::new(),
            features: Vec::new(),
            counts: Vec::new(),
            history: None,
        })
    }

    /// Like [`new`](Self::new) but also retains every observed vector, which
    /// the similarity checks in [`crate::theory`] need.
    pub fn with_history(dimension: usize, kind: EstimatorKind) -> Result<Self> {
        let mut model = Self::new(dimension, kind)?;
        model.history = Some(Vec::new());
        Ok(model)
    }

    pub fn from_history<'a>(
        dimension: usize,
        kind: EstimatorKind,
        history: impl IntoIterator<Item = &'a BinaryFeatureVector>,
    ) -> Result<Self> {
        let mut model = Self::with_history(dimension, kind)?;
        for phi in history {
            model.observe(phi)?;
        }
        Ok(model)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Number of features that have been active at least once.
    pub fn observed_features(&self) -> usize {
        self.features.len()
    }

    pub fn history(&self) -> Option<&[BinaryFeatureVector]> {
        self.history.as_deref()
    }

    /// Estimator for feature `i`; never-active features report the prototype.
    pub fn factor(&self, i: usize) -> FactorEstimator {
        FactorEstimator { ones_count: self.slot_of.get(&i).map_or(0, |&s| self.counts[s]) }
    }

    pub fn factor_prob(&self, i: usize, value: bool) -> Result<f64> {
        if i >= self.dimension {
            return Err(Error::InvalidInput(format!("feature {i} out of range for dimension {}", self.dimension)));
        }
        factor_prob(self.factor(i), value, self.t, self.kind)
    }

    /// `ln rho_t(phi)`. Returns negative infinity when some empirical factor
    /// is zero.
    pub fn log_density(&self, phi: &BinaryFeatureVector) -> Result<f64> {
        check_dimension(self.dimension, phi.dimension())?;
        let (kind, t) = (self.kind, self.t);
        if kind == EstimatorKind::Empirical && t == 0 {
            return Err(Error::UndefinedState("empirical density has no data at t = 0".into()));
        }
        let den = kind.denominator(t);
        let mut acc = LogProduct::new();
        for (&feature, &ones) in self.features.iter().zip(&self.counts) {
            acc.push(kind.numerator(ones, t, phi.is_active(feature)) / den);
        }
        let novel_active = phi.active().iter().filter(|i| !self.slot_of.contains_key(i)).count() as u64;
        let never_active = (self.dimension - self.features.len()) as u64;
        acc.push_pow(kind.numerator(0, t, true), den, novel_active);
        acc.push_pow(kind.numerator(0, t, false), den, never_active - novel_active);
        Ok(acc.ln())
    }

    pub fn density(&self, phi: &BinaryFeatureVector) -> Result<f64> {
        Ok(self.log_density(phi)?.exp())
    }

    /// Records one observation: `t` advances and every active feature's count
    /// increases by one.
    pub fn observe(&mut self, phi: &BinaryFeatureVector) -> Result<()> {
        check_dimension(self.dimension, phi.dimension())?;
        self.t += 1;
        for &i in phi.active() {
            let slot = *self.slot_of.entry(i).or_insert_with(|| {
                self.features.push(i);
                self.counts.push(0);
                self.features.len() - 1
            });
            self.counts[slot] += 1;
        }
        if let Some(h) = self.history.as_mut() {
            h.push(phi.clone());
        }
        Ok(())
    }

    /// Evaluates `phi`, observes it, and evaluates it again.
    pub fn prob_pair(&mut self, phi: &BinaryFeatureVector) -> Result<DensityPair> {
        check_dimension(self.dimension, phi.dimension())?;
        if self.kind != EstimatorKind::Kt {
            let log_rho = self.log_density(phi)?;
            self.observe(phi)?;
            let log_rho_after = self.log_density(phi)?;
            return Ok(DensityPair { log_rho, log_rho_after });
        }
        let pair = self.kt_pair(phi);
        self.observe(phi)?;
        Ok(pair)
    }

    /// Both KT evaluations of `prob_pair` in a single pass over the explicit
    /// estimators, before the model is updated.
    ///
    /// After observing `phi`, an inactive feature's zero-numerator grows by
    /// one, an active feature's one-numerator grows by one, and the
    /// denominator goes from `t + 1` to `t + 2`.
    fn kt_pair(&self, phi: &BinaryFeatureVector) -> DensityPair {
        let t = self.t as f64;
        // Every explicit feature first as if inactive.
        let (mut before, mut after) = kt_inactive_pair(&self.counts, t);
        let mut novel = 0u64;
        let mut fix = LogProduct::new();
        let mut fix_after = LogProduct::new();
        for i in phi.active() {
            match self.slot_of.get(i) {
                Some(&slot) => {
                    let n = self.counts[slot] as f64;
                    fix.push((n + 0.5) / (t + 0.5 - n));
                    fix_after.push((n + 1.5) / (t + 1.5 - n));
                }
                None => novel += 1,
            }
        }
        let idle = (self.dimension - self.features.len()) as u64 - novel;
        fix.push_pow(0.5, t + 1.0, novel);
        fix_after.push_pow(1.5, t + 2.0, novel);
        fix.push_pow(t + 0.5, t + 1.0, idle);
        fix_after.push_pow(t + 1.5, t + 2.0, idle);
        before += fix.ln();
        after += fix_after.ln();
        DensityPair { log_rho: before, log_rho_after: after }
    }

    pub fn snapshot(&self) -> DensitySnapshot {
        DensitySnapshot {
            estimator: self.kind,
            dimension: self.dimension,
            t: self.t,
            counts: self.features.iter().copied().zip(self.counts.iter().copied()).collect(),
        }
    }

    pub fn from_snapshot(snap: &DensitySnapshot) -> Result<Self> {
        let mut model = Self::new(snap.dimension, snap.estimator)?;
        model.t = snap.t;
        for &(feature, ones) in &snap.counts {
            if feature >= snap.dimension {
                return Err(Error::InvalidInput(format!(
                    "snapshot feature {feature} out of range for dimension {}",
                    snap.dimension
                )));
            }
            if ones == 0 || ones > snap.t {
                return Err(Error::InvalidInput(format!(
                    "snapshot count {ones} for feature {feature} must lie in [1, {}]",
                    snap.t
                )));
            }
            if model.slot_of.insert(feature, model.features.len()).is_some() {
                return Err(Error::InvalidInput(format!("snapshot lists feature {feature} twice")));
            }
            model.features.push(feature);
            model.counts.push(ones);
        }
        Ok(model)
    }
}

/// Serialised form of a [`FeatureVisitDensity`].
///
/// ```json
/// {"estimator": "kt", "dimension": 30, "t": 412, "counts": [[0, 97], [1, 60]]}
/// ```
///
/// `counts` lists `(feature, ones_count)` for every feature that has been
/// active, in first-activation order. Features not listed have count 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensitySnapshot {
    pub estimator: EstimatorKind,
    pub dimension: usize,
    pub t: u64,
    pub counts: Vec<(usize, u64)>,
}
