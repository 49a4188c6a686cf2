//! Sarsa(λ) with replacing traces over a linear action-value function, and
//! ε-greedy action selection.
//!
//! State features are lifted to state-action features by action blocks (see
//! [`crate::features::action_block`]), so the weight vector has length
//! `M * |A|` and `Q(s, a)` is the sum of the weights in block `a` at the
//! active indices of `φ(s)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{check_dimension, BinaryFeatureVector};
use crate::pseudocount::DEFAULT_COUNT_FLOOR;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Step size, divided by the number of active features on each update.
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// Exploration bonus scale; ignored by the ε-greedy baseline.
    pub beta: f64,
    pub count_floor: f64,
    /// Traces that decay below this value are dropped.
    pub trace_cutoff: f64,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.95,
            lambda: 0.9,
            epsilon: 0.01,
            beta: 0.05,
            count_floor: DEFAULT_COUNT_FLOOR,
            trace_cutoff: 1e-8,
            seed: 0,
        }
    }
}

impl AgentConfig {
    /// Collects every violated range instead of stopping at the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let unit = |name: &str, v: f64, out: &mut Vec<String>| {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        };
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            out.push(format!("alpha must be positive, got {}", self.alpha));
        }
        unit("gamma", self.gamma, &mut out);
        unit("lambda", self.lambda, &mut out);
        unit("epsilon", self.epsilon, &mut out);
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            out.push(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.count_floor.is_finite() && self.count_floor > 0.0) {
            out.push(format!("count_floor must be positive, got {}", self.count_floor));
        }
        if !(self.trace_cutoff >= 0.0 && self.trace_cutoff < 1.0) {
            out.push(format!("trace_cutoff must lie in [0, 1), got {}", self.trace_cutoff));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearQFunction {
    state_dim: usize,
    num_actions: usize,
    weights: Vec<f64>,
}

impl LinearQFunction {
    pub fn zeros(state_dim: usize, num_actions: usize) -> Result<Self> {
        if state_dim == 0 || num_actions == 0 {
            return Err(Error::InvalidInput("Q-function needs positive feature and action counts".into()));
        }
        Ok(Self { state_dim, num_actions, weights: vec![0.0; state_dim * num_actions] })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn q_value(&self, phi_s: &BinaryFeatureVector, action: usize) -> Result<f64> {
        check_dimension(self.state_dim, phi_s.dimension())?;
        if action >= self.num_actions {
            return Err(Error::InvalidInput(format!("action {action} out of range for {} actions", self.num_actions)));
        }
        let offset = action * self.state_dim;
        Ok(phi_s.active().iter().map(|i| self.weights[offset + i]).sum())
    }

    pub fn q_values(&self, phi_s: &BinaryFeatureVector) -> Result<Vec<f64>> {
        (0..self.num_actions).map(|a| self.q_value(phi_s, a)).collect()
    }

    pub fn snapshot(&self) -> WeightSnapshot {
        WeightSnapshot { state_dim: self.state_dim, num_actions: self.num_actions, weights: self.weights.clone() }
    }

    pub fn from_snapshot(snap: &WeightSnapshot) -> Result<Self> {
        let mut q = Self::zeros(snap.state_dim, snap.num_actions)?;
        if snap.weights.len() != q.weights.len() {
            return Err(Error::DimensionMismatch { expected: q.weights.len(), actual: snap.weights.len() });
        }
        if snap.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("weight snapshot contains non-finite values".into()));
        }
        q.weights.copy_from_slice(&snap.weights);
        Ok(q)
    }
}

/// Serialised weights: `{"state_dim": M, "num_actions": A, "weights": [...]}`
/// with `weights[a * M + i]` the weight of feature `i` under action `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub state_dim: usize,
    pub num_actions: usize,
    pub weights: Vec<f64>,
}

/// Sparse replacing traces: a dense value array plus the list of live
/// indices, so decay and updates only touch live entries.
#[derive(Clone, Debug)]
pub struct EligibilityTraces {
    values: Vec<f64>,
    live: Vec<usize>,
}

impl EligibilityTraces {
    pub fn new(len: usize) -> Self {
        Self { values: vec![0.0; len], live: Vec::new() }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn live(&self) -> &[usize] {
        &self.live
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn decay(&mut self, factor: f64, cutoff: f64) {
        let values = &mut self.values;
        self.live.retain(|&i| {
            let v = values[i] * factor;
            if v < cutoff || v == 0.0 {
                values[i] = 0.0;
                false
            } else {
                values[i] = v;
                true
            }
        });
    }

    pub fn replace(&mut self, indices: impl IntoIterator<Item = usize>) {
        for i in indices {
            if self.values[i] == 0.0 {
                self.live.push(i);
            }
            self.values[i] = 1.0;
        }
    }

    pub fn clear(&mut self) {
        for &i in &self.live {
            self.values[i] = 0.0;
        }
        self.live.clear();
    }
}

/// Picks `argmax_a Q(s, a)` with uniform tie-breaking, or a uniformly random
/// action with probability `epsilon`. Always consumes one uniform draw for
/// the exploration coin.
pub fn select_action<R: Rng + ?Sized>(
    q: &LinearQFunction,
    phi_s: &BinaryFeatureVector,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    let n = q.num_actions();
    let coin: f64 = rng.gen();
    if coin < epsilon {
        return Ok(rng.gen_range(0..n));
    }
    let values = q.q_values(phi_s)?;
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..n).filter(|&a| values[a] == best).collect();
    Ok(match ties.len() {
        1 => ties[0],
        k => ties[rng.gen_range(0..k)],
    })
}

/// One on-policy transition `(s, a, r+, s', a')`.
#[derive(Clone, Copy, Debug)]
pub struct Transition<'a> {
    pub phi_s: &'a BinaryFeatureVector,
    pub action: usize,
    /// Reward with any exploration bonus already added.
    pub reward: f64,
    pub phi_next: &'a BinaryFeatureVector,
    pub next_action: usize,
    pub terminal: bool,
}

/// Applies one Sarsa(λ) update and returns the TD error.
///
/// Traces are decayed by `γλ`, the entries of `φ(s, a)` are set to one, and
/// every live weight moves by `α / |φ(s)| · δ · e`. Traces are cleared after
/// a terminal transition.
pub fn sarsa_step(
    q: &mut LinearQFunction,
    traces: &mut EligibilityTraces,
    tr: &Transition<'_>,
    cfg: &AgentConfig,
) -> Result<f64> {
    let q_sa = q.q_value(tr.phi_s, tr.action)?;
    let q_next = if tr.terminal { 0.0 } else { q.q_value(tr.phi_next, tr.next_action)? };
    let delta = tr.reward + cfg.gamma * q_next - q_sa;
    if !delta.is_finite() {
        return Err(Error::NumericalFault(format!(
            "TD error is {delta} (reward {}, Q(s,a) {q_sa}, Q(s',a') {q_next})",
            tr.reward
        )));
    }

    traces.decay(cfg.gamma * cfg.lambda, cfg.trace_cutoff);
    let offset = tr.action * q.state_dim;
    traces.replace(tr.phi_s.active().iter().map(|i| i + offset));

    let active = tr.phi_s.num_active();
    if active > 0 {
        let step = cfg.alpha / active as f64 * delta;
        for &i in &traces.live {
            q.weights[i] += step * traces.values[i];
        }
    }
    if tr.terminal {
        traces.clear();
    }
    Ok(delta)
}

/// Weights and traces for one learner.
#[derive(Clone, Debug)]
pub struct SarsaAgent {
    pub q: LinearQFunction,
    pub traces: EligibilityTraces,
    pub config: AgentConfig,
}

impl SarsaAgent {
    pub fn new(state_dim: usize, num_actions: usize, config: AgentConfig) -> Result<Self> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems));
        }
        let q = LinearQFunction::zeros(state_dim, num_actions)?;
        let traces = EligibilityTraces::new(state_dim * num_actions);
        Ok(Self { q, traces, config })
    }

    pub fn act<R: Rng + ?Sized>(&self, phi_s: &BinaryFeatureVector, epsilon: f64, rng: &mut R) -> Result<usize> {
        select_action(&self.q, phi_s, epsilon, rng)
    }

    pub fn learn(&mut self, tr: &Transition<'_>) -> Result<f64> {
        sarsa_step(&mut self.q, &mut self.traces, tr, &self.config)
    }

    pub fn end_episode(&mut self) {
        self.traces.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::one_hot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn phi(m: usize, idx: &[usize]) -> BinaryFeatureVector {
        BinaryFeatureVector::new(m, idx.to_vec()).unwrap()
    }

    #[test]
    fn q_value_examples() {
        let mut q = LinearQFunction::zeros(6, 2).unwrap();
        let s = phi(6, &[0, 2, 3, 5]);
        assert_eq!(q.q_value(&s, 1).unwrap(), 0.0);
        q.weights_mut().iter_mut().for_each(|w| *w = 1.0);
        assert_eq!(q.q_value(&s, 0).unwrap(), 4.0);

        let mut tab = LinearQFunction::zeros(5, 3).unwrap();
        for (k, w) in tab.weights_mut().iter_mut().enumerate() {
            *w = k as f64 * 0.5;
        }
        assert_eq!(tab.q_value(&one_hot(3, 5).unwrap(), 2).unwrap(), (3 + 2 * 5) as f64 * 0.5);
        assert!(tab.q_value(&one_hot(3, 5).unwrap(), 3).is_err());
        assert!(tab.q_value(&one_hot(3, 4).unwrap(), 0).is_err());
    }

    #[test]
    fn greedy_picks_unique_max() {
        let mut q = LinearQFunction::zeros(3, 4).unwrap();
        q.weights_mut()[2 * 3 + 1] = 1.0;
        let s = one_hot(1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert_eq!(select_action(&q, &s, 0.0, &mut rng).unwrap(), 2);
        }
    }

    fn chi_square_uniform(counts: &[usize]) -> f64 {
        let n: usize = counts.iter().sum();
        let e = n as f64 / counts.len() as f64;
        counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let mut q = LinearQFunction::zeros(2, 4).unwrap();
        q.weights_mut()[0] = 10.0;
        let s = one_hot(0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[select_action(&q, &s, 1.0, &mut rng).unwrap()] += 1;
        }
        // 3 degrees of freedom; 16.27 is the 0.999 quantile.
        assert!(chi_square_uniform(&counts) < 16.27, "{counts:?}");
    }

    #[test]
    fn ties_are_broken_uniformly() {
        let q = LinearQFunction::zeros(2, 3).unwrap();
        let s = one_hot(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[select_action(&q, &s, 0.0, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.015, "{counts:?}");
        }
    }

    #[test]
    fn zero_td_error_leaves_weights() {
        let cfg = AgentConfig::default();
        let mut q = LinearQFunction::zeros(4, 2).unwrap();
        let mut e = EligibilityTraces::new(8);
        let s = phi(4, &[1, 2]);
        let before = q.clone();
        let d = sarsa_step(
            &mut q,
            &mut e,
            &Transition { phi_s: &s, action: 1, reward: 0.0, phi_next: &s, next_action: 0, terminal: false },
            &cfg,
        )
        .unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(q, before);
    }

    #[test]
    fn lambda_zero_touches_only_current_features() {
        let cfg = AgentConfig { lambda: 0.0, ..AgentConfig::default() };
        let mut q = LinearQFunction::zeros(4, 2).unwrap();
        let mut e = EligibilityTraces::new(8);
        let (s0, s1) = (phi(4, &[0]), phi(4, &[2, 3]));
        let t0 = Transition { phi_s: &s0, action: 0, reward: 1.0, phi_next: &s1, next_action: 1, terminal: false };
        sarsa_step(&mut q, &mut e, &t0, &cfg).unwrap();
        let snapshot = q.weights().to_vec();
        let t1 = Transition { phi_s: &s1, action: 1, reward: 1.0, phi_next: &s0, next_action: 0, terminal: false };
        sarsa_step(&mut q, &mut e, &t1, &cfg).unwrap();
        for (i, (w, before)) in q.weights().iter().zip(&snapshot).enumerate() {
            if i != 4 + 2 && i != 4 + 3 {
                assert_eq!(w, before, "index {i}");
            }
        }
        // Normalised step: alpha / 2 per active feature.
        assert!((q.weights()[6] - 0.05 * (1.0 + 0.95 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_td_error_is_a_fault() {
        let cfg = AgentConfig::default();
        let mut q = LinearQFunction::zeros(2, 2).unwrap();
        let mut e = EligibilityTraces::new(4);
        let s = one_hot(0, 2).unwrap();
        let tr = Transition { phi_s: &s, action: 0, reward: f64::NAN, phi_next: &s, next_action: 0, terminal: true };
        assert!(matches!(sarsa_step(&mut q, &mut e, &tr, &cfg), Err(Error::NumericalFault(_))));
    }

    #[test]
    fn traces_stay_bounded_and_clear_on_terminal() {
        let cfg = AgentConfig::default();
        let mut q = LinearQFunction::zeros(5, 2).unwrap();
        let mut e = EligibilityTraces::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for step in 0..500 {
            let s = one_hot(rng.gen_range(0..5), 5).unwrap();
            let n = one_hot(rng.gen_range(0..5), 5).unwrap();
            let terminal = step % 50 == 49;
            let tr = Transition {
                phi_s: &s,
                action: rng.gen_range(0..2),
                reward: rng.gen(),
                phi_next: &n,
                next_action: rng.gen_range(0..2),
                terminal,
            };
            sarsa_step(&mut q, &mut e, &tr, &cfg).unwrap();
            assert!(e.live().iter().all(|&i| e.get(i) > 0.0 && e.get(i) <= 1.0));
            if terminal {
                assert!(e.is_empty());
            }
        }
    }

    #[test]
    fn policy_evaluation_on_chain_matches_analytic_values() {
        // Five states in a line, the single action moves right; entering the
        // last state pays 1 and ends the episode. With gamma = 0.9 the exact
        // values solve Q(s) = r(s) + gamma * Q(s + 1), i.e. Q(4) = 1 and
        // Q(s) = 0.9^(4 - s).
        let cfg = AgentConfig { alpha: 0.1, gamma: 0.9, lambda: 0.5, ..AgentConfig::default() };
        let mut q = LinearQFunction::zeros(5, 1).unwrap();
        let mut e = EligibilityTraces::new(5);
        let mut s = 0usize;
        for _ in 0..10_000 {
            let next = s + 1;
            let terminal = next == 5;
            let reward = if terminal { 1.0 } else { 0.0 };
            let ps = one_hot(s, 5).unwrap();
            let pn = one_hot(next.min(4), 5).unwrap();
            sarsa_step(
                &mut q,
                &mut e,
                &Transition { phi_s: &ps, action: 0, reward, phi_next: &pn, next_action: 0, terminal },
                &cfg,
            )
            .unwrap();
            s = if terminal { 0 } else { next };
        }
        for state in 0..5 {
            let exact = 0.9f64.powi(4 - state as i32);
            assert!((q.weights()[state] - exact).abs() < 0.05, "state {state}: {}", q.weights()[state]);
        }
    }

    #[test]
    fn config_problems_are_all_reported() {
        let bad = AgentConfig { alpha: -1.0, gamma: 2.0, epsilon: -0.1, beta: f64::NAN, ..AgentConfig::default() };
        assert_eq!(bad.problems().len(), 4);
        assert!(AgentConfig::default().problems().is_empty());
    }

    #[test]
    fn weight_snapshot_round_trip_is_exact() {
        let mut q = LinearQFunction::zeros(3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        q.weights_mut().iter_mut().for_each(|w| *w = rng.gen::<f64>() * 1e-3 - 0.1);
        let json = serde_json::to_string(&q.snapshot()).unwrap();
        let back = LinearQFunction::from_snapshot(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, q);
    }
}
