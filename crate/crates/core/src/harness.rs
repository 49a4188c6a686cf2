//! Experiment runner: environment, feature map, visit-density, bonus and
//! Sarsa(λ) wired together per step, repeated over episodes and independent
//! trials.
//!
//! Per step, in order: take `a_t` in `s_t`, receive `r_t` and `s_{t+1}`;
//! evaluate, update and re-evaluate the density at `φ(s_t)`; turn the pair
//! into a pseudocount and bonus; train on `r_t + bonus`.
//!
//! Output files in the experiment directory:
//!
//! * `config.json`: the resolved configuration, written before any work.
//! * `trial_<n>.csv`: one row per episode (see [`CSV_SCHEMA_VERSION`]).
//! * `summary.json`: final performance across trials.
//! * `checkpoint_<n>.json`: latest checkpoint of trial `n`, when enabled.
//!
//! Trial `n` draws from `ChaCha8Rng::seed_from_u64(derive_seed(seed, n))`
//! (see [`crate::exec::derive_seed`]).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, LinearQFunction, SarsaAgent, Transition, WeightSnapshot};
use crate::density::{DensitySnapshot, EstimatorKind, FeatureVisitDensity};
use crate::envs::{Chain, ChainConfig, DenseGrid, DenseGridConfig, Environment, Rooms, RoomsConfig};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, map_indexed, Execution};
use crate::features::BinaryFeatureVector;
use crate::pseudocount::{augment_reward, PseudocountReport};

/// Version written in the first column of every CSV row.
pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    /// Sarsa(λ) trained on bonus-augmented rewards.
    #[serde(rename = "phi-eb")]
    PhiEb,
    /// Sarsa(λ) with ε-greedy exploration only.
    #[serde(rename = "eps-greedy")]
    EpsGreedy,
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi-eb" => Ok(AgentKind::PhiEb),
            "eps-greedy" => Ok(AgentKind::EpsGreedy),
            other => Err(Error::InvalidInput(format!("unknown agent `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Chain(ChainConfig),
    Rooms(RoomsConfig),
    DenseGrid(DenseGridConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Chain(ChainConfig::default())
    }
}

impl EnvConfig {
    /// Default configuration for an environment id: `chain`, `rooms` or
    /// `dense_grid`.
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "chain" => Ok(EnvConfig::Chain(ChainConfig::default())),
            "rooms" => Ok(EnvConfig::Rooms(RoomsConfig::default())),
            "dense_grid" | "dense-grid" => Ok(EnvConfig::DenseGrid(DenseGridConfig::default())),
            other => Err(Error::InvalidInput(format!("unknown environment `{other}`"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            EnvConfig::Chain(_) => "chain",
            EnvConfig::Rooms(_) => "rooms",
            EnvConfig::DenseGrid(_) => "dense_grid",
        }
    }

    fn problems(&self) -> Vec<String> {
        match self {
            EnvConfig::Chain(c) => c.problems(),
            EnvConfig::Rooms(c) => c.problems(),
            EnvConfig::DenseGrid(c) => c.problems(),
        }
    }

    fn set_max_steps(&mut self, steps: usize) {
        match self {
            EnvConfig::Chain(c) => c.max_steps = steps,
            EnvConfig::Rooms(c) => c.max_steps = steps,
            EnvConfig::DenseGrid(c) => c.max_steps = steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub agent: AgentKind,
    pub agent_config: AgentConfig,
    pub estimator: EstimatorKind,
    /// Training episodes per trial.
    pub episodes: usize,
    /// Overrides the environment's step budget when set.
    pub max_steps: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Write `checkpoint_<n>.json` every this many training episodes; 0 disables.
    pub checkpoint_interval: usize,
    /// Episodes run after training with ε = 0, no bonus and frozen weights.
    pub eval_episodes: usize,
    /// Number of final training episodes averaged into a trial's score.
    pub final_window: usize,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            agent: AgentKind::PhiEb,
            agent_config: AgentConfig::default(),
            estimator: EstimatorKind::Kt,
            episodes: 2000,
            max_steps: None,
            trials: 5,
            seed: 0,
            out: PathBuf::from("results"),
            checkpoint_interval: 0,
            eval_episodes: 0,
            final_window: 100,
            execution: Execution::default(),
        }
    }
}

impl ExperimentConfig {
    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.trials == 0 {
            out.push("trials must be at least 1".into());
        }
        if self.episodes == 0 {
            out.push("episodes must be at least 1".into());
        }
        if self.final_window == 0 {
            out.push("final_window must be at least 1".into());
        }
        if self.max_steps == Some(0) {
            out.push("max_steps must be positive".into());
        }
        out.extend(self.agent_config.problems());
        out.extend(self.resolved_env().problems());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    pub fn resolved_env(&self) -> EnvConfig {
        let mut env = self.env.clone();
        if let Some(steps) = self.max_steps {
            env.set_max_steps(steps);
        }
        env
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.seed, trial as u64)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub trial: usize,
    pub phase: Phase,
    pub episode: usize,
    pub steps: usize,
    /// Environment reward only.
    pub extrinsic_return: f64,
    pub augmented_return: f64,
    pub mean_bonus: f64,
    pub unique_features: usize,
    /// Not written to the CSV, which must be reproducible byte for byte.
    pub wall_ms: f64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    schema_version: u32,
    trial: usize,
    phase: &'a Phase,
    episode: usize,
    steps: usize,
    extrinsic_return: f64,
    augmented_return: f64,
    mean_bonus: f64,
    unique_features: usize,
}

/// Set of state features seen so far.
#[derive(Clone, Debug)]
pub struct SeenFeatures {
    seen: Vec<bool>,
    count: usize,
}

impl SeenFeatures {
    pub fn new(dimension: usize) -> Self {
        Self { seen: vec![false; dimension], count: 0 }
    }

    pub fn insert(&mut self, phi: &BinaryFeatureVector) {
        for &i in phi.active() {
            if !self.seen[i] {
                self.seen[i] = true;
                self.count += 1;
            }
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn indices(&self) -> Vec<usize> {
        (0..self.seen.len()).filter(|&i| self.seen[i]).collect()
    }
}

/// Per-episode behaviour switches.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeSettings {
    pub epsilon: f64,
    pub beta: f64,
    pub count_floor: f64,
    /// Update weights (and the density, when one is given).
    pub learn: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpisodeStats {
    pub steps: usize,
    pub extrinsic_return: f64,
    pub augmented_return: f64,
    pub mean_bonus: f64,
}

/// Runs one episode from the environment's start state.
///
/// When `density` is present and `settings.learn` is set, each visited state
/// is scored and observed before the learning update, and its bonus is added
/// to the reward. The step budget ends an episode like a terminal state.
pub fn run_episode<E: Environment, R: Rng + ?Sized>(
    env: &E,
    agent: &mut SarsaAgent,
    mut density: Option<&mut FeatureVisitDensity>,
    seen: &mut SeenFeatures,
    settings: &EpisodeSettings,
    rng: &mut R,
) -> Result<EpisodeStats> {
    let mut stats = EpisodeStats::default();
    let mut bonus_sum = 0.0;
    let mut state = env.initial_state();
    let mut phi = env.features(&state);
    let mut action = agent.act(&phi, settings.epsilon, rng)?;
    let budget = env.max_steps();

    while stats.steps < budget {
        let outcome = env.step(&state, action, rng)?;
        stats.steps += 1;
        if settings.learn {
            seen.insert(&phi);
        }

        let bonus = match density.as_deref_mut() {
            Some(d) if settings.learn => {
                let t = d.steps();
                let pair = d.prob_pair(&phi)?;
                PseudocountReport::from_pair(pair, t, settings.beta, settings.count_floor).bonus
            }
            _ => 0.0,
        };
        let reward = augment_reward(outcome.reward, bonus);
        if !reward.is_finite() {
            return Err(Error::NumericalFault(format!(
                "augmented reward {reward} at step {} (extrinsic {}, bonus {bonus})",
                stats.steps, outcome.reward
            )));
        }
        stats.extrinsic_return += outcome.reward;
        stats.augmented_return += reward;
        bonus_sum += bonus;

        let terminal = outcome.terminal || stats.steps == budget;
        let phi_next = env.features(&outcome.next_state);
        let next_action = if terminal { 0 } else { agent.act(&phi_next, settings.epsilon, rng)? };
        if settings.learn {
            agent.learn(&Transition { phi_s: &phi, action, reward, phi_next: &phi_next, next_action, terminal })?;
        }
        if terminal {
            break;
        }
        state = outcome.next_state;
        phi = phi_next;
        action = next_action;
    }
    agent.end_episode();
    stats.mean_bonus = if stats.steps > 0 { bonus_sum / stats.steps as f64 } else { 0.0 };
    Ok(stats)
}

/// Everything needed to continue a trial from an episode boundary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub trial: usize,
    pub trial_seed: u64,
    pub next_episode: usize,
    pub weights: WeightSnapshot,
    pub density: Option<DensitySnapshot>,
    pub seen_features: Vec<usize>,
    pub rng: ChaCha8Rng,
    pub records: Vec<EpisodeRecord>,
}

impl Checkpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let cp: Checkpoint = serde_json::from_str(&text)?;
        if cp.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "checkpoint schema {} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})",
                cp.schema_version
            )));
        }
        Ok(cp)
    }
}

pub fn trial_csv_path(dir: &Path, trial: usize) -> PathBuf {
    dir.join(format!("trial_{trial}.csv"))
}

pub fn checkpoint_path(dir: &Path, trial: usize) -> PathBuf {
    dir.join(format!("checkpoint_{trial}.json"))
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: usize,
    pub trial_seed: u64,
    pub records: Vec<EpisodeRecord>,
    pub total_steps: usize,
    pub wall_ms: f64,
    /// Weights after training; returned for inspection and tests.
    pub weights: Vec<f64>,
    pub density_steps: Option<u64>,
}

struct TrialState {
    next_episode: usize,
    agent: SarsaAgent,
    density: Option<FeatureVisitDensity>,
    seen: SeenFeatures,
    rng: ChaCha8Rng,
    records: Vec<EpisodeRecord>,
}

fn fresh_state<E: Environment>(env: &E, cfg: &ExperimentConfig, trial: usize) -> Result<TrialState> {
    let seed = cfg.trial_seed(trial);
    let agent_cfg = AgentConfig { seed, ..cfg.agent_config.clone() };
    let density = match cfg.agent {
        AgentKind::PhiEb => Some(FeatureVisitDensity::new(env.feature_dim(), cfg.estimator)?),
        AgentKind::EpsGreedy => None,
    };
    Ok(TrialState {
        next_episode: 0,
        agent: SarsaAgent::new(env.feature_dim(), env.num_actions(), agent_cfg)?,
        density,
        seen: SeenFeatures::new(env.feature_dim()),
        rng: ChaCha8Rng::seed_from_u64(seed),
        records: Vec::new(),
    })
}

fn restore_state<E: Environment>(env: &E, cp: &Checkpoint) -> Result<TrialState> {
    let mut state = fresh_state(env, &cp.config, cp.trial)?;
    state.agent.q = LinearQFunction::from_snapshot(&cp.weights)?;
    if state.agent.q.state_dim() != env.feature_dim() || state.agent.q.num_actions() != env.num_actions() {
        return Err(Error::InvalidInput("checkpoint weights do not match the environment".into()));
    }
    state.density = match (&cp.density, cp.config.agent) {
        (Some(snap), AgentKind::PhiEb) => Some(FeatureVisitDensity::from_snapshot(snap)?),
        (None, AgentKind::EpsGreedy) => None,
        _ => return Err(Error::InvalidInput("checkpoint density does not match the agent kind".into())),
    };
    for &i in &cp.seen_features {
        if i >= env.feature_dim() {
            return Err(Error::InvalidInput(format!("checkpoint feature {i} out of range")));
        }
        state.seen.insert(&BinaryFeatureVector::new(env.feature_dim(), vec![i])?);
    }
    state.next_episode = cp.next_episode;
    state.rng = cp.rng.clone();
    state.records = cp.records.clone();
    Ok(state)
}

fn write_checkpoint(cfg: &ExperimentConfig, trial: usize, state: &TrialState) -> Result<()> {
    let cp = Checkpoint {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        config: cfg.clone(),
        trial,
        trial_seed: cfg.trial_seed(trial),
        next_episode: state.next_episode,
        weights: state.agent.q.snapshot(),
        density: state.density.as_ref().map(FeatureVisitDensity::snapshot),
        seen_features: state.seen.indices(),
        rng: state.rng.clone(),
        records: state.records.clone(),
    };
    let path = checkpoint_path(&cfg.out, trial);
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(&cp)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

fn continue_trial<E: Environment>(
    env: &E,
    cfg: &ExperimentConfig,
    trial: usize,
    mut state: TrialState,
    checkpoints: bool,
) -> Result<TrialResult> {
    let started = Instant::now();
    let agent_cfg = state.agent.config.clone();
    let train = EpisodeSettings {
        epsilon: agent_cfg.epsilon,
        beta: agent_cfg.beta,
        count_floor: agent_cfg.count_floor,
        learn: true,
    };
    while state.next_episode < cfg.episodes {
        let t0 = Instant::now();
        let stats = run_episode(env, &mut state.agent, state.density.as_mut(), &mut state.seen, &train, &mut state.rng)
            .map_err(|e| annotate(e, trial, state.next_episode))?;
        state.records.push(EpisodeRecord {
            trial,
            phase: Phase::Train,
            episode: state.next_episode,
            steps: stats.steps,
            extrinsic_return: stats.extrinsic_return,
            augmented_return: stats.augmented_return,
            mean_bonus: stats.mean_bonus,
            unique_features: state.seen.count(),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        state.next_episode += 1;
        if checkpoints && cfg.checkpoint_interval > 0 && state.next_episode.is_multiple_of(cfg.checkpoint_interval) {
            write_checkpoint(cfg, trial, &state)?;
        }
    }

    let eval = EpisodeSettings { epsilon: 0.0, beta: 0.0, learn: false, ..train };
    for episode in 0..cfg.eval_episodes {
        let t0 = Instant::now();
        let stats = run_episode(env, &mut state.agent, None, &mut state.seen, &eval, &mut state.rng)
            .map_err(|e| annotate(e, trial, episode))?;
        state.records.push(EpisodeRecord {
            trial,
            phase: Phase::Eval,
            episode,
            steps: stats.steps,
            extrinsic_return: stats.extrinsic_return,
            augmented_return: stats.augmented_return,
            mean_bonus: stats.mean_bonus,
            unique_features: state.seen.count(),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }

    let total_steps = state.records.iter().filter(|r| r.phase == Phase::Train).map(|r| r.steps).sum();
    Ok(TrialResult {
        trial,
        trial_seed: cfg.trial_seed(trial),
        records: state.records,
        total_steps,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        weights: state.agent.q.weights().to_vec(),
        density_steps: state.density.as_ref().map(FeatureVisitDensity::steps),
    })
}

fn annotate(e: Error, trial: usize, episode: usize) -> Error {
    match e {
        Error::NumericalFault(msg) => Error::NumericalFault(format!("trial {trial}, episode {episode}: {msg}")),
        other => other,
    }
}

enum AnyEnv {
    Chain(Chain),
    Rooms(Rooms),
    DenseGrid(DenseGrid),
}

impl AnyEnv {
    fn build(cfg: &EnvConfig) -> Result<Self> {
        Ok(match cfg {
            EnvConfig::Chain(c) => AnyEnv::Chain(Chain::new(c.clone())?),
            EnvConfig::Rooms(c) => AnyEnv::Rooms(Rooms::new(c.clone())?),
            EnvConfig::DenseGrid(c) => AnyEnv::DenseGrid(DenseGrid::new(c.clone())?),
        })
    }
}

macro_rules! with_env {
    ($any:expr, $env:ident => $body:expr) => {
        match $any {
            AnyEnv::Chain($env) => $body,
            AnyEnv::Rooms($env) => $body,
            AnyEnv::DenseGrid($env) => $body,
        }
    };
}

/// Runs trial `trial` from scratch without touching the file system.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialResult> {
    cfg.validate()?;
    let env = AnyEnv::build(&cfg.resolved_env())?;
    with_env!(&env, e => {
        let state = fresh_state(e, cfg, trial)?;
        continue_trial(e, cfg, trial, state, false)
    })
}

fn run_or_resume(
    cfg: &ExperimentConfig,
    env: &AnyEnv,
    trial: usize,
    resume_from: Option<&Checkpoint>,
) -> Result<TrialResult> {
    with_env!(env, e => {
        let state = match resume_from {
            Some(cp) => restore_state(e, cp)?,
            None => fresh_state(e, cfg, trial)?,
        };
        continue_trial(e, cfg, trial, state, true)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub episodes: usize,
    pub total_steps: usize,
    /// Mean extrinsic return over the final `final_window` training episodes.
    pub final_mean: f64,
    pub eval_mean: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub std: f64,
}

impl Aggregate {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub csv_schema_version: u32,
    pub env: String,
    pub agent: AgentKind,
    pub episodes: usize,
    pub final_window: usize,
    pub trials: Vec<TrialSummary>,
    pub final_mean: Aggregate,
    pub eval_mean: Option<Aggregate>,
}

/// Mean extrinsic return of the last `window` training episodes.
pub fn final_performance(records: &[EpisodeRecord], window: usize) -> f64 {
    let train: Vec<_> = records.iter().filter(|r| r.phase == Phase::Train).collect();
    let tail = &train[train.len().saturating_sub(window)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(|r| r.extrinsic_return).sum::<f64>() / tail.len() as f64
}

pub fn summarize(cfg: &ExperimentConfig, results: &[TrialResult]) -> Summary {
    let trials: Vec<TrialSummary> = results
        .iter()
        .map(|r| {
            let eval: Vec<f64> =
                r.records.iter().filter(|x| x.phase == Phase::Eval).map(|x| x.extrinsic_return).collect();
            TrialSummary {
                trial: r.trial,
                seed: r.trial_seed,
                episodes: r.records.iter().filter(|x| x.phase == Phase::Train).count(),
                total_steps: r.total_steps,
                final_mean: final_performance(&r.records, cfg.final_window),
                eval_mean: (!eval.is_empty()).then(|| eval.iter().sum::<f64>() / eval.len() as f64),
                wall_ms: r.wall_ms,
            }
        })
        .collect();
    let finals: Vec<f64> = trials.iter().map(|t| t.final_mean).collect();
    let evals: Option<Vec<f64>> = trials.iter().map(|t| t.eval_mean).collect();
    Summary {
        csv_schema_version: CSV_SCHEMA_VERSION,
        env: cfg.env.id().to_string(),
        agent: cfg.agent,
        episodes: cfg.episodes,
        final_window: cfg.final_window,
        trials,
        final_mean: Aggregate::of(&finals),
        eval_mean: evals.filter(|v| !v.is_empty()).map(|v| Aggregate::of(&v)),
    }
}

pub fn write_trial_csv(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv error at {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(CsvRow {
            schema_version: CSV_SCHEMA_VERSION,
            trial: r.trial,
            phase: &r.phase,
            episode: r.episode,
            steps: r.steps,
            extrinsic_return: r.extrinsic_return,
            augmented_return: r.augmented_return,
            mean_bonus: r.mean_bonus,
            unique_features: r.unique_features,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the rows of a trial CSV back (wall-clock time is not stored and
/// comes back as zero).
pub fn read_trial_csv(path: &Path) -> Result<Vec<EpisodeRecord>> {
    #[derive(Deserialize)]
    struct Row {
        schema_version: u32,
        trial: usize,
        phase: Phase,
        episode: usize,
        steps: usize,
        extrinsic_return: f64,
        augmented_return: f64,
        mean_bonus: f64,
        unique_features: usize,
    }
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv error at {}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(csv_err)?;
        if row.schema_version != CSV_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!("unsupported CSV schema {}", row.schema_version)));
        }
        out.push(EpisodeRecord {
            trial: row.trial,
            phase: row.phase,
            episode: row.episode,
            steps: row.steps,
            extrinsic_return: row.extrinsic_return,
            augmented_return: row.augmented_return,
            mean_bonus: row.mean_bonus,
            unique_features: row.unique_features,
            wall_ms: 0.0,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub summary: Summary,
    pub results: Vec<TrialResult>,
    pub dir: PathBuf,
}

fn prepare_dir(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let path = cfg.out.join("config.json");
    fs::write(&path, serde_json::to_vec_pretty(cfg)?).map_err(|e| Error::io(&path, e))
}

fn finish(cfg: &ExperimentConfig, results: Vec<Result<TrialResult>>) -> Result<ExperimentOutput> {
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    for r in &results {
        write_trial_csv(&trial_csv_path(&cfg.out, r.trial), &r.records)?;
    }
    let summary = summarize(cfg, &results);
    let path = cfg.out.join("summary.json");
    fs::write(&path, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(ExperimentOutput { summary, results, dir: cfg.out.clone() })
}

/// Runs every trial and writes the CSVs, summary and checkpoints to
/// `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    prepare_dir(cfg)?;
    let env = AnyEnv::build(&cfg.resolved_env())?;
    let results = map_indexed(cfg.trials, cfg.execution, |n| run_or_resume(cfg, &env, n, None));
    finish(cfg, results)
}

/// Resumes an experiment from the checkpoints in `dir` (or the directory of
/// the given checkpoint file). Trials without a checkpoint start from
/// scratch. Results go to `out`, or to the directory of the checkpoints.
pub fn resume_experiment(path: &Path, out: Option<&Path>) -> Result<ExperimentOutput> {
    let dir = if path.is_dir() { path.to_path_buf() } else { path.parent().map(Path::to_path_buf).unwrap_or_default() };
    let probe = if path.is_dir() {
        fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("checkpoint_") && n.ends_with(".json"))
            })
            .min()
            .ok_or_else(|| Error::InvalidInput(format!("no checkpoint found in {}", dir.display())))?
    } else {
        path.to_path_buf()
    };
    let mut cfg = Checkpoint::load(&probe)?.config;
    if let Some(out) = out {
        cfg.out = out.to_path_buf();
    } else {
        cfg.out = dir.clone();
    }
    cfg.validate()?;
    prepare_dir(&cfg)?;

    let mut checkpoints = Vec::with_capacity(cfg.trials);
    for n in 0..cfg.trials {
        let p = checkpoint_path(&dir, n);
        checkpoints.push(if p.exists() { Some(Checkpoint::load(&p)?) } else { None });
    }
    for cp in checkpoints.iter().flatten() {
        if cp.trial >= cfg.trials || cp.config.seed != cfg.seed || cp.config.agent != cfg.agent {
            return Err(Error::InvalidInput(format!(
                "checkpoint for trial {} belongs to a different experiment",
                cp.trial
            )));
        }
    }
    let env = AnyEnv::build(&cfg.resolved_env())?;
    let results = map_indexed(cfg.trials, cfg.execution, |n| run_or_resume(&cfg, &env, n, checkpoints[n].as_ref()));
    finish(&cfg, results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_chain(agent: AgentKind, beta: f64) -> ExperimentConfig {
        ExperimentConfig {
            env: EnvConfig::Chain(ChainConfig { length: 8, max_steps: 40, ..ChainConfig::default() }),
            agent,
            agent_config: AgentConfig { beta, ..AgentConfig::default() },
            episodes: 30,
            trials: 2,
            seed: 5,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn density_counts_every_step() {
        let cfg = small_chain(AgentKind::PhiEb, 0.05);
        let r = run_trial(&cfg, 0).unwrap();
        assert_eq!(r.density_steps, Some(r.total_steps as u64));
    }

    #[test]
    fn first_visit_bonus_is_positive() {
        let env = Chain::new(ChainConfig { length: 5, max_steps: 1, ..ChainConfig::default() }).unwrap();
        let mut agent = SarsaAgent::new(5, 2, AgentConfig::default()).unwrap();
        let mut density = FeatureVisitDensity::new(5, EstimatorKind::Kt).unwrap();
        let mut seen = SeenFeatures::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let settings = EpisodeSettings { epsilon: 0.0, beta: 0.05, count_floor: 0.01, learn: true };
        let stats = run_episode(&env, &mut agent, Some(&mut density), &mut seen, &settings, &mut rng).unwrap();
        assert_eq!(stats.steps, 1);
        assert!(stats.mean_bonus > 0.0);
        assert!(stats.augmented_return > stats.extrinsic_return);
    }

    #[test]
    fn extrinsic_return_excludes_bonus() {
        let cfg = small_chain(AgentKind::PhiEb, 0.05);
        let r = run_trial(&cfg, 1).unwrap();
        for rec in &r.records {
            assert!(rec.augmented_return >= rec.extrinsic_return);
            assert!(rec.extrinsic_return <= 1.0 + rec.steps as f64 * 0.001 + 1e-12);
        }
    }

    #[test]
    fn validation_lists_all_problems() {
        let cfg = ExperimentConfig {
            trials: 0,
            episodes: 0,
            agent_config: AgentConfig { gamma: 3.0, ..AgentConfig::default() },
            env: EnvConfig::Chain(ChainConfig { length: 1, ..ChainConfig::default() }),
            ..ExperimentConfig::default()
        };
        match cfg.validate() {
            Err(Error::InvalidConfig(list)) => assert!(list.len() >= 4, "{list:?}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn max_steps_override_applies() {
        let cfg =
            ExperimentConfig { max_steps: Some(3), episodes: 4, trials: 1, ..small_chain(AgentKind::EpsGreedy, 0.0) };
        let r = run_trial(&cfg, 0).unwrap();
        assert!(r.records.iter().all(|x| x.steps <= 3));
    }

    #[test]
    fn eval_phase_is_frozen() {
        let cfg = ExperimentConfig { eval_episodes: 5, ..small_chain(AgentKind::PhiEb, 0.05) };
        let r = run_trial(&cfg, 0).unwrap();
        let evals: Vec<_> = r.records.iter().filter(|x| x.phase == Phase::Eval).collect();
        assert_eq!(evals.len(), 5);
        assert!(evals.iter().all(|x| x.mean_bonus == 0.0 && x.augmented_return == x.extrinsic_return));
        let trained = run_trial(&ExperimentConfig { eval_episodes: 0, ..cfg.clone() }, 0).unwrap();
        assert_eq!(trained.weights, r.weights);
    }

    #[test]
    fn rooms_and_dense_grid_run() {
        for env in [EnvConfig::Rooms(RoomsConfig::default()), EnvConfig::DenseGrid(DenseGridConfig::default())] {
            let cfg = ExperimentConfig { env, episodes: 5, trials: 1, ..ExperimentConfig::default() };
            let r = run_trial(&cfg, 0).unwrap();
            assert_eq!(r.records.len(), 5);
        }
    }

    #[test]
    fn config_json_uses_documented_names() {
        let json = serde_json::to_value(ExperimentConfig::default()).unwrap();
        assert_eq!(json["agent"], "phi-eb");
        assert_eq!(json["env"]["kind"], "chain");
        assert_eq!(json["estimator"], "kt");
        let parsed: ExperimentConfig =
            serde_json::from_str(r#"{"env": {"kind": "rooms", "slip_prob": 0.1}, "agent": "eps-greedy", "trials": 3}"#)
                .unwrap();
        assert_eq!(parsed.trials, 3);
        assert_eq!(parsed.agent, AgentKind::EpsGreedy);
        assert!(matches!(parsed.env, EnvConfig::Rooms(RoomsConfig { slip_prob, .. }) if slip_prob == 0.1));
    }
}
