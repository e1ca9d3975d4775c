//! Search drivers over the beam-configuration space: epsilon-greedy search
//! guided by the value predictor, the pure random-sampling baseline, and
//! the exhaustive oracle for small spaces.
//!
//! The epsilon-greedy loop warm-starts with uniformly sampled
//! configurations, picks the best as the initial state, then alternates
//! between exploration (a fresh uniformly random unvisited configuration)
//! and exploitation (the action whose predicted successor value is
//! largest). New states are evaluated by the environment, appended to the
//! training set, and the predictor is retrained from scratch; revisited
//! states are replayed from the dedupe table without spending budget. The
//! search ends after exactly `budget` environment requests, warm start
//! included.
//!
//! Exploration and the random baseline draw configurations from the same
//! dedicated RNG stream with identical rejection logic, so at epsilon = 1
//! the visited multiset of epsilon-greedy search is exactly the random
//! search's sample, seed for seed.

use crate::features::{FeatureError, FeatureVector, NormStats, StatsTable};
use crate::predictor::{train, Network, PredictorError, PredictorSpec, TrainSet};
use crate::rng::Rng;
use crate::space::{
    apply_action, enumerate_all_configs_capped, enumerate_valid_actions, ActionVec, BeamConfig,
    SolutionSpace, SpaceError, DEFAULT_ENUM_CAP,
};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

const STREAM_CONFIG: u64 = 0x5EA1;
const STREAM_POLICY: u64 = 0x5EA2;
const STREAM_PREDICTOR: u64 = 0x5EA3;

/// Consecutive non-evaluating steps tolerated before the search aborts.
const STALL_LIMIT: u32 = 10_000;

/// Environment failure surfaced through the [`Environment`] trait.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvError {
    pub message: String,
}

impl EnvError {
    pub fn new(message: impl Into<String>) -> Self {
        EnvError {
            message: message.into(),
        }
    }
}

impl fmt::Display for EnvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for EnvError {}

/// Black box mapping a beam configuration to a task value in `[0, 1]`.
/// Implementations must be deterministic for a fixed snapshot and safe for
/// concurrent calls on distinct configurations.
pub trait Environment: Sync {
    fn value(&self, config: &BeamConfig) -> Result<f64, EnvError>;
    fn descriptor(&self) -> String;
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchError {
    InvalidParams(String),
    /// A without-replacement budget cannot exceed the space size.
    BudgetExceedsSpace { budget: u32, configs: u128 },
    Environment { config: BeamConfig, message: String },
    ValueOutOfRange { config: BeamConfig, value: f64 },
    NoValidAction { config: BeamConfig },
    /// Too many consecutive steps without a new environment request.
    Stalled { steps: u32 },
    Feature(FeatureError),
    Predictor(PredictorError),
    Space(SpaceError),
}

impl fmt::Display for SearchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchError::InvalidParams(msg) => write!(f, "invalid search params: {msg}"),
            SearchError::BudgetExceedsSpace { budget, configs } => {
                write!(f, "budget {budget} exceeds the {configs} distinct configurations")
            }
            SearchError::Environment { config, message } => {
                write!(f, "environment failed on {config}: {message}")
            }
            SearchError::ValueOutOfRange { config, value } => {
                write!(f, "environment returned {value} outside [0, 1] for {config}")
            }
            SearchError::NoValidAction { config } => {
                write!(f, "no valid action exists at state {config}")
            }
            SearchError::Stalled { steps } => {
                write!(f, "search stalled: {steps} consecutive steps without a new state")
            }
            SearchError::Feature(e) => write!(f, "feature computation failed: {e}"),
            SearchError::Predictor(e) => write!(f, "predictor failed: {e}"),
            SearchError::Space(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for SearchError {}

impl From<FeatureError> for SearchError {
    fn from(e: FeatureError) -> Self {
        SearchError::Feature(e)
    }
}

impl From<PredictorError> for SearchError {
    fn from(e: PredictorError) -> Self {
        SearchError::Predictor(e)
    }
}

impl From<SpaceError> for SearchError {
    fn from(e: SpaceError) -> Self {
        SearchError::Space(e)
    }
}

/// Parameters of one epsilon-greedy run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Exploration probability in `[0, 1]`; 1 degenerates to random search,
    /// 0 is pure greedy.
    pub epsilon: f64,
    /// Total environment-request budget, warm start included.
    pub budget: u32,
    /// Number of uniformly sampled configurations evaluated before the loop.
    pub initial_size: u32,
    pub seed: u64,
}

impl SearchParams {
    pub fn new(budget: u32, seed: u64) -> Self {
        SearchParams {
            epsilon: 0.2,
            budget,
            initial_size: 10,
            seed,
        }
    }

    fn validate(&self, space: &SolutionSpace) -> Result<(), SearchError> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(SearchError::InvalidParams(format!(
                "epsilon {} outside [0, 1]",
                self.epsilon
            )));
        }
        if self.initial_size < 1 {
            return Err(SearchError::InvalidParams("initial_size must be >= 1".into()));
        }
        if self.initial_size > self.budget {
            return Err(SearchError::InvalidParams(format!(
                "initial_size {} exceeds budget {}",
                self.initial_size, self.budget
            )));
        }
        if self.budget as u128 > space.config_count() {
            return Err(SearchError::BudgetExceedsSpace {
                budget: self.budget,
                configs: space.config_count(),
            });
        }
        Ok(())
    }
}

/// Architecture and training knobs of the online value predictor (the seed
/// and input dimension come from the search itself).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub hidden: Vec<usize>,
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        let spec = PredictorSpec::new(1, 0);
        PredictorConfig {
            hidden: spec.hidden,
            epochs: spec.epochs,
            learning_rate: spec.learning_rate,
            batch_size: spec.batch_size,
        }
    }
}

impl PredictorConfig {
    pub fn to_spec(&self, input_dim: usize, seed: u64) -> PredictorSpec {
        PredictorSpec {
            input_dim,
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
        }
    }
}

/// Maps configurations to predictor inputs.
pub trait FeatureProvider: Sync {
    fn dim(&self, config_len: usize) -> usize;
    fn features(&self, config: &BeamConfig) -> Result<FeatureVector, FeatureError>;
}

/// The full per-beam + pairwise descriptor backed by a stats table.
pub struct TableFeatures<'a> {
    pub table: &'a StatsTable,
}

impl FeatureProvider for TableFeatures<'_> {
    fn dim(&self, config_len: usize) -> usize {
        crate::features::feature_len(config_len)
    }

    fn features(&self, config: &BeamConfig) -> Result<FeatureVector, FeatureError> {
        crate::features::feature_vector(config, self.table)
    }
}

/// Ablation baseline: raw beam IDs.
pub struct IdFeatures;

impl FeatureProvider for IdFeatures {
    fn dim(&self, config_len: usize) -> usize {
        config_len
    }

    fn features(&self, config: &BeamConfig) -> Result<FeatureVector, FeatureError> {
        Ok(crate::features::beam_id_encoding(config))
    }
}

/// How one history step was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepKind {
    /// Uniform warm-start sample.
    WarmStart,
    /// Exploration: a uniformly random unvisited configuration.
    Explore,
    /// Exploitation: predictor-argmax action applied to the previous state.
    Greedy(ActionVec),
}

impl StepKind {
    pub fn label(&self) -> &'static str {
        match self {
            StepKind::WarmStart => "warm",
            StepKind::Explore => "explore",
            StepKind::Greedy(_) => "greedy",
        }
    }
}

/// One visited state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub step: u32,
    pub config: BeamConfig,
    /// True value of the state (known for every record: new states are
    /// evaluated immediately, revisits replay the stored value).
    pub value: f64,
    pub kind: StepKind,
    /// The uniform draw deciding explore vs exploit; absent on warm-start
    /// records.
    pub epsilon_draw: Option<f64>,
    /// Whether this step spent an environment request.
    pub new_state: bool,
}

/// Outcome of a search run: the full visited history plus the best state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub method: String,
    pub space: SolutionSpace,
    pub params: SearchParams,
    pub env_descriptor: String,
    pub history: Vec<SearchRecord>,
    /// Step rewards `r_t = v_t - v_{t-1}` over the history's value series.
    pub rewards: Vec<f64>,
    pub best: BeamConfig,
    pub best_value: f64,
    pub env_calls: u32,
}

impl SearchResult {
    /// Recomputes the reward series from the stored values.
    pub fn recompute_rewards(&self) -> Vec<f64> {
        self.history
            .windows(2)
            .map(|w| w[1].value - w[0].value)
            .collect()
    }

    /// Running maximum of the true value, one entry per history step.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.history
            .iter()
            .map(|r| {
                best = best.max(r.value);
                best
            })
            .collect()
    }
}

fn eval_env(env: &dyn Environment, config: &BeamConfig) -> Result<f64, SearchError> {
    let value = env.value(config).map_err(|e| SearchError::Environment {
        config: config.clone(),
        message: e.message,
    })?;
    if !(0.0..=1.0).contains(&value) {
        return Err(SearchError::ValueOutOfRange {
            config: config.clone(),
            value,
        });
    }
    Ok(value)
}

/// Uniform draw from the unvisited part of the space. Rejection sampling
/// against the visited set, with a uniform pick over the enumerated
/// complement once the space is provably dense.
fn sample_unvisited(
    rng: &mut Rng,
    space: &SolutionSpace,
    visited: &HashSet<String>,
) -> Result<BeamConfig, SearchError> {
    debug_assert!((visited.len() as u128) < space.config_count());
    for attempt in 0u32.. {
        let ids = rng.combination(space.config_len() as usize, space.num_beams() as usize);
        let config = BeamConfig::new(ids, space).expect("uniform combination is valid");
        if !visited.contains(&config.canonical_key()) {
            return Ok(config);
        }
        // long rejection streaks only happen when most of the space is
        // visited, which bounds the space size
        if attempt == 64 && space.config_count() <= 8 * DEFAULT_ENUM_CAP {
            let remaining: Vec<BeamConfig> =
                enumerate_all_configs_capped(space, 8 * DEFAULT_ENUM_CAP)?
                    .filter(|c| !visited.contains(&c.canonical_key()))
                    .collect();
            if remaining.is_empty() {
                break;
            }
            let idx = rng.index(remaining.len());
            return Ok(remaining[idx].clone());
        }
        if attempt > 1_000_000 {
            break;
        }
    }
    Err(SearchError::Stalled { steps: STALL_LIMIT })
}

/// Argmax over valid actions under an arbitrary successor scorer; exact
/// ties are broken uniformly with the provided RNG.
fn best_action_by_score<F>(
    config: &BeamConfig,
    space: &SolutionSpace,
    rng: &mut Rng,
    mut score: F,
) -> Result<ActionVec, SearchError>
where
    F: FnMut(&BeamConfig) -> Result<f64, SearchError>,
{
    let actions = enumerate_valid_actions(config, space);
    if actions.is_empty() {
        return Err(SearchError::NoValidAction {
            config: config.clone(),
        });
    }
    let mut best_score = f64::NEG_INFINITY;
    let mut ties: Vec<usize> = Vec::new();
    for (i, action) in actions.iter().enumerate() {
        let successor = apply_action(config, action, space).expect("enumerated action applies");
        let s = score(&successor)?;
        if s > best_score {
            best_score = s;
            ties.clear();
            ties.push(i);
        } else if s == best_score {
            ties.push(i);
        }
    }
    let pick = if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.index(ties.len())]
    };
    Ok(actions[pick].clone())
}

/// Evaluates the predictor on every valid successor of `config` and returns
/// the action leading to the highest predicted value.
pub fn get_best_action(
    config: &BeamConfig,
    net: &Network,
    space: &SolutionSpace,
    features: &dyn FeatureProvider,
    norm: &NormStats,
    rng: &mut Rng,
) -> Result<ActionVec, SearchError> {
    best_action_by_score(config, space, rng, |successor| {
        let f = features.features(successor)?;
        let x = norm.apply(&f);
        Ok(net.forward(&x.values)?)
    })
}

fn finalize(
    method: &str,
    space: &SolutionSpace,
    params: SearchParams,
    env_descriptor: String,
    history: Vec<SearchRecord>,
    env_calls: u32,
) -> SearchResult {
    let mut best_index = 0;
    for (i, r) in history.iter().enumerate() {
        if r.value > history[best_index].value {
            best_index = i;
        }
    }
    let rewards = history
        .windows(2)
        .map(|w| w[1].value - w[0].value)
        .collect();
    SearchResult {
        method: method.to_string(),
        space: *space,
        params,
        env_descriptor,
        best: history[best_index].config.clone(),
        best_value: history[best_index].value,
        rewards,
        history,
        env_calls,
    }
}

/// Epsilon-greedy search: warm start, then explore/exploit until exactly
/// `params.budget` environment requests have been spent. Returns the
/// best-by-true-value state (earliest visited on ties).
pub fn epsilon_greedy_search(
    env: &dyn Environment,
    space: &SolutionSpace,
    params: &SearchParams,
    features: &dyn FeatureProvider,
    predictor_cfg: &PredictorConfig,
) -> Result<SearchResult, SearchError> {
    params.validate(space)?;
    let mut rng_config = Rng::seeded(params.seed, STREAM_CONFIG);
    let mut rng_policy = Rng::seeded(params.seed, STREAM_POLICY);
    let predictor_seed = Rng::seeded(params.seed, STREAM_PREDICTOR).next_u64();
    let spec = predictor_cfg.to_spec(features.dim(space.config_len() as usize), predictor_seed);

    let mut visited: HashSet<String> = HashSet::new();
    let mut values: HashMap<String, f64> = HashMap::new();
    let mut train_set = TrainSet::new();
    let mut history: Vec<SearchRecord> = Vec::new();

    // warm start: distinct uniform samples, each evaluated
    for step in 1..=params.initial_size {
        let config = sample_unvisited(&mut rng_config, space, &visited)?;
        let value = eval_env(env, &config)?;
        let key = config.canonical_key();
        visited.insert(key.clone());
        values.insert(key.clone(), value);
        train_set.insert(key, features.features(&config)?, value)?;
        history.push(SearchRecord {
            step,
            config,
            value,
            kind: StepKind::WarmStart,
            epsilon_draw: None,
            new_state: true,
        });
    }
    let mut env_calls = params.initial_size;
    let mut norm = train_set.norm_stats()?;
    let mut net = train(&spec, &train_set, &norm)?;

    // initial state: best warm-start configuration, earliest on ties
    let mut state = {
        let mut best = 0;
        for (i, r) in history.iter().enumerate() {
            if r.value > history[best].value {
                best = i;
            }
        }
        history[best].config.clone()
    };

    let mut step = params.initial_size;
    let mut stall = 0u32;
    while env_calls < params.budget {
        step += 1;
        let draw = rng_policy.uniform();
        let (next, kind) = if draw < params.epsilon {
            let config = sample_unvisited(&mut rng_config, space, &visited)?;
            (config, StepKind::Explore)
        } else {
            let action = get_best_action(&state, &net, space, features, &norm, &mut rng_policy)?;
            let successor =
                apply_action(&state, &action, space).expect("enumerated action applies");
            (successor, StepKind::Greedy(action))
        };
        state = next;
        let key = state.canonical_key();
        if let Some(&value) = values.get(&key) {
            // revisit: replay the known value, no environment request
            history.push(SearchRecord {
                step,
                config: state.clone(),
                value,
                kind,
                epsilon_draw: Some(draw),
                new_state: false,
            });
            stall += 1;
            if stall > STALL_LIMIT {
                return Err(SearchError::Stalled { steps: stall });
            }
        } else {
            let value = eval_env(env, &state)?;
            env_calls += 1;
            visited.insert(key.clone());
            values.insert(key.clone(), value);
            train_set.insert(key, features.features(&state)?, value)?;
            norm = train_set.norm_stats()?;
            net = train(&spec, &train_set, &norm)?;
            history.push(SearchRecord {
                step,
                config: state.clone(),
                value,
                kind,
                epsilon_draw: Some(draw),
                new_state: true,
            });
            stall = 0;
        }
    }

    Ok(finalize(
        "epsilon-greedy",
        space,
        *params,
        env.descriptor(),
        history,
        env_calls,
    ))
}

/// Baseline: `budget` configurations drawn uniformly without replacement,
/// each evaluated once.
pub fn random_search(
    env: &dyn Environment,
    space: &SolutionSpace,
    budget: u32,
    seed: u64,
) -> Result<SearchResult, SearchError> {
    if budget < 1 {
        return Err(SearchError::InvalidParams("budget must be >= 1".into()));
    }
    if budget as u128 > space.config_count() {
        return Err(SearchError::BudgetExceedsSpace {
            budget,
            configs: space.config_count(),
        });
    }
    let mut rng_config = Rng::seeded(seed, STREAM_CONFIG);
    let mut visited: HashSet<String> = HashSet::new();
    let mut history = Vec::with_capacity(budget as usize);
    for step in 1..=budget {
        let config = sample_unvisited(&mut rng_config, space, &visited)?;
        let value = eval_env(env, &config)?;
        visited.insert(config.canonical_key());
        history.push(SearchRecord {
            step,
            config,
            value,
            kind: StepKind::Explore,
            epsilon_draw: None,
            new_state: true,
        });
    }
    let params = SearchParams {
        epsilon: 1.0,
        budget,
        initial_size: 0,
        seed,
    };
    Ok(finalize(
        "random",
        space,
        params,
        env.descriptor(),
        history,
        budget,
    ))
}

/// Ground-truth table: the value of every configuration in the space.
#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveTable {
    /// Lexicographic configuration order.
    pub entries: Vec<(BeamConfig, f64)>,
    pub best_index: usize,
    pub env_descriptor: String,
}

impl ExhaustiveTable {
    pub fn best(&self) -> (&BeamConfig, f64) {
        let (c, v) = &self.entries[self.best_index];
        (c, *v)
    }

    pub fn value_map(&self) -> HashMap<String, f64> {
        self.entries
            .iter()
            .map(|(c, v)| (c.canonical_key(), *v))
            .collect()
    }

    /// Smallest value still inside the top `fraction` of the table.
    pub fn top_fraction_threshold(&self, fraction: f64) -> f64 {
        let mut values: Vec<f64> = self.entries.iter().map(|(_, v)| *v).collect();
        values.sort_by(|a, b| b.total_cmp(a));
        let count = ((values.len() as f64) * fraction).ceil().max(1.0) as usize;
        values[count.min(values.len()) - 1]
    }
}

/// Evaluates every configuration of the space (refusing above `cap`,
/// default two million) and returns the full table plus the global argmax
/// (earliest on ties).
pub fn exhaustive_search(
    env: &dyn Environment,
    space: &SolutionSpace,
    cap: Option<u128>,
) -> Result<ExhaustiveTable, SearchError> {
    let iter = enumerate_all_configs_capped(space, cap.unwrap_or(DEFAULT_ENUM_CAP))?;
    let mut entries: Vec<(BeamConfig, f64)> = Vec::new();
    let mut best_index = 0;
    for config in iter {
        let value = eval_env(env, &config)?;
        if value > entries.get(best_index).map_or(f64::NEG_INFINITY, |e| e.1) {
            best_index = entries.len();
        }
        entries.push((config, value));
    }
    Ok(ExhaustiveTable {
        entries,
        best_index,
        env_descriptor: env.descriptor(),
    })
}

/// Replay environment backed by a key -> value table.
pub struct TableEnv {
    values: HashMap<String, f64>,
    descriptor: String,
}

impl TableEnv {
    pub fn new(descriptor: impl Into<String>, values: HashMap<String, f64>) -> Self {
        TableEnv {
            values,
            descriptor: descriptor.into(),
        }
    }

    pub fn from_table(table: &ExhaustiveTable) -> Self {
        TableEnv {
            values: table.value_map(),
            descriptor: table.env_descriptor.clone(),
        }
    }
}

impl Environment for TableEnv {
    fn value(&self, config: &BeamConfig) -> Result<f64, EnvError> {
        self.values
            .get(&config.canonical_key())
            .copied()
            .ok_or_else(|| EnvError::new(format!("no table entry for {config}")))
    }

    fn descriptor(&self) -> String {
        self.descriptor.clone()
    }
}

/// Wrapper counting environment requests; used to pin budget exactness.
pub struct CountingEnv<'a> {
    inner: &'a dyn Environment,
    calls: AtomicU64,
}

impl<'a> CountingEnv<'a> {
    pub fn new(inner: &'a dyn Environment) -> Self {
        CountingEnv {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Environment for CountingEnv<'_> {
    fn value(&self, config: &BeamConfig) -> Result<f64, EnvError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.value(config)
    }

    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }
}

/// Memoizing wrapper: identical configurations are evaluated once. Sound
/// for any deterministic environment.
pub struct MemoEnv<'a> {
    inner: &'a dyn Environment,
    cache: std::sync::Mutex<HashMap<String, f64>>,
}

impl<'a> MemoEnv<'a> {
    pub fn new(inner: &'a dyn Environment) -> Self {
        MemoEnv {
            inner,
            cache: std::sync::Mutex::new(HashMap::new()),
        }
    }
}

impl Environment for MemoEnv<'_> {
    fn value(&self, config: &BeamConfig) -> Result<f64, EnvError> {
        let key = config.canonical_key();
        if let Some(&v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v);
        }
        let v = self.inner.value(config)?;
        self.cache.lock().unwrap().insert(key, v);
        Ok(v)
    }

    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }
}
