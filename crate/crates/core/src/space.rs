//! Discrete solution space of beam configurations and the bounded action
//! space that moves between them.
//!
//! A configuration selects `k` of the `K` candidate beams (1-indexed IDs,
//! strictly ascending). An action shifts each selected beam by at most `m`
//! positions; the result is valid only if it stays in range and keeps the
//! IDs unique.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Default cap on how many configurations [`enumerate_all_configs`] will
/// agree to enumerate.
pub const DEFAULT_ENUM_CAP: u128 = 2_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpaceError {
    /// Parameters violate `K > k >= 1`, `m >= 1`, `K >= 2`.
    InvalidSpace(String),
    WrongLength { expected: usize, got: usize },
    IdOutOfRange { id: u32, num_beams: u32 },
    DuplicateId(u32),
    StepOutOfRange { delta: i32, max_step: u32 },
    /// The all-zero action is excluded: it would revisit the same state.
    ZeroAction,
    /// `C(K, k)` exceeds the enumeration cap.
    SpaceTooLarge { count: u128, cap: u128 },
}

impl fmt::Display for SpaceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceError::InvalidSpace(msg) => write!(f, "invalid solution space: {msg}"),
            SpaceError::WrongLength { expected, got } => {
                write!(f, "expected {expected} beam entries, got {got}")
            }
            SpaceError::IdOutOfRange { id, num_beams } => {
                write!(f, "beam id {id} outside [1, {num_beams}]")
            }
            SpaceError::DuplicateId(id) => write!(f, "duplicate beam id {id}"),
            SpaceError::StepOutOfRange { delta, max_step } => {
                write!(f, "action step {delta} outside [-{max_step}, {max_step}]")
            }
            SpaceError::ZeroAction => write!(f, "the all-zero action is not allowed"),
            SpaceError::SpaceTooLarge { count, cap } => {
                write!(f, "{count} configurations exceed the enumeration cap {cap}")
            }
        }
    }
}

impl std::error::Error for SpaceError {}

/// The `(K, k, m)` triple describing the solution and action spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionSpace {
    /// Total candidate beam positions of the HR scanner; IDs are `1..=K`.
    num_beams: u32,
    /// Number of beams a configuration selects.
    config_len: u32,
    /// Maximum per-beam shift of a single action.
    max_step: u32,
}

impl SolutionSpace {
    pub fn new(num_beams: u32, config_len: u32, max_step: u32) -> Result<Self, SpaceError> {
        if num_beams < 2 {
            return Err(SpaceError::InvalidSpace(format!(
                "need at least 2 candidate beams, got {num_beams}"
            )));
        }
        if config_len < 1 || config_len >= num_beams {
            return Err(SpaceError::InvalidSpace(format!(
                "selected beam count {config_len} must satisfy 1 <= k < K = {num_beams}"
            )));
        }
        if max_step < 1 {
            return Err(SpaceError::InvalidSpace("max step must be >= 1".into()));
        }
        Ok(SolutionSpace {
            num_beams,
            config_len,
            max_step,
        })
    }

    pub fn num_beams(&self) -> u32 {
        self.num_beams
    }

    pub fn config_len(&self) -> u32 {
        self.config_len
    }

    pub fn max_step(&self) -> u32 {
        self.max_step
    }

    /// Number of distinct configurations, `C(K, k)`, saturating at `u128::MAX`.
    pub fn config_count(&self) -> u128 {
        binomial(self.num_beams as u64, self.config_len as u64)
    }
}

/// Binomial coefficient `C(n, k)` in `u128`, saturating on overflow.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 1..=k {
        // multiply before divide keeps the intermediate an exact integer
        match result.checked_mul((n - k + i) as u128) {
            Some(v) => result = v / i as u128,
            None => return u128::MAX,
        }
    }
    result
}

/// A state: `k` strictly ascending beam IDs in `[1, K]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BeamConfig {
    ids: Vec<u32>,
}

impl BeamConfig {
    /// Validates and constructs a configuration. Unsorted input is sorted
    /// first; duplicates, out-of-range IDs, and wrong lengths are rejected.
    pub fn new(mut ids: Vec<u32>, space: &SolutionSpace) -> Result<Self, SpaceError> {
        if ids.len() != space.config_len() as usize {
            return Err(SpaceError::WrongLength {
                expected: space.config_len() as usize,
                got: ids.len(),
            });
        }
        ids.sort_unstable();
        for window in ids.windows(2) {
            if window[0] == window[1] {
                return Err(SpaceError::DuplicateId(window[0]));
            }
        }
        for &id in &ids {
            if id < 1 || id > space.num_beams() {
                return Err(SpaceError::IdOutOfRange {
                    id,
                    num_beams: space.num_beams(),
                });
            }
        }
        Ok(BeamConfig { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Stable, injective text key, e.g. `7-8-9-10`.
    pub fn canonical_key(&self) -> String {
        let mut key = String::new();
        for (i, id) in self.ids.iter().enumerate() {
            if i > 0 {
                key.push('-');
            }
            key.push_str(&id.to_string());
        }
        key
    }
}

impl fmt::Display for BeamConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.canonical_key())
    }
}

/// A bounded action: one signed step per selected beam, not all zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionVec {
    deltas: Vec<i32>,
}

impl ActionVec {
    pub fn new(deltas: Vec<i32>, space: &SolutionSpace) -> Result<Self, SpaceError> {
        if deltas.len() != space.config_len() as usize {
            return Err(SpaceError::WrongLength {
                expected: space.config_len() as usize,
                got: deltas.len(),
            });
        }
        let m = space.max_step() as i32;
        for &d in &deltas {
            if d < -m || d > m {
                return Err(SpaceError::StepOutOfRange {
                    delta: d,
                    max_step: space.max_step(),
                });
            }
        }
        if deltas.iter().all(|&d| d == 0) {
            return Err(SpaceError::ZeroAction);
        }
        Ok(ActionVec { deltas })
    }

    pub fn deltas(&self) -> &[i32] {
        &self.deltas
    }
}

/// Componentwise `s + a`, re-sorted ascending. `None` when any component
/// leaves `[1, K]` or two beams collide.
pub fn apply_action(
    config: &BeamConfig,
    action: &ActionVec,
    space: &SolutionSpace,
) -> Option<BeamConfig> {
    debug_assert_eq!(config.len(), action.deltas().len());
    let mut ids: Vec<u32> = Vec::with_capacity(config.len());
    for (&id, &d) in config.ids().iter().zip(action.deltas()) {
        let shifted = id as i64 + d as i64;
        if shifted < 1 || shifted > space.num_beams() as i64 {
            return None;
        }
        ids.push(shifted as u32);
    }
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some(BeamConfig { ids })
}

/// The complete set of non-zero actions whose application to `config` is
/// valid, in lexicographic order of the delta vectors.
pub fn enumerate_valid_actions(config: &BeamConfig, space: &SolutionSpace) -> Vec<ActionVec> {
    let k = space.config_len() as usize;
    let m = space.max_step() as i32;
    let mut deltas = vec![-m; k];
    let mut out = Vec::new();
    loop {
        if deltas.iter().any(|&d| d != 0) {
            let action = ActionVec {
                deltas: deltas.clone(),
            };
            if apply_action(config, &action, space).is_some() {
                out.push(action);
            }
        }
        // odometer increment, last component fastest
        let mut pos = k;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            if deltas[pos] < m {
                deltas[pos] += 1;
                for d in &mut deltas[pos + 1..] {
                    *d = -m;
                }
                break;
            }
        }
    }
}

/// Iterator over every `k`-combination of `[1, K]` in ascending
/// lexicographic order.
#[derive(Debug, Clone)]
pub struct ConfigIter {
    num_beams: u32,
    current: Vec<u32>,
    done: bool,
}

impl Iterator for ConfigIter {
    type Item = BeamConfig;

    fn next(&mut self) -> Option<BeamConfig> {
        if self.done {
            return None;
        }
        let result = BeamConfig {
            ids: self.current.clone(),
        };
        // advance to the lexicographic successor
        let k = self.current.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.current[i] < self.num_beams - (k - 1 - i) as u32 {
                self.current[i] += 1;
                for j in i + 1..k {
                    self.current[j] = self.current[j - 1] + 1;
                }
                break;
            }
        }
        Some(result)
    }
}

/// Reference configuration with `config_len` beams spread evenly across the
/// candidate range: beam `i` sits at the center of the `i`-th of
/// `config_len` equal bands.
pub fn equidistant_ids(num_beams: u32, config_len: u32) -> Vec<u32> {
    (1..=config_len)
        .map(|i| {
            let id = ((2 * i - 1) as f64 * num_beams as f64 / (2 * config_len) as f64).round();
            (id as u32).clamp(1, num_beams)
        })
        .collect()
}

/// Enumerates the whole solution space with the default cap.
pub fn enumerate_all_configs(space: &SolutionSpace) -> Result<ConfigIter, SpaceError> {
    enumerate_all_configs_capped(space, DEFAULT_ENUM_CAP)
}

/// Enumerates the whole solution space, refusing when `C(K, k)` exceeds `cap`.
pub fn enumerate_all_configs_capped(
    space: &SolutionSpace,
    cap: u128,
) -> Result<ConfigIter, SpaceError> {
    let count = space.config_count();
    if count > cap {
        return Err(SpaceError::SpaceTooLarge { count, cap });
    }
    let k = space.config_len();
    Ok(ConfigIter {
        num_beams: space.num_beams(),
        current: (1..=k).collect(),
        done: false,
    })
}
