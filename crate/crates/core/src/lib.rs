//! Task-driven optimization of LiDAR elevation-beam configurations.
//!
//! A low-resolution LiDAR is modeled by selecting `k` of the `K` candidate
//! elevation beams of a high-resolution scanner. This crate searches that
//! discrete space with an epsilon-greedy loop guided by a small value
//! predictor trained online on the configurations evaluated so far, and
//! ships a deterministic synthetic environment that scores a configuration
//! by map-based localization accuracy.
//!
//! The main pieces:
//!
//! * [`space`] — beam configurations, bounded actions, enumeration.
//! * [`sim`] — synthetic scenes, ray-cast scans, beam subsampling, maps.
//! * [`features`] — per-beam statistics and the predictor's feature vector.
//! * [`predictor`] — the feed-forward value network and its trainer.
//! * [`locenv`] — the built-in localization environment (ICP against a map).
//! * [`search`] — epsilon-greedy, random, and exhaustive search drivers.
//!
//! Everything is seeded: a search result is a pure function of the
//! environment snapshot, the solution space, and the search parameters.

pub use nalgebra;

pub mod cloud;
pub mod features;
pub mod hash;
pub mod icp;
pub mod kdtree;
pub mod locenv;
pub mod predictor;
pub mod rng;
pub mod search;
pub mod sim;
pub mod space;

pub use cloud::{LabeledPoint, LabeledPointCloud, Pose, SemanticClass};
pub use features::{BeamStats, FeatureVector, NormStats, StatsTable};
pub use locenv::{EnvSnapshot, LocalizationEnv, SnapshotParams};
pub use predictor::{Network, PredictorSpec, TrainSet};
pub use search::{Environment, SearchParams, SearchResult};
pub use space::{ActionVec, BeamConfig, SolutionSpace};
