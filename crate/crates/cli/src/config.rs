//! The JSON run configuration consumed by every subcommand.
//!
//! The schema is strict: unknown keys are rejected, missing required keys
//! are reported by name. Every tunable of the built-in environment is
//! exposed with the library defaults.

use crate::error::CliError;
use beamopt::hash::ContentHasher;
use beamopt::icp::IcpParams;
use beamopt::locenv::{NoiseSpec, RewardSpec, SnapshotParams};
use beamopt::search::{PredictorConfig, SearchParams};
use beamopt::sim::{SceneParams, ScannerSpec};
use beamopt::space::SolutionSpace;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub space: SpaceConfig,
    pub search: SearchConfig,
    pub env: EnvConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    /// Candidate beams of the HR scanner (IDs 1..=K).
    pub num_beams: u32,
    /// Beams per configuration.
    pub config_len: u32,
    /// Maximum per-beam action step.
    pub max_step: u32,
}

impl SpaceConfig {
    pub fn to_space(&self) -> Result<SolutionSpace, CliError> {
        Ok(SolutionSpace::new(self.num_beams, self.config_len, self.max_step)?)
    }
}

fn default_epsilon() -> f64 {
    0.2
}

fn default_initial_size() -> u32 {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Total environment-request budget.
    pub budget: u32,
    #[serde(default = "default_initial_size")]
    pub initial_size: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub predictor: PredictorSection,
    #[serde(default)]
    pub features: FeatureSource,
}

impl SearchConfig {
    pub fn to_params(&self, seed_override: Option<u64>) -> SearchParams {
        SearchParams {
            epsilon: self.epsilon,
            budget: self.budget,
            initial_size: self.initial_size,
            seed: seed_override.unwrap_or(self.seed),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSection {
    pub hidden: Vec<usize>,
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for PredictorSection {
    fn default() -> Self {
        let d = PredictorConfig::default();
        PredictorSection {
            hidden: d.hidden,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
        }
    }
}

impl PredictorSection {
    pub fn to_config(&self) -> PredictorConfig {
        PredictorConfig {
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
        }
    }
}

/// Where the predictor's input features come from.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FeatureSource {
    /// Snapshot statistics for the built-in environment, raw beam IDs for
    /// bridge environments.
    #[default]
    Auto,
    /// Raw beam IDs (the ablation baseline).
    BeamIds,
    /// Per-beam statistics from a CSV exported by `gen-env`.
    StatsCsv { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvConfig {
    BuiltinLoc(Box<BuiltinLocConfig>),
    Bridge(BridgeConfig),
}

fn default_eval_poses() -> usize {
    100
}

fn default_stats_scans() -> usize {
    10
}

fn default_map_voxel() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinLocConfig {
    /// Snapshot file produced by `gen-env`; consumed by `search` and `eval`.
    #[serde(default)]
    pub snapshot: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scanner: ScannerConfig,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub icp: IcpConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default = "default_eval_poses")]
    pub eval_poses: usize,
    #[serde(default = "default_stats_scans")]
    pub stats_scans: usize,
    #[serde(default = "default_map_voxel")]
    pub map_voxel: f64,
    /// Also export the map as CSV from `gen-env` (large).
    #[serde(default)]
    pub export_map_csv: bool,
}

impl BuiltinLocConfig {
    pub fn to_snapshot_params(&self, space: SolutionSpace) -> SnapshotParams {
        SnapshotParams {
            space,
            scanner: self.scanner.to_spec(space.num_beams()),
            scene: self.scene.to_params(),
            icp: self.icp.to_params(),
            reward: self.reward.to_spec(),
            noise: self.noise.to_spec(),
            num_eval_poses: self.eval_poses,
            num_stats_scans: self.stats_scans,
            map_voxel: self.map_voxel,
            seed: self.seed,
        }
    }
}

/// Scanner geometry; the beam count always comes from the space section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScannerConfig {
    pub elevation_low_deg: f64,
    pub elevation_high_deg: f64,
    pub azimuth_steps: u32,
    pub max_range: f64,
    pub sensor_height: f64,
}

impl Default for ScannerConfig {
    fn default() -> Self {
        let d = ScannerSpec::default();
        ScannerConfig {
            elevation_low_deg: d.elevation_range_deg.0,
            elevation_high_deg: d.elevation_range_deg.1,
            azimuth_steps: d.azimuth_steps,
            max_range: d.max_range,
            sensor_height: d.sensor_height,
        }
    }
}

impl ScannerConfig {
    pub fn to_spec(&self, num_beams: u32) -> ScannerSpec {
        ScannerSpec {
            num_beams,
            elevation_range_deg: (self.elevation_low_deg, self.elevation_high_deg),
            azimuth_steps: self.azimuth_steps,
            max_range: self.max_range,
            sensor_height: self.sensor_height,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub route_radius: f64,
    pub route_poses: usize,
    pub buildings: usize,
    pub building_footprint: (f64, f64),
    pub building_height: (f64, f64),
    pub vegetation: usize,
    pub vegetation_radius: (f64, f64),
    pub dynamic_objects: usize,
    pub poles: usize,
    pub pole_height: (f64, f64),
    pub dynamic_jitter_std: f64,
    pub corridor_clearance: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let d = SceneParams::default();
        SceneConfig {
            route_radius: d.route_radius,
            route_poses: d.num_route_poses,
            buildings: d.num_buildings,
            building_footprint: d.building_footprint,
            building_height: d.building_height,
            vegetation: d.num_vegetation,
            vegetation_radius: d.vegetation_radius,
            dynamic_objects: d.num_dynamic,
            poles: d.num_poles,
            pole_height: d.pole_height,
            dynamic_jitter_std: d.dynamic_jitter_std,
            corridor_clearance: d.corridor_clearance,
        }
    }
}

impl SceneConfig {
    pub fn to_params(&self) -> SceneParams {
        SceneParams {
            route_radius: self.route_radius,
            num_route_poses: self.route_poses,
            num_buildings: self.buildings,
            building_footprint: self.building_footprint,
            building_height: self.building_height,
            num_vegetation: self.vegetation,
            vegetation_radius: self.vegetation_radius,
            num_dynamic: self.dynamic_objects,
            num_poles: self.poles,
            pole_height: self.pole_height,
            dynamic_jitter_std: self.dynamic_jitter_std,
            corridor_clearance: self.corridor_clearance,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iterations: u32,
    pub translation_tolerance: f64,
    pub rotation_tolerance: f64,
    pub max_correspondence_dist: f64,
    pub coarse_gate: f64,
    pub normal_neighbors: usize,
    pub trim_fraction: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        let d = IcpParams::default();
        IcpConfig {
            max_iterations: d.max_iterations,
            translation_tolerance: d.translation_tolerance,
            rotation_tolerance: d.rotation_tolerance,
            max_correspondence_dist: d.max_correspondence_dist,
            coarse_gate: d.coarse_gate,
            normal_neighbors: d.normal_neighbors,
            trim_fraction: d.trim_fraction,
        }
    }
}

impl IcpConfig {
    pub fn to_params(&self) -> IcpParams {
        IcpParams {
            max_iterations: self.max_iterations,
            translation_tolerance: self.translation_tolerance,
            rotation_tolerance: self.rotation_tolerance,
            max_correspondence_dist: self.max_correspondence_dist,
            coarse_gate: self.coarse_gate,
            normal_neighbors: self.normal_neighbors,
            trim_fraction: self.trim_fraction,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// `(translation m, rotation deg)` per tier.
    pub thresholds: [(f64, f64); 3],
    pub weights: [f64; 3],
}

impl Default for RewardConfig {
    fn default() -> Self {
        let d = RewardSpec::default();
        RewardConfig {
            thresholds: d.thresholds,
            weights: d.weights,
        }
    }
}

impl RewardConfig {
    pub fn to_spec(&self) -> RewardSpec {
        RewardSpec {
            thresholds: self.thresholds,
            weights: self.weights,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub translation_std: f64,
    pub yaw_std_deg: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let d = NoiseSpec::default();
        NoiseConfig {
            translation_std: d.translation_std,
            yaw_std_deg: d.yaw_std_deg,
        }
    }
}

impl NoiseConfig {
    pub fn to_spec(&self) -> NoiseSpec {
        NoiseSpec {
            translation_std: self.translation_std,
            yaw_std_deg: self.yaw_std_deg,
        }
    }
}

fn default_timeout_secs() -> u64 {
    86_400
}

fn default_max_parallel() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeConfig {
    /// Executable plus arguments, spawned once per evaluation.
    pub command: Vec<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// On-disk cache file; `BEAMOPT_CACHE_DIR` overrides its directory.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub retries: u32,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
}

/// Parses and validates a run configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    config.space.to_space()?;
    if let EnvConfig::Bridge(bridge) = &config.env {
        if bridge.command.is_empty() {
            return Err(CliError::Config("bridge command must not be empty".into()));
        }
        if bridge.timeout_secs == 0 {
            return Err(CliError::Config("bridge timeout must be positive".into()));
        }
    }
    Ok(config)
}

/// Stable fingerprint of a parsed configuration (formatting-independent).
pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let mut h = ContentHasher::new();
    h.write_str(&canonical);
    h.finish_hex()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "space": {"num_beams": 12, "config_len": 3, "max_step": 2},
            "search": {"budget": 40},
            "env": {"type": "builtin-loc"}
        })
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config: RunConfig = serde_json::from_value(minimal_json()).unwrap();
        assert_eq!(config.search.epsilon, 0.2);
        assert_eq!(config.search.initial_size, 10);
        match &config.env {
            EnvConfig::BuiltinLoc(b) => {
                assert_eq!(b.eval_poses, 100);
                assert_eq!(b.scanner.azimuth_steps, 720);
                assert_eq!(b.icp.trim_fraction, 0.20);
            }
            _ => panic!("expected builtin-loc"),
        }
    }

    #[test]
    fn unknown_keys_rejected_by_name() {
        let mut v = minimal_json();
        v["space"]["beams"] = serde_json::json!(40);
        let err = serde_json::from_value::<RunConfig>(v).unwrap_err().to_string();
        assert!(err.contains("beams"), "{err}");

        let mut v = minimal_json();
        v["frobnicate"] = serde_json::json!(1);
        let err = serde_json::from_value::<RunConfig>(v).unwrap_err().to_string();
        assert!(err.contains("frobnicate"), "{err}");
    }

    #[test]
    fn missing_required_key_named() {
        let mut v = minimal_json();
        v["space"].as_object_mut().unwrap().remove("num_beams");
        let err = serde_json::from_value::<RunConfig>(v).unwrap_err().to_string();
        assert!(err.contains("num_beams"), "{err}");

        let mut v = minimal_json();
        v["search"].as_object_mut().unwrap().remove("budget");
        let err = serde_json::from_value::<RunConfig>(v).unwrap_err().to_string();
        assert!(err.contains("budget"), "{err}");
    }

    #[test]
    fn bridge_config_parses() {
        let v = serde_json::json!({
            "space": {"num_beams": 40, "config_len": 4, "max_step": 2},
            "search": {"budget": 200, "seed": 7},
            "env": {"type": "bridge", "command": ["python3", "eval.py"], "retries": 2}
        });
        let config: RunConfig = serde_json::from_value(v).unwrap();
        match &config.env {
            EnvConfig::Bridge(b) => {
                assert_eq!(b.command, vec!["python3", "eval.py"]);
                assert_eq!(b.timeout_secs, 86_400);
                assert_eq!(b.retries, 2);
            }
            _ => panic!("expected bridge"),
        }
    }

    #[test]
    fn config_hash_ignores_formatting_but_not_values() {
        let a: RunConfig = serde_json::from_value(minimal_json()).unwrap();
        let compact: RunConfig = serde_json::from_str(
            &serde_json::to_string(&serde_json::from_value::<serde_json::Value>(minimal_json()).unwrap()).unwrap(),
        )
        .unwrap();
        assert_eq!(config_hash(&a), config_hash(&compact));
        let mut v = minimal_json();
        v["search"]["budget"] = serde_json::json!(41);
        let b: RunConfig = serde_json::from_value(v).unwrap();
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
