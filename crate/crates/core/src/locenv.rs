//! The built-in environment: scores a beam configuration by how well
//! subsampled scans localize against a prebuilt map.
//!
//! A snapshot freezes everything an evaluation touches -- scene, map,
//! normals, evaluation poses with their clutter-displaced scans, and the
//! per-pose initialization noise -- so every configuration faces the exact
//! same conditions and `value(s)` is a pure function. Per pose, the scan is
//! subsampled to the candidate beams, the ground-truth pose is perturbed by
//! the frozen noise draw, point-to-plane ICP refines it against the map,
//! and the pose error is scored against three nested (translation,
//! rotation) thresholds. The value is the weighted threshold-accuracy
//! average normalized into [0, 1].

use crate::cloud::Pose;
use crate::features::{FeatureError, StatsTable};
use crate::hash::ContentHasher;
use crate::icp::{icp_point_to_plane, pose_error, IcpError, IcpParams, MapIndex};
use crate::search::{EnvError, Environment};
use crate::sim::{
    build_map, generate_scene, scan, subsample_ids, Primitive, Scene, SceneParams, ScannerSpec,
    SimError,
};
use crate::space::{BeamConfig, SolutionSpace};
use nalgebra::{Point3, Translation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use std::fmt;
use std::sync::Arc;

const STREAM_EVAL_POSES: u64 = 0x10C1;
const STREAM_DYNAMICS: u64 = 0x10C2;
const STREAM_NOISE: u64 = 0x10C3;

/// Minimum planar clearance between a displaced dynamic object and the
/// evaluation pose scanning it.
const DYNAMIC_CLEARANCE: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub enum LocEnvError {
    Sim(SimError),
    Icp(IcpError),
    Stats(FeatureError),
    InvalidParams(String),
    InvalidIds(String),
}

impl fmt::Display for LocEnvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocEnvError::Sim(e) => write!(f, "{e}"),
            LocEnvError::Icp(e) => write!(f, "{e}"),
            LocEnvError::Stats(e) => write!(f, "beam statistics failed: {e}"),
            LocEnvError::InvalidParams(msg) => write!(f, "invalid snapshot params: {msg}"),
            LocEnvError::InvalidIds(msg) => write!(f, "invalid beam ids: {msg}"),
        }
    }
}

impl std::error::Error for LocEnvError {}

impl From<SimError> for LocEnvError {
    fn from(e: SimError) -> Self {
        LocEnvError::Sim(e)
    }
}

impl From<IcpError> for LocEnvError {
    fn from(e: IcpError) -> Self {
        LocEnvError::Icp(e)
    }
}

impl From<FeatureError> for LocEnvError {
    fn from(e: FeatureError) -> Self {
        LocEnvError::Stats(e)
    }
}

/// Nested localization thresholds and their weights.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RewardSpec {
    /// `(translation m, rotation deg)` per tier, strictly increasing.
    pub thresholds: [(f64, f64); 3],
    pub weights: [f64; 3],
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            thresholds: [(0.25, 2.0), (0.50, 5.0), (5.00, 10.0)],
            weights: [3.0, 2.0, 1.0],
        }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<(), LocEnvError> {
        if self.weights.iter().any(|&w| w <= 0.0 || !w.is_finite()) {
            return Err(LocEnvError::InvalidParams(
                "reward weights must be positive".into(),
            ));
        }
        for w in self.thresholds.windows(2) {
            if !(w[0].0 < w[1].0 && w[0].1 < w[1].1) {
                return Err(LocEnvError::InvalidParams(
                    "thresholds must increase strictly in both components".into(),
                ));
            }
        }
        if self.thresholds.iter().any(|t| !(t.0 > 0.0 && t.1 > 0.0)) {
            return Err(LocEnvError::InvalidParams("thresholds must be positive".into()));
        }
        Ok(())
    }

    /// Weighted accuracy average normalized by the weight sum.
    pub fn value_from_accuracies(&self, accuracies: [f64; 3]) -> f64 {
        let weighted: f64 = self
            .weights
            .iter()
            .zip(&accuracies)
            .map(|(w, a)| w * a)
            .sum();
        weighted / self.weights.iter().sum::<f64>()
    }
}

/// Magnitudes of the frozen coarse-initialization perturbation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    /// Planar standard deviation per axis, meters.
    pub translation_std: f64,
    pub yaw_std_deg: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            translation_std: 2.0,
            yaw_std_deg: 5.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), LocEnvError> {
        if self.translation_std < 0.0 || self.yaw_std_deg < 0.0 {
            return Err(LocEnvError::InvalidParams(
                "noise magnitudes must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Everything needed to build a frozen snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotParams {
    pub space: SolutionSpace,
    pub scanner: ScannerSpec,
    pub scene: SceneParams,
    pub icp: IcpParams,
    pub reward: RewardSpec,
    pub noise: NoiseSpec,
    /// Evaluation poses sampled along the route.
    pub num_eval_poses: usize,
    /// Scans feeding the per-beam statistics table.
    pub num_stats_scans: usize,
    pub map_voxel: f64,
    pub seed: u64,
}

impl SnapshotParams {
    pub fn new(space: SolutionSpace, scanner: ScannerSpec, seed: u64) -> Self {
        SnapshotParams {
            space,
            scanner,
            scene: SceneParams::default(),
            icp: IcpParams::default(),
            reward: RewardSpec::default(),
            noise: NoiseSpec::default(),
            num_eval_poses: 100,
            num_stats_scans: 10,
            map_voxel: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), LocEnvError> {
        self.scanner.validate()?;
        self.scene.validate()?;
        self.icp.validate()?;
        self.reward.validate()?;
        self.noise.validate()?;
        if self.scanner.num_beams != self.space.num_beams() {
            return Err(LocEnvError::InvalidParams(format!(
                "scanner has {} beams but the solution space expects {}",
                self.scanner.num_beams,
                self.space.num_beams()
            )));
        }
        if self.num_eval_poses < 1 {
            return Err(LocEnvError::InvalidParams("need at least 1 eval pose".into()));
        }
        if self.num_stats_scans < 1 {
            return Err(LocEnvError::InvalidParams("need at least 1 stats scan".into()));
        }
        if self.map_voxel <= 0.0 || !self.map_voxel.is_finite() {
            return Err(LocEnvError::InvalidParams("map voxel must be positive".into()));
        }
        Ok(())
    }
}

/// One frozen evaluation pose: ground truth, perturbed initialization, and
/// the full-resolution scan taken with per-pose displaced dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub gt_pose: Pose,
    pub init_pose: Pose,
    pub scan: crate::cloud::LabeledPointCloud,
}

/// Localization outcome of one evaluation pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseOutcome {
    pub pose_id: usize,
    pub est_position: [f64; 3],
    /// Infinite when registration failed.
    pub translation_error: f64,
    pub rotation_error_deg: f64,
    pub hits: [bool; 3],
    pub icp_succeeded: bool,
    pub mean_sq_residual: f64,
    pub iterations: u32,
}

/// Full per-pose report plus the aggregated accuracies and value.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteReport {
    pub rows: Vec<PoseOutcome>,
    pub accuracies: [f64; 3],
    pub value: f64,
}

impl RouteReport {
    /// Builds the aggregate from per-pose rows (the only construction path,
    /// so stored and recomputed accuracies cannot diverge).
    pub fn from_rows(rows: Vec<PoseOutcome>, reward: &RewardSpec) -> Self {
        let accuracies = Self::accuracies_of(&rows);
        let value = reward.value_from_accuracies(accuracies);
        RouteReport {
            rows,
            accuracies,
            value,
        }
    }

    pub fn accuracies_of(rows: &[PoseOutcome]) -> [f64; 3] {
        let n = rows.len().max(1) as f64;
        let mut acc = [0.0; 3];
        for row in rows {
            for (a, hit) in acc.iter_mut().zip(&row.hits) {
                if *hit {
                    *a += 1.0;
                }
            }
        }
        acc.map(|c| c / n)
    }
}

/// The frozen tuple (scene, map, normals, eval poses, noise draws, beam
/// stats) that makes the environment deterministic.
#[derive(Debug, Clone)]
pub struct EnvSnapshot {
    pub params: SnapshotParams,
    pub scene: Scene,
    pub map: MapIndex,
    pub cases: Vec<EvalCase>,
    pub stats: StatsTable,
    content_hash: String,
}

impl EnvSnapshot {
    pub fn build(params: SnapshotParams) -> Result<Self, LocEnvError> {
        params.validate()?;
        let scene = generate_scene(params.seed, &params.scene, params.scanner.sensor_height)?;

        let map_cloud = build_map(&scene, &scene.route, &params.scanner, params.map_voxel);
        let map = MapIndex::build(map_cloud, params.icp.normal_neighbors)?;

        // per-beam statistics from a fixed sample of route scans
        let stride = (scene.route.len() / params.num_stats_scans).max(1);
        let stats_poses: Vec<Pose> = scene
            .route
            .iter()
            .step_by(stride)
            .take(params.num_stats_scans)
            .copied()
            .collect();
        let stats_scans: Vec<crate::cloud::LabeledPointCloud> = stats_poses
            .iter()
            .map(|pose| scan(&scene, pose, &params.scanner))
            .collect();
        let stats = StatsTable::from_scans(&stats_scans, params.scanner.num_beams)?;

        // frozen evaluation cases
        let mut rng_pose = crate::rng::Rng::seeded(params.seed, STREAM_EVAL_POSES);
        let mut rng_dyn = crate::rng::Rng::seeded(params.seed, STREAM_DYNAMICS);
        let mut rng_noise = crate::rng::Rng::seeded(params.seed, STREAM_NOISE);
        let dynamic_indices = scene.dynamic_indices();
        let mut cases = Vec::with_capacity(params.num_eval_poses);
        for _ in 0..params.num_eval_poses {
            let angle = rng_pose.uniform() * std::f64::consts::TAU;
            let gt_pose = pose_on_route(&params.scene, angle, params.scanner.sensor_height);
            let origin = gt_pose.translation.vector;

            // displace each dynamic object, keeping it clear of the sensor;
            // if the jitter cannot find a clear spot, push the object
            // straight away from the pose so placement always succeeds
            let mut offsets = Vec::with_capacity(dynamic_indices.len());
            for &prim_idx in &dynamic_indices {
                let center = primitive_center(&scene.primitives[prim_idx]);
                let mut placed = false;
                for _ in 0..48 {
                    let dx = rng_dyn.normal(0.0, params.scene.dynamic_jitter_std);
                    let dy = rng_dyn.normal(0.0, params.scene.dynamic_jitter_std);
                    let cx = center.x + dx;
                    let cy = center.y + dy;
                    let clear = ((cx - origin.x).powi(2) + (cy - origin.y).powi(2)).sqrt()
                        >= DYNAMIC_CLEARANCE;
                    if clear {
                        offsets.push((dx, dy));
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    let away_x = center.x - origin.x;
                    let away_y = center.y - origin.y;
                    let norm = (away_x * away_x + away_y * away_y).sqrt();
                    let (ux, uy) = if norm > 1e-9 {
                        (away_x / norm, away_y / norm)
                    } else {
                        (1.0, 0.0)
                    };
                    let push = DYNAMIC_CLEARANCE + 1.0
                        + rng_dyn.uniform() * params.scene.dynamic_jitter_std;
                    offsets.push((ux * push - away_x, uy * push - away_y));
                }
            }
            let displaced = scene.displace_dynamics(&offsets);
            let eval_scan = scan(&displaced, &gt_pose, &params.scanner);

            let dx = rng_noise.normal(0.0, params.noise.translation_std);
            let dy = rng_noise.normal(0.0, params.noise.translation_std);
            let dyaw = rng_noise.normal(0.0, params.noise.yaw_std_deg.to_radians());
            let init_pose = Pose::from_parts(
                Translation3::new(origin.x + dx, origin.y + dy, origin.z),
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), dyaw) * gt_pose.rotation,
            );
            cases.push(EvalCase {
                gt_pose,
                init_pose,
                scan: eval_scan,
            });
        }

        let mut snapshot = EnvSnapshot {
            params,
            scene,
            map,
            cases,
            stats,
            content_hash: String::new(),
        };
        snapshot.content_hash = snapshot.compute_hash();
        Ok(snapshot)
    }

    /// Reassembles a snapshot from persisted parts, recomputing the content
    /// hash from the data actually loaded.
    pub fn from_parts(
        params: SnapshotParams,
        scene: Scene,
        map: MapIndex,
        cases: Vec<EvalCase>,
        stats: StatsTable,
    ) -> Self {
        let mut snapshot = EnvSnapshot {
            params,
            scene,
            map,
            cases,
            stats,
            content_hash: String::new(),
        };
        snapshot.content_hash = snapshot.compute_hash();
        snapshot
    }

    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    fn compute_hash(&self) -> String {
        let mut h = ContentHasher::new();
        let p = &self.params;
        h.write_u32(p.space.num_beams());
        h.write_u32(p.space.config_len());
        h.write_u32(p.space.max_step());
        h.write_u32(p.scanner.num_beams);
        h.write_f64(p.scanner.elevation_range_deg.0);
        h.write_f64(p.scanner.elevation_range_deg.1);
        h.write_u32(p.scanner.azimuth_steps);
        h.write_f64(p.scanner.max_range);
        h.write_f64(p.scanner.sensor_height);
        h.write_u32(p.icp.max_iterations);
        h.write_f64(p.icp.translation_tolerance);
        h.write_f64(p.icp.rotation_tolerance);
        h.write_f64(p.icp.max_correspondence_dist);
        h.write_usize(p.icp.normal_neighbors);
        h.write_f64(p.icp.trim_fraction);
        for (t, r) in &p.reward.thresholds {
            h.write_f64(*t);
            h.write_f64(*r);
        }
        for w in &p.reward.weights {
            h.write_f64(*w);
        }
        h.write_f64(p.noise.translation_std);
        h.write_f64(p.noise.yaw_std_deg);
        h.write_usize(p.num_eval_poses);
        h.write_usize(p.num_stats_scans);
        h.write_f64(p.map_voxel);
        h.write_u64(p.seed);

        h.write_usize(self.scene.primitives.len());
        for prim in &self.scene.primitives {
            match prim {
                Primitive::Ground => h.write_u32(0),
                Primitive::Box {
                    center,
                    half_extents,
                    yaw,
                    class,
                } => {
                    h.write_u32(1);
                    for v in [
                        center.x,
                        center.y,
                        center.z,
                        half_extents.x,
                        half_extents.y,
                        half_extents.z,
                        *yaw,
                    ] {
                        h.write_f64(v);
                    }
                    h.write_u32(class.index() as u32);
                }
                Primitive::Sphere { center, radius, class } => {
                    h.write_u32(2);
                    for v in [center.x, center.y, center.z, *radius] {
                        h.write_f64(v);
                    }
                    h.write_u32(class.index() as u32);
                }
            }
        }
        for pose in &self.scene.route {
            hash_pose(&mut h, pose);
        }

        h.write_usize(self.map.cloud.len());
        for (point, class) in self.map.cloud.points.iter().zip(&self.map.cloud.classes) {
            h.write_f64(point.x);
            h.write_f64(point.y);
            h.write_f64(point.z);
            h.write_u32(class.index() as u32);
        }
        for (normal, valid) in self.map.normals.iter().zip(&self.map.normal_valid) {
            h.write_f64(normal.x);
            h.write_f64(normal.y);
            h.write_f64(normal.z);
            h.write_u32(*valid as u32);
        }

        h.write_usize(self.cases.len());
        for case in &self.cases {
            hash_pose(&mut h, &case.gt_pose);
            hash_pose(&mut h, &case.init_pose);
            h.write_usize(case.scan.len());
            for point in &case.scan.points {
                h.write_f64(point.position.x);
                h.write_f64(point.position.y);
                h.write_f64(point.position.z);
                h.write_u32(point.class.index() as u32);
                h.write_u32(point.beam_id);
            }
        }

        h.write_usize(self.stats.len());
        for (beam_id, stats) in self.stats.iter() {
            h.write_u32(beam_id);
            for v in stats.as_values() {
                h.write_f64(v);
            }
            h.write_u32(stats.num_scans);
        }
        h.finish_hex()
    }

    fn validate_ids(&self, ids: &[u32]) -> Result<(), LocEnvError> {
        if ids.is_empty() {
            return Err(LocEnvError::InvalidIds("empty beam selection".into()));
        }
        let k_total = self.params.scanner.num_beams;
        for w in ids.windows(2) {
            if w[0] >= w[1] {
                return Err(LocEnvError::InvalidIds(format!(
                    "ids must be strictly ascending, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for &id in ids {
            if id < 1 || id > k_total {
                return Err(LocEnvError::InvalidIds(format!(
                    "beam id {id} outside [1, {k_total}]"
                )));
            }
        }
        Ok(())
    }

    /// Localizes every evaluation pose with the scan restricted to `ids`
    /// (any strictly ascending subset of the candidate beams, so the
    /// full-sensor and equidistant reference rows are expressible).
    pub fn evaluate_route(&self, ids: &[u32]) -> Result<RouteReport, LocEnvError> {
        self.validate_ids(ids)?;
        let rows: Vec<PoseOutcome> = self
            .cases
            .par_iter()
            .enumerate()
            .map(|(pose_id, case)| {
                let sub = subsample_ids(&case.scan, ids);
                let points: Vec<Point3<f64>> =
                    sub.points.iter().map(|p| p.position).collect();
                let result =
                    icp_point_to_plane(&points, &self.map, &case.init_pose, &self.params.icp);
                if !result.succeeded {
                    return PoseOutcome {
                        pose_id,
                        est_position: [
                            result.pose.translation.x,
                            result.pose.translation.y,
                            result.pose.translation.z,
                        ],
                        translation_error: f64::INFINITY,
                        rotation_error_deg: f64::INFINITY,
                        hits: [false; 3],
                        icp_succeeded: false,
                        mean_sq_residual: result.mean_sq_residual,
                        iterations: result.iterations,
                    };
                }
                let (trans_err, rot_err) = pose_error(&result.pose, &case.gt_pose);
                let mut hits = [false; 3];
                for (hit, (t, r)) in hits.iter_mut().zip(&self.params.reward.thresholds) {
                    *hit = trans_err <= *t && rot_err <= *r;
                }
                PoseOutcome {
                    pose_id,
                    est_position: [
                        result.pose.translation.x,
                        result.pose.translation.y,
                        result.pose.translation.z,
                    ],
                    translation_error: trans_err,
                    rotation_error_deg: rot_err,
                    hits,
                    icp_succeeded: true,
                    mean_sq_residual: result.mean_sq_residual,
                    iterations: result.iterations,
                }
            })
            .collect();
        Ok(RouteReport::from_rows(rows, &self.params.reward))
    }

    /// The environment value of a configuration: the normalized weighted
    /// threshold accuracy over all frozen evaluation poses.
    pub fn localization_value(&self, config: &BeamConfig) -> f64 {
        self.evaluate_route(config.ids())
            .expect("a valid BeamConfig is always a valid id subset")
            .value
    }

    /// All candidate beam ids, for the full-sensor reference row.
    pub fn full_ids(&self) -> Vec<u32> {
        (1..=self.params.scanner.num_beams).collect()
    }
}

fn hash_pose(h: &mut ContentHasher, pose: &Pose) {
    h.write_f64(pose.translation.x);
    h.write_f64(pose.translation.y);
    h.write_f64(pose.translation.z);
    let q = pose.rotation.quaternion();
    h.write_f64(q.w);
    h.write_f64(q.i);
    h.write_f64(q.j);
    h.write_f64(q.k);
}

fn primitive_center(prim: &Primitive) -> Point3<f64> {
    match prim {
        Primitive::Ground => Point3::origin(),
        Primitive::Box { center, .. } | Primitive::Sphere { center, .. } => *center,
    }
}

fn pose_on_route(scene: &SceneParams, angle: f64, height: f64) -> Pose {
    let yaw = angle + std::f64::consts::FRAC_PI_2;
    Pose::from_parts(
        Translation3::new(
            scene.route_radius * angle.cos(),
            scene.route_radius * angle.sin(),
            height,
        ),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
    )
}

/// [`Environment`] implementation backed by a frozen snapshot.
#[derive(Clone)]
pub struct LocalizationEnv {
    snapshot: Arc<EnvSnapshot>,
}

impl LocalizationEnv {
    pub fn new(snapshot: Arc<EnvSnapshot>) -> Self {
        LocalizationEnv { snapshot }
    }

    pub fn snapshot(&self) -> &EnvSnapshot {
        &self.snapshot
    }
}

impl Environment for LocalizationEnv {
    fn value(&self, config: &BeamConfig) -> Result<f64, EnvError> {
        Ok(self.snapshot.localization_value(config))
    }

    fn descriptor(&self) -> String {
        format!("builtin-loc:{}", self.snapshot.content_hash())
    }
}
