//! Point-to-plane ICP against a prebuilt map, plus the normal estimation
//! and pose-error helpers it needs.
//!
//! Registration iterates: nearest-neighbor correspondence through a kd-tree,
//! a fixed point-to-point rejection gate, trimming of the worst residuals
//! (scan clutter such as moved dynamic objects never poisons the solve at
//! the fixed point), a damped 6-parameter small-angle least squares step,
//! and pose composition. Steps that fail to reduce the trimmed mean squared
//! residual are halved and ultimately rejected, so the final residual never
//! exceeds the initial one.

use crate::cloud::Pose;
use crate::kdtree::KdTree;
use crate::sim::MapCloud;
use nalgebra::{Matrix3, Matrix6, Point3, Translation3, UnitQuaternion, Vector3, Vector6};
use rayon::prelude::*;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum IcpError {
    /// Map smaller than the neighbor count + 1 required for plane fits.
    MapTooSmall { points: usize, required: usize },
    InvalidParams(String),
}

impl fmt::Display for IcpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IcpError::MapTooSmall { points, required } => {
                write!(f, "map has {points} points, normal estimation needs {required}")
            }
            IcpError::InvalidParams(msg) => write!(f, "invalid ICP params: {msg}"),
        }
    }
}

impl std::error::Error for IcpError {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iterations: u32,
    /// Convergence threshold on the translation update, meters.
    pub translation_tolerance: f64,
    /// Convergence threshold on the rotation update, radians.
    pub rotation_tolerance: f64,
    /// Point-to-point gate on nearest-neighbor correspondences, meters.
    pub max_correspondence_dist: f64,
    /// Starting gate of the fixed coarse-to-fine schedule. Coarse
    /// initializations (GNSS-grade, meters off) leave every lateral
    /// constraint outside a tight gate, so early iterations open it up and
    /// it decays geometrically to `max_correspondence_dist`.
    pub coarse_gate: f64,
    /// Neighbor count for the normal-estimation plane fits.
    pub normal_neighbors: usize,
    /// Fraction of the worst gated correspondences discarded each solve.
    pub trim_fraction: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            max_iterations: 50,
            translation_tolerance: 1e-5,
            rotation_tolerance: 1e-5,
            max_correspondence_dist: 1.0,
            coarse_gate: 9.0,
            normal_neighbors: 10,
            trim_fraction: 0.20,
        }
    }
}

/// Per-iteration decay of the coarse gate toward the fine gate.
const GATE_DECAY: f64 = 0.65;

impl IcpParams {
    pub fn validate(&self) -> Result<(), IcpError> {
        if self.max_iterations == 0 {
            return Err(IcpError::InvalidParams("max_iterations must be positive".into()));
        }
        if self.translation_tolerance <= 0.0 || self.rotation_tolerance <= 0.0 {
            return Err(IcpError::InvalidParams("tolerances must be positive".into()));
        }
        if self.max_correspondence_dist <= 0.0 {
            return Err(IcpError::InvalidParams(
                "correspondence distance must be positive".into(),
            ));
        }
        if self.coarse_gate < self.max_correspondence_dist {
            return Err(IcpError::InvalidParams(
                "coarse gate must be at least the fine correspondence gate".into(),
            ));
        }
        if self.normal_neighbors < 3 {
            return Err(IcpError::InvalidParams("need at least 3 normal neighbors".into()));
        }
        if !(0.0..0.9).contains(&self.trim_fraction) {
            return Err(IcpError::InvalidParams("trim fraction must be in [0, 0.9)".into()));
        }
        Ok(())
    }
}

/// Map points with per-point unit normals and a spatial index.
#[derive(Debug, Clone)]
pub struct MapIndex {
    pub cloud: MapCloud,
    pub normals: Vec<Vector3<f64>>,
    /// Degenerate (collinear) neighborhoods are flagged invalid and excluded
    /// from correspondences.
    pub normal_valid: Vec<bool>,
    tree: KdTree,
}

impl MapIndex {
    pub fn build(cloud: MapCloud, normal_neighbors: usize) -> Result<Self, IcpError> {
        let tree = KdTree::build(&cloud.points);
        let (normals, normal_valid) =
            estimate_normals_with_tree(&cloud.points, &tree, normal_neighbors)?;
        Ok(MapIndex {
            cloud,
            normals,
            normal_valid,
            tree,
        })
    }

    /// Rebuilds the index from parts that were persisted (normals included),
    /// skipping the plane fits.
    pub fn from_parts(
        cloud: MapCloud,
        normals: Vec<Vector3<f64>>,
        normal_valid: Vec<bool>,
    ) -> Self {
        let tree = KdTree::build(&cloud.points);
        MapIndex {
            cloud,
            normals,
            normal_valid,
            tree,
        }
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }
}

/// Unit normals from local plane fits over the `neighbors` nearest points.
/// Sign is canonicalized (largest-magnitude component positive) so repeated
/// runs agree exactly.
pub fn estimate_normals(
    points: &[Point3<f64>],
    neighbors: usize,
) -> Result<(Vec<Vector3<f64>>, Vec<bool>), IcpError> {
    let tree = KdTree::build(points);
    estimate_normals_with_tree(points, &tree, neighbors)
}

fn estimate_normals_with_tree(
    points: &[Point3<f64>],
    tree: &KdTree,
    neighbors: usize,
) -> Result<(Vec<Vector3<f64>>, Vec<bool>), IcpError> {
    if points.len() < neighbors + 1 {
        return Err(IcpError::MapTooSmall {
            points: points.len(),
            required: neighbors + 1,
        });
    }
    let results: Vec<(Vector3<f64>, bool)> = points
        .par_iter()
        .map(|p| {
            let nn = tree.k_nearest(p, neighbors + 1);
            let n = nn.len() as f64;
            let mut centroid = Vector3::zeros();
            for &(idx, _) in &nn {
                centroid += points[idx].coords;
            }
            centroid /= n;
            let mut cov = Matrix3::zeros();
            for &(idx, _) in &nn {
                let d = points[idx].coords - centroid;
                cov += d * d.transpose();
            }
            cov /= n;
            let eig = cov.symmetric_eigen();
            // nalgebra does not sort the eigenvalues
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let middle = eig.eigenvalues[order[1]].max(0.0);
            let largest = eig.eigenvalues[order[2]].max(0.0);
            let normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
            let norm = normal.norm();
            // collinear neighborhood: no extent in two directions
            let valid = norm > 0.5
                && normal.iter().all(|v| v.is_finite())
                && middle > 1e-7 * largest.max(1e-12);
            if !valid {
                return (Vector3::zeros(), false);
            }
            let mut unit = normal / norm;
            // canonical sign: make the largest-magnitude component positive
            let lead = (0..3)
                .max_by(|&a, &b| unit[a].abs().total_cmp(&unit[b].abs()))
                .unwrap();
            if unit[lead] < 0.0 {
                unit = -unit;
            }
            (unit, true)
        })
        .collect();
    Ok(results.into_iter().unzip())
}

/// Result of one registration attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub pose: Pose,
    /// Mean squared point-to-plane residual of the final inlier pairs at
    /// the returned pose; `f64::INFINITY` when registration failed.
    pub mean_sq_residual: f64,
    /// The same final inlier pairs evaluated at the initialization, so the
    /// two residuals compare one objective on one correspondence set.
    pub init_mean_sq_residual: f64,
    pub iterations: u32,
    pub converged: bool,
    /// False when fewer than six gated correspondences were available.
    pub succeeded: bool,
}

/// (sensor-frame scan point, map point, map normal, plane residual)
type Pair = (Point3<f64>, Point3<f64>, Vector3<f64>, f64);

struct Correspondences {
    entries: Vec<Pair>,
    mean_sq_residual: f64,
}

impl Correspondences {
    /// Mean squared plane residual of these exact pairs at another pose.
    fn residual_at_pose(&self, pose: &Pose) -> f64 {
        if self.entries.is_empty() {
            return f64::INFINITY;
        }
        let sum: f64 = self
            .entries
            .iter()
            .map(|(p, q, n, _)| {
                let r = n.dot(&(pose * p - q));
                r * r
            })
            .sum();
        sum / self.entries.len() as f64
    }
}

fn correspond(
    scan: &[Point3<f64>],
    map: &MapIndex,
    pose: &Pose,
    gate: f64,
    trim_fraction: f64,
) -> Correspondences {
    let gate_sq = gate * gate;
    let mut entries: Vec<Pair> = scan
        .iter()
        .filter_map(|p| {
            let w = pose * p;
            let (idx, d_sq) = map.tree().nearest(&w)?;
            if d_sq > gate_sq || !map.normal_valid[idx] {
                return None;
            }
            let q = map.cloud.points[idx];
            let n = map.normals[idx];
            let r = n.dot(&(w - q));
            Some((*p, q, n, r))
        })
        .collect();
    // trim the worst |residual| fraction
    let keep = ((entries.len() as f64) * (1.0 - trim_fraction)).ceil() as usize;
    if keep < entries.len() {
        entries.sort_by(|a, b| a.3.abs().total_cmp(&b.3.abs()));
        entries.truncate(keep.max(6));
    }
    let mean_sq_residual = if entries.is_empty() {
        f64::INFINITY
    } else {
        entries.iter().map(|e| e.3 * e.3).sum::<f64>() / entries.len() as f64
    };
    Correspondences {
        entries,
        mean_sq_residual,
    }
}

fn solve_step(corr: &Correspondences, pose: &Pose) -> Option<Vector6<f64>> {
    let mut a = Matrix6::<f64>::zeros();
    let mut b = Vector6::<f64>::zeros();
    for &(p, _, n, r) in &corr.entries {
        let w = pose * p;
        let cross = w.coords.cross(&n);
        let j = Vector6::new(n.x, n.y, n.z, cross.x, cross.y, cross.z);
        a += j * j.transpose();
        b += j * r;
    }
    let max_diag = (0..6).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
    if max_diag <= 0.0 {
        return None;
    }
    // tiny damping keeps unconstrained directions solvable with ~zero update
    let damped = a + Matrix6::identity() * (1e-9 * max_diag);
    damped.cholesky().map(|ch| ch.solve(&(-b)))
}

fn compose(delta: &Vector6<f64>, pose: &Pose) -> Pose {
    let t = Vector3::new(delta[0], delta[1], delta[2]);
    let w = Vector3::new(delta[3], delta[4], delta[5]);
    let rot = UnitQuaternion::from_scaled_axis(w);
    Pose::from_parts(
        Translation3::from(rot * pose.translation.vector + t),
        rot * pose.rotation,
    )
}

/// Registers a sensor-frame scan against the map starting from `init`.
/// Fewer than six gated correspondences flags a failure with the pose left
/// at `init` and an infinite residual marker.
pub fn icp_point_to_plane(
    scan: &[Point3<f64>],
    map: &MapIndex,
    init: &Pose,
    params: &IcpParams,
) -> IcpResult {
    debug_assert!(params.validate().is_ok());
    let failure = |iterations: u32| IcpResult {
        pose: *init,
        mean_sq_residual: f64::INFINITY,
        init_mean_sq_residual: f64::INFINITY,
        iterations,
        converged: false,
        succeeded: false,
    };
    if scan.is_empty() {
        return failure(0);
    }
    let gate_at = |iteration: u32| {
        (params.coarse_gate * GATE_DECAY.powi(iteration as i32))
            .max(params.max_correspondence_dist)
    };
    // clutter is only separable by residual magnitude once the static
    // structure is roughly aligned, so trimming waits for the fine gate
    let trim_at = |gate: f64| {
        if gate <= params.max_correspondence_dist {
            params.trim_fraction
        } else {
            0.0
        }
    };
    let mut pose = *init;
    let g0 = gate_at(0);
    let mut corr = correspond(scan, map, &pose, g0, trim_at(g0));
    if corr.entries.len() < 6 {
        return failure(0);
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iterations {
        let Some(delta) = solve_step(&corr, &pose) else {
            break;
        };
        iterations += 1;
        let candidate = compose(&delta, &pose);
        let gate = gate_at(iterations);
        let cand_corr = correspond(scan, map, &candidate, gate, trim_at(gate));
        if cand_corr.entries.len() < 6 {
            break;
        }
        // steps are taken unconditionally: the kept set re-forms every
        // iteration, so a transient residual increase only reflects newly
        // gated-in correspondences, not divergence
        pose = candidate;
        corr = cand_corr;
        let fine = gate_at(iterations) <= params.max_correspondence_dist;
        let t_norm = Vector3::new(delta[0], delta[1], delta[2]).norm();
        let w_norm = Vector3::new(delta[3], delta[4], delta[5]).norm();
        if fine && t_norm < params.translation_tolerance && w_norm < params.rotation_tolerance {
            converged = true;
            break;
        }
    }
    // report both residuals over the same final fine-gate inlier pairs
    let final_corr = correspond(
        scan,
        map,
        &pose,
        params.max_correspondence_dist,
        params.trim_fraction,
    );
    if final_corr.entries.len() < 6 {
        return failure(iterations);
    }
    IcpResult {
        pose,
        mean_sq_residual: final_corr.mean_sq_residual,
        init_mean_sq_residual: final_corr.residual_at_pose(init),
        iterations,
        converged,
        succeeded: true,
    }
}

/// Translation norm in meters and geodesic rotation angle in degrees
/// between an estimated and a ground-truth pose.
pub fn pose_error(est: &Pose, gt: &Pose) -> (f64, f64) {
    let translation = (est.translation.vector - gt.translation.vector).norm();
    let rotation = est.rotation.angle_to(&gt.rotation).to_degrees();
    (translation, rotation)
}

/// Mean squared trimmed plane residual of `scan` at `pose` under the fine
/// gate, or infinity when fewer than six correspondences gate through.
/// Exposed for diagnostics.
pub fn residual_at(
    scan: &[Point3<f64>],
    map: &MapIndex,
    pose: &Pose,
    params: &IcpParams,
) -> f64 {
    let corr = correspond(
        scan,
        map,
        pose,
        params.max_correspondence_dist,
        params.trim_fraction,
    );
    if corr.entries.len() < 6 {
        f64::INFINITY
    } else {
        corr.mean_sq_residual
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn plane_patch(n_side: usize, z: f64) -> Vec<Point3<f64>> {
        let mut pts = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                // deterministic sub-grid offsets break exact regularity
                let dx = ((i * 7 + j * 3) % 5) as f64 * 0.013;
                let dy = ((i * 3 + j * 11) % 7) as f64 * 0.011;
                pts.push(Point3::new(i as f64 * 0.2 + dx, j as f64 * 0.2 + dy, z));
            }
        }
        pts
    }

    #[test]
    fn plane_normals_match_plane() {
        let pts = plane_patch(20, 0.3);
        let (normals, valid) = estimate_normals(&pts, 10).unwrap();
        for (n, v) in normals.iter().zip(&valid) {
            assert!(*v);
            assert!((n.norm() - 1.0).abs() < 1e-9);
            let angle = n.dot(&Vector3::z()).abs().min(1.0).acos().to_degrees();
            assert!(angle < 1.0, "plane normal off by {angle} deg");
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        // Fibonacci-sphere sampling of a radius-2 sphere
        let n = 600;
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        let pts: Vec<Point3<f64>> = (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let theta = golden * i as f64;
                Point3::new(2.0 * r * theta.cos(), 2.0 * y, 2.0 * r * theta.sin())
            })
            .collect();
        let (normals, valid) = estimate_normals(&pts, 10).unwrap();
        for ((p, n), v) in pts.iter().zip(&normals).zip(&valid) {
            assert!(*v);
            let radial = p.coords.normalize();
            let angle = n.dot(&radial).abs().min(1.0).acos().to_degrees();
            assert!(angle < 5.0, "sphere normal off by {angle} deg");
        }
    }

    #[test]
    fn collinear_neighborhood_flagged_invalid() {
        let pts: Vec<Point3<f64>> = (0..24)
            .map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0))
            .collect();
        let (_, valid) = estimate_normals(&pts, 6).unwrap();
        assert!(valid.iter().all(|v| !v));
    }

    #[test]
    fn too_small_map_rejected() {
        let pts = vec![Point3::origin(); 5];
        assert!(matches!(
            estimate_normals(&pts, 10),
            Err(IcpError::MapTooSmall { points: 5, required: 11 })
        ));
    }

    #[test]
    fn pose_error_trivials() {
        let gt = Pose::from_parts(
            Translation3::new(3.0, -2.0, 1.8),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.4),
        );
        let (t, r) = pose_error(&gt, &gt);
        assert_eq!(t, 0.0);
        assert!(r < 1e-9);

        let shifted = Pose::from_parts(Translation3::new(4.0, -2.0, 1.8), gt.rotation);
        let (t, r) = pose_error(&shifted, &gt);
        assert!((t - 1.0).abs() < 1e-12);
        assert!(r < 1e-9);

        let yawed = Pose::from_parts(
            gt.translation,
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.4 + 10.0f64.to_radians()),
        );
        let (t, r) = pose_error(&yawed, &gt);
        assert!(t < 1e-12);
        assert!((r - 10.0).abs() < 1e-9);
    }

    /// Box-room map: floor plus two walls, sampled on a grid.
    fn room_map() -> MapCloud {
        let mut points = Vec::new();
        let mut classes = Vec::new();
        let step = 0.15;
        let n = (12.0 / step) as i32;
        for i in -n..=n {
            for j in -n..=n {
                let (x, y) = (i as f64 * step, j as f64 * step);
                points.push(Point3::new(x, y, 0.0));
                classes.push(crate::cloud::SemanticClass::Road);
            }
        }
        let m = (6.0 / step) as i32;
        for i in -n..=n {
            for k in 0..=m {
                points.push(Point3::new(i as f64 * step, 12.0, k as f64 * step));
                classes.push(crate::cloud::SemanticClass::Building);
                points.push(Point3::new(12.0, i as f64 * step, k as f64 * step));
                classes.push(crate::cloud::SemanticClass::Building);
            }
        }
        MapCloud { points, classes }
    }

    /// Samples a scan of the same room from `pose` (sensor frame).
    fn room_scan(pose: &Pose, rng: &mut Rng) -> Vec<Point3<f64>> {
        let inv = pose.inverse();
        let mut scan = Vec::new();
        for _ in 0..500 {
            let x = rng.uniform() * 20.0 - 10.0;
            let y = rng.uniform() * 20.0 - 10.0;
            scan.push(inv * Point3::new(x, y, 0.0));
        }
        for _ in 0..300 {
            let a = rng.uniform() * 20.0 - 10.0;
            let z = rng.uniform() * 5.0;
            scan.push(inv * Point3::new(a, 12.0, z));
            scan.push(inv * Point3::new(12.0, a, z));
        }
        scan
    }

    #[test]
    fn icp_recovers_perturbed_pose() {
        let map = MapIndex::build(room_map(), 10).unwrap();
        let gt = Pose::from_parts(
            Translation3::new(1.0, -2.0, 1.7),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.3),
        );
        let mut rng = Rng::new(21);
        let scan = room_scan(&gt, &mut rng);
        let init = Pose::from_parts(
            Translation3::new(1.4, -1.7, 1.7),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.3 + 3.0f64.to_radians()),
        );
        let result = icp_point_to_plane(&scan, &map, &init, &IcpParams::default());
        assert!(result.succeeded);
        let (t, r) = pose_error(&result.pose, &gt);
        assert!(t < 0.05, "translation error {t}");
        assert!(r < 0.5, "rotation error {r}");
        assert!(result.mean_sq_residual.is_finite());
    }

    #[test]
    fn icp_ground_truth_init_is_fixed_point() {
        let map = MapIndex::build(room_map(), 10).unwrap();
        let gt = Pose::from_parts(
            Translation3::new(-0.5, 2.0, 1.7),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -0.7),
        );
        let mut rng = Rng::new(33);
        let scan = room_scan(&gt, &mut rng);
        let result = icp_point_to_plane(&scan, &map, &gt, &IcpParams::default());
        assert!(result.succeeded);
        let (t, r) = pose_error(&result.pose, &gt);
        assert!(t < 1e-3, "drifted {t} m from a perfect init");
        assert!(r < 0.01, "drifted {r} deg from a perfect init");
    }

    #[test]
    fn icp_far_away_scan_fails_cleanly() {
        let map = MapIndex::build(room_map(), 10).unwrap();
        let init = Pose::from_parts(
            Translation3::new(500.0, 500.0, 1.7),
            UnitQuaternion::identity(),
        );
        let scan: Vec<Point3<f64>> = (0..100)
            .map(|i| Point3::new(i as f64 * 0.1, 0.0, -1.7))
            .collect();
        let result = icp_point_to_plane(&scan, &map, &init, &IcpParams::default());
        assert!(!result.succeeded);
        assert_eq!(result.pose, init);
        assert!(result.mean_sq_residual.is_infinite());

        let empty = icp_point_to_plane(&[], &map, &init, &IcpParams::default());
        assert!(!empty.succeeded);
    }

    #[test]
    fn icp_final_residual_never_exceeds_initial() {
        let map = MapIndex::build(room_map(), 10).unwrap();
        let gt = Pose::from_parts(Translation3::new(0.0, 0.0, 1.7), UnitQuaternion::identity());
        let mut rng = Rng::new(5);
        let scan = room_scan(&gt, &mut rng);
        let params = IcpParams::default();
        for trial in 0..10 {
            let init = Pose::from_parts(
                Translation3::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0), 1.7),
                UnitQuaternion::from_axis_angle(
                    &Vector3::z_axis(),
                    rng.normal(0.0, 3.0f64.to_radians()),
                ),
            );
            let result = icp_point_to_plane(&scan, &map, &init, &params);
            if result.succeeded {
                assert!(
                    result.mean_sq_residual <= result.init_mean_sq_residual + 1e-12,
                    "trial {trial}: residual grew {} -> {}",
                    result.init_mean_sq_residual,
                    result.mean_sq_residual
                );
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(IcpParams::default().validate().is_ok());
        assert!(IcpParams { max_iterations: 0, ..Default::default() }.validate().is_err());
        assert!(IcpParams { trim_fraction: 0.95, ..Default::default() }.validate().is_err());
        assert!(IcpParams { normal_neighbors: 2, ..Default::default() }.validate().is_err());
        assert!(IcpParams { max_correspondence_dist: 0.0, ..Default::default() }
            .validate()
            .is_err());
    }
}
