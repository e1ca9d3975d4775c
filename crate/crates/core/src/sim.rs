//! Deterministic synthetic world and spinning-LiDAR scanner.
//!
//! Scenes are built from a handful of primitive shapes, each carrying one
//! semantic superclass: an infinite ground plane (road), axis-aligned boxes
//! (buildings), spheres (vegetation crowns), car-sized boxes near the route
//! (dynamic objects), and thin vertical boxes (poles and similar street
//! furniture). A route of sensor poses loops around the scene; scans are
//! exact ray-primitive intersections, so every generated cloud is a pure
//! function of `(seed, params, spec)`.

use crate::cloud::{LabeledPoint, LabeledPointCloud, Pose, SemanticClass};
use crate::rng::Rng;
use crate::space::BeamConfig;
use nalgebra::{Point3, Translation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use std::collections::HashSet;
use std::fmt;

const RAY_EPS: f64 = 1e-9;
const SCENE_STREAM: u64 = 0x5C31;

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    InvalidScanner(String),
    InvalidSceneParams(String),
    /// Could not place a primitive clear of the route after bounded retries.
    PlacementFailed { class: SemanticClass, attempts: u32 },
    RouteCollision { pose_index: usize },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidScanner(msg) => write!(f, "invalid scanner spec: {msg}"),
            SimError::InvalidSceneParams(msg) => write!(f, "invalid scene params: {msg}"),
            SimError::PlacementFailed { class, attempts } => write!(
                f,
                "failed to place a {} primitive after {attempts} attempts",
                class.label()
            ),
            SimError::RouteCollision { pose_index } => {
                write!(f, "route pose {pose_index} lies inside a primitive")
            }
        }
    }
}

impl std::error::Error for SimError {}

/// Spinning scanner: `K` evenly spaced elevation beams, beam ID 1 uppermost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScannerSpec {
    pub num_beams: u32,
    /// Elevation limits in degrees, `(lowest, highest)`.
    pub elevation_range_deg: (f64, f64),
    pub azimuth_steps: u32,
    pub max_range: f64,
    pub sensor_height: f64,
}

impl Default for ScannerSpec {
    fn default() -> Self {
        ScannerSpec {
            num_beams: 32,
            elevation_range_deg: (-30.67, 10.67),
            azimuth_steps: 720,
            max_range: 80.0,
            sensor_height: 1.8,
        }
    }
}

impl ScannerSpec {
    pub fn with_beams(num_beams: u32) -> Self {
        ScannerSpec {
            num_beams,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let (lo, hi) = self.elevation_range_deg;
        if lo >= hi || !lo.is_finite() || !hi.is_finite() {
            return Err(SimError::InvalidScanner(format!(
                "elevation range must be increasing, got [{lo}, {hi}]"
            )));
        }
        if self.num_beams < 2 {
            return Err(SimError::InvalidScanner("need at least 2 beams".into()));
        }
        if self.azimuth_steps < 8 {
            return Err(SimError::InvalidScanner("need at least 8 azimuth steps".into()));
        }
        if self.max_range <= 0.0 || self.sensor_height <= 0.0 {
            return Err(SimError::InvalidScanner(
                "max range and sensor height must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Elevation of a 1-indexed beam in degrees; beam 1 is the uppermost.
    pub fn beam_elevation_deg(&self, beam_id: u32) -> f64 {
        let (lo, hi) = self.elevation_range_deg;
        let step = (hi - lo) / (self.num_beams - 1) as f64;
        hi - (beam_id - 1) as f64 * step
    }

    pub fn beam_elevation_rad(&self, beam_id: u32) -> f64 {
        self.beam_elevation_deg(beam_id).to_radians()
    }
}

/// One solid of the scene.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Infinite ground plane at z = 0, always road.
    Ground,
    /// Upright box, rotated by `yaw` about the vertical axis through its
    /// center. Sits on the ground: the center z is half the height.
    Box {
        center: Point3<f64>,
        half_extents: Vector3<f64>,
        yaw: f64,
        class: SemanticClass,
    },
    Sphere {
        center: Point3<f64>,
        radius: f64,
        class: SemanticClass,
    },
}

impl Primitive {
    pub fn upright_box(
        cx: f64,
        cy: f64,
        half_x: f64,
        half_y: f64,
        height: f64,
        yaw: f64,
        class: SemanticClass,
    ) -> Primitive {
        Primitive::Box {
            center: Point3::new(cx, cy, height / 2.0),
            half_extents: Vector3::new(half_x, half_y, height / 2.0),
            yaw,
            class,
        }
    }

    pub fn class(&self) -> SemanticClass {
        match self {
            Primitive::Ground => SemanticClass::Road,
            Primitive::Box { class, .. } => *class,
            Primitive::Sphere { class, .. } => *class,
        }
    }

    /// Smallest positive ray parameter at which the ray enters the solid.
    pub fn raycast(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Ground => {
                if dir.z.abs() < 1e-15 {
                    return None;
                }
                let t = -origin.z / dir.z;
                (t > RAY_EPS).then_some(t)
            }
            Primitive::Box {
                center,
                half_extents,
                yaw,
                ..
            } => {
                // slab test in the box frame (t is rigid-invariant)
                let (sin, cos) = yaw.sin_cos();
                let rel = origin - center;
                let o = Vector3::new(
                    cos * rel.x + sin * rel.y,
                    -sin * rel.x + cos * rel.y,
                    rel.z,
                );
                let d = Vector3::new(
                    cos * dir.x + sin * dir.y,
                    -sin * dir.x + cos * dir.y,
                    dir.z,
                );
                let mut t_enter = f64::NEG_INFINITY;
                let mut t_exit = f64::INFINITY;
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a].abs() > half_extents[a] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / d[a];
                    let t0 = (-half_extents[a] - o[a]) * inv;
                    let t1 = (half_extents[a] - o[a]) * inv;
                    let (t0, t1) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
                    t_enter = t_enter.max(t0);
                    t_exit = t_exit.min(t1);
                    if t_enter > t_exit {
                        return None;
                    }
                }
                (t_enter > RAY_EPS).then_some(t_enter)
            }
            Primitive::Sphere { center, radius, .. } => {
                let oc = origin - center;
                let b = dir.dot(&oc);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                (t > RAY_EPS).then_some(t)
            }
        }
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        match self {
            Primitive::Ground => p.z < 0.0,
            Primitive::Box {
                center,
                half_extents,
                yaw,
                ..
            } => {
                let (sin, cos) = yaw.sin_cos();
                let rel = p - center;
                let local = Vector3::new(
                    cos * rel.x + sin * rel.y,
                    -sin * rel.x + cos * rel.y,
                    rel.z,
                );
                (0..3).all(|a| local[a].abs() <= half_extents[a])
            }
            Primitive::Sphere { center, radius, .. } => (p - center).norm() <= *radius,
        }
    }
}

/// Generation knobs for [`generate_scene`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub route_radius: f64,
    pub num_route_poses: usize,
    pub num_buildings: usize,
    /// Footprint side range in meters.
    pub building_footprint: (f64, f64),
    pub building_height: (f64, f64),
    pub num_vegetation: usize,
    pub vegetation_radius: (f64, f64),
    pub num_dynamic: usize,
    pub num_poles: usize,
    pub pole_height: (f64, f64),
    /// Standard deviation of the per-pose planar displacement applied to
    /// dynamic objects when evaluation scans are taken.
    pub dynamic_jitter_std: f64,
    /// Half-width of the route corridor static objects must stay clear of.
    pub corridor_clearance: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            route_radius: 18.0,
            num_route_poses: 36,
            num_buildings: 14,
            building_footprint: (5.0, 12.0),
            building_height: (6.0, 18.0),
            num_vegetation: 14,
            vegetation_radius: (0.8, 2.4),
            num_dynamic: 6,
            num_poles: 22,
            pole_height: (3.0, 6.0),
            dynamic_jitter_std: 1.5,
            corridor_clearance: 2.5,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.route_radius < 8.0 {
            return Err(SimError::InvalidSceneParams(
                "route radius must be at least 8 m".into(),
            ));
        }
        if self.num_route_poses < 4 {
            return Err(SimError::InvalidSceneParams("need at least 4 route poses".into()));
        }
        for (name, (lo, hi)) in [
            ("building footprint", self.building_footprint),
            ("building height", self.building_height),
            ("vegetation radius", self.vegetation_radius),
            ("pole height", self.pole_height),
        ] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(SimError::InvalidSceneParams(format!(
                    "{name} range ({lo}, {hi}) is degenerate"
                )));
            }
        }
        if self.dynamic_jitter_std < 0.0 {
            return Err(SimError::InvalidSceneParams("jitter std must be >= 0".into()));
        }
        if self.corridor_clearance <= 0.0 {
            return Err(SimError::InvalidSceneParams("corridor clearance must be > 0".into()));
        }
        Ok(())
    }
}

/// The immutable synthetic world plus its ground-truth route.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub params: SceneParams,
    pub sensor_height: f64,
    pub primitives: Vec<Primitive>,
    pub route: Vec<Pose>,
}

impl Scene {
    /// Nearest intersection along a world-frame ray within `max_range`.
    pub fn raycast(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        max_range: f64,
    ) -> Option<(f64, SemanticClass)> {
        let mut best: Option<(f64, SemanticClass)> = None;
        for prim in &self.primitives {
            if let Some(t) = prim.raycast(origin, dir) {
                if t <= max_range && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, prim.class()));
                }
            }
        }
        best
    }

    /// Indices of the dynamic primitives, in scene order.
    pub fn dynamic_indices(&self) -> Vec<usize> {
        self.primitives
            .iter()
            .enumerate()
            .filter(|(_, p)| p.class() == SemanticClass::Dynamic)
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy of the scene with each dynamic primitive shifted in the ground
    /// plane by the paired offset. `offsets` must match
    /// [`Scene::dynamic_indices`] in length and order.
    pub fn displace_dynamics(&self, offsets: &[(f64, f64)]) -> Scene {
        let indices = self.dynamic_indices();
        assert_eq!(indices.len(), offsets.len(), "one offset per dynamic object");
        let mut scene = self.clone();
        for (&idx, &(dx, dy)) in indices.iter().zip(offsets) {
            match &mut scene.primitives[idx] {
                Primitive::Box { center, .. } | Primitive::Sphere { center, .. } => {
                    center.x += dx;
                    center.y += dy;
                }
                Primitive::Ground => {}
            }
        }
        scene
    }
}

fn pose_on_circle(radius: f64, angle: f64, height: f64) -> Pose {
    let yaw = angle + std::f64::consts::FRAC_PI_2;
    Pose::from_parts(
        Translation3::new(radius * angle.cos(), radius * angle.sin(), height),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
    )
}

fn range_sample(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + rng.uniform() * (hi - lo)
}

/// Conservative radial interval (distance from the world origin) covered by
/// an oriented box footprint, via its bounding circle.
fn box_radial_interval(cx: f64, cy: f64, half_x: f64, half_y: f64) -> (f64, f64) {
    let center_radius = (cx * cx + cy * cy).sqrt();
    let bound = (half_x * half_x + half_y * half_y).sqrt();
    ((center_radius - bound).max(0.0), center_radius + bound)
}

fn intervals_overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// Deterministic scene from `seed`; static objects keep clear of the route
/// corridor, dynamic objects sit on it but away from the route poses.
pub fn generate_scene(
    seed: u64,
    params: &SceneParams,
    sensor_height: f64,
) -> Result<Scene, SimError> {
    params.validate()?;
    if sensor_height <= 0.0 {
        return Err(SimError::InvalidSceneParams("sensor height must be > 0".into()));
    }
    let mut rng = Rng::seeded(seed, SCENE_STREAM);
    let radius = params.route_radius;
    let corridor = (
        radius - params.corridor_clearance,
        radius + params.corridor_clearance,
    );

    let route: Vec<Pose> = (0..params.num_route_poses)
        .map(|i| {
            let angle = std::f64::consts::TAU * i as f64 / params.num_route_poses as f64;
            pose_on_circle(radius, angle, sensor_height)
        })
        .collect();

    let mut primitives = vec![Primitive::Ground];
    const MAX_ATTEMPTS: u32 = 80;

    // buildings: oriented boxes in an outer ring (and occasionally the
    // inner area), tall enough that upward beams find returns; random yaw
    // gives every neighborhood wall normals in several directions
    for i in 0..params.num_buildings {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let half_x = range_sample(&mut rng, params.building_footprint) / 2.0;
            let half_y = range_sample(&mut rng, params.building_footprint) / 2.0;
            let height = range_sample(&mut rng, params.building_height);
            let yaw = rng.uniform() * std::f64::consts::FRAC_PI_2;
            let outer = i % 3 != 2;
            let half_diag = (half_x * half_x + half_y * half_y).sqrt();
            let center_radius = if outer {
                corridor.1 + 1.0 + half_diag + rng.uniform() * 10.0
            } else {
                let max_center = corridor.0 - 1.5 - half_diag;
                if max_center < 3.0 {
                    continue;
                }
                3.0 + rng.uniform() * (max_center - 3.0)
            };
            let angle = rng.uniform() * std::f64::consts::TAU;
            let cx = center_radius * angle.cos();
            let cy = center_radius * angle.sin();
            if intervals_overlap(box_radial_interval(cx, cy, half_x, half_y), corridor) {
                continue;
            }
            primitives.push(Primitive::upright_box(
                cx,
                cy,
                half_x,
                half_y,
                height,
                yaw,
                SemanticClass::Building,
            ));
            placed = true;
            break;
        }
        if !placed {
            return Err(SimError::PlacementFailed {
                class: SemanticClass::Building,
                attempts: MAX_ATTEMPTS,
            });
        }
    }

    // vegetation: sphere crowns either side of the corridor
    for _ in 0..params.num_vegetation {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let r = range_sample(&mut rng, params.vegetation_radius);
            let outside = rng.uniform() < 0.6;
            let margin = params.corridor_clearance + r + 0.5;
            let center_radius = if outside {
                radius + margin + rng.uniform() * 10.0
            } else {
                let max_center = radius - margin;
                if max_center < 2.0 {
                    continue;
                }
                2.0 + rng.uniform() * (max_center - 2.0)
            };
            let angle = rng.uniform() * std::f64::consts::TAU;
            let z = r * (0.9 + rng.uniform() * 0.9);
            primitives.push(Primitive::Sphere {
                center: Point3::new(
                    center_radius * angle.cos(),
                    center_radius * angle.sin(),
                    z,
                ),
                radius: r,
                class: SemanticClass::Vegetation,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(SimError::PlacementFailed {
                class: SemanticClass::Vegetation,
                attempts: MAX_ATTEMPTS,
            });
        }
    }

    // poles: thin vertical boxes lining the road just outside the corridor
    for _ in 0..params.num_poles {
        let side = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        let offset = params.corridor_clearance + 0.8 + rng.uniform() * 2.0;
        let center_radius = radius + side * offset;
        let angle = rng.uniform() * std::f64::consts::TAU;
        let height = range_sample(&mut rng, params.pole_height);
        primitives.push(Primitive::upright_box(
            center_radius * angle.cos(),
            center_radius * angle.sin(),
            0.09,
            0.09,
            height,
            0.0,
            SemanticClass::Other,
        ));
    }

    // dynamic objects: car-sized boxes along the roadside, roughly aligned
    // with the driving direction, clear of the route poses
    for _ in 0..params.num_dynamic {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let side = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            let offset = side * (2.2 + rng.uniform() * 1.5);
            let center_radius = radius + offset;
            let angle = rng.uniform() * std::f64::consts::TAU;
            let cx = center_radius * angle.cos();
            let cy = center_radius * angle.sin();
            let clear = route.iter().all(|pose| {
                let t = pose.translation.vector;
                let dx = t.x - cx;
                let dy = t.y - cy;
                dx * dx + dy * dy >= 3.5 * 3.5
            });
            if !clear {
                continue;
            }
            let half_len = 1.8 + rng.uniform() * 0.5;
            let half_wid = 0.85 + rng.uniform() * 0.15;
            let height = 1.4 + rng.uniform() * 0.3;
            let yaw = angle + std::f64::consts::FRAC_PI_2 + (rng.uniform() - 0.5) * 0.4;
            primitives.push(Primitive::upright_box(
                cx,
                cy,
                half_len,
                half_wid,
                height,
                yaw,
                SemanticClass::Dynamic,
            ));
            placed = true;
            break;
        }
        if !placed {
            return Err(SimError::PlacementFailed {
                class: SemanticClass::Dynamic,
                attempts: MAX_ATTEMPTS,
            });
        }
    }

    let scene = Scene {
        seed,
        params: *params,
        sensor_height,
        primitives,
        route,
    };

    for (i, pose) in scene.route.iter().enumerate() {
        let origin = Point3::from(pose.translation.vector);
        if scene.primitives.iter().any(|p| p.contains(&origin)) {
            return Err(SimError::RouteCollision { pose_index: i });
        }
    }
    Ok(scene)
}

/// Full-resolution scan from `pose`: one ray per (beam, azimuth step),
/// nearest surface hit within range, labeled with class and beam ID.
/// Points are in the sensor frame, ordered by (beam, azimuth).
pub fn scan(scene: &Scene, pose: &Pose, spec: &ScannerSpec) -> LabeledPointCloud {
    let origin = Point3::from(pose.translation.vector);
    let rotation = pose.rotation;
    let beams: Vec<u32> = (1..=spec.num_beams).collect();
    let points: Vec<LabeledPoint> = beams
        .par_iter()
        .flat_map_iter(|&beam_id| {
            let phi = spec.beam_elevation_rad(beam_id);
            let (sin_phi, cos_phi) = phi.sin_cos();
            (0..spec.azimuth_steps).filter_map(move |az| {
                let theta = std::f64::consts::TAU * az as f64 / spec.azimuth_steps as f64;
                let dir_sensor = Vector3::new(
                    cos_phi * theta.cos(),
                    cos_phi * theta.sin(),
                    sin_phi,
                );
                let dir_world = rotation * dir_sensor;
                scene
                    .raycast(&origin, &dir_world, spec.max_range)
                    .map(|(t, class)| LabeledPoint {
                        position: Point3::from(dir_sensor * t),
                        class,
                        beam_id,
                    })
            })
        })
        .collect();
    LabeledPointCloud {
        points,
        pose: *pose,
    }
}

/// Keeps exactly the points whose beam ID is in `config`; pose unchanged.
pub fn subsample_beams(cloud: &LabeledPointCloud, config: &BeamConfig) -> LabeledPointCloud {
    subsample_ids(cloud, config.ids())
}

/// Beam subsampling for an arbitrary sorted ID set (reference rows such as
/// the full-sensor evaluation use lengths other than `k`).
pub fn subsample_ids(cloud: &LabeledPointCloud, ids: &[u32]) -> LabeledPointCloud {
    debug_assert!(ids.windows(2).all(|w| w[0] < w[1]), "ids must be sorted unique");
    LabeledPointCloud {
        points: cloud
            .points
            .iter()
            .filter(|p| ids.binary_search(&p.beam_id).is_ok())
            .copied()
            .collect(),
        pose: cloud.pose,
    }
}

/// World-frame accumulation of full scans at `poses` with every dynamic
/// point removed, thinned to one point per `voxel`-sized cell (first point
/// wins, in pose order).
#[derive(Debug, Clone, PartialEq)]
pub struct MapCloud {
    pub points: Vec<Point3<f64>>,
    pub classes: Vec<SemanticClass>,
}

impl MapCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn build_map(scene: &Scene, poses: &[Pose], spec: &ScannerSpec, voxel: f64) -> MapCloud {
    assert!(voxel > 0.0, "voxel size must be positive");
    let mut occupied: HashSet<(i64, i64, i64)> = HashSet::new();
    let mut points = Vec::new();
    let mut classes = Vec::new();
    let scans: Vec<LabeledPointCloud> =
        poses.par_iter().map(|pose| scan(scene, pose, spec)).collect();
    for cloud in &scans {
        for p in &cloud.points {
            if p.class == SemanticClass::Dynamic {
                continue;
            }
            let w = cloud.pose * p.position;
            let key = (
                (w.x / voxel).floor() as i64,
                (w.y / voxel).floor() as i64,
                (w.z / voxel).floor() as i64,
            );
            if occupied.insert(key) {
                points.push(w);
                classes.push(p.class);
            }
        }
    }
    MapCloud { points, classes }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TEST_SEED: u64 = 7;

    fn small_params() -> SceneParams {
        SceneParams {
            num_route_poses: 12,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let params = small_params();
        let a = generate_scene(TEST_SEED, &params, 1.8).unwrap();
        let b = generate_scene(TEST_SEED, &params, 1.8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_dynamic_objects_scan_clean() {
        let params = SceneParams {
            num_dynamic: 0,
            ..small_params()
        };
        let scene = generate_scene(TEST_SEED, &params, 1.8).unwrap();
        let spec = ScannerSpec {
            num_beams: 8,
            azimuth_steps: 90,
            ..Default::default()
        };
        for pose in &scene.route {
            let cloud = scan(&scene, pose, &spec);
            assert!(cloud.points.iter().all(|p| p.class != SemanticClass::Dynamic));
        }
    }

    #[test]
    fn all_superclasses_present_on_reference_seed() {
        let params = small_params();
        let scene = generate_scene(TEST_SEED, &params, 1.8).unwrap();
        let spec = ScannerSpec {
            num_beams: 16,
            azimuth_steps: 180,
            ..Default::default()
        };
        let mut seen = [false; 5];
        for pose in &scene.route {
            for p in scan(&scene, pose, &spec).points {
                seen[p.class.index()] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "classes seen: {seen:?}");
    }

    #[test]
    fn horizontal_beam_misses_bare_ground() {
        let scene = Scene {
            seed: 0,
            params: SceneParams::default(),
            sensor_height: 1.8,
            primitives: vec![Primitive::Ground],
            route: vec![pose_on_circle(18.0, 0.0, 1.8)],
        };
        // beam 1 = 0 deg (horizontal), beam 2 = -30.67 deg
        let spec = ScannerSpec {
            num_beams: 2,
            elevation_range_deg: (-30.67, 0.0),
            azimuth_steps: 64,
            ..Default::default()
        };
        let cloud = scan(&scene, &scene.route[0], &spec);
        assert!(cloud.points.iter().all(|p| p.beam_id == 2));
    }

    #[test]
    fn downward_beam_hits_ground_ring_of_known_radius() {
        let scene = Scene {
            seed: 0,
            params: SceneParams::default(),
            sensor_height: 1.8,
            primitives: vec![Primitive::Ground],
            route: vec![pose_on_circle(18.0, 1.2, 1.8)],
        };
        let spec = ScannerSpec {
            num_beams: 2,
            elevation_range_deg: (-30.67, 0.0),
            azimuth_steps: 64,
            ..Default::default()
        };
        let cloud = scan(&scene, &scene.route[0], &spec);
        let expected = 1.8 / (30.67f64.to_radians()).tan();
        let ring: Vec<_> = cloud.points.iter().filter(|p| p.beam_id == 2).collect();
        assert_eq!(ring.len(), 64);
        for p in ring {
            let horiz = (p.position.x.powi(2) + p.position.y.powi(2)).sqrt();
            assert!((horiz - expected).abs() < 1e-9, "ring radius {horiz}");
            assert!((p.position.z + 1.8).abs() < 1e-9);
        }
    }

    #[test]
    fn box_beyond_max_range_contributes_nothing() {
        let scene = Scene {
            seed: 0,
            params: SceneParams::default(),
            sensor_height: 1.8,
            primitives: vec![Primitive::upright_box(
                205.0,
                0.0,
                5.0,
                5.0,
                10.0,
                0.0,
                SemanticClass::Building,
            )],
            route: vec![Pose::from_parts(
                Translation3::new(0.0, 0.0, 1.8),
                UnitQuaternion::identity(),
            )],
        };
        let spec = ScannerSpec {
            num_beams: 4,
            azimuth_steps: 90,
            max_range: 80.0,
            ..Default::default()
        };
        assert!(scan(&scene, &scene.route[0], &spec).is_empty());
    }

    #[test]
    fn sensor_and_world_frames_agree() {
        let params = small_params();
        let scene = generate_scene(TEST_SEED, &params, 1.8).unwrap();
        let spec = ScannerSpec {
            num_beams: 6,
            azimuth_steps: 48,
            ..Default::default()
        };
        let pose = &scene.route[3];
        let cloud = scan(&scene, pose, &spec);
        let origin = Point3::from(pose.translation.vector);
        for p in &cloud.points {
            let world = pose * p.position;
            let range = p.position.coords.norm();
            let dir = (world - origin) / range;
            let (t, class) = scene.raycast(&origin, &dir, spec.max_range).unwrap();
            assert!((t - range).abs() < 1e-9);
            assert_eq!(class, p.class);
            assert!((origin + dir * t - world).norm() < 1e-9);
        }
    }

    #[test]
    fn subsample_identity_disjoint_and_partition() {
        let params = small_params();
        let scene = generate_scene(TEST_SEED, &params, 1.8).unwrap();
        let spec = ScannerSpec {
            num_beams: 6,
            azimuth_steps: 90,
            ..Default::default()
        };
        let cloud = scan(&scene, &scene.route[0], &spec);
        let all: Vec<u32> = (1..=6).collect();
        assert_eq!(subsample_ids(&cloud, &all).points, cloud.points);
        assert!(subsample_ids(&cloud, &[7, 8]).is_empty());
        let counts = cloud.per_beam_counts(6);
        let space = crate::space::SolutionSpace::new(6, 2, 1).unwrap();
        let cfg = BeamConfig::new(vec![2, 5], &space).unwrap();
        let sub = subsample_beams(&cloud, &cfg);
        assert_eq!(sub.len(), counts[1] + counts[4]);
        assert_eq!(sub.pose, cloud.pose);
    }

    #[test]
    fn map_has_no_dynamic_points() {
        let params = small_params();
        let scene = generate_scene(TEST_SEED, &params, 1.8).unwrap();
        let spec = ScannerSpec {
            num_beams: 8,
            azimuth_steps: 120,
            ..Default::default()
        };
        let map = build_map(&scene, &scene.route, &spec, 0.1);
        assert!(!map.is_empty());
        assert!(map.classes.iter().all(|&c| c != SemanticClass::Dynamic));
    }

    #[test]
    fn map_thinning_is_idempotent_for_repeated_poses() {
        let params = small_params();
        let scene = generate_scene(TEST_SEED, &params, 1.8).unwrap();
        let spec = ScannerSpec {
            num_beams: 6,
            azimuth_steps: 90,
            ..Default::default()
        };
        let pose = scene.route[0];
        let once = build_map(&scene, &[pose], &spec, 0.1);
        let twice = build_map(&scene, &[pose, pose], &spec, 0.1);
        assert_eq!(once, twice);
    }

    #[test]
    fn map_matches_independent_thinning() {
        let params = small_params();
        let scene = generate_scene(TEST_SEED, &params, 1.8).unwrap();
        let spec = ScannerSpec {
            num_beams: 6,
            azimuth_steps: 90,
            ..Default::default()
        };
        let poses = &scene.route[..3];
        let map = build_map(&scene, poses, &spec, 0.1);

        // from-scratch first-wins thinning over the same ordered input
        let mut seen = std::collections::BTreeSet::new();
        let mut expected = Vec::new();
        for pose in poses {
            let cloud = scan(&scene, pose, &spec);
            for p in &cloud.points {
                if p.class == SemanticClass::Dynamic {
                    continue;
                }
                let w = cloud.pose * p.position;
                let key = (
                    (w.x / 0.1).floor() as i64,
                    (w.y / 0.1).floor() as i64,
                    (w.z / 0.1).floor() as i64,
                );
                if seen.insert(key) {
                    expected.push(w);
                }
            }
        }
        assert_eq!(map.points, expected);
    }

    #[test]
    fn displace_dynamics_moves_only_dynamics() {
        let params = small_params();
        let scene = generate_scene(TEST_SEED, &params, 1.8).unwrap();
        let indices = scene.dynamic_indices();
        assert!(!indices.is_empty());
        let offsets: Vec<(f64, f64)> = indices.iter().map(|_| (0.5, -0.25)).collect();
        let moved = scene.displace_dynamics(&offsets);
        for (i, (a, b)) in scene.primitives.iter().zip(&moved.primitives).enumerate() {
            if indices.contains(&i) {
                assert_ne!(a, b);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn degenerate_params_rejected() {
        let bad = SceneParams {
            building_footprint: (5.0, 2.0),
            ..Default::default()
        };
        assert!(generate_scene(1, &bad, 1.8).is_err());
        let bad_scanner = ScannerSpec {
            elevation_range_deg: (10.0, -30.0),
            ..Default::default()
        };
        assert!(bad_scanner.validate().is_err());
        assert!(ScannerSpec { num_beams: 1, ..Default::default() }.validate().is_err());
        assert!(ScannerSpec { azimuth_steps: 4, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn beam_elevation_endpoints_and_order() {
        let spec = ScannerSpec::default();
        assert!((spec.beam_elevation_deg(1) - 10.67).abs() < 1e-12);
        assert!((spec.beam_elevation_deg(32) + 30.67).abs() < 1e-12);
        for id in 1..32 {
            assert!(spec.beam_elevation_deg(id) > spec.beam_elevation_deg(id + 1));
        }
    }
}
