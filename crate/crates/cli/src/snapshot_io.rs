//! Versioned binary persistence for environment snapshots.
//!
//! Little-endian, content-addressed: the writer stores the snapshot's
//! content hash and the reader recomputes it from the loaded data, so
//! corruption or format drift is caught on load. The kd-tree and other
//! derived indexes are rebuilt deterministically instead of serialized.

use crate::error::CliError;
use beamopt::cloud::{LabeledPoint, LabeledPointCloud, Pose, SemanticClass};
use beamopt::features::{BeamStats, StatsTable};
use beamopt::icp::{IcpParams, MapIndex};
use beamopt::locenv::{EnvSnapshot, EvalCase, NoiseSpec, RewardSpec, SnapshotParams};
use beamopt::sim::{MapCloud, Primitive, Scene, SceneParams, ScannerSpec};
use beamopt::space::SolutionSpace;
use beamopt::nalgebra::{Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"BOSNAP01";

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Other(format!("snapshot {context}: {e}"))
}

fn corrupt(message: impl Into<String>) -> CliError {
    CliError::Other(format!("snapshot corrupt: {}", message.into()))
}

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.out.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn pose(&mut self, pose: &Pose) -> std::io::Result<()> {
        self.f64(pose.translation.x)?;
        self.f64(pose.translation.y)?;
        self.f64(pose.translation.z)?;
        let q = pose.rotation.quaternion();
        self.f64(q.w)?;
        self.f64(q.i)?;
        self.f64(q.j)?;
        self.f64(q.k)
    }
    fn str(&mut self, s: &str) -> std::io::Result<()> {
        self.u64(s.len() as u64)?;
        self.out.write_all(s.as_bytes())
    }
}

struct Reader<R: Read> {
    input: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> std::io::Result<u8> {
        let mut b = [0u8; 1];
        self.input.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        self.input.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        self.input.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        self.input.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn pose(&mut self) -> std::io::Result<Pose> {
        let t = Translation3::new(self.f64()?, self.f64()?, self.f64()?);
        let (w, i, j, k) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        // bit-exact restore: the stored quaternion is already unit length
        let q = UnitQuaternion::new_unchecked(Quaternion::new(w, i, j, k));
        Ok(Pose::from_parts(t, q))
    }
    fn str(&mut self) -> std::io::Result<String> {
        let len = self.u64()? as usize;
        let mut buf = vec![0u8; len];
        self.input.read_exact(&mut buf)?;
        Ok(String::from_utf8_lossy(&buf).into_owned())
    }
}

pub fn write_snapshot(path: &Path, snapshot: &EnvSnapshot) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| io_err("create", e))?;
    let mut w = Writer {
        out: BufWriter::new(file),
    };
    (|| -> std::io::Result<()> {
        w.out.write_all(MAGIC)?;
        let p = &snapshot.params;
        w.u32(p.space.num_beams())?;
        w.u32(p.space.config_len())?;
        w.u32(p.space.max_step())?;
        w.u32(p.scanner.num_beams)?;
        w.f64(p.scanner.elevation_range_deg.0)?;
        w.f64(p.scanner.elevation_range_deg.1)?;
        w.u32(p.scanner.azimuth_steps)?;
        w.f64(p.scanner.max_range)?;
        w.f64(p.scanner.sensor_height)?;
        let s = &p.scene;
        w.f64(s.route_radius)?;
        w.u64(s.num_route_poses as u64)?;
        w.u64(s.num_buildings as u64)?;
        w.f64(s.building_footprint.0)?;
        w.f64(s.building_footprint.1)?;
        w.f64(s.building_height.0)?;
        w.f64(s.building_height.1)?;
        w.u64(s.num_vegetation as u64)?;
        w.f64(s.vegetation_radius.0)?;
        w.f64(s.vegetation_radius.1)?;
        w.u64(s.num_dynamic as u64)?;
        w.u64(s.num_poles as u64)?;
        w.f64(s.pole_height.0)?;
        w.f64(s.pole_height.1)?;
        w.f64(s.dynamic_jitter_std)?;
        w.f64(s.corridor_clearance)?;
        let icp = &p.icp;
        w.u32(icp.max_iterations)?;
        w.f64(icp.translation_tolerance)?;
        w.f64(icp.rotation_tolerance)?;
        w.f64(icp.max_correspondence_dist)?;
        w.f64(icp.coarse_gate)?;
        w.u64(icp.normal_neighbors as u64)?;
        w.f64(icp.trim_fraction)?;
        for (t, r) in &p.reward.thresholds {
            w.f64(*t)?;
            w.f64(*r)?;
        }
        for weight in &p.reward.weights {
            w.f64(*weight)?;
        }
        w.f64(p.noise.translation_std)?;
        w.f64(p.noise.yaw_std_deg)?;
        w.u64(p.num_eval_poses as u64)?;
        w.u64(p.num_stats_scans as u64)?;
        w.f64(p.map_voxel)?;
        w.u64(p.seed)?;

        // scene
        w.u64(snapshot.scene.seed)?;
        w.f64(snapshot.scene.sensor_height)?;
        w.u64(snapshot.scene.primitives.len() as u64)?;
        for prim in &snapshot.scene.primitives {
            match prim {
                Primitive::Ground => w.u8(0)?,
                Primitive::Box {
                    center,
                    half_extents,
                    yaw,
                    class,
                } => {
                    w.u8(1)?;
                    w.f64(center.x)?;
                    w.f64(center.y)?;
                    w.f64(center.z)?;
                    w.f64(half_extents.x)?;
                    w.f64(half_extents.y)?;
                    w.f64(half_extents.z)?;
                    w.f64(*yaw)?;
                    w.u8(class.index() as u8)?;
                }
                Primitive::Sphere { center, radius, class } => {
                    w.u8(2)?;
                    w.f64(center.x)?;
                    w.f64(center.y)?;
                    w.f64(center.z)?;
                    w.f64(*radius)?;
                    w.u8(class.index() as u8)?;
                }
            }
        }
        w.u64(snapshot.scene.route.len() as u64)?;
        for pose in &snapshot.scene.route {
            w.pose(pose)?;
        }

        // map with normals
        w.u64(snapshot.map.cloud.len() as u64)?;
        for ((point, class), (normal, valid)) in snapshot
            .map
            .cloud
            .points
            .iter()
            .zip(&snapshot.map.cloud.classes)
            .zip(snapshot.map.normals.iter().zip(&snapshot.map.normal_valid))
        {
            w.f64(point.x)?;
            w.f64(point.y)?;
            w.f64(point.z)?;
            w.u8(class.index() as u8)?;
            w.f64(normal.x)?;
            w.f64(normal.y)?;
            w.f64(normal.z)?;
            w.u8(*valid as u8)?;
        }

        // evaluation cases
        w.u64(snapshot.cases.len() as u64)?;
        for case in &snapshot.cases {
            w.pose(&case.gt_pose)?;
            w.pose(&case.init_pose)?;
            w.pose(&case.scan.pose)?;
            w.u64(case.scan.points.len() as u64)?;
            for p in &case.scan.points {
                w.f64(p.position.x)?;
                w.f64(p.position.y)?;
                w.f64(p.position.z)?;
                w.u8(p.class.index() as u8)?;
                w.u32(p.beam_id)?;
            }
        }

        // stats table
        w.u64(snapshot.stats.len() as u64)?;
        for (beam_id, stats) in snapshot.stats.iter() {
            w.u32(beam_id)?;
            for v in stats.as_values() {
                w.f64(v)?;
            }
            w.u32(stats.num_scans)?;
        }

        w.str(snapshot.content_hash())?;
        w.out.flush()
    })()
    .map_err(|e| io_err("write", e))
}

fn class_from(b: u8) -> Result<SemanticClass, CliError> {
    SemanticClass::from_index(b as usize).ok_or_else(|| corrupt(format!("class byte {b}")))
}

pub fn read_snapshot(path: &Path) -> Result<EnvSnapshot, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Config(format!("cannot open snapshot {}: {e}", path.display())))?;
    let mut r = Reader {
        input: BufReader::new(file),
    };
    let mut magic = [0u8; 8];
    r.input
        .read_exact(&mut magic)
        .map_err(|e| io_err("read magic", e))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic; not a snapshot file or wrong version"));
    }
    (|| -> std::io::Result<Result<EnvSnapshot, CliError>> {
        let space = match SolutionSpace::new(r.u32()?, r.u32()?, r.u32()?) {
            Ok(s) => s,
            Err(e) => return Ok(Err(corrupt(e.to_string()))),
        };
        let scanner = ScannerSpec {
            num_beams: r.u32()?,
            elevation_range_deg: (r.f64()?, r.f64()?),
            azimuth_steps: r.u32()?,
            max_range: r.f64()?,
            sensor_height: r.f64()?,
        };
        let scene_params = SceneParams {
            route_radius: r.f64()?,
            num_route_poses: r.u64()? as usize,
            num_buildings: r.u64()? as usize,
            building_footprint: (r.f64()?, r.f64()?),
            building_height: (r.f64()?, r.f64()?),
            num_vegetation: r.u64()? as usize,
            vegetation_radius: (r.f64()?, r.f64()?),
            num_dynamic: r.u64()? as usize,
            num_poles: r.u64()? as usize,
            pole_height: (r.f64()?, r.f64()?),
            dynamic_jitter_std: r.f64()?,
            corridor_clearance: r.f64()?,
        };
        let icp = IcpParams {
            max_iterations: r.u32()?,
            translation_tolerance: r.f64()?,
            rotation_tolerance: r.f64()?,
            max_correspondence_dist: r.f64()?,
            coarse_gate: r.f64()?,
            normal_neighbors: r.u64()? as usize,
            trim_fraction: r.f64()?,
        };
        let thresholds = [
            (r.f64()?, r.f64()?),
            (r.f64()?, r.f64()?),
            (r.f64()?, r.f64()?),
        ];
        let weights = [r.f64()?, r.f64()?, r.f64()?];
        let noise = NoiseSpec {
            translation_std: r.f64()?,
            yaw_std_deg: r.f64()?,
        };
        let params = SnapshotParams {
            space,
            scanner,
            scene: scene_params,
            icp,
            reward: RewardSpec {
                thresholds,
                weights,
            },
            noise,
            num_eval_poses: r.u64()? as usize,
            num_stats_scans: r.u64()? as usize,
            map_voxel: r.f64()?,
            seed: r.u64()?,
        };

        let scene_seed = r.u64()?;
        let sensor_height = r.f64()?;
        let n_prims = r.u64()? as usize;
        let mut primitives = Vec::with_capacity(n_prims);
        for _ in 0..n_prims {
            let prim = match r.u8()? {
                0 => Primitive::Ground,
                1 => {
                    let center = Point3::new(r.f64()?, r.f64()?, r.f64()?);
                    let half_extents = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
                    let yaw = r.f64()?;
                    let class = match class_from(r.u8()?) {
                        Ok(c) => c,
                        Err(e) => return Ok(Err(e)),
                    };
                    Primitive::Box {
                        center,
                        half_extents,
                        yaw,
                        class,
                    }
                }
                2 => {
                    let center = Point3::new(r.f64()?, r.f64()?, r.f64()?);
                    let radius = r.f64()?;
                    let class = match class_from(r.u8()?) {
                        Ok(c) => c,
                        Err(e) => return Ok(Err(e)),
                    };
                    Primitive::Sphere {
                        center,
                        radius,
                        class,
                    }
                }
                other => return Ok(Err(corrupt(format!("primitive tag {other}")))),
            };
            primitives.push(prim);
        }
        let n_route = r.u64()? as usize;
        let mut route = Vec::with_capacity(n_route);
        for _ in 0..n_route {
            route.push(r.pose()?);
        }
        let scene = Scene {
            seed: scene_seed,
            params: scene_params,
            sensor_height,
            primitives,
            route,
        };

        let n_map = r.u64()? as usize;
        let mut points = Vec::with_capacity(n_map);
        let mut classes = Vec::with_capacity(n_map);
        let mut normals = Vec::with_capacity(n_map);
        let mut normal_valid = Vec::with_capacity(n_map);
        for _ in 0..n_map {
            points.push(Point3::new(r.f64()?, r.f64()?, r.f64()?));
            classes.push(match class_from(r.u8()?) {
                Ok(c) => c,
                Err(e) => return Ok(Err(e)),
            });
            normals.push(Vector3::new(r.f64()?, r.f64()?, r.f64()?));
            normal_valid.push(r.u8()? != 0);
        }
        let map = MapIndex::from_parts(MapCloud { points, classes }, normals, normal_valid);

        let n_cases = r.u64()? as usize;
        let mut cases = Vec::with_capacity(n_cases);
        for _ in 0..n_cases {
            let gt_pose = r.pose()?;
            let init_pose = r.pose()?;
            let scan_pose = r.pose()?;
            let n_points = r.u64()? as usize;
            let mut scan_points = Vec::with_capacity(n_points);
            for _ in 0..n_points {
                let position = Point3::new(r.f64()?, r.f64()?, r.f64()?);
                let class = match class_from(r.u8()?) {
                    Ok(c) => c,
                    Err(e) => return Ok(Err(e)),
                };
                let beam_id = r.u32()?;
                scan_points.push(LabeledPoint {
                    position,
                    class,
                    beam_id,
                });
            }
            cases.push(EvalCase {
                gt_pose,
                init_pose,
                scan: LabeledPointCloud {
                    points: scan_points,
                    pose: scan_pose,
                },
            });
        }

        let n_stats = r.u64()? as usize;
        let mut stats = StatsTable::new();
        for _ in 0..n_stats {
            let beam_id = r.u32()?;
            let values = [
                r.f64()?,
                r.f64()?,
                r.f64()?,
                r.f64()?,
                r.f64()?,
                r.f64()?,
                r.f64()?,
                r.f64()?,
                r.f64()?,
            ];
            let num_scans = r.u32()?;
            stats.insert(
                beam_id,
                BeamStats {
                    mean_points: values[0],
                    mean_class_points: [values[1], values[2], values[3], values[4], values[5]],
                    mean_distance: values[6],
                    mean_distance_std: values[7],
                    mean_elevation: values[8],
                    num_scans,
                },
            );
        }

        let stored_hash = r.str()?;
        let snapshot = EnvSnapshot::from_parts(params, scene, map, cases, stats);
        if snapshot.content_hash() != stored_hash {
            return Ok(Err(corrupt(format!(
                "content hash mismatch: stored {stored_hash}, recomputed {}",
                snapshot.content_hash()
            ))));
        }
        Ok(Ok(snapshot))
    })()
    .map_err(|e| io_err("read", e))?
}
