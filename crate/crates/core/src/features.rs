//! Per-beam statistics and the feature vector consumed by the value
//! predictor.
//!
//! Each beam contributes nine values averaged over a fixed sample of scans:
//! mean point count, mean point count per semantic superclass (5 values),
//! mean horizontal distance, mean per-scan standard deviation of the
//! horizontal distance, and mean elevation angle. Consecutive beam pairs of
//! a configuration add one elevation-difference entry each, so a `k`-beam
//! configuration maps to `9k + (k - 1)` dimensions (39 at `k = 4`).

use crate::cloud::{LabeledPointCloud, SemanticClass};
use crate::space::BeamConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureError {
    NoScans,
    /// Every provided scan had zero points on this beam.
    EmptyBeam(u32),
    MissingBeam(u32),
    EmptyBatch,
    DimensionMismatch { expected: usize, got: usize },
}

impl fmt::Display for FeatureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureError::NoScans => write!(f, "no scans provided"),
            FeatureError::EmptyBeam(id) => {
                write!(f, "beam {id} has no points in any provided scan")
            }
            FeatureError::MissingBeam(id) => {
                write!(f, "stats table has no entry for beam {id}")
            }
            FeatureError::EmptyBatch => write!(f, "cannot normalize an empty batch"),
            FeatureError::DimensionMismatch { expected, got } => {
                write!(f, "feature dimension mismatch: expected {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for FeatureError {}

/// Elevation angle of one return: `asin(z / ||(x, y)||)` with the argument
/// clamped to `[-1, 1]` (steep points would otherwise leave asin's domain).
pub fn point_elevation(x: f64, y: f64, z: f64) -> f64 {
    let horizontal = (x * x + y * y).sqrt();
    if horizontal == 0.0 {
        return if z == 0.0 {
            0.0
        } else {
            std::f64::consts::FRAC_PI_2.copysign(z)
        };
    }
    (z / horizontal).clamp(-1.0, 1.0).asin()
}

/// The nine per-beam features, averaged over `num_scans` scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamStats {
    /// Mean point count over all scans (empty scans count as zero).
    pub mean_points: f64,
    /// Mean per-superclass point count, indexed by [`SemanticClass::index`].
    pub mean_class_points: [f64; 5],
    /// Mean horizontal distance, averaged over non-empty scans.
    pub mean_distance: f64,
    /// Mean per-scan standard deviation of the horizontal distance.
    pub mean_distance_std: f64,
    /// Mean elevation angle in radians.
    pub mean_elevation: f64,
    pub num_scans: u32,
}

impl BeamStats {
    /// The canonical 9-value layout used inside feature vectors.
    pub fn as_values(&self) -> [f64; 9] {
        [
            self.mean_points,
            self.mean_class_points[0],
            self.mean_class_points[1],
            self.mean_class_points[2],
            self.mean_class_points[3],
            self.mean_class_points[4],
            self.mean_distance,
            self.mean_distance_std,
            self.mean_elevation,
        ]
    }
}

/// Computes [`BeamStats`] for one beam from `scans`. Point counts average
/// over all scans; distance and elevation averages skip scans where the
/// beam is empty (they are undefined there). Errors if the beam is empty
/// in every scan.
pub fn beam_stats(scans: &[LabeledPointCloud], beam_id: u32) -> Result<BeamStats, FeatureError> {
    if scans.is_empty() {
        return Err(FeatureError::NoScans);
    }
    let num_scans = scans.len();
    let mut total_points = 0usize;
    let mut class_points = [0.0f64; 5];
    let mut dist_sum = 0.0;
    let mut dist_std_sum = 0.0;
    let mut elev_sum = 0.0;
    let mut populated_scans = 0usize;

    for scan in scans {
        let mut count = 0usize;
        let mut dists: Vec<f64> = Vec::new();
        let mut elev = 0.0;
        for p in scan.points.iter().filter(|p| p.beam_id == beam_id) {
            count += 1;
            class_points[p.class.index()] += 1.0;
            let d = (p.position.x * p.position.x + p.position.y * p.position.y).sqrt();
            dists.push(d);
            elev += point_elevation(p.position.x, p.position.y, p.position.z);
        }
        total_points += count;
        if count == 0 {
            continue;
        }
        populated_scans += 1;
        let n = count as f64;
        let mean_d = dists.iter().sum::<f64>() / n;
        let var = dists.iter().map(|d| (d - mean_d).powi(2)).sum::<f64>() / n;
        dist_sum += mean_d;
        dist_std_sum += var.sqrt();
        elev_sum += elev / n;
    }

    if populated_scans == 0 {
        return Err(FeatureError::EmptyBeam(beam_id));
    }
    let m = num_scans as f64;
    let pm = populated_scans as f64;
    Ok(BeamStats {
        mean_points: total_points as f64 / m,
        mean_class_points: class_points.map(|c| c / m),
        mean_distance: dist_sum / pm,
        mean_distance_std: dist_std_sum / pm,
        mean_elevation: elev_sum / pm,
        num_scans: num_scans as u32,
    })
}

/// Elevation difference between two beams' stats, upper minus lower, where
/// `lower` belongs to the smaller beam ID of the pair.
pub fn pairwise_elevation_diff(lower: &BeamStats, upper: &BeamStats) -> f64 {
    upper.mean_elevation - lower.mean_elevation
}

/// Per-beam stats for every candidate beam of a scanner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    per_beam: BTreeMap<u32, BeamStats>,
}

impl StatsTable {
    pub fn new() -> Self {
        StatsTable {
            per_beam: BTreeMap::new(),
        }
    }

    /// Builds one entry per beam `1..=num_beams` from a fixed scan sample.
    /// Fails with the first beam that has no returns in any scan.
    pub fn from_scans(scans: &[LabeledPointCloud], num_beams: u32) -> Result<Self, FeatureError> {
        let mut per_beam = BTreeMap::new();
        for beam_id in 1..=num_beams {
            per_beam.insert(beam_id, beam_stats(scans, beam_id)?);
        }
        Ok(StatsTable { per_beam })
    }

    pub fn insert(&mut self, beam_id: u32, stats: BeamStats) {
        self.per_beam.insert(beam_id, stats);
    }

    pub fn get(&self, beam_id: u32) -> Option<&BeamStats> {
        self.per_beam.get(&beam_id)
    }

    pub fn len(&self) -> usize {
        self.per_beam.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_beam.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &BeamStats)> {
        self.per_beam.iter().map(|(&id, s)| (id, s))
    }
}

impl Default for StatsTable {
    fn default() -> Self {
        Self::new()
    }
}

/// A real-valued descriptor of a beam configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Dimension of the full feature vector for a `k`-beam configuration.
pub fn feature_len(config_len: usize) -> usize {
    9 * config_len + config_len.saturating_sub(1)
}

/// Human-readable name of each feature index, mirroring the layout built by
/// [`feature_vector`].
pub fn feature_labels(config_len: usize) -> Vec<String> {
    let mut labels = Vec::with_capacity(feature_len(config_len));
    for slot in 1..=config_len {
        labels.push(format!("b{slot}_points"));
        for class in SemanticClass::ALL {
            labels.push(format!("b{slot}_points_{}", class.label()));
        }
        labels.push(format!("b{slot}_distance"));
        labels.push(format!("b{slot}_distance_std"));
        labels.push(format!("b{slot}_elevation"));
    }
    for slot in 1..config_len {
        labels.push(format!("pair{slot}{}_elevation_diff", slot + 1));
    }
    labels
}

/// Assembles the full feature vector of `config`: the 9-value block of each
/// selected beam in ascending ID order, followed by the consecutive-pair
/// elevation differences.
pub fn feature_vector(
    config: &BeamConfig,
    table: &StatsTable,
) -> Result<FeatureVector, FeatureError> {
    let mut values = Vec::with_capacity(feature_len(config.len()));
    let mut stats = Vec::with_capacity(config.len());
    for &id in config.ids() {
        let s = table.get(id).ok_or(FeatureError::MissingBeam(id))?;
        stats.push(s);
        values.extend_from_slice(&s.as_values());
    }
    for pair in stats.windows(2) {
        values.push(pairwise_elevation_diff(pair[0], pair[1]));
    }
    Ok(FeatureVector { values })
}

/// Ablation baseline: the raw beam IDs as a length-`k` vector.
pub fn beam_id_encoding(config: &BeamConfig) -> FeatureVector {
    FeatureVector {
        values: config.ids().iter().map(|&id| id as f64).collect(),
    }
}

/// Per-dimension z-score parameters, retained so query vectors can be
/// transformed exactly like the batch they were fit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const DEGENERATE_STD: f64 = 1e-12;

impl NormStats {
    pub fn apply(&self, v: &FeatureVector) -> FeatureVector {
        debug_assert_eq!(v.dim(), self.mean.len());
        let values = v
            .values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| if s < DEGENERATE_STD { 0.0 } else { (x - m) / s })
            .collect();
        FeatureVector { values }
    }
}

/// Z-scores a batch per dimension; dimensions with (population) standard
/// deviation below `1e-12` map to zero.
pub fn normalize(batch: &[FeatureVector]) -> Result<(Vec<FeatureVector>, NormStats), FeatureError> {
    let first = batch.first().ok_or(FeatureError::EmptyBatch)?;
    let dim = first.dim();
    for v in batch {
        if v.dim() != dim {
            return Err(FeatureError::DimensionMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
    }
    let n = batch.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in batch {
        for (m, &x) in mean.iter_mut().zip(&v.values) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut std = vec![0.0; dim];
    for v in batch {
        for ((s, &m), &x) in std.iter_mut().zip(&mean).zip(&v.values) {
            *s += (x - m) * (x - m);
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt();
    }
    let stats = NormStats { mean, std };
    let normalized = batch.iter().map(|v| stats.apply(v)).collect();
    Ok((normalized, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{LabeledPoint, Pose};
    use nalgebra::Point3;
    use proptest::prelude::*;

    fn cloud(points: Vec<(f64, f64, f64, SemanticClass, u32)>) -> LabeledPointCloud {
        LabeledPointCloud {
            points: points
                .into_iter()
                .map(|(x, y, z, class, beam_id)| LabeledPoint {
                    position: Point3::new(x, y, z),
                    class,
                    beam_id,
                })
                .collect(),
            pose: Pose::identity(),
        }
    }

    #[test]
    fn single_point_stats() {
        let scans = vec![cloud(vec![(1.0, 0.0, 0.0, SemanticClass::Road, 1)])];
        let s = beam_stats(&scans, 1).unwrap();
        assert_eq!(s.mean_points, 1.0);
        assert_eq!(s.mean_class_points, [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.mean_distance, 1.0);
        assert_eq!(s.mean_distance_std, 0.0);
        assert_eq!(s.mean_elevation, 0.0);
    }

    #[test]
    fn steep_point_elevation_is_half_pi() {
        let sqrt2 = 2.0f64.sqrt();
        let scans = vec![cloud(vec![(1.0, 1.0, sqrt2, SemanticClass::Building, 3)])];
        let s = beam_stats(&scans, 3).unwrap();
        assert!((s.mean_elevation - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn elevation_clamps_beyond_domain() {
        assert_eq!(point_elevation(0.1, 0.0, 5.0), std::f64::consts::FRAC_PI_2);
        assert_eq!(point_elevation(0.1, 0.0, -5.0), -std::f64::consts::FRAC_PI_2);
        assert_eq!(point_elevation(0.0, 0.0, 2.0), std::f64::consts::FRAC_PI_2);
        assert_eq!(point_elevation(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn identical_scans_average_to_single_scan() {
        let one = cloud(vec![
            (3.0, 4.0, 1.0, SemanticClass::Building, 2),
            (0.0, 2.0, -0.5, SemanticClass::Road, 2),
        ]);
        let single = beam_stats(&[one.clone()], 2).unwrap();
        let double = beam_stats(&[one.clone(), one], 2).unwrap();
        assert_eq!(single.mean_points, double.mean_points);
        assert_eq!(single.mean_class_points, double.mean_class_points);
        assert_eq!(single.mean_distance, double.mean_distance);
        assert_eq!(single.mean_distance_std, double.mean_distance_std);
        assert_eq!(single.mean_elevation, double.mean_elevation);
    }

    #[test]
    fn empty_scans_skipped_in_distance_averages() {
        let populated = cloud(vec![(2.0, 0.0, 0.0, SemanticClass::Road, 1)]);
        let empty = cloud(vec![]);
        let s = beam_stats(&[populated, empty], 1).unwrap();
        assert_eq!(s.mean_points, 0.5); // counts average over both scans
        assert_eq!(s.mean_distance, 2.0); // distances only over the populated one
    }

    #[test]
    fn all_empty_beam_errors() {
        let scans = vec![cloud(vec![(1.0, 0.0, 0.0, SemanticClass::Road, 1)])];
        assert_eq!(beam_stats(&scans, 9), Err(FeatureError::EmptyBeam(9)));
        assert_eq!(beam_stats(&[], 1), Err(FeatureError::NoScans));
    }

    #[test]
    fn pairwise_diff_is_antisymmetric() {
        let mut a = beam_stats(
            &[cloud(vec![(1.0, 0.0, 0.1, SemanticClass::Road, 1)])],
            1,
        )
        .unwrap();
        let mut b = a;
        a.mean_elevation = 0.1;
        b.mean_elevation = 0.3;
        assert!((pairwise_elevation_diff(&a, &b) - 0.2).abs() < 1e-15);
        assert!((pairwise_elevation_diff(&b, &a) + 0.2).abs() < 1e-15);
        assert_eq!(pairwise_elevation_diff(&a, &a), 0.0);
    }

    fn table_for(ids: &[u32]) -> StatsTable {
        let mut table = StatsTable::new();
        for &id in ids {
            table.insert(
                id,
                BeamStats {
                    mean_points: id as f64 * 10.0,
                    mean_class_points: [id as f64, 0.0, 1.0, 2.0, 3.0],
                    mean_distance: 5.0 + id as f64,
                    mean_distance_std: 0.5,
                    mean_elevation: -0.01 * id as f64,
                    num_scans: 3,
                },
            );
        }
        table
    }

    #[test]
    fn feature_vector_lengths() {
        for (k_total, k, expected) in [(40u32, 4u32, 39usize), (12, 3, 29), (3, 1, 9)] {
            let space = crate::space::SolutionSpace::new(k_total, k, 1).unwrap();
            let ids: Vec<u32> = (1..=k).collect();
            let config = BeamConfig::new(ids.clone(), &space).unwrap();
            let table = table_for(&ids);
            let f = feature_vector(&config, &table).unwrap();
            assert_eq!(f.dim(), expected);
            assert_eq!(feature_len(k as usize), expected);
            assert_eq!(feature_labels(k as usize).len(), expected);
        }
    }

    #[test]
    fn feature_vector_layout_and_determinism() {
        let space = crate::space::SolutionSpace::new(12, 3, 1).unwrap();
        let config = BeamConfig::new(vec![2, 5, 9], &space).unwrap();
        let table = table_for(&[2, 5, 9]);
        let f = feature_vector(&config, &table).unwrap();
        assert_eq!(f.values[0], 20.0); // beam 2 mean_points
        assert_eq!(f.values[9], 50.0); // beam 5 mean_points
        assert_eq!(f.values[8], -0.02); // beam 2 elevation
        // pairwise entries: (5 - 2), then (9 - 5)
        assert!((f.values[27] - (-0.05 + 0.02)).abs() < 1e-15);
        assert!((f.values[28] - (-0.09 + 0.05)).abs() < 1e-15);
        let again = feature_vector(&config, &table).unwrap();
        assert_eq!(f, again);
    }

    #[test]
    fn missing_stats_entry_errors() {
        let space = crate::space::SolutionSpace::new(12, 3, 1).unwrap();
        let config = BeamConfig::new(vec![2, 5, 9], &space).unwrap();
        let table = table_for(&[2, 5]);
        assert_eq!(
            feature_vector(&config, &table),
            Err(FeatureError::MissingBeam(9))
        );
    }

    #[test]
    fn beam_id_encoding_is_raw_ids() {
        let space = crate::space::SolutionSpace::new(40, 4, 2).unwrap();
        let a = BeamConfig::new(vec![7, 8, 9, 10], &space).unwrap();
        assert_eq!(beam_id_encoding(&a).values, vec![7.0, 8.0, 9.0, 10.0]);
        let b = BeamConfig::new(vec![7, 8, 9, 11], &space).unwrap();
        assert_ne!(beam_id_encoding(&a), beam_id_encoding(&b));
    }

    #[test]
    fn normalize_identical_vectors_to_zero() {
        let batch = vec![
            FeatureVector { values: vec![3.0, -1.0] },
            FeatureVector { values: vec![3.0, -1.0] },
        ];
        let (normed, _) = normalize(&batch).unwrap();
        for v in normed {
            assert_eq!(v.values, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn normalize_produces_zero_mean_unit_std() {
        let mut rng = crate::rng::Rng::new(17);
        let batch: Vec<FeatureVector> = (0..40)
            .map(|_| FeatureVector {
                values: (0..6).map(|d| rng.uniform() * (d as f64 + 1.0) * 10.0).collect(),
            })
            .collect();
        let (normed, stats) = normalize(&batch).unwrap();
        for d in 0..6 {
            let mean = normed.iter().map(|v| v.values[d]).sum::<f64>() / 40.0;
            let var = normed.iter().map(|v| v.values[d].powi(2)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-9, "dim {d} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "dim {d} std {}", var.sqrt());
        }
        // applying the stored stats reproduces the normalized rows
        for (raw, normed) in batch.iter().zip(&normed) {
            assert_eq!(&stats.apply(raw), normed);
        }
    }

    #[test]
    fn normalize_rejects_empty_and_mixed_dims() {
        assert_eq!(normalize(&[]), Err(FeatureError::EmptyBatch));
        let batch = vec![
            FeatureVector { values: vec![1.0] },
            FeatureVector { values: vec![1.0, 2.0] },
        ];
        assert!(matches!(
            normalize(&batch),
            Err(FeatureError::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Sum of per-class counts equals the total count.
        #[test]
        fn class_counts_partition_total(seed in 0u64..1000) {
            let mut rng = crate::rng::Rng::new(seed);
            let scans: Vec<LabeledPointCloud> = (0..3)
                .map(|_| {
                    let n = rng.index(30);
                    cloud(
                        (0..n)
                            .map(|_| {
                                (
                                    rng.uniform() * 10.0 + 0.1,
                                    rng.uniform() * 10.0,
                                    rng.uniform() * 4.0 - 2.0,
                                    SemanticClass::ALL[rng.index(5)],
                                    rng.index(4) as u32 + 1,
                                )
                            })
                            .collect(),
                    )
                })
                .collect();
            for beam_id in 1..=4u32 {
                if let Ok(s) = beam_stats(&scans, beam_id) {
                    let class_sum: f64 = s.mean_class_points.iter().sum();
                    prop_assert!((class_sum - s.mean_points).abs() < 1e-9 * s.mean_points.max(1.0));
                }
            }
        }
    }
}
