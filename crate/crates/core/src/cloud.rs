//! Labeled point clouds and the semantic superclasses attached to every
//! simulated point.

use nalgebra::{Isometry3, Point3};
use serde::{Deserialize, Serialize};

/// Rigid sensor pose (world from sensor).
pub type Pose = Isometry3<f64>;

/// Coarse semantic label carried by every point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SemanticClass {
    Road,
    Building,
    Vegetation,
    Dynamic,
    Other,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; 5] = [
        SemanticClass::Road,
        SemanticClass::Building,
        SemanticClass::Vegetation,
        SemanticClass::Dynamic,
        SemanticClass::Other,
    ];

    pub fn index(self) -> usize {
        match self {
            SemanticClass::Road => 0,
            SemanticClass::Building => 1,
            SemanticClass::Vegetation => 2,
            SemanticClass::Dynamic => 3,
            SemanticClass::Other => 4,
        }
    }

    pub fn from_index(index: usize) -> Option<SemanticClass> {
        Self::ALL.get(index).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            SemanticClass::Road => "road",
            SemanticClass::Building => "building",
            SemanticClass::Vegetation => "vegetation",
            SemanticClass::Dynamic => "dynamic",
            SemanticClass::Other => "other",
        }
    }
}

/// One LiDAR return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: Point3<f64>,
    pub class: SemanticClass,
    /// 1-indexed elevation beam that produced the return.
    pub beam_id: u32,
}

/// A single scan: sensor-frame points plus the sensor pose in the world.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointCloud {
    pub points: Vec<LabeledPoint>,
    pub pose: Pose,
}

impl LabeledPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point positions transformed into the world frame.
    pub fn world_points(&self) -> impl Iterator<Item = Point3<f64>> + '_ {
        self.points.iter().map(move |p| self.pose * p.position)
    }

    /// Number of points per beam id (index 0 = beam 1).
    pub fn per_beam_counts(&self, num_beams: u32) -> Vec<usize> {
        let mut counts = vec![0usize; num_beams as usize];
        for p in &self.points {
            if p.beam_id >= 1 && p.beam_id <= num_beams {
                counts[(p.beam_id - 1) as usize] += 1;
            }
        }
        counts
    }
}
