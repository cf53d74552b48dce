//! Synthetic ground-truth worlds, trajectories, noisy odometry and object
//! detections — the geometric stand-in for a learned detection front-end.
//!
//! Everything here is driven by a counter-based ChaCha8 generator so that a
//! scenario seed reproduces worlds, trajectories and detection streams
//! bit-for-bit across platforms. Independent subsystems draw from separate
//! streams of the same seed (see [`stream_rng`]).

mod hungarian;
mod sensor;
mod tracking;
mod trajectory;

pub use hungarian::{hungarian_assign, Assignment};
pub use sensor::{simulate_detections, Detection, SensorModel};
pub use tracking::{reject_elongated, ConfirmedObservation, Track, Tracker, TrackingConfig};
pub use trajectory::{generate_trajectory, OdomNoise, Trajectory};

use crate::geometry::{CuboidModel, CylinderModel, EllipsoidModel, ShapeKind, ShapeModel};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("could not place landmark of class '{label}' after {attempts} attempts at spacing {spacing} m")]
    PlacementFailure {
        label: String,
        attempts: usize,
        spacing: f64,
    },
    #[error("total path length {length:.3} m is shorter than key-pose spacing {spacing} m")]
    DegenerateTrajectory { length: f64, spacing: f64 },
}

/// RNG stream ids, one per independent consumer of the scenario seed.
pub mod streams {
    pub const WORLD: u64 = 1;
    /// Per-robot streams are offset by the robot id.
    pub const TRAJECTORY: u64 = 100;
    pub const DETECTIONS: u64 = 200;
}

/// ChaCha8 generator on a dedicated stream of a scenario seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One ground-truth or estimated object landmark, the unit of map exchange.
/// Serializes as `{id, class, shape_kind, params}` with the canonical state
/// vector layout of [`ShapeModel::params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LandmarkWire", try_from = "LandmarkWire")]
pub struct LandmarkRecord {
    pub id: u64,
    pub class_label: String,
    pub shape: ShapeModel,
}

impl LandmarkRecord {
    pub fn centroid(&self) -> Vector3<f64> {
        self.shape.centroid()
    }
}

#[derive(Serialize, Deserialize)]
struct LandmarkWire {
    id: u64,
    class: String,
    shape_kind: ShapeKind,
    params: Vec<f64>,
}

impl From<LandmarkRecord> for LandmarkWire {
    fn from(r: LandmarkRecord) -> Self {
        LandmarkWire {
            id: r.id,
            class: r.class_label,
            shape_kind: r.shape.kind(),
            params: r.shape.params(),
        }
    }
}

impl TryFrom<LandmarkWire> for LandmarkRecord {
    type Error = crate::geometry::GeometryError;
    fn try_from(w: LandmarkWire) -> Result<Self, Self::Error> {
        Ok(LandmarkRecord {
            id: w.id,
            class_label: w.class,
            shape: ShapeModel::from_params(w.shape_kind, &w.params)?,
        })
    }
}

/// Axis-aligned horizontal region landmarks are placed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn extent(&self) -> Vector2<f64> {
        Vector2::new(self.max[0] - self.min[0], self.max[1] - self.min[1])
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        p.x >= self.min[0] && p.x <= self.max[0] && p.y >= self.min[1] && p.y <= self.max[1]
    }
}

/// How many landmarks of one semantic class to scatter, and with what
/// parameter ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: String,
    pub shape: ShapeKind,
    pub count: usize,
    /// Sampled uniformly per dimension; cuboids use all three entries,
    /// cylinders use [0] as the radius range, ellipsoids [0] as radius and
    /// [1] as height.
    #[serde(default = "default_size_min")]
    pub size_min: [f64; 3],
    #[serde(default = "default_size_max")]
    pub size_max: [f64; 3],
}

fn default_size_min() -> [f64; 3] {
    [0.2, 0.2, 0.2]
}

fn default_size_max() -> [f64; 3] {
    [0.6, 0.6, 0.6]
}

/// Request for a synthetic world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldSpec {
    pub bounds: Bounds,
    pub classes: Vec<ClassSpec>,
    /// Minimum pairwise centroid spacing in meters.
    #[serde(default)]
    pub min_spacing: f64,
}

/// A static ground-truth world: landmarks in the world frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct World {
    pub landmarks: Vec<LandmarkRecord>,
    pub bounds: Bounds,
    pub seed: u64,
}

const PLACEMENT_ATTEMPTS: usize = 1000;

/// Scatter landmarks uniformly inside the bounds, rejection-sampling until
/// the pairwise spacing constraint holds. Deterministic for a fixed seed.
pub fn generate_world(spec: &WorldSpec, seed: u64) -> Result<World, WorldError> {
    let mut rng = stream_rng(seed, streams::WORLD);
    let mut landmarks: Vec<LandmarkRecord> = Vec::new();
    let mut next_id = 0u64;
    for class in &spec.classes {
        for _ in 0..class.count {
            let mut placed = false;
            for _attempt in 0..PLACEMENT_ATTEMPTS {
                let x = rng.gen_range(spec.bounds.min[0]..=spec.bounds.max[0]);
                let y = rng.gen_range(spec.bounds.min[1]..=spec.bounds.max[1]);
                let ok = landmarks.iter().all(|l| {
                    let c = l.centroid();
                    let dx = c.x - x;
                    let dy = c.y - y;
                    (dx * dx + dy * dy).sqrt() >= spec.min_spacing
                });
                if !ok {
                    continue;
                }
                let size = |i: usize, rng: &mut ChaCha8Rng| -> f64 {
                    if class.size_max[i] > class.size_min[i] {
                        rng.gen_range(class.size_min[i]..class.size_max[i])
                    } else {
                        class.size_min[i]
                    }
                };
                let shape = match class.shape {
                    ShapeKind::Cuboid => {
                        let d =
                            Vector3::new(size(0, &mut rng), size(1, &mut rng), size(2, &mut rng));
                        let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                        ShapeModel::Cuboid(
                            CuboidModel::new(
                                Vector3::new(0.0, 0.0, yaw),
                                Vector3::new(x, y, d.z * 0.5),
                                d,
                            )
                            .expect("sampled dims positive"),
                        )
                    }
                    ShapeKind::Cylinder => {
                        let radius = size(0, &mut rng);
                        ShapeModel::Cylinder(
                            CylinderModel::new(Vector3::new(x, y, 0.0), Vector3::z(), radius)
                                .expect("sampled radius positive"),
                        )
                    }
                    ShapeKind::Ellipsoid => {
                        let d_e = Vector2::new(size(0, &mut rng), size(1, &mut rng));
                        ShapeModel::Ellipsoid(
                            EllipsoidModel::new(Vector3::new(x, y, d_e.y * 0.5), d_e)
                                .expect("sampled dims positive"),
                        )
                    }
                };
                landmarks.push(LandmarkRecord {
                    id: next_id,
                    class_label: class.label.clone(),
                    shape,
                });
                next_id += 1;
                placed = true;
                break;
            }
            if !placed {
                return Err(WorldError::PlacementFailure {
                    label: class.label.clone(),
                    attempts: PLACEMENT_ATTEMPTS,
                    spacing: spec.min_spacing,
                });
            }
        }
    }
    Ok(World {
        landmarks,
        bounds: spec.bounds,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cylinder_spec(count: usize, spacing: f64, side: f64) -> WorldSpec {
        WorldSpec {
            bounds: Bounds {
                min: [0.0, 0.0],
                max: [side, side],
            },
            classes: vec![ClassSpec {
                label: "trunk".into(),
                shape: ShapeKind::Cylinder,
                count,
                size_min: [0.2, 0.0, 0.0],
                size_max: [0.5, 0.0, 0.0],
            }],
            min_spacing: spacing,
        }
    }

    #[test]
    fn empty_spec_gives_empty_world() {
        let spec = cylinder_spec(0, 0.0, 10.0);
        assert!(generate_world(&spec, 1).unwrap().landmarks.is_empty());
    }

    #[test]
    fn identical_seeds_identical_worlds() {
        let spec = cylinder_spec(10, 2.0, 50.0);
        let a = generate_world(&spec, 7).unwrap();
        let b = generate_world(&spec, 7).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = generate_world(&spec, 8).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn pairwise_spacing_holds() {
        let spec = cylinder_spec(50, 3.0, 100.0);
        let world = generate_world(&spec, 3).unwrap();
        assert_eq!(world.landmarks.len(), 50);
        for (i, a) in world.landmarks.iter().enumerate() {
            for b in world.landmarks.iter().skip(i + 1) {
                let d = (a.centroid().xy() - b.centroid().xy()).norm();
                assert!(d >= 3.0, "landmarks {} and {} only {d:.3} m apart", a.id, b.id);
            }
        }
    }

    #[test]
    fn impossible_spacing_fails() {
        let spec = cylinder_spec(100, 30.0, 10.0);
        assert!(matches!(
            generate_world(&spec, 1),
            Err(WorldError::PlacementFailure { .. })
        ));
    }

    #[test]
    fn landmark_record_json_schema() {
        let spec = cylinder_spec(1, 0.0, 10.0);
        let world = generate_world(&spec, 9).unwrap();
        let json = serde_json::to_value(&world.landmarks[0]).unwrap();
        assert!(json.get("id").is_some());
        assert_eq!(json["class"], "trunk");
        assert_eq!(json["shape_kind"], "cylinder");
        assert_eq!(json["params"].as_array().unwrap().len(), 7);
        let back: LandmarkRecord = serde_json::from_value(json).unwrap();
        assert_eq!(back, world.landmarks[0]);
    }
}
