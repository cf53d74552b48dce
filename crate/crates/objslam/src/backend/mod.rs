//! The metric-semantic factor graph: key-pose and object-landmark variables
//! connected by odometry and object factors, with label/distance/model
//! gated detection-landmark association and batch re-linearized
//! least-squares optimization.

mod factors;
mod optimize;

pub use factors::{
    cuboid_error, cylinder_error, ellipsoid_error, odometry_error, prior_error,
    update_ellipsoid_dims, Factor, FactorKind, GraphError, RangeBearing, Var, VarState,
};
pub use optimize::{LmConfig, OptimizeResult};

use crate::geometry::{compose, relative, ShapeModel};
use crate::worldsim::{Detection, LandmarkRecord};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Distance/model gates for detection-landmark association.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationConfig {
    /// Per-class maximum centroid distance in meters.
    #[serde(default)]
    pub max_centroid_distance: BTreeMap<String, f64>,
    /// Fallback distance gate for classes without an explicit entry.
    pub default_max_centroid_distance: f64,
    /// Maximum relative shape-parameter difference.
    pub max_model_difference: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig {
            max_centroid_distance: BTreeMap::new(),
            default_max_centroid_distance: 1.0,
            max_model_difference: 0.5,
        }
    }
}

impl AssociationConfig {
    pub fn distance_gate(&self, class: &str) -> f64 {
        self.max_centroid_distance
            .get(class)
            .copied()
            .unwrap_or(self.default_max_centroid_distance)
    }

    fn max_gate(&self) -> f64 {
        self.max_centroid_distance
            .values()
            .copied()
            .fold(self.default_max_centroid_distance, f64::max)
    }
}

/// Constant per-residual-component inverse standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub prior_weight: f64,
    pub odometry_trans_weight: f64,
    pub odometry_rot_weight: f64,
    /// When set, odometry weights scale by 1/sqrt(travel distance) so long
    /// hops trust the measurement less.
    #[serde(default)]
    pub scale_odometry_with_distance: bool,
    pub cuboid_pose_weight: f64,
    pub cuboid_dim_weight: f64,
    pub cylinder_pos_weight: f64,
    pub cylinder_axis_weight: f64,
    pub cylinder_radius_weight: f64,
    pub ellipsoid_range_weight: f64,
    pub ellipsoid_bearing_weight: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            prior_weight: 1000.0,
            odometry_trans_weight: 20.0,
            odometry_rot_weight: 40.0,
            scale_odometry_with_distance: false,
            cuboid_pose_weight: 5.0,
            cuboid_dim_weight: 10.0,
            cylinder_pos_weight: 5.0,
            cylinder_axis_weight: 10.0,
            cylinder_radius_weight: 20.0,
            ellipsoid_range_weight: 5.0,
            ellipsoid_bearing_weight: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Travel distance between key poses in meters.
    pub key_pose_spacing: f64,
    pub association: AssociationConfig,
    pub noise: NoiseConfig,
    /// Moving-average weight for ellipsoid dimension updates.
    pub ellipsoid_alpha: f64,
    /// Use closed-form Jacobians where available instead of central
    /// differences.
    #[serde(default)]
    pub analytic_jacobians: bool,
    /// Re-run batch optimization every N accepted key poses (0 disables
    /// periodic re-optimization; loop closures and the final pass still
    /// optimize).
    #[serde(default = "default_optimize_every")]
    pub optimize_every: usize,
    pub lm: LmConfig,
}

fn default_optimize_every() -> usize {
    10
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            key_pose_spacing: 0.95,
            association: AssociationConfig::default(),
            noise: NoiseConfig::default(),
            ellipsoid_alpha: 0.3,
            analytic_jacobians: false,
            lm: LmConfig::default(),
        }
    }
}

use crate::geometry::Pose;

/// Newtype over the graph's pose-variable index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeyPoseId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPose {
    pub robot_id: usize,
    /// Per-robot key-pose index, strictly increasing.
    pub t: usize,
    pub estimate: Pose,
    /// Odometry factor measurement from the previous key pose of the same
    /// robot; None for the first.
    pub odometry_from_previous: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u64,
    pub class_label: String,
    pub shape: ShapeModel,
    pub observation_count: usize,
}

/// Per-robot odometry bookkeeping for the key-pose spacing gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OdomTracker {
    last_odom: Pose,
    /// Odometry pose at the robot's last accepted key pose.
    key_odom: Pose,
    last_key_pose: usize,
    travel: f64,
    count: usize,
}

/// Spatial hash over landmark centroids, keyed by class and cell. Rebuilt
/// lazily after optimization moves landmarks.
#[derive(Debug, Clone, Default)]
struct SpatialIndex {
    cell: f64,
    map: std::collections::HashMap<(String, i64, i64, i64), Vec<u64>>,
}

impl SpatialIndex {
    fn key(&self, class: &str, p: &Vector3<f64>) -> (String, i64, i64, i64) {
        (
            class.to_owned(),
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    fn insert(&mut self, class: &str, p: &Vector3<f64>, id: u64) {
        let key = self.key(class, p);
        self.map.entry(key).or_default().push(id);
    }

    /// Candidate ids within one cell of `p` (cell size bounds the gate).
    fn nearby(&self, class: &str, p: &Vector3<f64>) -> Vec<u64> {
        let (_, cx, cy, cz) = self.key(class, p);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) =
                        self.map
                            .get(&(class.to_owned(), cx + dx, cy + dy, cz + dz))
                    {
                        out.extend_from_slice(ids);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// The factor graph of one robot (host frame), including merged peer data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorGraph {
    pub config: BackendConfig,
    poses: Vec<KeyPose>,
    landmarks: BTreeMap<u64, Landmark>,
    factors: Vec<Factor>,
    next_landmark_id: u64,
    odom: BTreeMap<usize, OdomTracker>,
    #[serde(skip, default)]
    index: SpatialIndex,
    #[serde(skip, default = "default_true")]
    index_dirty: bool,
}

fn default_true() -> bool {
    true
}

impl FactorGraph {
    pub fn new(config: BackendConfig) -> Self {
        FactorGraph {
            config,
            poses: Vec::new(),
            landmarks: BTreeMap::new(),
            factors: Vec::new(),
            next_landmark_id: 0,
            odom: BTreeMap::new(),
            index: SpatialIndex::default(),
            index_dirty: true,
        }
    }

    pub fn poses(&self) -> &[KeyPose] {
        &self.poses
    }

    pub fn landmarks(&self) -> &BTreeMap<u64, Landmark> {
        &self.landmarks
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn pose_count(&self) -> usize {
        self.poses.len()
    }

    pub fn landmark_count(&self) -> usize {
        self.landmarks.len()
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    /// Estimated trajectory of one robot as (t, pose) pairs.
    pub fn trajectory(&self, robot_id: usize) -> Vec<(usize, Pose)> {
        self.poses
            .iter()
            .filter(|p| p.robot_id == robot_id)
            .map(|p| (p.t, p.estimate))
            .collect()
    }

    /// All landmarks as serializable records, ordered by id.
    pub fn landmark_records(&self) -> Vec<LandmarkRecord> {
        self.landmarks
            .values()
            .map(|l| LandmarkRecord {
                id: l.id,
                class_label: l.class_label.clone(),
                shape: l.shape.clone(),
            })
            .collect()
    }

    /// Landmarks observed exactly once, flagged as unconfirmed in exports.
    pub fn unconfirmed_landmark_ids(&self) -> Vec<u64> {
        self.landmarks
            .values()
            .filter(|l| l.observation_count <= 1)
            .map(|l| l.id)
            .collect()
    }

    fn odometry_weights(&self, distance: f64) -> Vec<f64> {
        let scale = if self.config.noise.scale_odometry_with_distance {
            1.0 / distance.max(0.1).sqrt()
        } else {
            1.0
        };
        let wt = self.config.noise.odometry_trans_weight * scale;
        let wr = self.config.noise.odometry_rot_weight * scale;
        vec![wt, wt, wt, wr, wr, wr]
    }

    /// Feed one odometry sample. A key pose is created when accumulated
    /// travel since the last key pose reaches the configured spacing (the
    /// robot's first sample always creates an anchored key pose). Returns
    /// the new key pose id, or None when gated away.
    pub fn add_key_pose(&mut self, robot_id: usize, odom_pose: &Pose) -> Option<KeyPoseId> {
        match self.odom.get_mut(&robot_id) {
            None => {
                let id = KeyPoseId(self.poses.len());
                self.poses.push(KeyPose {
                    robot_id,
                    t: 0,
                    estimate: *odom_pose,
                    odometry_from_previous: None,
                });
                self.factors.push(Factor {
                    kind: FactorKind::Prior {
                        pose: id.0,
                        measurement: *odom_pose,
                    },
                    weights: vec![self.config.noise.prior_weight; 6],
                });
                self.odom.insert(
                    robot_id,
                    OdomTracker {
                        last_odom: *odom_pose,
                        key_odom: *odom_pose,
                        last_key_pose: id.0,
                        travel: 0.0,
                        count: 1,
                    },
                );
                Some(id)
            }
            Some(tracker) => {
                let step = relative(&tracker.last_odom, odom_pose);
                tracker.travel += step.translation.norm();
                tracker.last_odom = *odom_pose;
                if tracker.travel < self.config.key_pose_spacing {
                    return None;
                }
                let measurement = relative(&tracker.key_odom, odom_pose);
                let distance = tracker.travel;
                let prev = tracker.last_key_pose;
                let t = tracker.count;
                tracker.key_odom = *odom_pose;
                tracker.travel = 0.0;
                tracker.count += 1;

                let id = KeyPoseId(self.poses.len());
                let estimate = compose(&self.poses[prev].estimate, &measurement);
                self.poses.push(KeyPose {
                    robot_id,
                    t,
                    estimate,
                    odometry_from_previous: Some(measurement),
                });
                let weights = self.odometry_weights(distance);
                self.factors.push(Factor {
                    kind: FactorKind::Odometry {
                        prev,
                        curr: id.0,
                        measurement,
                    },
                    weights,
                });
                self.odom.get_mut(&robot_id).unwrap().last_key_pose = id.0;
                Some(id)
            }
        }
    }

    /// Insert a key pose with explicit chaining, used when replaying peer
    /// records: `odometry_from` links to an existing pose with the given
    /// measurement, and `prior` optionally anchors the pose.
    pub fn add_key_pose_raw(
        &mut self,
        robot_id: usize,
        t: usize,
        estimate: Pose,
        odometry_from: Option<(KeyPoseId, Pose)>,
        prior: Option<Pose>,
    ) -> KeyPoseId {
        let id = KeyPoseId(self.poses.len());
        self.poses.push(KeyPose {
            robot_id,
            t,
            estimate,
            odometry_from_previous: odometry_from.as_ref().map(|(_, m)| *m),
        });
        if let Some((prev, measurement)) = odometry_from {
            let weights = self.odometry_weights(measurement.translation.norm());
            self.factors.push(Factor {
                kind: FactorKind::Odometry {
                    prev: prev.0,
                    curr: id.0,
                    measurement,
                },
                weights,
            });
        }
        if let Some(measurement) = prior {
            self.factors.push(Factor {
                kind: FactorKind::Prior {
                    pose: id.0,
                    measurement,
                },
                weights: vec![self.config.noise.prior_weight; 6],
            });
        }
        id
    }

    fn rebuild_index(&mut self) {
        let mut index = SpatialIndex {
            cell: self.config.association.max_gate().max(1e-3),
            map: Default::default(),
        };
        for l in self.landmarks.values() {
            index.insert(&l.class_label, &l.shape.centroid(), l.id);
        }
        self.index = index;
        self.index_dirty = false;
    }

    /// Nearest same-label landmark within the distance and model gates, if
    /// any. Ties closer than 1e-9 break toward the lowest id.
    pub fn associate(&mut self, class_label: &str, map_shape: &ShapeModel) -> Option<u64> {
        if self.index_dirty {
            self.rebuild_index();
        }
        let centroid = map_shape.centroid();
        let gate = self.config.association.distance_gate(class_label);
        let max_model = self.config.association.max_model_difference;
        let params = map_shape.shape_params();
        let mut best: Option<(f64, u64)> = None;
        for id in self.index.nearby(class_label, &centroid) {
            let lm = &self.landmarks[&id];
            let dist = (lm.shape.centroid() - centroid).norm();
            if dist > gate {
                continue;
            }
            if crate::geometry::model_difference(&lm.shape.shape_params(), &params) > max_model {
                continue;
            }
            best = match best {
                None => Some((dist, id)),
                Some((bd, bid)) => {
                    if dist < bd - 1e-9 || (dist < bd + 1e-9 && id < bid) {
                        Some((dist, id))
                    } else {
                        Some((bd, bid))
                    }
                }
            };
        }
        best.map(|(_, id)| id)
    }

    /// Associate a detection with an existing landmark and add the object
    /// factor, or initialize a new landmark at the detection transformed by
    /// the key-pose estimate.
    pub fn add_detection(
        &mut self,
        key_pose: KeyPoseId,
        detection: &Detection,
    ) -> Result<u64, GraphError> {
        let pose = self
            .poses
            .get(key_pose.0)
            .ok_or(GraphError::UnknownKeyPose(key_pose.0))?
            .estimate;
        let map_shape = detection.shape.transformed(&pose)?;
        let landmark_id = match self.associate(&detection.class_label, &map_shape) {
            Some(id) => {
                let alpha = self.config.ellipsoid_alpha;
                let lm = self.landmarks.get_mut(&id).unwrap();
                lm.observation_count += 1;
                if let (ShapeModel::Ellipsoid(current), ShapeModel::Ellipsoid(meas)) =
                    (&mut lm.shape, &map_shape)
                {
                    current.d_e = update_ellipsoid_dims(&current.d_e, &meas.d_e, alpha);
                }
                id
            }
            None => {
                let id = self.next_landmark_id;
                self.next_landmark_id += 1;
                self.landmarks.insert(
                    id,
                    Landmark {
                        id,
                        class_label: detection.class_label.clone(),
                        shape: map_shape.clone(),
                        observation_count: 1,
                    },
                );
                if !self.index_dirty {
                    self.index
                        .insert(&detection.class_label, &map_shape.centroid(), id);
                }
                id
            }
        };

        let noise = &self.config.noise;
        let factor = match &detection.shape {
            ShapeModel::Cuboid(meas) => Factor {
                kind: FactorKind::Cuboid {
                    pose: key_pose.0,
                    landmark: landmark_id,
                    measurement: meas.clone(),
                },
                weights: {
                    let mut w = vec![noise.cuboid_pose_weight; 6];
                    w.extend([noise.cuboid_dim_weight; 3]);
                    w
                },
            },
            ShapeModel::Cylinder(meas) => Factor {
                kind: FactorKind::Cylinder {
                    pose: key_pose.0,
                    landmark: landmark_id,
                    measurement: meas.clone(),
                },
                weights: {
                    let mut w = vec![noise.cylinder_pos_weight; 3];
                    w.extend([noise.cylinder_axis_weight; 3]);
                    w.push(noise.cylinder_radius_weight);
                    w
                },
            },
            ShapeModel::Ellipsoid(meas) => Factor {
                kind: FactorKind::Ellipsoid {
                    pose: key_pose.0,
                    landmark: landmark_id,
                    measurement: RangeBearing::from_point(&meas.c)?,
                },
                weights: vec![
                    noise.ellipsoid_range_weight,
                    noise.ellipsoid_bearing_weight,
                    noise.ellipsoid_bearing_weight,
                ],
            },
        };
        self.factors.push(factor);
        Ok(landmark_id)
    }

    /// Current state of one variable.
    pub(crate) fn var_state(&self, var: Var) -> VarState {
        match var {
            Var::Pose(i) => VarState::Pose(self.poses[i].estimate),
            Var::Landmark(id) => match &self.landmarks[&id].shape {
                ShapeModel::Cuboid(c) => VarState::Cuboid(c.clone()),
                ShapeModel::Cylinder(c) => VarState::Cylinder(c.clone()),
                ShapeModel::Ellipsoid(e) => VarState::Point(e.c),
            },
        }
    }

    pub(crate) fn set_var_state(&mut self, var: Var, state: VarState) {
        match (var, state) {
            (Var::Pose(i), VarState::Pose(p)) => self.poses[i].estimate = p,
            (Var::Landmark(id), VarState::Cuboid(c)) => {
                self.landmarks.get_mut(&id).unwrap().shape = ShapeModel::Cuboid(c);
            }
            (Var::Landmark(id), VarState::Cylinder(c)) => {
                self.landmarks.get_mut(&id).unwrap().shape = ShapeModel::Cylinder(c);
            }
            (Var::Landmark(id), VarState::Point(p)) => {
                if let ShapeModel::Ellipsoid(e) = &mut self.landmarks.get_mut(&id).unwrap().shape {
                    e.c = p;
                }
            }
            _ => unreachable!("variable/state kind mismatch"),
        }
        self.index_dirty = true;
    }

    /// Sum of squared weighted residuals over all factors.
    pub fn cost(&self) -> Result<f64, GraphError> {
        let mut total = 0.0;
        for f in &self.factors {
            let states: Vec<VarState> = f.variables().into_iter().map(|v| self.var_state(v)).collect();
            total += f.weighted_residual(&states)?.norm_squared();
        }
        Ok(total)
    }
}
