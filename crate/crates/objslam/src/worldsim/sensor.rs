//! Frustum-culled parametric detection simulation with additive Gaussian
//! noise on positions, dimensions and yaw.

use super::World;
use crate::geometry::{
    inverse, rodrigues, rotation_vector, CuboidModel, CylinderModel, EllipsoidModel, Pose,
    ShapeModel,
};
use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

/// Field of view, range and noise characteristics of the simulated sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub max_range: f64,
    /// Full horizontal field of view in radians (2*pi for a spinning LiDAR).
    pub hfov: f64,
    /// Full vertical field of view in radians.
    pub vfov: f64,
    pub position_noise_sigma: f64,
    pub dimension_noise_sigma: f64,
    pub yaw_noise_sigma: f64,
    pub false_negative_rate: f64,
    pub false_positive_rate: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            max_range: 15.0,
            hfov: 2.0 * std::f64::consts::PI,
            vfov: 60.0_f64.to_radians(),
            position_noise_sigma: 0.0,
            dimension_noise_sigma: 0.0,
            yaw_noise_sigma: 0.0,
            false_negative_rate: 0.0,
            false_positive_rate: 0.0,
        }
    }
}

impl SensorModel {
    /// Rates must be probabilities and sigmas nonnegative.
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.false_negative_rate) {
            return Err(format!(
                "false_negative_rate {} not in [0,1]",
                self.false_negative_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.false_positive_rate) {
            return Err(format!(
                "false_positive_rate {} not in [0,1]",
                self.false_positive_rate
            ));
        }
        for (name, s) in [
            ("position_noise_sigma", self.position_noise_sigma),
            ("dimension_noise_sigma", self.dimension_noise_sigma),
            ("yaw_noise_sigma", self.yaw_noise_sigma),
        ] {
            if s < 0.0 {
                return Err(format!("{name} is negative: {s}"));
            }
        }
        if self.max_range <= 0.0 {
            return Err(format!("max_range must be positive, got {}", self.max_range));
        }
        Ok(())
    }

    /// Whether a body-frame point falls inside the sensing frustum.
    pub fn in_frustum(&self, body: &Vector3<f64>) -> bool {
        let range = body.norm();
        if range > self.max_range || range < 1e-9 {
            return false;
        }
        let bearing = body.y.atan2(body.x);
        if bearing.abs() > self.hfov * 0.5 {
            return false;
        }
        let elevation = body.z.atan2((body.x * body.x + body.y * body.y).sqrt());
        elevation.abs() <= self.vfov * 0.5
    }
}

/// One object observation expressed in the observing body frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_label: String,
    pub shape: ShapeModel,
    pub observing_key_pose: usize,
}

fn draw(normal: &Normal<f64>, rng: &mut ChaCha8Rng) -> f64 {
    normal.sample(rng)
}

/// Positive-clamped dimension floor; noisy dims never collapse to zero.
const MIN_DIM: f64 = 0.02;

fn noisy_shape(
    body: &ShapeModel,
    sensor: &SensorModel,
    rng: &mut ChaCha8Rng,
) -> ShapeModel {
    let pos = Normal::new(0.0, sensor.position_noise_sigma).unwrap();
    let dim = Normal::new(0.0, sensor.dimension_noise_sigma).unwrap();
    let yaw = Normal::new(0.0, sensor.yaw_noise_sigma).unwrap();
    match body {
        ShapeModel::Cuboid(c) => {
            let t = c.t + Vector3::new(draw(&pos, rng), draw(&pos, rng), draw(&pos, rng));
            let d = Vector3::new(
                (c.d.x + draw(&dim, rng)).max(MIN_DIM),
                (c.d.y + draw(&dim, rng)).max(MIN_DIM),
                (c.d.z + draw(&dim, rng)).max(MIN_DIM),
            );
            // Yaw noise composes a small z rotation onto the observed pose.
            let noisy_rot = rodrigues(&Vector3::new(0.0, 0.0, draw(&yaw, rng))) * rodrigues(&c.r);
            let r = rotation_vector(&noisy_rot).unwrap_or(c.r);
            ShapeModel::Cuboid(CuboidModel { r, t, d })
        }
        ShapeModel::Cylinder(c) => {
            let b = c.b + Vector3::new(draw(&pos, rng), draw(&pos, rng), draw(&pos, rng));
            let radius = (c.radius + draw(&dim, rng)).max(MIN_DIM * 0.5);
            // Tilt the axis by the yaw-noise magnitude about a random
            // horizontal axis; a pure z rotation would leave it unchanged.
            let angle = draw(&yaw, rng);
            let dir = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let axis = Vector3::new(dir.cos(), dir.sin(), 0.0);
            let n = rodrigues(&(axis * angle)) * c.n;
            ShapeModel::Cylinder(CylinderModel { b, n, radius })
        }
        ShapeModel::Ellipsoid(e) => {
            let c = e.c + Vector3::new(draw(&pos, rng), draw(&pos, rng), draw(&pos, rng));
            let d_e = Vector2::new(
                (e.d_e.x + draw(&dim, rng)).max(MIN_DIM),
                (e.d_e.y + draw(&dim, rng)).max(MIN_DIM),
            );
            ShapeModel::Ellipsoid(EllipsoidModel { c, d_e })
        }
    }
}

/// Simulate the detections a sensor at `pose` (world frame) would produce.
///
/// Every landmark inside the frustum is reported with probability
/// `1 - false_negative_rate`, re-expressed in the body frame with additive
/// Gaussian noise. False positives are injected uniformly in the frustum at
/// a Poisson rate, cloning the class and rough size of a random landmark.
pub fn simulate_detections(
    pose: &Pose,
    world: &World,
    sensor: &SensorModel,
    key_pose_index: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Detection> {
    let world_to_body = inverse(pose);
    let mut detections = Vec::new();
    for landmark in &world.landmarks {
        let body_centroid = world_to_body.transform_point(&landmark.centroid());
        if !sensor.in_frustum(&body_centroid) {
            continue;
        }
        if sensor.false_negative_rate > 0.0 && rng.gen::<f64>() < sensor.false_negative_rate {
            continue;
        }
        let body_shape = landmark
            .shape
            .transformed(&world_to_body)
            .expect("world shapes stay valid under rigid transforms");
        detections.push(Detection {
            class_label: landmark.class_label.clone(),
            shape: noisy_shape(&body_shape, sensor, rng),
            observing_key_pose: key_pose_index,
        });
    }

    if sensor.false_positive_rate > 0.0 && !world.landmarks.is_empty() {
        let poisson = Poisson::new(sensor.false_positive_rate).unwrap();
        let count = poisson.sample(rng) as usize;
        for _ in 0..count {
            let template = &world.landmarks[rng.gen_range(0..world.landmarks.len())];
            let range = rng.gen_range(1.0..sensor.max_range);
            let bearing = rng.gen_range(-sensor.hfov * 0.5..sensor.hfov * 0.5);
            let elevation = rng.gen_range(-sensor.vfov * 0.25..sensor.vfov * 0.25);
            let body_pos = Vector3::new(
                range * elevation.cos() * bearing.cos(),
                range * elevation.cos() * bearing.sin(),
                range * elevation.sin(),
            );
            let mut shape = template.shape.clone();
            match &mut shape {
                ShapeModel::Cuboid(c) => c.t = body_pos,
                ShapeModel::Cylinder(c) => c.b = body_pos,
                ShapeModel::Ellipsoid(e) => e.c = body_pos,
            }
            detections.push(Detection {
                class_label: template.class_label.clone(),
                shape: noisy_shape(&shape, sensor, rng),
                observing_key_pose: key_pose_index,
            });
        }
    }
    detections
}
