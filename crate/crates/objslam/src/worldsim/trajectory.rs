//! Arc-length key-pose sampling along waypoint polylines, plus the
//! multiplicative odometry noise model.

use super::WorldError;
use crate::geometry::{compose, relative, se3_exp, Pose, Twist};
use nalgebra::Vector3;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Per-axis standard deviations of the zero-mean Gaussian twist applied to
/// each relative key-pose motion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OdomNoise {
    pub trans_sigma: [f64; 3],
    pub rot_sigma: [f64; 3],
}

impl OdomNoise {
    pub fn is_zero(&self) -> bool {
        self.trans_sigma.iter().chain(&self.rot_sigma).all(|s| *s == 0.0)
    }
}

/// Ground-truth key poses plus the drifting odometry stream derived from
/// them. Both sequences start at the same pose.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub true_poses: Vec<Pose>,
    pub odom_poses: Vec<Pose>,
}

/// Sample key poses every `spacing` meters of travel along the waypoint
/// polyline, heading along the direction of travel (yaw only; roll and
/// pitch are gravity-referenced and stay zero). The odometry stream
/// accumulates the true relative motions, each perturbed by `noise`.
pub fn generate_trajectory(
    waypoints: &[Vector3<f64>],
    spacing: f64,
    noise: &OdomNoise,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory, WorldError> {
    assert!(spacing > 0.0, "key-pose spacing must be positive");
    let total: f64 = waypoints
        .windows(2)
        .map(|w| (w[1] - w[0]).norm())
        .sum();
    if waypoints.len() < 2 || total < spacing {
        return Err(WorldError::DegenerateTrajectory {
            length: total,
            spacing,
        });
    }

    // Positions at s = 0, spacing, 2*spacing, ... along the polyline.
    let n_poses = (total / spacing).floor() as usize + 1;
    let mut true_poses = Vec::with_capacity(n_poses);
    let mut seg = 0usize;
    let mut seg_start = 0.0; // arc length where the current segment begins
    let mut seg_len = (waypoints[1] - waypoints[0]).norm();
    for k in 0..n_poses {
        let s = k as f64 * spacing;
        while s > seg_start + seg_len + 1e-12 && seg + 2 < waypoints.len() {
            seg_start += seg_len;
            seg += 1;
            seg_len = (waypoints[seg + 1] - waypoints[seg]).norm();
        }
        let dir = (waypoints[seg + 1] - waypoints[seg]) / seg_len;
        let frac = ((s - seg_start) / seg_len).clamp(0.0, 1.0);
        let position = waypoints[seg] + dir * (frac * seg_len);
        let yaw = dir.y.atan2(dir.x);
        true_poses.push(Pose::from_xyz_yaw(position.x, position.y, position.z, yaw));
    }

    let mut odom_poses = Vec::with_capacity(true_poses.len());
    odom_poses.push(true_poses[0]);
    let normals: Vec<Normal<f64>> = noise
        .trans_sigma
        .iter()
        .chain(&noise.rot_sigma)
        .map(|s| Normal::new(0.0, *s).expect("sigmas are nonnegative"))
        .collect();
    for i in 1..true_poses.len() {
        let delta = relative(&true_poses[i - 1], &true_poses[i]);
        let mut xi = [0.0; 6];
        for (x, n) in xi.iter_mut().zip(&normals) {
            *x = n.sample(rng);
        }
        let noisy_delta = compose(
            &delta,
            &se3_exp(&Twist {
                rho: Vector3::new(xi[0], xi[1], xi[2]),
                phi: Vector3::new(xi[3], xi[4], xi[5]),
            }),
        );
        let prev = *odom_poses.last().unwrap();
        odom_poses.push(compose(&prev, &noisy_delta));
    }
    Ok(Trajectory {
        true_poses,
        odom_poses,
    })
}
