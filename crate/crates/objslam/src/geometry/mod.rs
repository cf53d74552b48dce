//! Rigid-body transforms on SE(3) and the parametric object shape models.
//!
//! Rotations are stored as 3x3 orthonormal matrices rather than quaternions;
//! the log/vee machinery used by the factor residuals works directly on the
//! matrix form, and tests avoid double-cover ambiguities. Angles are wrapped
//! to (-pi, pi] at every API boundary.

mod shapes;

pub use shapes::{
    model_difference, CuboidModel, CylinderModel, EllipsoidModel, ShapeKind, ShapeModel,
};

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Numerical failure modes of the SE(3)/shape machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    /// The SO(3) log map is ill-conditioned within 1e-6 of a half-turn.
    #[error("rotation angle {angle} rad is within 1e-6 of pi; log map is ill-conditioned")]
    NearPiRotation { angle: f64 },
    /// Shape dimensions, radii and axis norms must be strictly valid.
    #[error("invalid shape parameter: {0}")]
    InvalidShape(String),
}

/// Threshold below which trigonometric coefficients switch to Taylor series.
const SMALL_ANGLE: f64 = 1e-6;

/// Wrap an angle to the half-open interval (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Skew-symmetric (hat) matrix of a 3-vector.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix from a rotation vector (axis * angle), Rodrigues' formula.
pub fn rodrigues(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    let k = hat(r);
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        // sin(t)/t and (1-cos(t))/t^2 expanded around zero
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + a * k + b * (k * k)
}

/// Rotation vector of a rotation matrix (inverse of [`rodrigues`]).
pub fn rotation_vector(rot: &Matrix3<f64>) -> Result<Vector3<f64>, GeometryError> {
    // v = 2 sin(theta) * axis; the atan2 form stays well-conditioned where
    // acos((trace-1)/2) loses half its digits.
    let v = Vector3::new(
        rot[(2, 1)] - rot[(1, 2)],
        rot[(0, 2)] - rot[(2, 0)],
        rot[(1, 0)] - rot[(0, 1)],
    );
    let sin_theta = 0.5 * v.norm();
    let cos_theta = ((rot.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);
    if theta > std::f64::consts::PI - 1e-6 {
        return Err(GeometryError::NearPiRotation { angle: theta });
    }
    if theta < SMALL_ANGLE {
        // theta/(2 sin theta) ~ 1/2 + theta^2/12
        Ok((0.5 + theta * theta / 12.0) * v)
    } else {
        Ok((theta / (2.0 * sin_theta)) * v)
    }
}

/// Element of se(3): translational part `rho` plus rotation vector `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Twist {
            rho: Vector3::zeros(),
            phi: Vector3::zeros(),
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist {
            rho: Vector3::new(v[0], v[1], v[2]),
            phi: Vector3::new(v[3], v[4], v[5]),
        }
    }

    /// Stacked [rho; phi] ordering used by all 6-dof residuals.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// A rigid-body transform: orthonormal rotation (det +1) plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Pure rotation about the world z axis.
    pub fn from_yaw(yaw: f64) -> Self {
        Pose {
            rotation: rodrigues(&Vector3::new(0.0, 0.0, wrap_angle(yaw))),
            translation: Vector3::zeros(),
        }
    }

    /// Yaw rotation followed by a translation, the 4-DoF parameterization
    /// used for inter-map transforms.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Pose {
            rotation: rodrigues(&Vector3::new(0.0, 0.0, wrap_angle(yaw))),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn from_rotation_vector(r: &Vector3<f64>, t: &Vector3<f64>) -> Self {
        Pose {
            rotation: rodrigues(r),
            translation: *t,
        }
    }

    /// Apply the transform to a point.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotate a direction vector (no translation).
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// True if rotation is orthonormal with determinant +1 within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        (rtr - Matrix3::identity()).abs().max() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
    }
}

/// Transform applying `b` then `a` (matrix product of the homogeneous forms).
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// Two-sided inverse: `compose(p, inverse(p))` is the identity.
pub fn inverse(p: &Pose) -> Pose {
    let rt = p.rotation.transpose();
    Pose {
        rotation: rt,
        translation: -(rt * p.translation),
    }
}

/// Relative transform taking frame `a` to frame `b`: `a^-1 * b`.
pub fn relative(a: &Pose, b: &Pose) -> Pose {
    compose(&inverse(a), b)
}

/// Exponential map from se(3) to SE(3).
pub fn se3_exp(xi: &Twist) -> Pose {
    let theta2 = xi.phi.norm_squared();
    let k = hat(&xi.phi);
    let (a, b, c) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        (
            1.0 - theta2 / 6.0,
            0.5 - theta2 / 24.0,
            1.0 / 6.0 - theta2 / 120.0,
        )
    } else {
        let theta = theta2.sqrt();
        (
            theta.sin() / theta,
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    let rotation = Matrix3::identity() + a * k + b * (k * k);
    let v = Matrix3::identity() + b * k + c * (k * k);
    Pose {
        rotation,
        translation: v * xi.rho,
    }
}

/// Logarithm map from SE(3) to se(3).
///
/// Fails with [`GeometryError::NearPiRotation`] when the rotation angle is
/// within 1e-6 of pi, where the map is ill-conditioned.
pub fn se3_log(p: &Pose) -> Result<Twist, GeometryError> {
    let phi = rotation_vector(&p.rotation)?;
    let theta2 = phi.norm_squared();
    let k = hat(&phi);
    let coef = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        (1.0 - 0.5 * theta * (1.0 + theta.cos()) / theta.sin()) / theta2
    };
    let v_inv = Matrix3::identity() - 0.5 * k + coef * (k * k);
    Ok(Twist {
        rho: v_inv * p.translation,
        phi,
    })
}

/// Yaw angle of a pose in (-pi, pi]: heading of the rotated x axis
/// projected onto the horizontal plane.
pub fn yaw_of(p: &Pose) -> f64 {
    wrap_angle(p.rotation[(1, 0)].atan2(p.rotation[(0, 0)]))
}
