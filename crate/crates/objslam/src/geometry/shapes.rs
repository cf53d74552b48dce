//! The three parametric object shape models and their canonical state
//! vectors: cuboid [r; t; d], cylinder [b; n; radius], ellipsoid [c; d_e].

use super::{compose, rotation_vector, GeometryError, Pose};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Cuboid: rotation vector, position, and width/length/height dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuboidModel {
    /// Rotation vector (Rodrigues parameterization).
    pub r: Vector3<f64>,
    /// Position of the cuboid center.
    pub t: Vector3<f64>,
    /// Dimensions (width, length, height), each > 0.
    pub d: Vector3<f64>,
}

impl CuboidModel {
    pub fn new(r: Vector3<f64>, t: Vector3<f64>, d: Vector3<f64>) -> Result<Self, GeometryError> {
        if !(d.x > 0.0 && d.y > 0.0 && d.z > 0.0) {
            return Err(GeometryError::InvalidShape(format!(
                "cuboid dimensions must be positive, got {d:?}"
            )));
        }
        Ok(CuboidModel { r, t, d })
    }

    /// The cuboid's pose recovered from [r; t].
    pub fn pose(&self) -> Pose {
        Pose::from_rotation_vector(&self.r, &self.t)
    }

    /// Re-express the cuboid in another frame: `frame` maps this model's
    /// frame into the target frame.
    pub fn transformed(&self, frame: &Pose) -> Result<Self, GeometryError> {
        let pose = compose(frame, &self.pose());
        Ok(CuboidModel {
            r: rotation_vector(&pose.rotation)?,
            t: pose.translation,
            d: self.d,
        })
    }
}

/// Cylinder: axis-ray origin, unit axis direction, and radius. Height is
/// deliberately not modeled (unobservable from typical viewpoints).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderModel {
    /// Origin of the axis ray.
    pub b: Vector3<f64>,
    /// Unit direction of the axis ray.
    pub n: Vector3<f64>,
    /// Radius, > 0.
    pub radius: f64,
}

impl CylinderModel {
    pub fn new(b: Vector3<f64>, n: Vector3<f64>, radius: f64) -> Result<Self, GeometryError> {
        if radius <= 0.0 {
            return Err(GeometryError::InvalidShape(format!(
                "cylinder radius must be positive, got {radius}"
            )));
        }
        let norm = n.norm();
        if norm < 1e-9 {
            return Err(GeometryError::InvalidShape(
                "cylinder axis direction has zero norm".into(),
            ));
        }
        Ok(CylinderModel {
            b,
            n: n / norm,
            radius,
        })
    }

    pub fn transformed(&self, frame: &Pose) -> Self {
        CylinderModel {
            b: frame.transform_point(&self.b),
            n: frame.rotate(&self.n),
            radius: self.radius,
        }
    }
}

/// Ellipsoid: centroid plus (radius, height). Orientation is always
/// identity and never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidModel {
    /// Centroid position.
    pub c: Vector3<f64>,
    /// Radius and height, each > 0.
    pub d_e: Vector2<f64>,
}

impl EllipsoidModel {
    pub fn new(c: Vector3<f64>, d_e: Vector2<f64>) -> Result<Self, GeometryError> {
        if !(d_e.x > 0.0 && d_e.y > 0.0) {
            return Err(GeometryError::InvalidShape(format!(
                "ellipsoid radius/height must be positive, got {d_e:?}"
            )));
        }
        Ok(EllipsoidModel { c, d_e })
    }

    pub fn transformed(&self, frame: &Pose) -> Self {
        EllipsoidModel {
            c: frame.transform_point(&self.c),
            d_e: self.d_e,
        }
    }
}

/// Discriminant for serialized landmark records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Cuboid,
    Cylinder,
    Ellipsoid,
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ShapeKind::Cuboid => write!(f, "cuboid"),
            ShapeKind::Cylinder => write!(f, "cylinder"),
            ShapeKind::Ellipsoid => write!(f, "ellipsoid"),
        }
    }
}

/// Sum type over the three shape models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape_kind", rename_all = "snake_case")]
pub enum ShapeModel {
    Cuboid(CuboidModel),
    Cylinder(CylinderModel),
    Ellipsoid(EllipsoidModel),
}

impl ShapeModel {
    pub fn kind(&self) -> ShapeKind {
        match self {
            ShapeModel::Cuboid(_) => ShapeKind::Cuboid,
            ShapeModel::Cylinder(_) => ShapeKind::Cylinder,
            ShapeModel::Ellipsoid(_) => ShapeKind::Ellipsoid,
        }
    }

    /// Reference point used for association and place recognition: the
    /// cuboid center, the cylinder axis origin, or the ellipsoid centroid.
    pub fn centroid(&self) -> Vector3<f64> {
        match self {
            ShapeModel::Cuboid(c) => c.t,
            ShapeModel::Cylinder(c) => c.b,
            ShapeModel::Ellipsoid(e) => e.c,
        }
    }

    /// Shape parameters only (no pose): cuboid dims, cylinder radius,
    /// ellipsoid radius/height. Used for model-difference gating.
    pub fn shape_params(&self) -> Vec<f64> {
        match self {
            ShapeModel::Cuboid(c) => vec![c.d.x, c.d.y, c.d.z],
            ShapeModel::Cylinder(c) => vec![c.radius],
            ShapeModel::Ellipsoid(e) => vec![e.d_e.x, e.d_e.y],
        }
    }

    /// Full canonical state vector: cuboid [r;t;d] (9), cylinder [b;n;r]
    /// (7), ellipsoid [c;d_e] (5). Matches the serialized record layout.
    pub fn params(&self) -> Vec<f64> {
        match self {
            ShapeModel::Cuboid(c) => vec![
                c.r.x, c.r.y, c.r.z, c.t.x, c.t.y, c.t.z, c.d.x, c.d.y, c.d.z,
            ],
            ShapeModel::Cylinder(c) => {
                vec![c.b.x, c.b.y, c.b.z, c.n.x, c.n.y, c.n.z, c.radius]
            }
            ShapeModel::Ellipsoid(e) => vec![e.c.x, e.c.y, e.c.z, e.d_e.x, e.d_e.y],
        }
    }

    /// Rebuild a shape from its kind and canonical state vector.
    pub fn from_params(kind: ShapeKind, params: &[f64]) -> Result<Self, GeometryError> {
        match (kind, params.len()) {
            (ShapeKind::Cuboid, 9) => Ok(ShapeModel::Cuboid(CuboidModel::new(
                Vector3::new(params[0], params[1], params[2]),
                Vector3::new(params[3], params[4], params[5]),
                Vector3::new(params[6], params[7], params[8]),
            )?)),
            (ShapeKind::Cylinder, 7) => Ok(ShapeModel::Cylinder(CylinderModel::new(
                Vector3::new(params[0], params[1], params[2]),
                Vector3::new(params[3], params[4], params[5]),
                params[6],
            )?)),
            (ShapeKind::Ellipsoid, 5) => Ok(ShapeModel::Ellipsoid(EllipsoidModel::new(
                Vector3::new(params[0], params[1], params[2]),
                nalgebra::Vector2::new(params[3], params[4]),
            )?)),
            (k, n) => Err(GeometryError::InvalidShape(format!(
                "{k} state vector has wrong length {n}"
            ))),
        }
    }

    /// Re-express the shape in another frame.
    pub fn transformed(&self, frame: &Pose) -> Result<Self, GeometryError> {
        Ok(match self {
            ShapeModel::Cuboid(c) => ShapeModel::Cuboid(c.transformed(frame)?),
            ShapeModel::Cylinder(c) => ShapeModel::Cylinder(c.transformed(frame)),
            ShapeModel::Ellipsoid(e) => ShapeModel::Ellipsoid(e.transformed(frame)),
        })
    }
}

/// Largest relative difference between two shape-parameter vectors. Returns
/// infinity for mismatched lengths so different shapes never associate.
pub fn model_difference(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-9))
        .fold(0.0, f64::max)
}
