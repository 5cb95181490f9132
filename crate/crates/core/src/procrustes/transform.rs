use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Vector3};

/// Rotation in SO(3) followed by a translation in meters: `p ↦ R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Rotation from an axis-angle vector (angle = norm, radians).
    pub fn from_axis_angle(axis_angle: Vector3, translation: Vector3) -> Self {
        Self::new(
            Rotation3::new(axis_angle).into_inner(),
            translation,
        )
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, translation: Vector3) -> Self {
        Self::new(q.to_rotation_matrix().into_inner(), translation)
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3) -> Vector3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Geodesic angle (radians) between the two rotations.
    pub fn rotation_angle_to(&self, other: &Self) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    pub fn translation_distance_to(&self, other: &Self) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// True when `RᵀR = I` and `det R = 1` within `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        let orth = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        orth < tol && (self.rotation.determinant() - 1.0).abs() < tol
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Rotation angle of a rotation matrix, robust near 0 and π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    // atan2 of |axis sin| over cos avoids acos precision loss near zero.
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = 0.5 * skew.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformDoc {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[3 * i + j] = self.rotation[(i, j)];
            }
        }
        TransformDoc {
            r,
            t: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = TransformDoc::deserialize(deserializer)?;
        Ok(Self::new(
            Matrix3::from_row_slice(&doc.r),
            Vector3::from_column_slice(&doc.t),
        ))
    }
}

impl RigidTransform {
    /// Rejects matrices that are not rotations within `tol`.
    pub fn validated(self, tol: f64) -> Result<Self> {
        if self.is_proper(tol) && self.translation.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::InvalidParameter(
                "rotation is not orthonormal with determinant +1".into(),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_composes_to_identity() {
        let t = RigidTransform::from_axis_angle(Vector3::new(0.3, -0.2, 0.9), Vector3::new(1.0, 2.0, 3.0));
        let id = t.compose(&t.inverse());
        assert!((id.rotation - Matrix3::identity()).amax() < 1e-15);
        assert!(id.translation.norm() < 1e-15);
    }

    #[test]
    fn angle_of_known_rotation() {
        for angle in [0.0, 1e-9, 0.5, 3.0, std::f64::consts::PI] {
            let r = Rotation3::new(Vector3::new(0.0, angle, 0.0)).into_inner();
            assert!((rotation_angle(&r) - angle).abs() < 1e-12);
        }
    }

    #[test]
    fn json_layout_is_row_major() {
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let t = RigidTransform::new(r, Vector3::new(1.0, 2.0, 3.0));
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, r#"{"R":[0.0,-1.0,0.0,1.0,0.0,0.0,0.0,0.0,1.0],"t":[1.0,2.0,3.0]}"#);
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }
}
