//! Rigid-body helpers shared by perception, control and the simulator.
//!
//! Positions are metres in the robot base frame (right-handed, z up).
//! Quaternions are exchanged as `[w, x, y, z]` on every wire format.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Tolerance for orthonormality of rotations and unit length of quaternions.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation determinant is {0}, expected +1")]
    NotProper(f64),
    #[error("quaternion norm is {0}, expected 1")]
    NotUnit(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Proper rigid transform `p' = R p + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        if rotation
            .iter()
            .chain(translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(GeometryError::NonFinite("rigid transform"));
        }
        let deviation = (rotation.transpose() * rotation - Matrix3::identity())
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(libm::fabs(*v)));
        if deviation > UNIT_TOLERANCE {
            return Err(GeometryError::NotOrthonormal(deviation));
        }
        let det = rotation.determinant();
        if libm::fabs(det - 1.0) > UNIT_TOLERANCE {
            return Err(GeometryError::NotProper(det));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_row_major(
        rotation: [f64; 9],
        translation: [f64; 3],
    ) -> Result<Self, GeometryError> {
        Self::new(
            Matrix3::from_row_slice(&rotation),
            Vec3::new(translation[0], translation[1], translation[2]),
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn apply(&self, point: &Vec3) -> Vec3 {
        self.rotation * point + self.translation
    }

    pub fn apply_inverse(&self, point: &Vec3) -> Vec3 {
        self.rotation.transpose() * (point - self.translation)
    }

    pub fn rotate(&self, direction: &Vec3) -> Vec3 {
        self.rotation * direction
    }
}

/// Gripper orientation whose approach (z) axis points straight down.
pub fn top_down() -> Quat {
    // half-turn about base x
    Quat::new_unchecked(Quaternion::new(0.0, 1.0, 0.0, 0.0))
}

/// Rotation about the base z axis.
pub fn yaw(angle: f64) -> Quat {
    Quat::from_axis_angle(&Vector3::z_axis(), angle)
}

pub fn quat_to_wxyz(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Builds a unit quaternion from `[w, x, y, z]` without renormalising, so
/// values survive serialisation bit-for-bit.
pub fn quat_from_wxyz(wxyz: [f64; 4]) -> Result<Quat, GeometryError> {
    if wxyz.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite("quaternion"));
    }
    let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
    let norm = q.norm();
    if libm::fabs(norm - 1.0) > UNIT_TOLERANCE {
        return Err(GeometryError::NotUnit(norm));
    }
    Ok(Quat::new_unchecked(q))
}

pub fn vec3(v: [f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

pub fn to_array(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn horizontal_distance(a: &Vec3, b: &Vec3) -> f64 {
    libm::hypot(a.x - b.x, a.y - b.y)
}

pub fn is_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Serde adapters for nalgebra values as plain arrays.
pub mod wire {
    pub mod vec3 {
        use crate::geometry::Vec3;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
            [v.x, v.y, v.z].serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
            let a = <[f64; 3]>::deserialize(d)?;
            Ok(Vec3::new(a[0], a[1], a[2]))
        }
    }

    pub mod quat {
        use crate::geometry::{quat_from_wxyz, quat_to_wxyz, Quat};
        use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(q: &Quat, s: S) -> Result<S::Ok, S::Error> {
            quat_to_wxyz(q).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Quat, D::Error> {
            let a = <[f64; 4]>::deserialize(d)?;
            quat_from_wxyz(a).map_err(D::Error::custom)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_down_points_gripper_z_at_table() {
        let z = top_down() * Vec3::z();
        assert!((z - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn rejects_improper_rotation() {
        let mirror = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0];
        assert!(matches!(
            RigidTransform::from_row_major(mirror, [0.0; 3]),
            Err(GeometryError::NotProper(_))
        ));
        let skew = [1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!(matches!(
            RigidTransform::from_row_major(skew, [0.0; 3]),
            Err(GeometryError::NotOrthonormal(_))
        ));
    }

    #[test]
    fn quaternion_wire_is_exact() {
        let q = yaw(0.3) * top_down();
        let back = quat_from_wxyz(quat_to_wxyz(&q)).unwrap();
        assert_eq!(quat_to_wxyz(&q), quat_to_wxyz(&back));
        assert!(quat_from_wxyz([1.0, 1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn inverse_undoes_apply() {
        let t = RigidTransform::from_row_major(
            [0.0, -1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0],
            [0.35, 0.0, 0.9],
        )
        .unwrap();
        let p = Vec3::new(0.1, -0.2, 0.3);
        assert!((t.apply_inverse(&t.apply(&p)) - p).norm() < 1e-15);
    }
}
