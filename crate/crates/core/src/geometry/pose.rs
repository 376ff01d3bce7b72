use nalgebra::Vector3;

use super::UnitQuaternion;

/// Rigid transform: rotation followed by translation.
///
/// Applied to a point, `pose.apply(p) = R * p + t`, mapping the pose's local
/// frame into its parent frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::identity(), translation }
    }

    /// `(a ∘ b).apply(x) == a.apply(b.apply(x))`.
    pub fn compose(&self, rhs: &Self) -> Self {
        Self {
            rotation: self.rotation.multiply(&rhs.rotation),
            translation: self.rotation.rotate(&rhs.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let inv_rot = self.rotation.inverse();
        Self {
            rotation: inv_rot,
            translation: -inv_rot.rotate(&self.translation),
        }
    }

    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(point) + self.translation
    }

    /// Translation distance and rotation angle separating two poses.
    pub fn distance_to(&self, other: &Self) -> (f64, f64) {
        (
            (self.translation - other.translation).norm(),
            self.rotation.angle_to(&other.rotation),
        )
    }
}
