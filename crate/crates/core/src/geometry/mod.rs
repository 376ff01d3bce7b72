//! Rotation and rigid-transform algebra shared by every estimator in the crate.
//!
//! Conventions, fixed once here and relied on everywhere else:
//! - Quaternions are Hamilton, scalar-first `(w, x, y, z)`, canonicalized to
//!   `w >= 0` after every normalization so equality tests are deterministic.
//! - [`UnitQuaternion::to_rotation`] yields the body-to-navigation matrix
//!   `R_b^n`; the navigation-to-body direction is its transpose.
//! - Euler angles are intrinsic Z-Y-X (yaw, pitch, roll), the usual
//!   land-vehicle ENU convention: `R_b^n = Rz(yaw) * Ry(pitch) * Rx(roll)`.
//! - [`Pose`] maps points from its local frame into the parent frame:
//!   `p_world = R * p_local + t`.

mod pose;
mod quaternion;
mod rotation;

pub use pose::Pose;
pub use quaternion::UnitQuaternion;
pub use rotation::{EulerAngles, Rotation3};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    /// Pitch is within the guard band of ±π/2 and roll/yaw are not separable.
    #[error("gimbal lock: pitch {pitch} rad is within {guard} of ±π/2")]
    GimbalLock { pitch: f64, guard: f64 },
}

/// Skew-symmetric (cross-product) matrix: `skew(v) * u == v × u`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn skew_matches_definition() {
        let m = skew(&Vector3::new(1.0, 0.0, 0.0));
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_eq!(m, expected);
    }

    #[test]
    fn skew_of_zero_is_zero() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn skew_times_vector_is_cross_product() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..200 {
            let v = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let u = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let via_skew = skew(&v) * u;
            let via_cross = v.cross(&u);
            assert_abs_diff_eq!(via_skew, via_cross, epsilon = 1e-14);
        }
    }

    #[test]
    fn skew_is_antisymmetric_and_bilinear() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let v = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let w = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let (a, b): (f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            assert_abs_diff_eq!(skew(&v).transpose(), -skew(&v), epsilon = 0.0);
            assert_abs_diff_eq!(skew(&(a * v + b * w)), a * skew(&v) + b * skew(&w), epsilon = 1e-14);
        }
    }
}
