use nalgebra::{Matrix3, Vector3};

use super::{skew, GeometryError, UnitQuaternion};

/// Pitch guard band around ±π/2 inside which Euler extraction is refused.
const GIMBAL_GUARD: f64 = 1e-6;

/// 3×3 rotation matrix (orthonormal, det +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

/// Intrinsic Z-Y-X Euler angles in radians: `R_b^n = Rz(yaw) Ry(pitch) Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Rotation3 {
    /// Wrap a matrix already known to be a rotation. Debug builds verify
    /// orthonormality to 1e-6; use [`Rotation3::nearest`] for noisy input.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        debug_assert!(
            ((m.transpose() * m) - Matrix3::identity()).abs().max() < 1e-6,
            "matrix is not orthonormal"
        );
        Self(m)
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Nearest rotation matrix in the Frobenius sense (SVD projection).
    pub fn nearest(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd with u");
        let vt = svd.v_t.expect("svd with v_t");
        let det = (u * vt).determinant();
        let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
        Self(u * fix * vt)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, rhs: &Self) -> Self {
        Self(self.0 * rhs.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn to_quaternion(&self) -> UnitQuaternion {
        UnitQuaternion::from_rotation(self)
    }

    /// Exponential map with the Rodrigues closed form; below 1e-8 rad the
    /// second-order Taylor expansion avoids dividing by a vanishing angle.
    pub fn exp(v: &Vector3<f64>) -> Self {
        let angle = v.norm();
        let k = skew(v);
        let m = if angle < 1e-8 {
            Matrix3::identity() + k + 0.5 * k * k
        } else {
            Matrix3::identity()
                + (angle.sin() / angle) * k
                + ((1.0 - angle.cos()) / (angle * angle)) * k * k
        };
        Self(m)
    }

    /// Logarithm map to a rotation vector (angle in [0, π]).
    pub fn log(&self) -> Vector3<f64> {
        self.to_quaternion().to_rotation_vector()
    }

    /// Rotation angle in [0, π].
    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    pub fn rotation_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rotation_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Build `R_b^n` from Z-Y-X Euler angles.
    pub fn from_euler(e: &EulerAngles) -> Self {
        Self::rotation_z(e.yaw)
            .compose(&Self::rotation_y(e.pitch))
            .compose(&Self::rotation_x(e.roll))
    }

    /// Extract Z-Y-X Euler angles from `R_b^n`.
    ///
    /// Fails with [`GeometryError::GimbalLock`] when the pitch is within
    /// 1e-6 rad of ±π/2 and roll/yaw become indistinguishable.
    pub fn to_euler(&self) -> Result<EulerAngles, GeometryError> {
        let m = &self.0;
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        if std::f64::consts::FRAC_PI_2 - pitch.abs() < GIMBAL_GUARD {
            return Err(GeometryError::GimbalLock { pitch, guard: GIMBAL_GUARD });
        }
        Ok(EulerAngles {
            roll: m[(2, 1)].atan2(m[(2, 2)]),
            pitch,
            yaw: m[(1, 0)].atan2(m[(0, 0)]),
        })
    }
}

impl EulerAngles {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn zero() -> Self {
        Self { roll: 0.0, pitch: 0.0, yaw: 0.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn identity_extracts_zero_angles() {
        let e = Rotation3::identity().to_euler().unwrap();
        assert_eq!((e.roll, e.pitch, e.yaw), (0.0, 0.0, 0.0));
    }

    #[test]
    fn yaw_only_matches_closed_form_rz() {
        let e = EulerAngles::new(0.0, 0.0, FRAC_PI_4);
        let r = Rotation3::from_euler(&e);
        let diff = (r.matrix() - Rotation3::rotation_z(FRAC_PI_4).matrix()).abs().max();
        assert!(diff <= 1e-12);
    }

    #[test]
    fn euler_round_trip_inside_guard_region() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let e = EulerAngles::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.4..1.4),
                rng.gen_range(-3.0..3.0),
            );
            let back = Rotation3::from_euler(&e).to_euler().unwrap();
            assert_abs_diff_eq!(e.roll, back.roll, epsilon = 1e-9);
            assert_abs_diff_eq!(e.pitch, back.pitch, epsilon = 1e-9);
            assert_abs_diff_eq!(e.yaw, back.yaw, epsilon = 1e-9);
        }
    }

    #[test]
    fn gimbal_lock_is_reported() {
        let e = EulerAngles::new(0.3, FRAC_PI_2 - 1e-9, 0.7);
        let err = Rotation3::from_euler(&e).to_euler().unwrap_err();
        assert!(matches!(err, GeometryError::GimbalLock { .. }));
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..300 {
            // keep below π where the log map is the exact inverse
            let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                .normalize()
                * rng.gen_range(0.0..3.1);
            let r = Rotation3::exp(&v);
            assert_abs_diff_eq!(r.log(), v, epsilon = 1e-9);
            let rt = r.matrix().transpose() * r.matrix();
            assert!((rt - Matrix3::identity()).abs().max() < 1e-9);
            assert_abs_diff_eq!(r.matrix().determinant(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn exp_small_angle_branch() {
        let v = Vector3::new(3e-9, -4e-9, 1e-9);
        let r = Rotation3::exp(&v);
        assert_abs_diff_eq!(r.log(), v, epsilon = 1e-15);
    }

    #[test]
    fn nearest_projects_back_to_rotation() {
        let mut rng = StdRng::seed_from_u64(13);
        let r = Rotation3::exp(&Vector3::new(0.3, -0.2, 0.9));
        let noisy = r.matrix() + Matrix3::from_fn(|_, _| rng.gen_range(-1e-4..1e-4));
        let fixed = Rotation3::nearest(&noisy);
        let rt = fixed.matrix().transpose() * fixed.matrix();
        assert!((rt - Matrix3::identity()).abs().max() < 1e-12);
        assert!(fixed.compose(&r.transpose()).angle() < 1e-3);
    }
}
