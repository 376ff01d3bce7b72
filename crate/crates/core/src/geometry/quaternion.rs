use nalgebra::{Matrix3, Vector3};

use super::Rotation3;

/// Unit quaternion, Hamilton convention, scalar-first.
///
/// Every constructor normalizes and canonicalizes the sign so that `w >= 0`
/// (ties on `w == 0` broken by the first nonzero vector component), which
/// makes the representation of any rotation unique.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    /// Build from raw components; normalizes and canonicalizes.
    ///
    /// Panics if the components are non-finite or all zero.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        assert!(
            norm.is_finite() && norm > 0.0,
            "quaternion components must be finite and not all zero"
        );
        Self {
            w: w / norm,
            x: x / norm,
            y: y / norm,
            z: z / norm,
        }
        .canonicalized()
    }

    pub fn identity() -> Self {
        Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let a = axis.normalize();
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Exponential map: rotation vector (axis * angle) to quaternion.
    pub fn from_rotation_vector(v: &Vector3<f64>) -> Self {
        let angle = v.norm();
        if angle < 1e-8 {
            // second-order series; normalization in new() absorbs the truncation
            let half = 0.5 - angle * angle / 48.0;
            Self::new(1.0 - angle * angle / 8.0, v.x * half, v.y * half, v.z * half)
        } else {
            Self::from_axis_angle(v, angle)
        }
    }

    /// Logarithm map: quaternion to rotation vector with angle in [0, π].
    pub fn to_rotation_vector(&self) -> Vector3<f64> {
        let v = Vector3::new(self.x, self.y, self.z);
        let s = v.norm();
        if s < 1e-12 {
            // w ≈ 1 by canonicalization; first-order term suffices
            return 2.0 * v;
        }
        let angle = 2.0 * s.atan2(self.w);
        v * (angle / s)
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Hamilton product, renormalized.
    pub fn multiply(&self, rhs: &Self) -> Self {
        let (aw, ax, ay, az) = (self.w, self.x, self.y, self.z);
        let (bw, bx, by, bz) = (rhs.w, rhs.x, rhs.y, rhs.z);
        Self::new(
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )
    }

    /// Inverse rotation (conjugate for unit quaternions).
    pub fn inverse(&self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }.canonicalized()
    }

    /// Rotate a vector: equivalent to `to_rotation() * v`.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        // q v q* expanded via the cross-product form
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Body-to-navigation rotation matrix `R_b^n`.
    pub fn to_rotation(&self) -> Rotation3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Rotation3::from_matrix_unchecked(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    /// Shepperd's method: stable for all rotation angles.
    pub fn from_rotation(r: &Rotation3) -> Self {
        let m = r.matrix();
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        Self::new(w, x, y, z)
    }

    /// Rotation angle (radians, in [0, π]) taking `self` to `other`.
    pub fn angle_to(&self, other: &Self) -> f64 {
        self.inverse().multiply(other).to_rotation_vector().norm()
    }

    /// Spherical linear interpolation from `self` (t = 0) to `other` (t = 1),
    /// along the shorter arc.
    pub fn slerp(&self, other: &Self, t: f64) -> Self {
        let mut dot = self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z;
        let mut b = *other;
        if dot < 0.0 {
            b = Self { w: -b.w, x: -b.x, y: -b.y, z: -b.z };
            dot = -dot;
        }
        if dot > 1.0 - 1e-10 {
            // nearly parallel: linear blend avoids 0/0
            return Self::new(
                self.w + t * (b.w - self.w),
                self.x + t * (b.x - self.x),
                self.y + t * (b.y - self.y),
                self.z + t * (b.z - self.z),
            );
        }
        let theta = dot.clamp(-1.0, 1.0).acos();
        let sin_theta = theta.sin();
        let wa = ((1.0 - t) * theta).sin() / sin_theta;
        let wb = (t * theta).sin() / sin_theta;
        Self::new(
            wa * self.w + wb * b.w,
            wa * self.x + wb * b.x,
            wa * self.y + wb * b.y,
            wa * self.z + wb * b.z,
        )
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    fn canonicalized(mut self) -> Self {
        let flip = self.w < 0.0
            || (self.w == 0.0
                && (self.x < 0.0
                    || (self.x == 0.0 && (self.y < 0.0 || (self.y == 0.0 && self.z < 0.0)))));
        if flip {
            self.w = -self.w;
            self.x = -self.x;
            self.y = -self.y;
            self.z = -self.z;
        }
        self
    }
}
