//! Roll-constrained GNSS velocity-aided attitude correction.
//!
//! An indirect Kalman filter over the small-angle error vector `y` of the
//! error quaternion `q_e = (1, yᵀ)ᵀ`: the reference attitude comes from the
//! LIDAR odometry, the observation is GNSS velocity compared against the
//! body-frame velocity, and a hard equality constraint `Θᵀ y = 0` forbids
//! any roll correction, because a single-antenna GNSS velocity carries no
//! roll information. The constrained update solves a 4×4 KKT system.
//!
//! Throughout this module `R_n^b(q)` is the navigation-to-body matrix, i.e.
//! the transpose of [`UnitQuaternion::to_rotation`], and the small-angle
//! error matrix is
//!
//! ```text
//!            |  1     2y₃  −2y₂ |
//! R_e(y)  =  | −2y₃    1    2y₁ |  =  I − 2[y×]
//!            |  2y₂  −2y₁    1  |
//! ```

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use thiserror::Error;

use crate::geometry::{skew, Rotation3, UnitQuaternion};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IkfError {
    #[error("roll constraint singular: |R(3,3)| = {r33_abs:.3e} too close to zero")]
    ConstraintSingular { r33_abs: f64 },
    #[error("KKT system numerically singular (cond {cond:.3e}): geometry unobservable")]
    SingularKkt { cond: f64 },
    #[error("error vector norm {norm:.3} exceeds the small-angle bound 0.5")]
    ErrorTooLarge { norm: f64 },
}

/// Small-angle error state with covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorState {
    pub error: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

impl ErrorState {
    pub fn zero(initial_variance: f64) -> Self {
        Self {
            error: Vector3::zeros(),
            covariance: Matrix3::identity() * initial_variance,
        }
    }
}

/// One GNSS velocity epoch: measured body-frame velocity (differentiated
/// from the pose track), navigation-frame GNSS velocity, and its noise.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityObservation {
    pub body_velocity: Vector3<f64>,
    pub nav_velocity: Vector3<f64>,
    pub noise: Matrix3<f64>,
}

/// Reference attitudes for one update: the filter's current attitude and
/// the attitude predicted by the LIDAR odometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeRef {
    pub current: UnitQuaternion,
    pub lidar: UnitQuaternion,
}

/// Navigation-to-body rotation matrix of a quaternion.
fn nav_to_body(q: &UnitQuaternion) -> Matrix3<f64> {
    q.to_rotation().matrix().transpose()
}

/// The explicit small-angle error matrix `I − 2[y×]`.
fn small_angle_matrix(y: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() - 2.0 * skew(y)
}

/// Inject the error estimate into the attitude: `normalize(q ⊙ (1, yᵀ)ᵀ)`.
/// The caller resets the error state to zero afterwards.
pub fn propagate_quaternion(attitude: &UnitQuaternion, error: &Vector3<f64>) -> UnitQuaternion {
    attitude.multiply(&UnitQuaternion::new(1.0, error.x, error.y, error.z))
}

/// Velocity innovation: `w̃ = w_v − R_n^b(q_lidar) · vⁿ`.
pub fn innovation(obs: &VelocityObservation, lidar_attitude: &UnitQuaternion) -> Vector3<f64> {
    obs.body_velocity - nav_to_body(lidar_attitude) * obs.nav_velocity
}

/// Observation Jacobian: `H = 2 [(R_n^b(q_lidar) · vⁿ) ×]`.
pub fn observation_jacobian(
    lidar_attitude: &UnitQuaternion,
    nav_velocity: &Vector3<f64>,
) -> Matrix3<f64> {
    2.0 * skew(&(nav_to_body(lidar_attitude) * nav_velocity))
}

/// Roll-ratio constraint function: the difference between the roll ratio
/// `R(2,3)/R(3,3)` of the error-corrected attitude and that of the LIDAR
/// reference. Zero means the correction applied no roll.
pub fn roll_constraint_value(
    error: &Vector3<f64>,
    attitude: &UnitQuaternion,
    lidar_attitude: &UnitQuaternion,
) -> f64 {
    let corrected = small_angle_matrix(error) * nav_to_body(attitude);
    let reference = nav_to_body(lidar_attitude);
    corrected[(1, 2)] / corrected[(2, 2)] - reference[(1, 2)] / reference[(2, 2)]
}

/// Gradient `Θ` of the roll constraint with respect to the error at y = 0.
///
/// With `r_ij` the entries of `R_n^b(q̂_k)`:
///
/// ```text
/// Θ = ( 2(r₂₃² + r₃₃²)/r₃₃² ,  −2 r₁₃ r₂₃ / r₃₃² ,  −2 r₁₃ / r₃₃ )
/// ```
///
/// obtained by inserting the small-angle correction into the roll ratio and
/// differentiating; the LIDAR reference term is constant in y and drops out.
pub fn roll_constraint_vector(
    attitude: &UnitQuaternion,
    _lidar_attitude: &UnitQuaternion,
) -> Result<Vector3<f64>, IkfError> {
    let r = nav_to_body(attitude);
    let (r13, r23, r33) = (r[(0, 2)], r[(1, 2)], r[(2, 2)]);
    if r33.abs() <= 1e-6 {
        return Err(IkfError::ConstraintSingular { r33_abs: r33.abs() });
    }
    Ok(Vector3::new(
        2.0 * (r23 * r23 + r33 * r33) / (r33 * r33),
        -2.0 * r13 * r23 / (r33 * r33),
        -2.0 * r13 / r33,
    ))
}

/// Solve the constrained least-squares update
///
/// ```text
/// min ½ (Hy − w̃)ᵀ Σ⁻¹ (Hy − w̃)   s.t.  Θᵀ y = 0
/// ```
///
/// by zeroing the Lagrangian gradients, which gives the linear KKT system
///
/// ```text
/// | HᵀΣ⁻¹H  Θ | |y|   | HᵀΣ⁻¹w̃ |
/// | Θᵀ      0 | |λ| = | 0       |
/// ```
pub fn solve_constrained_update(
    jacobian: &Matrix3<f64>,
    noise: &Matrix3<f64>,
    innovation: &Vector3<f64>,
    constraint: &Vector3<f64>,
) -> Result<Vector3<f64>, IkfError> {
    let noise_inv = noise
        .cholesky()
        .ok_or(IkfError::SingularKkt { cond: f64::INFINITY })?
        .inverse();
    let normal = jacobian.transpose() * noise_inv * jacobian;
    let rhs_top = jacobian.transpose() * noise_inv * innovation;

    let mut kkt = Matrix4::zeros();
    for i in 0..3 {
        for j in 0..3 {
            kkt[(i, j)] = normal[(i, j)];
        }
        kkt[(i, 3)] = constraint[i];
        kkt[(3, i)] = constraint[i];
    }
    let svd = kkt.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !cond.is_finite() || cond > 1e12 {
        return Err(IkfError::SingularKkt { cond });
    }
    let rhs = Vector4::new(rhs_top.x, rhs_top.y, rhs_top.z, 0.0);
    let solution = svd.solve(&rhs, 0.0).expect("solvable after cond check");
    Ok(Vector3::new(solution.x, solution.y, solution.z))
}

/// Apply the error estimate through the explicit small-angle matrix:
/// `R = R_e(ŷ) · R_n^b(q̂)`, re-orthonormalized to the nearest rotation.
/// The result is a navigation-to-body matrix.
pub fn apply_correction(
    attitude: &UnitQuaternion,
    error: &Vector3<f64>,
) -> Result<Rotation3, IkfError> {
    let norm = error.norm();
    if norm >= 0.5 {
        return Err(IkfError::ErrorTooLarge { norm });
    }
    let raw = small_angle_matrix(error) * nav_to_body(attitude);
    Ok(Rotation3::nearest(&raw))
}

/// Sequential filter driving one constrained update per GNSS velocity epoch.
#[derive(Debug, Clone)]
pub struct VelocityIkf {
    state: ErrorState,
    /// Isotropic process noise added to the covariance each epoch, rad².
    pub process_noise: f64,
}

impl VelocityIkf {
    pub fn new(initial_variance: f64, process_noise: f64) -> Self {
        Self { state: ErrorState::zero(initial_variance), process_noise }
    }

    pub fn state(&self) -> &ErrorState {
        &self.state
    }

    /// Run one epoch and return the corrected attitude (body-to-navigation
    /// quaternion). The error state is injected and reset to zero.
    pub fn update(
        &mut self,
        attitudes: &AttitudeRef,
        obs: &VelocityObservation,
    ) -> Result<UnitQuaternion, IkfError> {
        // predicted state comes from the LIDAR odometry; error resets each
        // epoch, covariance accumulates process noise
        self.state.covariance += Matrix3::identity() * self.process_noise;

        let jacobian = observation_jacobian(&attitudes.lidar, &obs.nav_velocity);
        let w_tilde = innovation(obs, &attitudes.lidar);
        let constraint = roll_constraint_vector(&attitudes.current, &attitudes.lidar)?;
        let error = solve_constrained_update(&jacobian, &obs.noise, &w_tilde, &constraint)?;
        if error.norm() >= 0.5 {
            return Err(IkfError::ErrorTooLarge { norm: error.norm() });
        }

        // standard IKF covariance contraction for the linearized observation
        let s = jacobian * self.state.covariance * jacobian.transpose() + obs.noise;
        if let Some(chol) = s.cholesky() {
            let gain = self.state.covariance * jacobian.transpose() * chol.inverse();
            let ikh = Matrix3::identity() - gain * jacobian;
            let p = ikh * self.state.covariance * ikh.transpose()
                + gain * obs.noise * gain.transpose();
            self.state.covariance = (p + p.transpose()) * 0.5;
        }

        let corrected = propagate_quaternion(&attitudes.current, &error);
        self.state.error = Vector3::zeros();
        Ok(corrected)
    }
}
