//! Pose fusion: quadratic interpolation of the LIDAR pose track, the
//! trace-switched GNSS blending rule, and registration failure judgment.
//!
//! The fusion rule switches on the trace of the GNSS position covariance Ξ
//! against the threshold `A`. Degraded GNSS (`tr(Ξ) > A`) keeps only the
//! GNSS velocity integral, blended with the LIDAR relative motion; healthy
//! GNSS (`tr(Ξ) ≤ A`, boundary inclusive) blends absolute positions. The
//! weights α and β lean toward the LIDAR side as they approach 1.

use nalgebra::{Matrix3, SMatrix, Vector3};
use thiserror::Error;

use crate::geometry::{Pose, Rotation3, UnitQuaternion};
use crate::registration::RegistrationResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdomSource {
    Gnss,
    Imu,
    Lidar,
    Fused,
}

/// One pose sample on an odometry track.
#[derive(Debug, Clone, PartialEq)]
pub struct OdomSample {
    pub timestamp: f64,
    pub pose: Pose,
    pub covariance: Option<SMatrix<f64, 6, 6>>,
    pub source: OdomSource,
}

impl OdomSample {
    pub fn new(timestamp: f64, pose: Pose, source: OdomSource) -> Self {
        Self { timestamp, pose, covariance: None, source }
    }
}

/// Fusion weights, switch threshold, and failure gates.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Weight of the LIDAR-side pose in the healthy-GNSS branch, in [0, 1].
    pub alpha: f64,
    /// Weight of the LIDAR relative motion in the degraded-GNSS branch, in [0, 1].
    pub beta: f64,
    /// Trace threshold on the GNSS position covariance, m².
    pub trace_threshold: f64,
    /// Registration fitness above this is a failure, m.
    pub failure_fitness_gate: f64,
    /// Allowed translation deviation from the IMU-predicted pose, m.
    pub failure_translation_gate: f64,
    /// Allowed rotation deviation from the IMU-predicted pose, rad.
    pub failure_rotation_gate: f64,
    /// Number of recent LIDAR poses kept for interpolation.
    pub interpolation_window: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 0.9,
            trace_threshold: 25.0,
            failure_fitness_gate: 0.5,
            failure_translation_gate: 2.0,
            failure_rotation_gate: 0.2,
            interpolation_window: 3,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err("alpha must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err("beta must be in [0, 1]".into());
        }
        if !(self.trace_threshold > 0.0) {
            return Err("trace_threshold must be positive".into());
        }
        for (name, v) in [
            ("failure_fitness_gate", self.failure_fitness_gate),
            ("failure_translation_gate", self.failure_translation_gate),
            ("failure_rotation_gate", self.failure_rotation_gate),
        ] {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.interpolation_window < 3 {
            return Err("interpolation_window must be at least 3".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("interpolation window has {got} samples, need at least 3")]
    InsufficientWindow { got: usize },
    #[error("time {t} is {beyond:.3} s beyond the supported window")]
    ExtrapolationTooFar { t: f64, beyond: f64 },
    #[error("event at {t} precedes the previous event at {previous}")]
    NonMonotonicEvent { t: f64, previous: f64 },
}

/// Extrapolation allowance past the newest sample, seconds.
pub const MAX_EXTRAPOLATION: f64 = 0.2;

/// Quadratic coefficients through three samples (Lagrange basis weights).
fn quadratic_weights(times: [f64; 3], t: f64) -> [f64; 3] {
    let [t0, t1, t2] = times;
    [
        (t - t1) * (t - t2) / ((t0 - t1) * (t0 - t2)),
        (t - t0) * (t - t2) / ((t1 - t0) * (t1 - t2)),
        (t - t0) * (t - t1) / ((t2 - t0) * (t2 - t1)),
    ]
}

/// Interpolate the LIDAR pose track at time `t` using a quadratic through
/// the three most recent samples: per-axis fits for translation, a fit in
/// rotation-vector coordinates relative to the middle sample for attitude.
/// Exact at the sample timestamps.
pub fn interpolate_pose(window: &[OdomSample], t: f64) -> Result<Pose, FusionError> {
    if window.len() < 3 {
        return Err(FusionError::InsufficientWindow { got: window.len() });
    }
    let samples = &window[window.len() - 3..];
    let times = [samples[0].timestamp, samples[1].timestamp, samples[2].timestamp];
    if t < times[0] {
        return Err(FusionError::ExtrapolationTooFar { t, beyond: times[0] - t });
    }
    if t > times[2] + MAX_EXTRAPOLATION {
        return Err(FusionError::ExtrapolationTooFar { t, beyond: t - times[2] - MAX_EXTRAPOLATION });
    }
    let w = quadratic_weights(times, t);

    let translation = w[0] * samples[0].pose.translation
        + w[1] * samples[1].pose.translation
        + w[2] * samples[2].pose.translation;

    // rotation: quadratic in log coordinates of increments from the middle
    let mid = &samples[1].pose.rotation;
    let mid_inv = mid.inverse();
    let logs = [
        mid_inv.multiply(&samples[0].pose.rotation).to_rotation_vector(),
        Vector3::zeros(),
        mid_inv.multiply(&samples[2].pose.rotation).to_rotation_vector(),
    ];
    let log_t = w[0] * logs[0] + w[1] * logs[1] + w[2] * logs[2];
    let rotation = mid.multiply(&UnitQuaternion::from_rotation_vector(&log_t));

    Ok(Pose::new(rotation, translation))
}

/// Inputs to one fusion step at timestamp `t`.
#[derive(Debug, Clone)]
pub struct FusionInputs {
    /// IMU-LIDAR output at `t` (`Q_t'`).
    pub lidar_fused: OdomSample,
    /// GNSS-derived pose at `t` (`Q_t^g`).
    pub gnss: OdomSample,
    /// GNSS velocity over the epoch, m/s (`V_g`).
    pub gnss_velocity: Vector3<f64>,
    /// Relative pose from the previous to the current LIDAR output, in the
    /// previous body frame (`ΔQ^l`).
    pub lidar_delta: Pose,
    /// Previous fused output (`Q_{t-1}^l`).
    pub previous: OdomSample,
    /// GNSS position covariance (`Ξ`), m².
    pub gnss_covariance: Matrix3<f64>,
}

/// Trace-switched fusion of the LIDAR-side pose with GNSS information.
///
/// Degraded branch (`tr(Ξ) > A`): the previous fused pose advanced by the
/// β-weighted LIDAR relative motion and the (1−β)-weighted GNSS velocity
/// integral; rotation follows the LIDAR branch. Healthy branch
/// (`tr(Ξ) ≤ A`, boundary inclusive): componentwise position blend
/// `(1−α)·gnss + α·lidar` with spherical rotation interpolation.
pub fn fuse(inputs: &FusionInputs, config: &FusionConfig) -> OdomSample {
    let t = inputs.lidar_fused.timestamp;
    let trace = inputs.gnss_covariance.trace();
    let pose = if trace > config.trace_threshold {
        let dt = t - inputs.previous.timestamp;
        let prev = &inputs.previous.pose;
        let lidar_advanced = prev.compose(&inputs.lidar_delta);
        let translation = prev.translation
            + config.beta * (lidar_advanced.translation - prev.translation)
            + (1.0 - config.beta) * inputs.gnss_velocity * dt;
        Pose::new(lidar_advanced.rotation, translation)
    } else {
        let translation = (1.0 - config.alpha) * inputs.gnss.pose.translation
            + config.alpha * inputs.lidar_fused.pose.translation;
        let rotation = inputs
            .gnss
            .pose
            .rotation
            .slerp(&inputs.lidar_fused.pose.rotation, config.alpha);
        Pose::new(rotation, translation)
    };
    OdomSample::new(t, pose, OdomSource::Fused)
}

/// Why a registration was judged failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureReason {
    NotConverged,
    FitnessAboveGate,
    TranslationDeviation,
    RotationDeviation,
    LowInlierFraction,
}

/// Verdict of the failure detector with every gate that fired.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureReport {
    pub failed: bool,
    pub reasons: Vec<FailureReason>,
}

/// Minimum inlier fraction below which a registration is distrusted.
pub const MIN_INLIER_FRACTION: f64 = 0.3;

/// Judge a registration against the IMU-predicted pose. All comparisons are
/// strict: a value exactly at its gate passes.
pub fn detect_registration_failure(
    result: &RegistrationResult,
    imu_predicted: &Pose,
    config: &FusionConfig,
) -> FailureReport {
    let mut reasons = Vec::new();
    if !result.converged {
        reasons.push(FailureReason::NotConverged);
    }
    if result.fitness > config.failure_fitness_gate {
        reasons.push(FailureReason::FitnessAboveGate);
    }
    let (dt, dr) = result.pose.distance_to(imu_predicted);
    if dt > config.failure_translation_gate {
        reasons.push(FailureReason::TranslationDeviation);
    }
    if dr > config.failure_rotation_gate {
        reasons.push(FailureReason::RotationDeviation);
    }
    if result.inlier_fraction < MIN_INLIER_FRACTION {
        reasons.push(FailureReason::LowInlierFraction);
    }
    FailureReport { failed: !reasons.is_empty(), reasons }
}

/// Estimate the body-frame velocity at the middle of the last three window
/// samples by central differences over the fused pose track.
pub fn central_difference_velocity(window: &[OdomSample]) -> Option<(Vector3<f64>, UnitQuaternion)> {
    if window.len() < 3 {
        return None;
    }
    let s = &window[window.len() - 3..];
    let dt = s[2].timestamp - s[0].timestamp;
    if dt <= 0.0 {
        return None;
    }
    let v_nav = (s[2].pose.translation - s[0].pose.translation) / dt;
    let attitude = s[1].pose.rotation;
    let v_body = attitude.to_rotation().transpose().apply(&v_nav);
    Some((v_body, attitude))
}

/// Rotation part helper for building yaw-only poses.
pub fn yaw_pose(position: Vector3<f64>, yaw: f64) -> Pose {
    Pose::new(
        Rotation3::rotation_z(yaw).to_quaternion(),
        position,
    )
}
