//! IMU preintegration: accumulate rotation/velocity/position increments
//! between LIDAR keyframes, independent of the absolute start state, then
//! predict the next pose from any anchor state.
//!
//! The accumulated delta is defined so that for endpoint states `i`, `j`
//! and gravity `g`:
//!
//! ```text
//! Δv = Rᵢᵀ (vⱼ − vᵢ − g Δt)
//! Δp = Rᵢᵀ (pⱼ − pᵢ − vᵢ Δt − ½ g Δt²)
//! ΔR = Rᵢᵀ Rⱼ
//! ```
//!
//! Gravity never enters the accumulation itself, only the prediction, so a
//! completed delta can be reused under any gravity convention.

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{Pose, Rotation3, UnitQuaternion};

/// Plausibility caps used by [`ImuBias::is_plausible`].
pub const GYRO_BIAS_CAP: f64 = 0.1; // rad/s
pub const ACCEL_BIAS_CAP: f64 = 1.0; // m/s²

/// One IMU reading: angular rate (rad/s) and specific force (m/s²) in the
/// body frame. The specific force is what an accelerometer measures, i.e.
/// it contains the gravity reaction: at rest it points up with magnitude g.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub angular_rate: Vector3<f64>,
    pub specific_force: Vector3<f64>,
    pub timestamp: f64,
}

/// Constant additive sensor biases, held fixed over a preintegration window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuBias {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuBias {
    pub fn new(gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { gyro, accel }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_plausible(&self) -> bool {
        self.gyro.iter().all(|v| v.is_finite())
            && self.accel.iter().all(|v| v.is_finite())
            && self.gyro.norm() < GYRO_BIAS_CAP
            && self.accel.norm() < ACCEL_BIAS_CAP
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreintegrationError {
    #[error("integration step dt = {dt} is not positive")]
    NonPositiveDt { dt: f64 },
}

/// Subtract the bias from a raw sample. Zero-mean noise is not modeled
/// per-sample; it is absorbed by the consuming filters' covariances.
pub fn correct_sample(raw: &ImuSample, bias: &ImuBias) -> ImuSample {
    ImuSample {
        angular_rate: raw.angular_rate - bias.gyro,
        specific_force: raw.specific_force - bias.accel,
        timestamp: raw.timestamp,
    }
}

/// Accumulated motion increment between two keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedDelta {
    rotation: Rotation3,
    velocity: Vector3<f64>,
    position: Vector3<f64>,
    duration: f64,
    sample_count: usize,
}

impl Default for PreintegratedDelta {
    fn default() -> Self {
        Self::identity()
    }
}

impl PreintegratedDelta {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            velocity: Vector3::zeros(),
            position: Vector3::zeros(),
            duration: 0.0,
            sample_count: 0,
        }
    }

    pub fn rotation(&self) -> &Rotation3 {
        &self.rotation
    }

    pub fn velocity(&self) -> &Vector3<f64> {
        &self.velocity
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.position
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Advance the accumulator by one bias-corrected sample over `dt`.
    ///
    /// Midpoint rule: the specific force is rotated by the half-step
    /// attitude, giving second-order accuracy while staying exact for
    /// constant inputs.
    pub fn integrate(&mut self, sample: &ImuSample, dt: f64) -> Result<(), PreintegrationError> {
        if dt <= 0.0 {
            return Err(PreintegrationError::NonPositiveDt { dt });
        }
        let half_step = Rotation3::exp(&(sample.angular_rate * (0.5 * dt)));
        let acc = self.rotation.compose(&half_step).apply(&sample.specific_force);
        self.position += self.velocity * dt + acc * (0.5 * dt * dt);
        self.velocity += acc * dt;
        self.rotation = self.rotation.compose(&Rotation3::exp(&(sample.angular_rate * dt)));
        self.duration += dt;
        self.sample_count += 1;
        Ok(())
    }

    /// Chain two consecutive deltas into the delta of the combined interval.
    pub fn compose(&self, later: &Self) -> Self {
        Self {
            rotation: self.rotation.compose(&later.rotation),
            velocity: self.velocity + self.rotation.apply(&later.velocity),
            position: self.position
                + self.velocity * later.duration
                + self.rotation.apply(&later.position),
            duration: self.duration + later.duration,
            sample_count: self.sample_count + later.sample_count,
        }
    }
}

/// Full kinematic state at a keyframe: attitude, velocity, position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub rotation: UnitQuaternion,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
}

impl KinematicState {
    pub fn at_rest(rotation: UnitQuaternion, position: Vector3<f64>) -> Self {
        Self { rotation, velocity: Vector3::zeros(), position }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.position)
    }
}

/// Propagate a keyframe state forward through a completed delta.
pub fn predict_pose(
    state: &KinematicState,
    delta: &PreintegratedDelta,
    gravity: &Vector3<f64>,
) -> KinematicState {
    let rot_i = state.rotation.to_rotation();
    let dt = delta.duration;
    KinematicState {
        rotation: rot_i.compose(&delta.rotation).to_quaternion(),
        velocity: state.velocity + gravity * dt + rot_i.apply(&delta.velocity),
        position: state.position
            + state.velocity * dt
            + gravity * (0.5 * dt * dt)
            + rot_i.apply(&delta.position),
    }
}

/// Rigid IMU-to-LIDAR transform: left-applied to an IMU pose it yields the
/// pose of the platform in the LIDAR (map) frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub lidar_from_imu: Pose,
}

impl Extrinsics {
    pub fn identity() -> Self {
        Self { lidar_from_imu: Pose::identity() }
    }
}

/// Express an IMU odometry pose in the LIDAR frame.
pub fn to_lidar_frame(imu_pose: &Pose, extrinsics: &Extrinsics) -> Pose {
    extrinsics.lidar_from_imu.compose(imu_pose)
}
