//! GNSS/IMU extended Kalman filter used to bootstrap and restart the system.
//!
//! Total-state filter over `(roll, pitch, yaw, P_e, P_n, h, V_e, V_n, V_u)`
//! in a local ENU frame anchored at the map origin: high-rate IMU samples
//! drive the prediction, low-rate GNSS fixes (optionally with a magnetometer
//! heading) drive the correction. Geodetic-to-ENU conversion is the caller's
//! preprocessing step; this filter never sees raw geodesy.

use nalgebra::{Matrix3, SMatrix, Vector3};
use thiserror::Error;

use crate::geometry::{EulerAngles, Pose, Rotation3, UnitQuaternion};
use crate::preintegration::ImuSample;

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Matrix7 = SMatrix<f64, 7, 7>;

pub const GRAVITY_MS2: f64 = 9.80665;

/// Longest IMU step the linearized prediction is trusted for.
pub const MAX_PREDICT_DT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EkfError {
    #[error("non-monotonic time: step dt = {dt} must be positive")]
    NonMonotonicTime { dt: f64 },
    #[error("prediction step dt = {dt} exceeds the {MAX_PREDICT_DT} s limit")]
    StepTooLarge { dt: f64 },
    #[error("innovation covariance is numerically singular (cond > {cond:.3e})")]
    SingularInnovationCovariance { cond: f64 },
    #[error("need at least {needed} GNSS fixes for initialization, have {got}")]
    InsufficientFixes { needed: usize, got: usize },
    #[error("heading unobservable: platform stationary and no magnetometer heading")]
    HeadingUnobservable,
}

/// Wrap an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    if a > -PI && a <= PI {
        return a;
    }
    PI - (PI - a).rem_euclid(2.0 * PI)
}

/// Diagonal process noise densities for the prediction step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoise {
    /// Gyro white noise density, rad/s/√Hz.
    pub gyro_density: f64,
    /// Accelerometer white noise density, m/s²/√Hz.
    pub accel_density: f64,
    /// Direct position random walk, m/√s (usually zero).
    pub position_density: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self { gyro_density: 1e-4, accel_density: 1e-2, position_density: 0.0 }
    }
}

/// Filter state: attitude, ENU position, ENU velocity, 9×9 covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub attitude: EulerAngles,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub covariance: Matrix9,
    pub timestamp: f64,
}

impl NavState {
    /// State at rest with a diagonal prior covariance.
    pub fn new(
        attitude: EulerAngles,
        position: Vector3<f64>,
        attitude_var: f64,
        position_var: f64,
        velocity_var: f64,
        timestamp: f64,
    ) -> Self {
        let mut cov = Matrix9::zeros();
        for i in 0..3 {
            cov[(i, i)] = attitude_var;
            cov[(i + 3, i + 3)] = position_var;
            cov[(i + 6, i + 6)] = velocity_var;
        }
        Self { attitude, position, velocity: Vector3::zeros(), covariance: cov, timestamp }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(
            Rotation3::from_euler(&self.attitude).to_quaternion(),
            self.position,
        )
    }

    /// 3×3 position block of the covariance.
    pub fn position_covariance(&self) -> Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(3, 3).into_owned()
    }
}

/// One GNSS epoch: ENU position and velocity, an optional magnetometer yaw,
/// and the 7×7 measurement noise ordered (ψ, P_e, P_n, h, V_e, V_n, V_u).
/// The yaw row/column is ignored when `yaw_mag` is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct GnssMeasurement {
    pub yaw_mag: Option<f64>,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub noise: Matrix7,
    pub timestamp: f64,
}

impl GnssMeasurement {
    /// Diagonal-noise constructor.
    pub fn with_sigmas(
        position: Vector3<f64>,
        velocity: Vector3<f64>,
        yaw_mag: Option<f64>,
        yaw_sigma: f64,
        pos_sigma: f64,
        vel_sigma: f64,
        timestamp: f64,
    ) -> Self {
        let mut noise = Matrix7::zeros();
        noise[(0, 0)] = yaw_sigma * yaw_sigma;
        for i in 1..4 {
            noise[(i, i)] = pos_sigma * pos_sigma;
        }
        for i in 4..7 {
            noise[(i, i)] = vel_sigma * vel_sigma;
        }
        Self { yaw_mag, position, velocity, noise, timestamp }
    }
}

/// Body-rate to Euler-rate matrix for the Z-Y-X convention.
fn euler_rate_matrix(att: &EulerAngles) -> Matrix3<f64> {
    let (sr, cr) = att.roll.sin_cos();
    let (sp, cp) = att.pitch.sin_cos();
    let tp = sp / cp;
    Matrix3::new(
        1.0, sr * tp, cr * tp, //
        0.0, cr, -sr, //
        0.0, sr / cp, cr / cp,
    )
}

/// Columns of ∂(R_b^n · f)/∂(roll, pitch, yaw).
fn force_attitude_jacobian(att: &EulerAngles, force: &Vector3<f64>) -> Matrix3<f64> {
    let rx = Rotation3::rotation_x(att.roll);
    let ry = Rotation3::rotation_y(att.pitch);
    let rz = Rotation3::rotation_z(att.yaw);
    let r = rz.compose(&ry).compose(&rx);
    // generators of the single-axis rotations
    let lx = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
    let ly = Matrix3::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0);
    let lz = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let d_roll = r.matrix() * lx * force;
    let d_pitch = rz.matrix() * ry.matrix() * ly * rx.matrix() * force;
    let d_yaw = lz * r.matrix() * force;
    Matrix3::from_columns(&[d_roll, d_pitch, d_yaw])
}

/// Advance the state by one IMU sample over `dt`.
pub fn ekf_predict(
    state: &NavState,
    imu: &ImuSample,
    dt: f64,
    noise: &ProcessNoise,
) -> Result<NavState, EkfError> {
    if dt <= 0.0 {
        return Err(EkfError::NonMonotonicTime { dt });
    }
    if dt > MAX_PREDICT_DT {
        return Err(EkfError::StepTooLarge { dt });
    }
    let att = &state.attitude;
    let gravity = Vector3::new(0.0, 0.0, -GRAVITY_MS2);
    let e = euler_rate_matrix(att);
    let r = Rotation3::from_euler(att);

    let euler_rates = e * imu.angular_rate;
    let accel_nav = r.apply(&imu.specific_force) + gravity;

    let next_attitude = EulerAngles::new(
        wrap_angle(att.roll + euler_rates.x * dt),
        wrap_angle(att.pitch + euler_rates.y * dt),
        wrap_angle(att.yaw + euler_rates.z * dt),
    );
    let next_position = state.position + state.velocity * dt;
    let next_velocity = state.velocity + accel_nav * dt;

    // first-order transition Jacobian
    let mut f = Matrix9::zeros();
    let (sr, cr) = (att.roll.sin(), att.roll.cos());
    let (sp, cp) = (att.pitch.sin(), att.pitch.cos());
    let (wy, wz) = (imu.angular_rate.y, imu.angular_rate.z);
    let tp = sp / cp;
    // attitude rates w.r.t. attitude
    f[(0, 0)] = (wy * cr - wz * sr) * tp;
    f[(0, 1)] = (wy * sr + wz * cr) / (cp * cp);
    f[(1, 0)] = -wy * sr - wz * cr;
    f[(2, 0)] = (wy * cr - wz * sr) / cp;
    f[(2, 1)] = (wy * sr + wz * cr) * tp / cp;
    // position rate w.r.t. velocity
    for i in 0..3 {
        f[(3 + i, 6 + i)] = 1.0;
    }
    // velocity rate w.r.t. attitude
    let dv = force_attitude_jacobian(att, &imu.specific_force);
    for i in 0..3 {
        for j in 0..3 {
            f[(6 + i, j)] = dv[(i, j)];
        }
    }
    let transition = Matrix9::identity() + f * dt;

    // process noise mapped through the input channels
    let q_att = (noise.gyro_density * noise.gyro_density * dt) * (e * e.transpose());
    let q_vel = noise.accel_density * noise.accel_density * dt;
    let q_pos = noise.position_density * noise.position_density * dt;
    let mut q = Matrix9::zeros();
    for i in 0..3 {
        for j in 0..3 {
            q[(i, j)] = q_att[(i, j)];
        }
        q[(3 + i, 3 + i)] = q_pos;
        q[(6 + i, 6 + i)] = q_vel;
    }

    let mut covariance = transition * state.covariance * transition.transpose() + q;
    covariance = (covariance + covariance.transpose()) * 0.5;

    Ok(NavState {
        attitude: next_attitude,
        position: next_position,
        velocity: next_velocity,
        covariance,
        timestamp: state.timestamp + dt,
    })
}

/// GNSS/magnetometer correction.
///
/// The observation selects `(ψ, P_e, P_n, h, V_e, V_n, V_u)` from the state;
/// the yaw row is dropped when the measurement has no magnetometer heading.
pub fn ekf_update(state: &NavState, meas: &GnssMeasurement) -> Result<NavState, EkfError> {
    if meas.timestamp < state.timestamp {
        return Err(EkfError::NonMonotonicTime { dt: meas.timestamp - state.timestamp });
    }
    let have_mag = meas.yaw_mag.is_some();
    let rows = if have_mag { 7 } else { 6 };
    let offset = if have_mag { 0 } else { 1 };

    let mut h = nalgebra::DMatrix::<f64>::zeros(rows, 9);
    let mut innovation = nalgebra::DVector::<f64>::zeros(rows);
    let mut r = nalgebra::DMatrix::<f64>::zeros(rows, rows);
    for i in 0..rows {
        for j in 0..rows {
            r[(i, j)] = meas.noise[(i + offset, j + offset)];
        }
    }
    let mut row = 0;
    if let Some(yaw) = meas.yaw_mag {
        h[(row, 2)] = 1.0;
        innovation[row] = wrap_angle(yaw - state.attitude.yaw);
        row += 1;
    }
    for i in 0..3 {
        h[(row, 3 + i)] = 1.0;
        innovation[row] = meas.position[i] - state.position[i];
        row += 1;
    }
    for i in 0..3 {
        h[(row, 6 + i)] = 1.0;
        innovation[row] = meas.velocity[i] - state.velocity[i];
        row += 1;
    }

    let p = nalgebra::DMatrix::from_fn(9, 9, |i, j| state.covariance[(i, j)]);
    let s = &h * &p * h.transpose() + &r;
    let svd = s.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !cond.is_finite() || cond > 1e12 {
        return Err(EkfError::SingularInnovationCovariance { cond });
    }
    let s_inv = svd.pseudo_inverse(0.0).expect("pseudo inverse after cond check");
    let gain = &p * h.transpose() * s_inv;
    let dx: nalgebra::DVector<f64> = &gain * innovation;

    // Joseph form keeps the covariance symmetric PSD
    let identity = nalgebra::DMatrix::<f64>::identity(9, 9);
    let ikh = &identity - &gain * &h;
    let p_new = &ikh * &p * ikh.transpose() + &gain * &r * gain.transpose();

    let mut covariance = Matrix9::zeros();
    for i in 0..9 {
        for j in 0..9 {
            covariance[(i, j)] = 0.5 * (p_new[(i, j)] + p_new[(j, i)]);
        }
    }
    Ok(NavState {
        attitude: EulerAngles::new(
            wrap_angle(state.attitude.roll + dx[0]),
            wrap_angle(state.attitude.pitch + dx[1]),
            wrap_angle(state.attitude.yaw + dx[2]),
        ),
        position: state.position + Vector3::new(dx[3], dx[4], dx[5]),
        velocity: state.velocity + Vector3::new(dx[6], dx[7], dx[8]),
        covariance,
        timestamp: meas.timestamp,
    })
}

/// Minimum ground speed for deriving heading from the velocity vector.
pub const MIN_HEADING_SPEED: f64 = 0.5;

/// Coarse map-frame pose from a batch of GNSS fixes: averaged position, yaw
/// from magnetometer headings when present or from the mean velocity
/// direction otherwise, level roll and pitch.
pub fn global_init(fixes: &[GnssMeasurement], min_count: usize) -> Result<Pose, EkfError> {
    if fixes.len() < min_count {
        return Err(EkfError::InsufficientFixes { needed: min_count, got: fixes.len() });
    }
    let mut position = Vector3::zeros();
    for fix in fixes {
        position += fix.position;
    }
    position /= fixes.len() as f64;

    let mags: Vec<f64> = fixes.iter().filter_map(|f| f.yaw_mag).collect();
    let yaw = if !mags.is_empty() {
        // circular mean
        let (s, c) = mags
            .iter()
            .fold((0.0, 0.0), |(s, c), m| (s + m.sin(), c + m.cos()));
        s.atan2(c)
    } else {
        let mut mean_v = Vector3::zeros();
        let mut moving = 0usize;
        for fix in fixes {
            if fix.velocity.norm() > MIN_HEADING_SPEED {
                mean_v += fix.velocity;
                moving += 1;
            }
        }
        if moving == 0 {
            return Err(EkfError::HeadingUnobservable);
        }
        mean_v.y.atan2(mean_v.x)
    };
    Ok(Pose::new(
        UnitQuaternion::from_axis_angle(&Vector3::z(), yaw),
        position,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rest_sample() -> ImuSample {
        // specific force exactly cancels gravity at level attitude
        ImuSample {
            angular_rate: Vector3::zeros(),
            specific_force: Vector3::new(0.0, 0.0, GRAVITY_MS2),
            timestamp: 0.0,
        }
    }

    fn fresh_state() -> NavState {
        NavState::new(EulerAngles::zero(), Vector3::zeros(), 0.01, 100.0, 1.0, 0.0)
    }

    fn min_eigenvalue(m: &Matrix9) -> f64 {
        let sym = (m + m.transpose()) * 0.5;
        sym.symmetric_eigen().eigenvalues.min()
    }

    #[test]
    fn static_equilibrium_keeps_state() {
        let state = fresh_state();
        let next = ekf_predict(&state, &rest_sample(), 0.01, &ProcessNoise::default()).unwrap();
        assert_eq!(next.position, Vector3::zeros());
        assert_eq!(next.velocity, Vector3::zeros());
        assert_eq!(next.attitude, EulerAngles::zero());
        assert!(next.covariance.trace() > state.covariance.trace());
    }

    #[test]
    fn constant_velocity_moves_position() {
        let mut state = fresh_state();
        state.velocity = Vector3::new(1.0, 0.0, 0.0);
        let mut t = 0.0;
        while t < 1.0 - 1e-9 {
            state = ekf_predict(&state, &rest_sample(), 0.01, &ProcessNoise::default()).unwrap();
            t += 0.01;
        }
        assert_abs_diff_eq!(state.position.x, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(state.velocity.x, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_yaw_rate_integrates_heading() {
        let mut state = fresh_state();
        let imu = ImuSample {
            angular_rate: Vector3::new(0.0, 0.0, FRAC_PI_2),
            specific_force: Vector3::new(0.0, 0.0, GRAVITY_MS2),
            timestamp: 0.0,
        };
        for _ in 0..1000 {
            state = ekf_predict(&state, &imu, 1e-3, &ProcessNoise::default()).unwrap();
        }
        assert_abs_diff_eq!(state.attitude.yaw, FRAC_PI_2, epsilon = 1e-6);
    }

    #[test]
    fn non_positive_dt_rejected() {
        let state = fresh_state();
        assert!(matches!(
            ekf_predict(&state, &rest_sample(), 0.0, &ProcessNoise::default()),
            Err(EkfError::NonMonotonicTime { .. })
        ));
        assert!(matches!(
            ekf_predict(&state, &rest_sample(), 0.2, &ProcessNoise::default()),
            Err(EkfError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn zero_innovation_keeps_state_and_shrinks_covariance() {
        let state = fresh_state();
        let meas = GnssMeasurement::with_sigmas(
            state.position,
            state.velocity,
            Some(state.attitude.yaw),
            0.05,
            1.0,
            0.1,
            0.0,
        );
        let next = ekf_update(&state, &meas).unwrap();
        assert_eq!(next.position, state.position);
        assert_eq!(next.velocity, state.velocity);
        assert_eq!(next.attitude, state.attitude);
        let observed_trace =
            |s: &NavState| (2..9).map(|i| s.covariance[(i, i)]).sum::<f64>();
        assert!(observed_trace(&next) < observed_trace(&state));
    }

    #[test]
    fn uninformative_measurement_changes_nothing() {
        let state = fresh_state();
        let mut meas = GnssMeasurement::with_sigmas(
            Vector3::new(50.0, -20.0, 5.0),
            Vector3::new(3.0, 1.0, -1.0),
            Some(1.0),
            0.05,
            1.0,
            0.1,
            0.0,
        );
        meas.noise *= 1e12;
        let next = ekf_update(&state, &meas).unwrap();
        assert!((next.position - state.position).norm() <= 1e-6);
        assert!((next.velocity - state.velocity).norm() <= 1e-6);
        assert!((next.attitude.yaw - state.attitude.yaw).abs() <= 1e-6);
    }

    #[test]
    fn per_component_infinite_noise_leaves_component() {
        // fresh diagonal covariance: an uninformative row must not touch its
        // own state component even while other rows update theirs
        for blocked in 0..7 {
            let state = fresh_state();
            let mut meas = GnssMeasurement::with_sigmas(
                Vector3::new(10.0, -5.0, 2.0),
                Vector3::new(1.0, 0.5, -0.2),
                Some(0.4),
                1.0,
                1.0,
                1.0,
                0.0,
            );
            // large enough to be uninformative, small enough to keep S
            // clear of the condition-number gate
            meas.noise[(blocked, blocked)] *= 1e10;
            let next = ekf_update(&state, &meas).unwrap();
            let state_vec = |s: &NavState| {
                [
                    s.attitude.yaw,
                    s.position.x,
                    s.position.y,
                    s.position.z,
                    s.velocity.x,
                    s.velocity.y,
                    s.velocity.z,
                ]
            };
            let before = state_vec(&state);
            let after = state_vec(&next);
            assert!(
                (after[blocked] - before[blocked]).abs() <= 1e-6,
                "component {blocked} moved by {}",
                (after[blocked] - before[blocked]).abs()
            );
        }
    }

    #[test]
    fn singular_innovation_covariance_detected() {
        let mut state = fresh_state();
        state.covariance = Matrix9::zeros();
        let mut meas = GnssMeasurement::with_sigmas(
            Vector3::zeros(),
            Vector3::zeros(),
            Some(0.0),
            0.0,
            0.0,
            0.0,
            0.0,
        );
        meas.noise = Matrix7::zeros();
        assert!(matches!(
            ekf_update(&state, &meas),
            Err(EkfError::SingularInnovationCovariance { .. })
        ));
    }

    #[test]
    fn yaw_innovation_is_wrapped() {
        let mut state = fresh_state();
        state.attitude.yaw = PI - 0.01;
        let meas = GnssMeasurement::with_sigmas(
            Vector3::zeros(),
            Vector3::zeros(),
            Some(-PI + 0.01), // 0.02 rad away across the seam
            0.01,
            100.0,
            100.0,
            0.0,
        );
        let next = ekf_update(&state, &meas).unwrap();
        // must move toward +π and wrap, not swing through zero
        let err = wrap_angle(next.attitude.yaw - (-PI + 0.01)).abs();
        assert!(err < 0.02, "wrapped yaw error {err}");
        assert!(next.attitude.yaw.abs() > 3.0, "yaw left the seam: {}", next.attitude.yaw);
    }

    #[test]
    fn static_fixes_converge_to_batch_mean() {
        let mut rng = StdRng::seed_from_u64(61);
        let sigma = 1.0;
        let normal = Normal::new(0.0, sigma).unwrap();
        let truth = Vector3::new(12.0, -7.0, 3.0);
        let n = 100;
        let mut hits = 0;
        for _ in 0..100 {
            let mut state = NavState::new(EulerAngles::zero(), Vector3::zeros(), 0.01, 1e4, 1.0, 0.0);
            let mut batch = Vector3::zeros();
            let noise = ProcessNoise { gyro_density: 0.0, accel_density: 0.0, position_density: 0.0 };
            for _ in 0..n {
                state = ekf_predict(&state, &rest_sample(), 0.01, &noise).unwrap();
                let fix = truth + Vector3::new(
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                );
                batch += fix;
                let meas =
                    GnssMeasurement::with_sigmas(fix, Vector3::zeros(), None, 0.0, sigma, 0.05, state.timestamp);
                state = ekf_update(&state, &meas).unwrap();
            }
            batch /= n as f64;
            let bound = 3.0 * sigma / (n as f64).sqrt();
            if (state.position - truth).norm() <= bound {
                hits += 1;
            }
            // the filter must agree with the batch-mean oracle within its own 3σ
            assert!(
                (state.position - batch).norm() <= bound,
                "filter vs batch mean: {}",
                (state.position - batch).norm()
            );
        }
        assert!(hits >= 95, "only {hits}/100 trials within 3σ/√n of truth");
    }

    #[test]
    fn covariance_stays_psd_through_interleaving() {
        let mut rng = StdRng::seed_from_u64(62);
        let mut state = fresh_state();
        let mut t = 0.0;
        for step in 0..400 {
            let imu = ImuSample {
                angular_rate: Vector3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ),
                specific_force: Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    GRAVITY_MS2 + rng.gen_range(-1.0..1.0),
                ),
                timestamp: t,
            };
            t += 0.02;
            state = ekf_predict(&state, &imu, 0.02, &ProcessNoise::default()).unwrap();
            if step % 7 == 0 {
                let meas = GnssMeasurement::with_sigmas(
                    state.position + Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                    state.velocity,
                    if step % 14 == 0 { Some(rng.gen_range(-3.0..3.0)) } else { None },
                    0.1,
                    1.5,
                    0.2,
                    t,
                );
                state = ekf_update(&state, &meas).unwrap();
            }
            assert!(min_eigenvalue(&state.covariance) >= -1e-9);
        }
    }

    #[test]
    fn static_position_trace_monotone_after_burn_in() {
        let mut rng = StdRng::seed_from_u64(63);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut state = NavState::new(EulerAngles::zero(), Vector3::zeros(), 0.01, 1e4, 1.0, 0.0);
        let mut traces = Vec::new();
        let mut t = 0.0;
        for _ in 0..60 {
            for _ in 0..10 {
                state = ekf_predict(&state, &rest_sample(), 0.1, &ProcessNoise::default()).unwrap();
                t += 0.1;
            }
            let fix = Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            let meas = GnssMeasurement::with_sigmas(fix, Vector3::zeros(), None, 0.0, 1.0, 0.1, t);
            state = ekf_update(&state, &meas).unwrap();
            traces.push(state.position_covariance().trace());
        }
        for w in traces[5..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn init_from_identical_fixes_with_mag() {
        let fixes: Vec<GnssMeasurement> = (0..5)
            .map(|k| {
                GnssMeasurement::with_sigmas(
                    Vector3::new(10.0, 20.0, 0.0),
                    Vector3::zeros(),
                    Some(0.0),
                    0.05,
                    1.0,
                    0.1,
                    k as f64,
                )
            })
            .collect();
        let pose = global_init(&fixes, 5).unwrap();
        assert_abs_diff_eq!(pose.translation, Vector3::new(10.0, 20.0, 0.0), epsilon = 1e-12);
        assert!(pose.rotation.angle_to(&UnitQuaternion::identity()) < 1e-12);
    }

    #[test]
    fn init_heading_from_eastward_velocity() {
        let fixes: Vec<GnssMeasurement> = (0..5)
            .map(|k| {
                GnssMeasurement::with_sigmas(
                    Vector3::new(k as f64, 0.0, 0.0),
                    Vector3::new(1.0, 0.0, 0.0),
                    None,
                    0.0,
                    1.0,
                    0.1,
                    k as f64,
                )
            })
            .collect();
        let pose = global_init(&fixes, 5).unwrap();
        let yaw = pose.rotation.to_rotation().to_euler().unwrap().yaw;
        assert!(yaw.abs() < 1e-3, "yaw {yaw}");
    }

    #[test]
    fn init_requires_enough_fixes() {
        let fixes: Vec<GnssMeasurement> = (0..2)
            .map(|k| {
                GnssMeasurement::with_sigmas(Vector3::zeros(), Vector3::zeros(), Some(0.0), 0.05, 1.0, 0.1, k as f64)
            })
            .collect();
        assert!(matches!(
            global_init(&fixes, 5),
            Err(EkfError::InsufficientFixes { needed: 5, got: 2 })
        ));
    }

    #[test]
    fn init_stationary_without_mag_is_unobservable() {
        let fixes: Vec<GnssMeasurement> = (0..5)
            .map(|k| {
                GnssMeasurement::with_sigmas(Vector3::zeros(), Vector3::new(0.1, 0.0, 0.0), None, 0.0, 1.0, 0.1, k as f64)
            })
            .collect();
        assert!(matches!(global_init(&fixes, 5), Err(EkfError::HeadingUnobservable)));
    }

    #[test]
    fn angle_wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-7.0 * PI), PI, epsilon = 1e-9);
        assert_eq!(wrap_angle(0.3), 0.3);
    }

    #[test]
    fn attitude_jacobian_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(64);
        for _ in 0..50 {
            let att = EulerAngles::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-3.0..3.0),
            );
            let f = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let jac = force_attitude_jacobian(&att, &f);
            let h = 1e-7;
            for (col, delta) in [
                EulerAngles::new(h, 0.0, 0.0),
                EulerAngles::new(0.0, h, 0.0),
                EulerAngles::new(0.0, 0.0, h),
            ]
            .iter()
            .enumerate()
            {
                let plus = EulerAngles::new(att.roll + delta.roll, att.pitch + delta.pitch, att.yaw + delta.yaw);
                let minus = EulerAngles::new(att.roll - delta.roll, att.pitch - delta.pitch, att.yaw - delta.yaw);
                let numeric =
                    (Rotation3::from_euler(&plus).apply(&f) - Rotation3::from_euler(&minus).apply(&f)) / (2.0 * h);
                let analytic = jac.column(col);
                assert!((numeric - analytic).norm() < 1e-5);
            }
        }
    }
}
