//! The localization state machine: initialize from GNSS, track with
//! IMU-predicted scan-to-map registration, re-localize on failure.
//!
//! Mode transitions:
//!
//! ```text
//! Initializing --global init + relocalize ok--> Tracking
//! Tracking     --registration failure------->  Relocalizing
//! Relocalizing --relocalize ok-------------->  Tracking
//! Relocalizing --r_max exhausted------------>  Initializing
//! ```
//!
//! Events are consumed in nondecreasing timestamp order. Fused poses are
//! emitted at LIDAR keyframes while Tracking, never while Initializing.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::fusion::{detect_registration_failure, fuse, FusionInputs, OdomSample, OdomSource};
use crate::geometry::{Pose, UnitQuaternion};
use crate::gnss_ekf::{
    ekf_predict, ekf_update, global_init, wrap_angle, EkfError, GnssMeasurement, Matrix7, NavState,
    ProcessNoise, MAX_PREDICT_DT,
};
use crate::map::{GlobalMap, PointCloud};
use crate::preintegration::{
    predict_pose, to_lidar_frame, ImuSample, KinematicState, PreintegratedDelta,
};
use crate::registration::{register, relocalize, IcpError};
use crate::velocity_ikf::{AttitudeRef, VelocityIkf, VelocityObservation};

/// One GNSS record as it arrives from the receiver: ENU position and
/// velocity plus the reported 3×3 position covariance Ξ.
#[derive(Debug, Clone, PartialEq)]
pub struct GnssFix {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

/// Timestamped sensor event.
#[derive(Debug, Clone)]
pub enum SensorEvent {
    Imu(ImuSample),
    Gnss(GnssFix),
    Magnetometer { timestamp: f64, yaw: f64 },
    LidarScan { timestamp: f64, scan: PointCloud },
}

impl SensorEvent {
    pub fn timestamp(&self) -> f64 {
        match self {
            SensorEvent::Imu(s) => s.timestamp,
            SensorEvent::Gnss(f) => f.timestamp,
            SensorEvent::Magnetometer { timestamp, .. } => *timestamp,
            SensorEvent::LidarScan { timestamp, .. } => *timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Initializing,
    Tracking,
    Relocalizing,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("event at {t} arrives before the previous event at {previous}")]
    NonMonotonicEvent { t: f64, previous: f64 },
}

/// Counters exposed for evaluation and exit-status decisions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineStats {
    pub emitted: usize,
    pub registrations: usize,
    pub registration_failures: usize,
    pub relocalizations: usize,
    pub relocalization_failures: usize,
    /// Mode transition log: (timestamp, new mode).
    pub transitions: Vec<(f64, Mode)>,
}

/// Variance of the body-velocity observation fed to the attitude filter
/// (differenced poses plus GNSS velocity noise), (m/s)².
const VELOCITY_OBS_VAR: f64 = 0.05;

/// Magnetometer readings older than this are not attached to GNSS fixes, s.
const MAG_MAX_AGE: f64 = 1.0;

/// Minimum spacing between expensive re-localization attempts, s.
const RELOCALIZE_COOLDOWN: f64 = 1.0;

/// Largest velocity-filter attitude correction the pipeline will accept
/// from a single epoch, rad.
const MAX_ATTITUDE_KICK: f64 = 0.05;

/// Default measurement sigmas for the initialization EKF when the fix
/// covariance does not provide them.
const INIT_YAW_SIGMA: f64 = 0.1;
const INIT_VEL_SIGMA: f64 = 0.2;

pub struct Pipeline {
    config: PipelineConfig,
    map: GlobalMap,
    mode: Mode,
    last_event_time: Option<f64>,

    // initialization
    ekf: Option<NavState>,
    init_fixes: Vec<GnssMeasurement>,
    latest_mag: Option<(f64, f64)>,

    // sensor memory
    latest_gnss: Option<GnssFix>,
    pending_velocity_epoch: Option<GnssFix>,
    last_imu_time: Option<f64>,

    // tracking state
    anchor: Option<KinematicState>,
    next_relocalize_at: f64,
    preintegration: PreintegratedDelta,
    lidar_window: VecDeque<OdomSample>,
    fused_window: VecDeque<OdomSample>,
    last_fused: Option<OdomSample>,
    last_lidar: Option<OdomSample>,
    attitude_filter: VelocityIkf,

    pub stats: PipelineStats,
}

impl Pipeline {
    pub fn new(map: GlobalMap, config: PipelineConfig) -> Self {
        let ikf_noise = config.ikf_process_noise;
        Self {
            config,
            map,
            mode: Mode::Initializing,
            last_event_time: None,
            ekf: None,
            init_fixes: Vec::new(),
            latest_mag: None,
            latest_gnss: None,
            pending_velocity_epoch: None,
            last_imu_time: None,
            anchor: None,
            next_relocalize_at: f64::NEG_INFINITY,
            preintegration: PreintegratedDelta::identity(),
            lidar_window: VecDeque::new(),
            fused_window: VecDeque::new(),
            last_fused: None,
            last_lidar: None,
            attitude_filter: VelocityIkf::new(1e-4, ikf_noise),
            stats: PipelineStats::default(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn map(&self) -> &GlobalMap {
        &self.map
    }

    fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.config.gravity)
    }

    /// Feed one event; returns the fused pose emitted at a tracked LIDAR
    /// keyframe, if any.
    pub fn step(&mut self, event: SensorEvent) -> Result<Option<OdomSample>, PipelineError> {
        let t = event.timestamp();
        if let Some(previous) = self.last_event_time {
            if t < previous {
                return Err(PipelineError::NonMonotonicEvent { t, previous });
            }
        }
        self.last_event_time = Some(t);

        let emitted = match event {
            SensorEvent::Imu(sample) => {
                self.on_imu(&sample);
                None
            }
            SensorEvent::Magnetometer { timestamp, yaw } => {
                self.latest_mag = Some((timestamp, wrap_angle(yaw)));
                None
            }
            SensorEvent::Gnss(fix) => {
                self.on_gnss(fix);
                None
            }
            SensorEvent::LidarScan { timestamp, scan } => self.on_lidar(timestamp, &scan),
        };
        if emitted.is_some() {
            self.stats.emitted += 1;
        }
        Ok(emitted)
    }

    fn transition(&mut self, t: f64, mode: Mode) {
        if self.mode != mode {
            self.mode = mode;
            self.stats.transitions.push((t, mode));
        }
    }

    fn on_imu(&mut self, sample: &ImuSample) {
        let dt = self
            .last_imu_time
            .map(|previous| sample.timestamp - previous);
        self.last_imu_time = Some(sample.timestamp);

        match self.mode {
            Mode::Initializing => {
                if let (Some(state), Some(dt)) = (self.ekf.as_ref(), dt) {
                    if dt > 0.0 {
                        // split long gaps so the linearization stays valid
                        let mut state = state.clone();
                        let mut remaining = dt;
                        let noise = ProcessNoise::default();
                        while remaining > 0.0 {
                            let step = remaining.min(MAX_PREDICT_DT);
                            match ekf_predict(&state, sample, step, &noise) {
                                Ok(next) => state = next,
                                Err(_) => break,
                            }
                            remaining -= step;
                        }
                        self.ekf = Some(state);
                    }
                }
            }
            Mode::Tracking => {
                if let Some(dt) = dt {
                    if dt > 0.0 {
                        let _ = self.preintegration.integrate(sample, dt);
                    }
                }
            }
            Mode::Relocalizing => {}
        }
    }

    fn measurement_from_fix(&self, fix: &GnssFix) -> GnssMeasurement {
        let yaw_mag = self
            .latest_mag
            .filter(|(t, _)| fix.timestamp - t <= MAG_MAX_AGE)
            .map(|(_, yaw)| yaw);
        let mut noise = Matrix7::zeros();
        noise[(0, 0)] = INIT_YAW_SIGMA * INIT_YAW_SIGMA;
        for i in 0..3 {
            for j in 0..3 {
                noise[(1 + i, 1 + j)] = fix.covariance[(i, j)];
            }
            noise[(4 + i, 4 + i)] = INIT_VEL_SIGMA * INIT_VEL_SIGMA;
        }
        GnssMeasurement {
            yaw_mag,
            position: fix.position,
            velocity: fix.velocity,
            noise,
            timestamp: fix.timestamp,
        }
    }

    fn on_gnss(&mut self, fix: GnssFix) {
        match self.mode {
            Mode::Initializing => {
                let meas = self.measurement_from_fix(&fix);
                match self.ekf.take() {
                    None => {
                        let yaw = meas.yaw_mag.unwrap_or(0.0);
                        let state = NavState::new(
                            crate::geometry::EulerAngles::new(0.0, 0.0, yaw),
                            fix.position,
                            0.1,
                            100.0,
                            4.0,
                            fix.timestamp,
                        );
                        self.ekf = Some(state);
                    }
                    Some(state) => {
                        let updated = ekf_update(&state, &meas).unwrap_or_else(|_| state);
                        self.ekf = Some(updated);
                    }
                }
                self.init_fixes.push(meas);
            }
            Mode::Tracking => self.pending_velocity_epoch = Some(fix.clone()),
            Mode::Relocalizing => {}
        }
        self.latest_gnss = Some(fix);
    }

    /// One velocity-aided attitude correction, transported onto the anchor.
    ///
    /// Runs only once fused samples bracket the fix timestamp, so the
    /// differenced body velocity is centered at the same instant as the
    /// GNSS velocity; comparing velocities 0.1 s apart is a double-digit
    /// heading error at cornering yaw rates.
    fn run_pending_velocity_epoch(&mut self) {
        let Some(fix) = self.pending_velocity_epoch.clone() else {
            return;
        };
        if self.anchor.is_none() {
            self.pending_velocity_epoch = None;
            return;
        }
        let newest = self.fused_window.back().map(|s| s.timestamp);
        if newest.map_or(true, |t| t <= fix.timestamp) {
            return; // wait for a sample past the fix
        }
        let before = self
            .fused_window
            .iter()
            .filter(|s| s.timestamp < fix.timestamp)
            .max_by(|a, b| a.timestamp.total_cmp(&b.timestamp))
            .cloned();
        let after = self
            .fused_window
            .iter()
            .filter(|s| s.timestamp > fix.timestamp)
            .min_by(|a, b| a.timestamp.total_cmp(&b.timestamp))
            .cloned();
        self.pending_velocity_epoch = None;
        let (Some(before), Some(after)) = (before, after) else {
            return;
        };
        let dt = after.timestamp - before.timestamp;
        if dt <= 0.0 {
            return;
        }
        let v_nav_track = (after.pose.translation - before.pose.translation) / dt;
        // attitude nearest to the fix epoch
        let attitude = if (fix.timestamp - before.timestamp) < (after.timestamp - fix.timestamp) {
            before.pose.rotation
        } else {
            after.pose.rotation
        };
        let body_velocity = attitude.to_rotation().transpose().apply(&v_nav_track);
        let obs = VelocityObservation {
            body_velocity,
            nav_velocity: fix.velocity,
            noise: Matrix3::identity() * VELOCITY_OBS_VAR,
        };
        let attitudes = AttitudeRef { current: attitude, lidar: attitude };
        // unobservable epochs (stationary, vertical) are simply skipped
        if let Ok(corrected) = self.attitude_filter.update(&attitudes, &obs) {
            let delta = attitude.inverse().multiply(&corrected);
            let kick = delta.angle_to(&UnitQuaternion::identity());
            #[cfg(feature = "trace-reloc")]
            eprintln!(
                "ikf t={:.1}: innov={:.3} m/s kick={kick:.4} rad",
                fix.timestamp,
                crate::velocity_ikf::innovation(&obs, &attitude).norm(),
            );
            // a velocity-derived attitude step beyond this is not physical
            // for a ground vehicle at 1 Hz epochs; distrust the epoch
            if kick > MAX_ATTITUDE_KICK {
                return;
            }
            if let Some(anchor) = self.anchor.as_mut() {
                anchor.rotation = anchor.rotation.multiply(&delta);
            }
        }
    }

    fn seed_covariance(&self) -> Matrix3<f64> {
        match (&self.ekf, &self.latest_gnss) {
            (Some(state), _) => state.position_covariance(),
            (None, Some(fix)) => fix.covariance,
            (None, None) => Matrix3::identity() * 100.0,
        }
    }

    fn on_lidar(&mut self, t: f64, scan: &PointCloud) -> Option<OdomSample> {
        if scan.is_empty() {
            return None;
        }
        match self.mode {
            Mode::Initializing => self.try_initialize(t, scan),
            Mode::Tracking => self.track_keyframe(t, scan),
            Mode::Relocalizing => self.try_relocalize(t, scan),
        }
    }

    fn try_initialize(&mut self, t: f64, scan: &PointCloud) -> Option<OdomSample> {
        if t < self.next_relocalize_at {
            return None;
        }
        let seed = match global_init(&self.init_fixes, self.config.min_init_fixes) {
            Ok(seed) => seed,
            Err(EkfError::InsufficientFixes { .. }) | Err(EkfError::HeadingUnobservable) => {
                return None;
            }
            Err(_) => return None,
        };
        if self.config.disable_map_registration {
            let velocity = self.latest_gnss.as_ref().map(|f| f.velocity).unwrap_or_default();
            return self.enter_tracking(t, seed, velocity);
        }
        let cov = self.seed_covariance();
        self.next_relocalize_at = t + RELOCALIZE_COOLDOWN;
        match relocalize(scan, &self.map, &seed, &cov, &self.config.registration) {
            Ok(outcome) => {
                self.stats.relocalizations += 1;
                let velocity = self.latest_gnss.as_ref().map(|f| f.velocity).unwrap_or_default();
                self.enter_tracking(t, outcome.registration.pose, velocity)
            }
            Err(IcpError::RelocalizationFailed { .. }) => {
                self.stats.relocalization_failures += 1;
                // stay in Initializing and keep accumulating fixes
                None
            }
            Err(_) => None,
        }
    }

    fn enter_tracking(&mut self, t: f64, pose: Pose, velocity: Vector3<f64>) -> Option<OdomSample> {
        self.transition(t, Mode::Tracking);
        let imu_pose = self.lidar_to_imu(&pose);
        self.anchor = Some(KinematicState {
            rotation: imu_pose.rotation,
            velocity,
            position: imu_pose.translation,
        });
        self.preintegration = PreintegratedDelta::identity();
        self.last_imu_time = Some(t);
        self.lidar_window.clear();
        self.fused_window.clear();
        let sample = OdomSample::new(t, pose, OdomSource::Fused);
        self.push_lidar_sample(OdomSample::new(t, pose, OdomSource::Lidar));
        self.push_fused_sample(sample.clone());
        self.last_lidar = Some(OdomSample::new(t, pose, OdomSource::Lidar));
        self.last_fused = Some(sample.clone());
        Some(sample)
    }

    fn lidar_to_imu(&self, pose: &Pose) -> Pose {
        self.config.extrinsics.lidar_from_imu.inverse().compose(pose)
    }

    fn push_lidar_sample(&mut self, sample: OdomSample) {
        self.lidar_window.push_back(sample);
        while self.lidar_window.len() > self.config.fusion.interpolation_window {
            self.lidar_window.pop_front();
        }
    }

    fn push_fused_sample(&mut self, sample: OdomSample) {
        self.fused_window.push_back(sample);
        while self.fused_window.len() > self.config.fusion.interpolation_window.max(3) {
            self.fused_window.pop_front();
        }
    }

    fn track_keyframe(&mut self, t: f64, scan: &PointCloud) -> Option<OdomSample> {
        let anchor = self.anchor.clone()?;
        let delta = std::mem::take(&mut self.preintegration);
        let predicted = predict_pose(&anchor, &delta, &self.gravity_vector());
        let predicted_lidar = to_lidar_frame(&predicted.pose(), &self.config.extrinsics);
        self.last_imu_time = Some(t);

        if self.config.disable_map_registration {
            let sample = OdomSample::new(t, predicted_lidar, OdomSource::Fused);
            self.anchor = Some(predicted);
            self.push_lidar_sample(OdomSample::new(t, predicted_lidar, OdomSource::Lidar));
            self.push_fused_sample(sample.clone());
            self.last_lidar = Some(OdomSample::new(t, predicted_lidar, OdomSource::Lidar));
            self.last_fused = Some(sample.clone());
            return Some(sample);
        }

        self.stats.registrations += 1;
        let result = match register(
            scan,
            &self.map,
            &predicted_lidar,
            self.config.registration.r_min,
            &self.config.registration,
        ) {
            Ok(result) => result,
            Err(_) => {
                self.stats.registration_failures += 1;
                self.enter_relocalizing(t);
                return None;
            }
        };
        let report = detect_registration_failure(&result, &predicted_lidar, &self.config.fusion);
        if report.failed {
            #[cfg(feature = "trace-reloc")]
            {
                let (dt, dr) = result.pose.distance_to(&predicted_lidar);
                eprintln!(
                    "keyframe t={t:.1}: failed {:?} fitness={:.4} inliers={:.3} dev={dt:.3} m {dr:.4} rad iters={}",
                    report.reasons, result.fitness, result.inlier_fraction, result.iterations
                );
            }
            self.stats.registration_failures += 1;
            self.enter_relocalizing(t);
            return None;
        }

        let lidar_sample = OdomSample::new(t, result.pose, OdomSource::Lidar);
        let fused = self.fuse_keyframe(&lidar_sample);

        // anchor velocity: blend the IMU-propagated velocity with the
        // differentiated fused track so bias drift stays bounded
        let velocity = match self.last_fused.as_ref() {
            Some(previous) if fused.timestamp > previous.timestamp => {
                let v_diff = (fused.pose.translation - previous.pose.translation)
                    / (fused.timestamp - previous.timestamp);
                0.5 * (predicted.velocity + v_diff)
            }
            _ => predicted.velocity,
        };
        let imu_pose = self.lidar_to_imu(&fused.pose);
        self.anchor = Some(KinematicState {
            rotation: imu_pose.rotation,
            velocity,
            position: imu_pose.translation,
        });
        self.push_lidar_sample(lidar_sample.clone());
        self.push_fused_sample(fused.clone());
        self.last_lidar = Some(lidar_sample);
        self.last_fused = Some(fused.clone());
        self.run_pending_velocity_epoch();
        Some(fused)
    }

    fn fuse_keyframe(&mut self, lidar_sample: &OdomSample) -> OdomSample {
        let t = lidar_sample.timestamp;
        let fresh_fix = self
            .latest_gnss
            .as_ref()
            .filter(|fix| t - fix.timestamp <= self.config.gnss_stale_after);
        match (fresh_fix, self.last_fused.as_ref(), self.last_lidar.as_ref()) {
            (Some(fix), Some(previous), Some(last_lidar)) if t > previous.timestamp => {
                let gnss_pose = Pose::new(
                    lidar_sample.pose.rotation,
                    fix.position + fix.velocity * (t - fix.timestamp),
                );
                let lidar_delta = last_lidar.pose.inverse().compose(&lidar_sample.pose);
                let inputs = FusionInputs {
                    lidar_fused: lidar_sample.clone(),
                    gnss: OdomSample::new(t, gnss_pose, OdomSource::Gnss),
                    gnss_velocity: fix.velocity,
                    lidar_delta,
                    previous: previous.clone(),
                    gnss_covariance: fix.covariance,
                };
                fuse(&inputs, &self.config.fusion)
            }
            _ => OdomSample::new(t, lidar_sample.pose, OdomSource::Fused),
        }
    }

    fn enter_relocalizing(&mut self, t: f64) {
        self.transition(t, Mode::Relocalizing);
        self.anchor = None;
        self.pending_velocity_epoch = None;
        self.preintegration = PreintegratedDelta::identity();
    }

    fn try_relocalize(&mut self, t: f64, scan: &PointCloud) -> Option<OdomSample> {
        if t < self.next_relocalize_at {
            return None;
        }
        let Some(fix) = self.latest_gnss.clone() else {
            return None;
        };
        let attitude = self
            .last_fused
            .as_ref()
            .map(|s| s.pose.rotation)
            .unwrap_or_else(UnitQuaternion::identity);
        let age = (t - fix.timestamp).max(0.0);
        let seed = Pose::new(attitude, fix.position + fix.velocity * age);
        self.stats.relocalizations += 1;
        self.next_relocalize_at = t + RELOCALIZE_COOLDOWN;
        match relocalize(scan, &self.map, &seed, &fix.covariance, &self.config.registration) {
            Ok(outcome) => {
                let velocity = fix.velocity;
                self.enter_tracking(t, outcome.registration.pose, velocity)
            }
            Err(IcpError::RelocalizationFailed { .. }) => {
                self.stats.relocalization_failures += 1;
                self.reset_to_initializing(t);
                None
            }
            Err(_) => None,
        }
    }

    fn reset_to_initializing(&mut self, t: f64) {
        self.transition(t, Mode::Initializing);
        self.ekf = None;
        self.init_fixes.clear();
        self.anchor = None;
        self.preintegration = PreintegratedDelta::identity();
        self.lidar_window.clear();
        self.fused_window.clear();
        self.last_fused = None;
        self.last_lidar = None;
    }
}
