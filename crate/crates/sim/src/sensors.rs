//! Sensor simulation: IMU, LIDAR, GNSS, and magnetometer streams along a
//! reference trajectory through a synthetic world, with configurable noise,
//! constant biases, and GNSS dropout windows.

use maploc_core::geometry::Pose;
use maploc_core::map::{GlobalMap, PointCloud};
use maploc_core::pipeline::GnssFix;
use maploc_core::preintegration::ImuSample;
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::trajectory::Trajectory;

/// Noise and degradation model for every simulated sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Gyro white noise density, rad/s/√Hz.
    pub gyro_noise_density: f64,
    /// Accelerometer white noise density, m/s²/√Hz.
    pub accel_noise_density: f64,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    /// Per-point radial LIDAR noise, m.
    pub lidar_sigma: f64,
    /// GNSS position noise per axis, m.
    pub gnss_pos_sigma: f64,
    /// GNSS velocity noise per axis, m/s.
    pub gnss_vel_sigma: f64,
    /// Magnetometer heading noise, rad; zero disables the magnetometer.
    pub mag_sigma: f64,
    /// GNSS outage windows `(start, end)`, seconds.
    pub dropouts: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            gyro_noise_density: 1e-3,
            accel_noise_density: 1e-2,
            gyro_bias: Vector3::new(2e-3, -1e-3, 1.5e-3),
            accel_bias: Vector3::new(2e-2, -1e-2, 3e-2),
            lidar_sigma: 0.02,
            gnss_pos_sigma: 0.5,
            gnss_vel_sigma: 0.1,
            mag_sigma: 0.05,
            dropouts: Vec::new(),
            seed: 1,
        }
    }
}

impl NoiseModel {
    /// Noise-free model (biases included in "noise" here).
    pub fn none() -> Self {
        Self {
            gyro_noise_density: 0.0,
            accel_noise_density: 0.0,
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            lidar_sigma: 0.0,
            gnss_pos_sigma: 0.0,
            gnss_vel_sigma: 0.0,
            mag_sigma: 0.0,
            dropouts: Vec::new(),
            seed: 1,
        }
    }

    fn in_dropout(&self, t: f64) -> bool {
        self.dropouts.iter().any(|&(a, b)| t >= a && t <= b)
    }

    /// Within one second of a dropout edge the receiver is degraded: the
    /// reported covariance trace is inflated 100× (noise σ 10×).
    fn near_dropout(&self, t: f64) -> bool {
        self.dropouts
            .iter()
            .any(|&(a, b)| (t >= a - 1.0 && t < a) || (t > b && t <= b + 1.0))
    }
}

/// Sensor rates and the LIDAR range.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorRates {
    pub imu_hz: f64,
    pub lidar_hz: f64,
    pub gnss_hz: f64,
    /// Maximum LIDAR return distance, m.
    pub lidar_range: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self { imu_hz: 200.0, lidar_hz: 10.0, gnss_hz: 1.0, lidar_range: 80.0 }
    }
}

/// One time-ordered record of the simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    Imu(ImuSample),
    Mag { timestamp: f64, yaw: f64 },
    Gnss(GnssFix),
    Truth { timestamp: f64, pose: Pose },
    Lidar { timestamp: f64, scan_name: String, scan: PointCloud },
}

impl LogRecord {
    pub fn timestamp(&self) -> f64 {
        match self {
            LogRecord::Imu(s) => s.timestamp,
            LogRecord::Mag { timestamp, .. } => *timestamp,
            LogRecord::Gnss(f) => f.timestamp,
            LogRecord::Truth { timestamp, .. } => *timestamp,
            LogRecord::Lidar { timestamp, .. } => *timestamp,
        }
    }

    /// Tiebreak rank for equal timestamps: measurements before truth
    /// before scans, so consumers see the freshest aiding data first.
    fn rank(&self) -> u8 {
        match self {
            LogRecord::Imu(_) => 0,
            LogRecord::Mag { .. } => 1,
            LogRecord::Gnss(_) => 2,
            LogRecord::Truth { .. } => 3,
            LogRecord::Lidar { .. } => 4,
        }
    }
}

/// A complete simulated dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub records: Vec<LogRecord>,
}

impl EventLog {
    pub fn truth_track(&self) -> Vec<(f64, Pose)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Truth { timestamp, pose } => Some((*timestamp, *pose)),
                _ => None,
            })
            .collect()
    }

    pub fn lidar_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r, LogRecord::Lidar { .. }))
            .count()
    }
}

/// Simulate every sensor along the trajectory. Ground truth is logged at
/// IMU rate for dense association.
pub fn simulate_sensors(
    world: &GlobalMap,
    trajectory: &Trajectory,
    noise: &NoiseModel,
    rates: &SensorRates,
    gravity: f64,
) -> EventLog {
    assert!(rates.imu_hz > 0.0 && rates.lidar_hz > 0.0 && rates.gnss_hz > 0.0);
    let mut rng = ChaCha12Rng::seed_from_u64(noise.seed);
    let duration = trajectory.duration();
    let mut records = Vec::new();

    let gyro_sigma = noise.gyro_noise_density * rates.imu_hz.sqrt();
    let accel_sigma = noise.accel_noise_density * rates.imu_hz.sqrt();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let draw = |rng: &mut ChaCha12Rng, sigma: f64| -> f64 {
        if sigma > 0.0 {
            sigma * normal.sample(rng)
        } else {
            0.0
        }
    };

    // IMU + truth
    let imu_steps = (duration * rates.imu_hz).floor() as usize;
    for k in 0..=imu_steps {
        let t = k as f64 / rates.imu_hz;
        let s = trajectory.sample(t);
        let omega = s.body_angular_rate()
            + noise.gyro_bias
            + Vector3::new(
                draw(&mut rng, gyro_sigma),
                draw(&mut rng, gyro_sigma),
                draw(&mut rng, gyro_sigma),
            );
        let force = s.body_specific_force(gravity)
            + noise.accel_bias
            + Vector3::new(
                draw(&mut rng, accel_sigma),
                draw(&mut rng, accel_sigma),
                draw(&mut rng, accel_sigma),
            );
        records.push(LogRecord::Imu(ImuSample {
            angular_rate: omega,
            specific_force: force,
            timestamp: t,
        }));
        records.push(LogRecord::Truth { timestamp: t, pose: s.pose() });
    }

    // GNSS + magnetometer
    let gnss_steps = (duration * rates.gnss_hz).floor() as usize;
    for k in 0..=gnss_steps {
        let t = k as f64 / rates.gnss_hz;
        if noise.in_dropout(t) {
            continue;
        }
        let s = trajectory.sample(t);
        let degraded = noise.near_dropout(t);
        let sigma_scale = if degraded { 10.0 } else { 1.0 };
        let pos_sigma = noise.gnss_pos_sigma * sigma_scale;
        let vel_sigma = noise.gnss_vel_sigma * sigma_scale;
        let position = s.position
            + Vector3::new(
                draw(&mut rng, pos_sigma),
                draw(&mut rng, pos_sigma),
                draw(&mut rng, pos_sigma),
            );
        let velocity = s.velocity
            + Vector3::new(
                draw(&mut rng, vel_sigma),
                draw(&mut rng, vel_sigma),
                draw(&mut rng, vel_sigma),
            );
        // reported covariance: nominal per-axis variance, trace ×100 when
        // degraded; a tiny floor keeps zero-noise runs well-posed
        let reported = (noise.gnss_pos_sigma * noise.gnss_pos_sigma).max(1e-6)
            * sigma_scale
            * sigma_scale;
        records.push(LogRecord::Gnss(GnssFix {
            timestamp: t,
            position,
            velocity,
            covariance: Matrix3::identity() * reported,
        }));
        if noise.mag_sigma > 0.0 {
            records.push(LogRecord::Mag {
                timestamp: t,
                yaw: s.yaw + draw(&mut rng, noise.mag_sigma),
            });
        }
    }

    // LIDAR scans
    let lidar_steps = (duration * rates.lidar_hz).floor() as usize;
    for k in 0..=lidar_steps {
        let t = k as f64 / rates.lidar_hz;
        let s = trajectory.sample(t);
        let pose = s.pose();
        let visible = world.extract_local_region(&pose.translation, rates.lidar_range);
        let inverse = pose.inverse();
        let mut points = Vec::with_capacity(visible.len());
        for p in &visible.points {
            let body = inverse.apply(p);
            let point = if noise.lidar_sigma > 0.0 {
                let range = body.norm();
                if range > 1e-9 {
                    // truncated at ±3σ: range noise is bounded in practice
                    // and scan points then provably stay on world surfaces
                    let noise_m = draw(&mut rng, noise.lidar_sigma)
                        .clamp(-3.0 * noise.lidar_sigma, 3.0 * noise.lidar_sigma);
                    body * (1.0 + noise_m / range)
                } else {
                    body
                }
            } else {
                body
            };
            points.push(point);
        }
        records.push(LogRecord::Lidar {
            timestamp: t,
            scan_name: format!("scans/scan_{k:06}.txt"),
            scan: PointCloud::from_points(points),
        });
    }

    records.sort_by(|a, b| {
        a.timestamp()
            .total_cmp(&b.timestamp())
            .then(a.rank().cmp(&b.rank()))
    });
    EventLog { records }
}
