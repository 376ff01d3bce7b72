//! Dataset files: the event log, per-scan clouds, and trajectory tracks.
//!
//! Event log, one record per line, SI units and radians:
//!
//! ```text
//! t IMU wx wy wz ax ay az
//! t GNSS pe pn h ve vn vu s11 s12 s13 s21 s22 s23 s31 s32 s33
//! t MAG psi
//! t LIDAR scanfile
//! t TRUTH tx ty tz qw qx qy qz
//! ```
//!
//! Scan files referenced by LIDAR records are relative to the log file's
//! directory and use the map ASCII format. Trajectories are
//! `t tx ty tz qw qx qy qz` per line. Floats are written with Rust's
//! shortest round-trip formatting, so write→read is lossless and two equal
//! runs produce byte-identical files.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use maploc_core::fusion::{OdomSample, OdomSource};
use maploc_core::geometry::{Pose, UnitQuaternion};
use maploc_core::map::{load_cloud, save_cloud};
use maploc_core::pipeline::GnssFix;
use maploc_core::preintegration::ImuSample;
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::sensors::{EventLog, LogRecord};

#[derive(Debug, Error)]
pub enum LogIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("scan file error for {name}: {source}")]
    Scan {
        name: String,
        #[source]
        source: maploc_core::map::MapError,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> LogIoError {
    LogIoError::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> LogIoError {
    LogIoError::Parse {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

/// Write the log and its scan files under `dir` (created if absent):
/// `events.log`, `scans/scan_*.txt`, and `truth.txt` in trajectory format.
pub fn write_event_log(dir: &Path, log: &EventLog) -> Result<PathBuf, LogIoError> {
    std::fs::create_dir_all(dir.join("scans")).map_err(|e| io_err(dir, e))?;
    let log_path = dir.join("events.log");
    let file = std::fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut out = BufWriter::new(file);
    let mut line = String::new();
    for record in &log.records {
        line.clear();
        match record {
            LogRecord::Imu(s) => {
                write!(
                    line,
                    "{} IMU {} {} {} {} {} {}",
                    s.timestamp,
                    s.angular_rate.x,
                    s.angular_rate.y,
                    s.angular_rate.z,
                    s.specific_force.x,
                    s.specific_force.y,
                    s.specific_force.z
                )
                .unwrap();
            }
            LogRecord::Gnss(f) => {
                write!(
                    line,
                    "{} GNSS {} {} {} {} {} {}",
                    f.timestamp,
                    f.position.x,
                    f.position.y,
                    f.position.z,
                    f.velocity.x,
                    f.velocity.y,
                    f.velocity.z
                )
                .unwrap();
                for i in 0..3 {
                    for j in 0..3 {
                        write!(line, " {}", f.covariance[(i, j)]).unwrap();
                    }
                }
            }
            LogRecord::Mag { timestamp, yaw } => {
                write!(line, "{timestamp} MAG {yaw}").unwrap();
            }
            LogRecord::Lidar { timestamp, scan_name, scan } => {
                let scan_path = dir.join(scan_name);
                save_cloud(&scan_path, scan)
                    .map_err(|source| LogIoError::Scan { name: scan_name.clone(), source })?;
                write!(line, "{timestamp} LIDAR {scan_name}").unwrap();
            }
            LogRecord::Truth { timestamp, pose } => {
                let q = pose.rotation;
                write!(
                    line,
                    "{} TRUTH {} {} {} {} {} {} {}",
                    timestamp,
                    pose.translation.x,
                    pose.translation.y,
                    pose.translation.z,
                    q.w(),
                    q.vector().x,
                    q.vector().y,
                    q.vector().z
                )
                .unwrap();
            }
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| io_err(&log_path, e))?;
    }
    out.flush().map_err(|e| io_err(&log_path, e))?;

    let truth: Vec<OdomSample> = log
        .records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Truth { timestamp, pose } => {
                Some(OdomSample::new(*timestamp, *pose, OdomSource::Fused))
            }
            _ => None,
        })
        .collect();
    write_trajectory(&dir.join("truth.txt"), &truth)?;
    Ok(log_path)
}

fn parse_floats(
    path: &Path,
    line_no: usize,
    fields: &[&str],
    expected: usize,
) -> Result<Vec<f64>, LogIoError> {
    if fields.len() != expected {
        return Err(parse_err(
            path,
            line_no,
            format!("expected {expected} numeric fields, found {}", fields.len()),
        ));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| parse_err(path, line_no, format!("{f:?} is not a number")))
        })
        .collect()
}

/// Read an event log and the scan files it references.
pub fn read_event_log(path: &Path) -> Result<EventLog, LogIoError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let t: f64 = parts
            .next()
            .unwrap()
            .parse()
            .map_err(|_| parse_err(path, line_no, "timestamp is not a number"))?;
        let kind = parts
            .next()
            .ok_or_else(|| parse_err(path, line_no, "missing record type"))?;
        let rest: Vec<&str> = parts.collect();
        let record = match kind {
            "IMU" => {
                let v = parse_floats(path, line_no, &rest, 6)?;
                LogRecord::Imu(ImuSample {
                    angular_rate: Vector3::new(v[0], v[1], v[2]),
                    specific_force: Vector3::new(v[3], v[4], v[5]),
                    timestamp: t,
                })
            }
            "GNSS" => {
                let v = parse_floats(path, line_no, &rest, 15)?;
                let mut covariance = Matrix3::zeros();
                for i in 0..3 {
                    for j in 0..3 {
                        covariance[(i, j)] = v[6 + 3 * i + j];
                    }
                }
                LogRecord::Gnss(GnssFix {
                    timestamp: t,
                    position: Vector3::new(v[0], v[1], v[2]),
                    velocity: Vector3::new(v[3], v[4], v[5]),
                    covariance,
                })
            }
            "MAG" => {
                let v = parse_floats(path, line_no, &rest, 1)?;
                LogRecord::Mag { timestamp: t, yaw: v[0] }
            }
            "LIDAR" => {
                if rest.len() != 1 {
                    return Err(parse_err(path, line_no, "LIDAR record needs one scan path"));
                }
                let scan_name = rest[0].to_string();
                let scan = load_cloud(&dir.join(&scan_name))
                    .map_err(|source| LogIoError::Scan { name: scan_name.clone(), source })?;
                LogRecord::Lidar { timestamp: t, scan_name, scan }
            }
            "TRUTH" => {
                let v = parse_floats(path, line_no, &rest, 7)?;
                LogRecord::Truth {
                    timestamp: t,
                    pose: Pose::new(
                        UnitQuaternion::new(v[3], v[4], v[5], v[6]),
                        Vector3::new(v[0], v[1], v[2]),
                    ),
                }
            }
            other => return Err(parse_err(path, line_no, format!("unknown record type {other:?}"))),
        };
        records.push(record);
    }
    Ok(EventLog { records })
}

/// Write a trajectory as `t tx ty tz qw qx qy qz` lines.
pub fn write_trajectory(path: &Path, samples: &[OdomSample]) -> Result<(), LogIoError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let mut line = String::new();
    for s in samples {
        line.clear();
        let q = s.pose.rotation;
        writeln!(
            line,
            "{} {} {} {} {} {} {} {}",
            s.timestamp,
            s.pose.translation.x,
            s.pose.translation.y,
            s.pose.translation.z,
            q.w(),
            q.vector().x,
            q.vector().y,
            q.vector().z
        )
        .unwrap();
        out.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Read a trajectory written by [`write_trajectory`].
pub fn read_trajectory(path: &Path) -> Result<Vec<OdomSample>, LogIoError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let v = parse_floats(path, line_no, &fields, 8)?;
        samples.push(OdomSample::new(
            v[0],
            Pose::new(UnitQuaternion::new(v[4], v[5], v[6], v[7]), Vector3::new(v[1], v[2], v[3])),
            OdomSource::Fused,
        ));
    }
    Ok(samples)
}

/// Render a trajectory to the exact bytes [`write_trajectory`] would emit.
pub fn format_trajectory(samples: &[OdomSample]) -> String {
    let mut text = String::new();
    for s in samples {
        let q = s.pose.rotation;
        writeln!(
            text,
            "{} {} {} {} {} {} {} {}",
            s.timestamp,
            s.pose.translation.x,
            s.pose.translation.y,
            s.pose.translation.z,
            q.w(),
            q.vector().x,
            q.vector().y,
            q.vector().z
        )
        .unwrap();
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::NoiseModel;
    use crate::sensors::SensorRates;
    use crate::trajectory::{Trajectory, TrajectorySpec, Waypoint};
    use crate::world::{generate_world, WorldSpec};
    use maploc_core::map::GlobalMap;

    fn tiny_log() -> EventLog {
        let world = GlobalMap::from_cloud(generate_world(&WorldSpec {
            extent: Vector3::new(60.0, 60.0, 6.0),
            feature_density: 2.0,
            point_spacing: 0.8,
            seed: 3,
        }))
        .unwrap();
        let spec = TrajectorySpec {
            waypoints: vec![
                Waypoint { t: 0.0, position: Vector3::new(0.0, 0.0, 1.0), yaw: 0.0 },
                Waypoint { t: 2.0, position: Vector3::new(4.0, 0.0, 1.0), yaw: 0.0 },
                Waypoint { t: 4.0, position: Vector3::new(8.0, 1.0, 1.0), yaw: 0.2 },
            ],
        };
        let trajectory = Trajectory::new(&spec).unwrap();
        crate::sensors::simulate_sensors(
            &world,
            &trajectory,
            &NoiseModel::default(),
            &SensorRates { imu_hz: 50.0, lidar_hz: 1.0, gnss_hz: 1.0, lidar_range: 30.0 },
            9.80665,
        )
    }

    #[test]
    fn event_log_round_trips_exactly() {
        let log = tiny_log();
        let dir = tempfile::tempdir().unwrap();
        let path = write_event_log(dir.path(), &log).unwrap();
        let back = read_event_log(&path).unwrap();
        assert_eq!(log, back);
    }

    #[test]
    fn trajectory_round_trips_exactly() {
        let samples = vec![
            OdomSample::new(
                0.5,
                Pose::new(
                    UnitQuaternion::new(0.9, 0.1, -0.2, 0.3),
                    Vector3::new(1.25, -3.5, 0.125),
                ),
                OdomSource::Fused,
            ),
            OdomSample::new(
                0.6,
                Pose::new(UnitQuaternion::identity(), Vector3::new(2.0, -3.0, 0.25)),
                OdomSource::Fused,
            ),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        write_trajectory(&path, &samples).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(samples.len(), back.len());
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.timestamp, b.timestamp);
            assert_eq!(a.pose.translation, b.pose.translation);
            assert_eq!(a.pose.rotation, b.pose.rotation);
        }
        // the in-memory formatter matches the file bytes
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            format_trajectory(&samples)
        );
    }

    #[test]
    fn malformed_log_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.log");
        std::fs::write(&path, "0.0 IMU 1 2 3\n").unwrap();
        let err = read_event_log(&path).unwrap_err();
        assert!(matches!(err, LogIoError::Parse { line: 1, .. }));

        std::fs::write(&path, "0.0 SONAR 1\n").unwrap();
        let err = read_event_log(&path).unwrap_err();
        assert!(matches!(err, LogIoError::Parse { line: 1, .. }));
    }
}
