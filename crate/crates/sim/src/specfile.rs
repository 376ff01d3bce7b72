//! Text formats for the simulation inputs: the scenario spec (world,
//! sensor rates, trajectory waypoints) and the noise model. Both use the
//! same flat `key = value` syntax as the pipeline configuration, with `#`
//! comments; `waypoint` and `dropout` keys may repeat.

use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::sensors::{NoiseModel, SensorRates};
use crate::trajectory::{TrajectorySpec, Waypoint};
use crate::world::WorldSpec;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid scenario: {reason}")]
    Invalid { reason: String },
}

/// Everything `simulate` needs: the world, the trajectory, and the rates.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub world: WorldSpec,
    pub trajectory: TrajectorySpec,
    pub rates: SensorRates,
}

fn split_kv(line_no: usize, content: &str) -> Result<(String, String), SpecError> {
    match content.split_once('=') {
        Some((k, v)) => Ok((k.trim().to_string(), v.trim().to_string())),
        None => Err(SpecError::Parse {
            line: line_no,
            reason: format!("expected `key = value`, found {content:?}"),
        }),
    }
}

fn scalar<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, SpecError> {
    value.parse().map_err(|_| SpecError::Parse {
        line,
        reason: format!("value {value:?} for key {key:?} is not valid"),
    })
}

fn vector(line: usize, key: &str, value: &str, n: usize) -> Result<Vec<f64>, SpecError> {
    let fields: Vec<&str> = value.split_whitespace().collect();
    if fields.len() != n {
        return Err(SpecError::Parse {
            line,
            reason: format!("key {key:?} needs {n} numbers, found {}", fields.len()),
        });
    }
    fields.iter().map(|f| scalar(line, key, f)).collect()
}

/// Parse a scenario spec file.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, SpecError> {
    let mut world = WorldSpec::default();
    let mut rates = SensorRates::default();
    let mut waypoints: Vec<Waypoint> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = split_kv(line, content)?;
        match key.as_str() {
            "extent" => {
                let v = vector(line, &key, &value, 3)?;
                world.extent = Vector3::new(v[0], v[1], v[2]);
            }
            "density" => world.feature_density = scalar(line, &key, &value)?,
            "spacing" => world.point_spacing = scalar(line, &key, &value)?,
            "world_seed" => world.seed = scalar(line, &key, &value)?,
            "imu_hz" => rates.imu_hz = scalar(line, &key, &value)?,
            "lidar_hz" => rates.lidar_hz = scalar(line, &key, &value)?,
            "gnss_hz" => rates.gnss_hz = scalar(line, &key, &value)?,
            "lidar_range" => rates.lidar_range = scalar(line, &key, &value)?,
            "waypoint" => {
                let v = vector(line, &key, &value, 5)?;
                waypoints.push(Waypoint {
                    t: v[0],
                    position: Vector3::new(v[1], v[2], v[3]),
                    yaw: v[4],
                });
            }
            _ => return Err(SpecError::UnknownKey { line, key }),
        }
    }
    world.validate().map_err(|reason| SpecError::Invalid { reason })?;
    let trajectory = TrajectorySpec { waypoints };
    trajectory.validate().map_err(|reason| SpecError::Invalid { reason })?;
    if !(rates.imu_hz > 0.0 && rates.lidar_hz > 0.0 && rates.gnss_hz > 0.0 && rates.lidar_range > 0.0) {
        return Err(SpecError::Invalid { reason: "rates and lidar_range must be positive".into() });
    }
    Ok(ScenarioSpec { world, trajectory, rates })
}

/// Parse a noise model file.
pub fn parse_noise(text: &str) -> Result<NoiseModel, SpecError> {
    let mut noise = NoiseModel::default();
    let mut dropouts = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = split_kv(line, content)?;
        match key.as_str() {
            "gyro_noise_density" => noise.gyro_noise_density = scalar(line, &key, &value)?,
            "accel_noise_density" => noise.accel_noise_density = scalar(line, &key, &value)?,
            "gyro_bias" => {
                let v = vector(line, &key, &value, 3)?;
                noise.gyro_bias = Vector3::new(v[0], v[1], v[2]);
            }
            "accel_bias" => {
                let v = vector(line, &key, &value, 3)?;
                noise.accel_bias = Vector3::new(v[0], v[1], v[2]);
            }
            "lidar_sigma" => noise.lidar_sigma = scalar(line, &key, &value)?,
            "gnss_pos_sigma" => noise.gnss_pos_sigma = scalar(line, &key, &value)?,
            "gnss_vel_sigma" => noise.gnss_vel_sigma = scalar(line, &key, &value)?,
            "mag_sigma" => noise.mag_sigma = scalar(line, &key, &value)?,
            "dropout" => {
                let v = vector(line, &key, &value, 2)?;
                if v[1] <= v[0] {
                    return Err(SpecError::Parse {
                        line,
                        reason: "dropout end must exceed its start".into(),
                    });
                }
                dropouts.push((v[0], v[1]));
            }
            "noise_seed" => noise.seed = scalar(line, &key, &value)?,
            _ => return Err(SpecError::UnknownKey { line, key }),
        }
    }
    if !dropouts.is_empty() {
        noise.dropouts = dropouts;
    }
    for (name, v) in [
        ("gyro_noise_density", noise.gyro_noise_density),
        ("accel_noise_density", noise.accel_noise_density),
        ("lidar_sigma", noise.lidar_sigma),
        ("gnss_pos_sigma", noise.gnss_pos_sigma),
        ("gnss_vel_sigma", noise.gnss_vel_sigma),
        ("mag_sigma", noise.mag_sigma),
    ] {
        if v < 0.0 {
            return Err(SpecError::Invalid { reason: format!("{name} must be nonnegative") });
        }
    }
    Ok(noise)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn load_noise(path: &Path) -> Result<NoiseModel, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_noise(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_parses() {
        let text = "\
extent = 150 150 8
density = 2.5
spacing = 0.4
world_seed = 11
imu_hz = 200
lidar_hz = 10
gnss_hz = 1
lidar_range = 40   # meters
waypoint = 0 0 0 1 0
waypoint = 10 40 0 1 0
waypoint = 20 40 40 1 1.5708
";
        let spec = parse_scenario(text).unwrap();
        assert_eq!(spec.world.seed, 11);
        assert_eq!(spec.trajectory.waypoints.len(), 3);
        assert_eq!(spec.rates.lidar_range, 40.0);
    }

    #[test]
    fn noise_parses_with_dropouts() {
        let text = "\
gyro_noise_density = 2e-3
gnss_pos_sigma = 0.4
dropout = 10 40
dropout = 55 60
noise_seed = 3
";
        let noise = parse_noise(text).unwrap();
        assert_eq!(noise.dropouts, vec![(10.0, 40.0), (55.0, 60.0)]);
        assert_eq!(noise.gyro_noise_density, 2e-3);
        assert_eq!(noise.seed, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            parse_scenario("extnet = 1 1 1\n"),
            Err(SpecError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            parse_noise("lidar_sgima = 0.1\n"),
            Err(SpecError::UnknownKey { line: 1, .. })
        ));
    }

    #[test]
    fn waypoints_are_required() {
        assert!(matches!(
            parse_scenario("extent = 10 10 5\n"),
            Err(SpecError::Invalid { .. })
        ));
    }
}
