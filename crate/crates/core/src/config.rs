//! Pipeline configuration and its flat `key = value` file format.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Every field of the fusion and registration configs is addressable, plus
//! the IMU-to-LIDAR extrinsics (seven numbers: `tx ty tz qw qx qy qz`), the
//! gravity magnitude, and the pipeline-level knobs. Unknown keys are errors
//! so typos cannot silently fall back to defaults.

use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::fusion::FusionConfig;
use crate::geometry::{Pose, UnitQuaternion};
use crate::preintegration::Extrinsics;
use crate::registration::RegistrationConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
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
    #[error("invalid configuration: {reason}")]
    Invalid { reason: String },
}

/// Everything the localization pipeline needs at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub fusion: FusionConfig,
    pub registration: RegistrationConfig,
    pub extrinsics: Extrinsics,
    /// Gravity magnitude, m/s² (applied along −Up).
    pub gravity: f64,
    /// GNSS fixes required before global initialization is attempted.
    pub min_init_fixes: usize,
    /// Age beyond which the latest GNSS fix no longer participates in
    /// fusion, seconds.
    pub gnss_stale_after: f64,
    /// Isotropic per-epoch process noise of the velocity attitude filter, rad².
    pub ikf_process_noise: f64,
    /// Replace map registration with dead-reckoned IMU poses (drift
    /// baseline for evaluation).
    pub disable_map_registration: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            registration: RegistrationConfig::default(),
            extrinsics: Extrinsics::identity(),
            gravity: crate::gnss_ekf::GRAVITY_MS2,
            min_init_fixes: 5,
            gnss_stale_after: 2.0,
            ikf_process_noise: 1e-6,
            disable_map_registration: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fusion
            .validate()
            .map_err(|reason| ConfigError::Invalid { reason })?;
        self.registration
            .validate()
            .map_err(|reason| ConfigError::Invalid { reason })?;
        if !(self.gravity > 0.0) {
            return Err(ConfigError::Invalid { reason: "gravity must be positive".into() });
        }
        if self.min_init_fixes == 0 {
            return Err(ConfigError::Invalid { reason: "min_init_fixes must be positive".into() });
        }
        if !(self.gnss_stale_after > 0.0) {
            return Err(ConfigError::Invalid { reason: "gnss_stale_after must be positive".into() });
        }
        Ok(())
    }
}

fn parse_scalar<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Parse {
        line,
        reason: format!("value {value:?} for key {key:?} is not valid"),
    })
}

/// Parse configuration text. Keys may appear in any order; missing keys
/// keep their defaults; unknown keys are errors.
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let mut config = PipelineConfig::default();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Parse {
                line,
                reason: format!("expected `key = value`, found {content:?}"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "alpha" => config.fusion.alpha = parse_scalar(line, key, value)?,
            "beta" => config.fusion.beta = parse_scalar(line, key, value)?,
            "trace_threshold" => config.fusion.trace_threshold = parse_scalar(line, key, value)?,
            "failure_fitness_gate" => {
                config.fusion.failure_fitness_gate = parse_scalar(line, key, value)?
            }
            "failure_translation_gate" => {
                config.fusion.failure_translation_gate = parse_scalar(line, key, value)?
            }
            "failure_rotation_gate" => {
                config.fusion.failure_rotation_gate = parse_scalar(line, key, value)?
            }
            "interpolation_window" => {
                config.fusion.interpolation_window = parse_scalar(line, key, value)?
            }
            "max_iterations" => config.registration.max_iterations = parse_scalar(line, key, value)?,
            "error_tolerance" => config.registration.error_tolerance = parse_scalar(line, key, value)?,
            "correspondence_max_distance" => {
                config.registration.correspondence_max_distance = parse_scalar(line, key, value)?
            }
            "min_region_points" => {
                config.registration.min_region_points = parse_scalar(line, key, value)?
            }
            "r_min" => config.registration.r_min = parse_scalar(line, key, value)?,
            "r_max" => config.registration.r_max = parse_scalar(line, key, value)?,
            "radius_growth" => config.registration.radius_growth = parse_scalar(line, key, value)?,
            "convergence_delta" => {
                config.registration.convergence_delta = parse_scalar(line, key, value)?
            }
            "scan_voxel_leaf" => config.registration.scan_voxel_leaf = parse_scalar(line, key, value)?,
            "t_l2m" => {
                let fields: Vec<&str> = value.split_whitespace().collect();
                if fields.len() != 7 {
                    return Err(ConfigError::Parse {
                        line,
                        reason: format!("t_l2m needs 7 numbers (tx ty tz qw qx qy qz), found {}", fields.len()),
                    });
                }
                let mut nums = [0.0f64; 7];
                for (i, f) in fields.iter().enumerate() {
                    nums[i] = parse_scalar(line, key, f)?;
                }
                config.extrinsics = Extrinsics {
                    lidar_from_imu: Pose::new(
                        UnitQuaternion::new(nums[3], nums[4], nums[5], nums[6]),
                        Vector3::new(nums[0], nums[1], nums[2]),
                    ),
                };
            }
            "gravity" => config.gravity = parse_scalar(line, key, value)?,
            "min_init_fixes" => config.min_init_fixes = parse_scalar(line, key, value)?,
            "gnss_stale_after" => config.gnss_stale_after = parse_scalar(line, key, value)?,
            "ikf_process_noise" => config.ikf_process_noise = parse_scalar(line, key, value)?,
            "disable_map_registration" => {
                config.disable_map_registration = parse_scalar(line, key, value)?
            }
            _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
        }
    }
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}
