//! Feed a recorded event log through the localization pipeline.

use maploc_core::config::PipelineConfig;
use maploc_core::fusion::OdomSample;
use maploc_core::map::GlobalMap;
use maploc_core::pipeline::{Mode, Pipeline, PipelineError, PipelineStats, SensorEvent};
use thiserror::Error;

use crate::sensors::{EventLog, LogRecord};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("event {index} at t = {t}: {source}")]
    Pipeline {
        index: usize,
        t: f64,
        #[source]
        source: PipelineError,
    },
}

/// Replay outcome: the fused trajectory plus the pipeline's account of how
/// the run went.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub trajectory: Vec<OdomSample>,
    pub stats: PipelineStats,
    pub final_mode: Mode,
}

impl ReplayOutcome {
    /// True when the run ended with localization lost after a failed
    /// re-localization (the condition the CLI maps to exit code 2).
    pub fn ended_lost(&self) -> bool {
        self.stats.relocalization_failures > 0 && self.final_mode != Mode::Tracking
    }
}

/// Run the log through a fresh pipeline. Deterministic for fixed inputs.
pub fn replay(
    log: &EventLog,
    map: GlobalMap,
    config: PipelineConfig,
) -> Result<ReplayOutcome, ReplayError> {
    let mut pipeline = Pipeline::new(map, config);
    let mut trajectory = Vec::new();
    for (index, record) in log.records.iter().enumerate() {
        let event = match record {
            LogRecord::Imu(sample) => SensorEvent::Imu(*sample),
            LogRecord::Gnss(fix) => SensorEvent::Gnss(fix.clone()),
            LogRecord::Mag { timestamp, yaw } => SensorEvent::Magnetometer {
                timestamp: *timestamp,
                yaw: *yaw,
            },
            LogRecord::Lidar { timestamp, scan, .. } => SensorEvent::LidarScan {
                timestamp: *timestamp,
                scan: scan.clone(),
            },
            LogRecord::Truth { .. } => continue,
        };
        let t = event.timestamp();
        if let Some(sample) = pipeline
            .step(event)
            .map_err(|source| ReplayError::Pipeline { index, t, source })?
        {
            trajectory.push(sample);
        }
    }
    Ok(ReplayOutcome {
        trajectory,
        stats: pipeline.stats.clone(),
        final_mode: pipeline.mode(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use maploc_core::map::PointCloud;
    use nalgebra::Vector3;

    #[test]
    fn empty_log_gives_empty_trajectory() {
        let map = GlobalMap::from_cloud(PointCloud::from_points(vec![Vector3::zeros()])).unwrap();
        let outcome = replay(&EventLog::default(), map, PipelineConfig::default()).unwrap();
        assert!(outcome.trajectory.is_empty());
        assert_eq!(outcome.final_mode, Mode::Initializing);
        assert!(!outcome.ended_lost());
    }
}
