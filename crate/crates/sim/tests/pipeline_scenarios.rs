//! End-to-end scenarios: simulate a dataset, replay it through the
//! pipeline, and check the state machine story and the trajectory quality.

use maploc_core::config::PipelineConfig;
use maploc_core::fusion::OdomSample;
use maploc_core::map::{GlobalMap, PointCloud};
use maploc_core::pipeline::Mode;
use maploc_core::registration::RegistrationConfig;
use maploc_sim::evaluate::compute_ate_rmse;
use maploc_sim::logio::format_trajectory;
use maploc_sim::replay::replay;
use maploc_sim::sensors::{simulate_sensors, EventLog, LogRecord, NoiseModel, SensorRates};
use maploc_sim::trajectory::{loop_waypoints, Trajectory, TrajectorySpec};
use maploc_sim::world::{generate_world, WorldSpec};
use nalgebra::Vector3;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const GRAVITY: f64 = 9.80665;

fn test_world(seed: u64) -> GlobalMap {
    GlobalMap::from_cloud(generate_world(&WorldSpec {
        extent: Vector3::new(220.0, 150.0, 8.0),
        feature_density: 0.8,
        point_spacing: 0.4,
        seed,
    }))
    .unwrap()
}

fn loop_scenario(speed: f64) -> Trajectory {
    // rounded-rectangle loop well inside the world
    let waypoints = loop_waypoints(80.0, 45.0, speed, 8);
    Trajectory::new(&TrajectorySpec { waypoints }).unwrap()
}

fn test_rates() -> SensorRates {
    SensorRates { imu_hz: 200.0, lidar_hz: 10.0, gnss_hz: 1.0, lidar_range: 20.0 }
}

fn test_config() -> PipelineConfig {
    PipelineConfig {
        registration: RegistrationConfig {
            r_min: 25.0, // must cover the 20 m scan footprint
            scan_voxel_leaf: 0.0,
            ..RegistrationConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn truth_samples(log: &EventLog) -> Vec<OdomSample> {
    log.truth_track()
        .into_iter()
        .map(|(t, pose)| OdomSample::new(t, pose, maploc_core::fusion::OdomSource::Fused))
        .collect()
}

#[test]
fn clean_run_initializes_once_and_tracks() {
    let world = test_world(21);
    let trajectory = loop_scenario(5.0);
    let noise = NoiseModel { dropouts: vec![], ..NoiseModel::default() };
    let log = simulate_sensors(&world, &trajectory, &noise, &test_rates(), GRAVITY);

    let outcome = replay(&log, world.clone(), test_config()).unwrap();
    assert_eq!(outcome.final_mode, Mode::Tracking);
    // exactly one Initializing -> Tracking transition, no relocalizing
    let to_tracking = outcome
        .stats
        .transitions
        .iter()
        .filter(|(_, m)| *m == Mode::Tracking)
        .count();
    let to_reloc = outcome
        .stats
        .transitions
        .iter()
        .filter(|(_, m)| *m == Mode::Relocalizing)
        .count();
    assert_eq!(to_tracking, 1, "transitions: {:?}", outcome.stats.transitions);
    assert_eq!(to_reloc, 0, "transitions: {:?}", outcome.stats.transitions);

    // emissions: strictly increasing timestamps, one per tracked keyframe
    assert!(!outcome.trajectory.is_empty());
    for pair in outcome.trajectory.windows(2) {
        assert!(pair[0].timestamp < pair[1].timestamp);
    }
    let first_emit = outcome.trajectory[0].timestamp;
    let tracked_keyframes = log
        .records
        .iter()
        .filter(|r| matches!(r, LogRecord::Lidar { timestamp, .. } if *timestamp >= first_emit))
        .count();
    assert_eq!(outcome.trajectory.len(), tracked_keyframes);

    let truth = truth_samples(&log);
    let rmse = compute_ate_rmse(&outcome.trajectory, &truth, 0.02, false).unwrap();
    assert!(rmse < 0.3, "clean-run RMSE {rmse}");
}

#[test]
fn corrupted_scan_triggers_relocalization_and_recovery() {
    let world = test_world(22);
    let trajectory = loop_scenario(5.0);
    let noise = NoiseModel::default();
    let mut log = simulate_sensors(&world, &trajectory, &noise, &test_rates(), GRAVITY);

    // replace the scan nearest t = 30 s with garbage far off the map
    let mut rng = StdRng::seed_from_u64(99);
    let mut corrupted_at = None;
    for record in &mut log.records {
        if let LogRecord::Lidar { timestamp, scan, .. } = record {
            if (*timestamp - 30.0).abs() < 0.049 {
                let junk: Vec<Vector3<f64>> = (0..2000)
                    .map(|_| {
                        Vector3::new(
                            rng.gen_range(-10.0..10.0),
                            rng.gen_range(-10.0..10.0),
                            rng.gen_range(40.0..60.0),
                        )
                    })
                    .collect();
                *scan = PointCloud::from_points(junk);
                corrupted_at = Some(*timestamp);
            }
        }
    }
    let corrupted_at = corrupted_at.expect("a scan near t = 30 exists");

    let outcome = replay(&log, world.clone(), test_config()).unwrap();
    // the corrupted frame sends the pipeline through Relocalizing and back
    let entered_reloc = outcome
        .stats
        .transitions
        .iter()
        .any(|(t, m)| *m == Mode::Relocalizing && (*t - corrupted_at).abs() < 0.06);
    assert!(entered_reloc, "transitions: {:?}", outcome.stats.transitions);
    let recovered = outcome
        .stats
        .transitions
        .iter()
        .any(|(t, m)| *m == Mode::Tracking && *t > corrupted_at && *t <= corrupted_at + 0.31);
    assert!(
        recovered,
        "no recovery within 3 frames: {:?}",
        outcome.stats.transitions
    );
    assert_eq!(outcome.final_mode, Mode::Tracking);

    // accuracy still holds over the whole run
    let truth = truth_samples(&log);
    let rmse = compute_ate_rmse(&outcome.trajectory, &truth, 0.02, false).unwrap();
    assert!(rmse < 0.3, "post-recovery RMSE {rmse}");
}

#[test]
fn replay_is_bitwise_deterministic() {
    let world = test_world(23);
    let trajectory = loop_scenario(5.0);
    let noise = NoiseModel { dropouts: vec![(15.0, 25.0)], ..NoiseModel::default() };
    let log = simulate_sensors(&world, &trajectory, &noise, &test_rates(), GRAVITY);

    let a = replay(&log, world.clone(), test_config()).unwrap();
    let b = replay(&log, world.clone(), test_config()).unwrap();
    assert_eq!(format_trajectory(&a.trajectory), format_trajectory(&b.trajectory));
}

#[test]
fn fused_beats_dead_reckoning() {
    let world = test_world(24);
    let trajectory = loop_scenario(5.0);
    let noise = NoiseModel::default();
    let log = simulate_sensors(&world, &trajectory, &noise, &test_rates(), GRAVITY);
    let truth = truth_samples(&log);

    let fused = replay(&log, world.clone(), test_config()).unwrap();
    let fused_rmse = compute_ate_rmse(&fused.trajectory, &truth, 0.02, false).unwrap();

    let dead_config = PipelineConfig { disable_map_registration: true, ..test_config() };
    let dead = replay(&log, world.clone(), dead_config).unwrap();
    let dead_rmse = compute_ate_rmse(&dead.trajectory, &truth, 0.02, false).unwrap();

    assert!(
        fused_rmse < dead_rmse,
        "fused {fused_rmse} must beat dead reckoning {dead_rmse}"
    );
    assert!(dead_rmse > 1.0, "dead reckoning should drift visibly, got {dead_rmse}");
}
