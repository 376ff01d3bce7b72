//! Desk-scale test bench for the map-based localization engine: synthetic
//! worlds, sensor simulation with noise and GNSS dropouts, dataset replay
//! through the pipeline, and trajectory evaluation.

pub mod evaluate;
pub mod logio;
pub mod replay;
pub mod sensors;
pub mod specfile;
pub mod trajectory;
pub mod world;

pub use evaluate::compute_ate_rmse;
pub use replay::{replay, ReplayOutcome};
pub use sensors::{simulate_sensors, EventLog, NoiseModel, SensorRates};
pub use trajectory::{Trajectory, TrajectorySpec, Waypoint};
pub use world::{generate_world, WorldSpec};
