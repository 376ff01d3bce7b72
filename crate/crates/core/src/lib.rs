//! Map-based LIDAR-inertial-GNSS localization.
//!
//! The crate localizes a moving platform inside a prior 3-D point-cloud map
//! by fusing three odometry sources:
//!
//! - a GNSS/IMU extended Kalman filter ([`gnss_ekf`]) that bootstraps and
//!   restarts the system with a global pose,
//! - IMU preintegration ([`preintegration`]) that predicts motion between
//!   LIDAR keyframes and seeds the scan registration,
//! - scan-to-map ICP registration ([`registration`]) restricted to a
//!   GNSS-seeded local region of the map, with adaptive region growth for
//!   re-localization after tracking loss.
//!
//! A roll-constrained velocity filter ([`velocity_ikf`]) corrects heading and
//! pitch from GNSS velocity without touching roll, and the [`pipeline`] state
//! machine ties everything together, switching its GNSS fusion rule on the
//! trace of the reported GNSS covariance ([`fusion`]).

pub mod config;
pub mod fusion;
pub mod geometry;
pub mod gnss_ekf;
pub mod map;
pub mod pipeline;
pub mod preintegration;
pub mod registration;
pub mod velocity_ikf;

pub use geometry::{EulerAngles, Pose, Rotation3, UnitQuaternion};
pub use map::{GlobalMap, PointCloud, SpatialIndex};
