//! Shared builders for scenario tests: deterministic structured worlds and
//! body-frame scans taken from them.
//!
//! Surface sampling is jittered in-plane: perfect lattices are translation
//! symmetric at half the grid spacing, which gives point-to-point matching
//! spurious local minima that real sensor data does not have.

use maploc_core::geometry::{Pose, UnitQuaternion};
use maploc_core::map::{GlobalMap, PointCloud};
use nalgebra::Vector3;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

fn jitter(rng: &mut StdRng, spacing: f64) -> f64 {
    rng.gen_range(-0.35 * spacing..0.35 * spacing)
}

/// Sample a horizontal ground patch at z = 0.
pub fn ground(
    points: &mut Vec<Vector3<f64>>,
    center: Vector3<f64>,
    half_extent: f64,
    spacing: f64,
    rng: &mut StdRng,
) {
    let mut x = -half_extent;
    while x <= half_extent {
        let mut y = -half_extent;
        while y <= half_extent {
            points.push(center + Vector3::new(x + jitter(rng, spacing), y + jitter(rng, spacing), 0.0));
            y += spacing;
        }
        x += spacing;
    }
}

/// Sample a vertical wall segment.
pub fn wall(
    points: &mut Vec<Vector3<f64>>,
    center: Vector3<f64>,
    yaw: f64,
    length: f64,
    height: f64,
    spacing: f64,
    rng: &mut StdRng,
) {
    let dir = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let mut u = -length / 2.0;
    while u <= length / 2.0 {
        let mut z = 0.0;
        while z <= height {
            points.push(center + dir * (u + jitter(rng, spacing)) + Vector3::new(0.0, 0.0, z + jitter(rng, spacing)));
            z += spacing;
        }
        u += spacing;
    }
}

/// Sample an axis-aligned box: four sides and the top.
pub fn boxy(
    points: &mut Vec<Vector3<f64>>,
    center: Vector3<f64>,
    size: Vector3<f64>,
    spacing: f64,
    rng: &mut StdRng,
) {
    let half = size / 2.0;
    let mut a = -half.x;
    while a <= half.x {
        let mut z = 0.0;
        while z <= size.z {
            let au = a + jitter(rng, spacing);
            let zu = z + jitter(rng, spacing);
            points.push(center + Vector3::new(au, -half.y, zu));
            points.push(center + Vector3::new(au, half.y, zu));
            z += spacing;
        }
        let mut b = -half.y;
        while b <= half.y {
            points.push(center + Vector3::new(a + jitter(rng, spacing), b + jitter(rng, spacing), size.z));
            b += spacing;
        }
        a += spacing;
    }
    let mut b = -half.y;
    while b <= half.y {
        let mut z = 0.0;
        while z <= size.z {
            let bu = b + jitter(rng, spacing);
            let zu = z + jitter(rng, spacing);
            points.push(center + Vector3::new(-half.x, bu, zu));
            points.push(center + Vector3::new(half.x, bu, zu));
            z += spacing;
        }
        b += spacing;
    }
}

/// Structured world: ground plus randomly placed walls and boxes over a
/// square of the given half-extent. Deterministic for a fixed seed.
pub fn structured_world(seed: u64, half_extent: f64, walls: usize, boxes: usize, spacing: f64) -> PointCloud {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut points = Vec::new();
    // ground pins the vertical alignment the way real outdoor maps do
    ground(&mut points, Vector3::zeros(), half_extent, spacing * 2.0, &mut rng);
    for _ in 0..walls {
        let center = Vector3::new(
            rng.gen_range(-half_extent..half_extent),
            rng.gen_range(-half_extent..half_extent),
            0.0,
        );
        let yaw = rng.gen_range(0.0..std::f64::consts::PI);
        let length = rng.gen_range(6.0..16.0);
        let height = rng.gen_range(2.5..5.0);
        wall(&mut points, center, yaw, length, height, spacing, &mut rng);
    }
    for _ in 0..boxes {
        let center = Vector3::new(
            rng.gen_range(-half_extent..half_extent),
            rng.gen_range(-half_extent..half_extent),
            0.0,
        );
        let size = Vector3::new(rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0), rng.gen_range(1.0..3.0));
        boxy(&mut points, center, size, spacing, &mut rng);
    }
    PointCloud::from_points(points)
}

/// Body-frame scan: map points within `range` of the pose, moved into the
/// platform frame, with optional isotropic Gaussian noise.
pub fn scan_at(map: &GlobalMap, pose: &Pose, range: f64, noise_sigma: f64, rng: &mut StdRng) -> PointCloud {
    let region = map.extract_local_region(&pose.translation, range);
    let inverse = pose.inverse();
    let normal = Normal::new(0.0, noise_sigma.max(1e-300)).unwrap();
    let points = region
        .points
        .iter()
        .map(|p| {
            let body = inverse.apply(p);
            if noise_sigma > 0.0 {
                body + Vector3::new(
                    normal.sample(rng),
                    normal.sample(rng),
                    normal.sample(rng),
                )
            } else {
                body
            }
        })
        .collect();
    PointCloud::from_points(points)
}

/// Pose with the given yaw at a position.
pub fn pose_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Pose {
    Pose::new(
        UnitQuaternion::from_axis_angle(&Vector3::z(), yaw),
        Vector3::new(x, y, z),
    )
}
