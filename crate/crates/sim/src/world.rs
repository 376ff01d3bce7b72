//! Synthetic world generation: point-sampled ground, walls, boxes, and
//! pillars, deterministic for a fixed seed.

use maploc_core::map::PointCloud;
use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};

/// Parameters of a generated world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    /// Full extent per axis, meters; structures live in
    /// `[-x/2, x/2] × [-y/2, y/2]` with height capped by `z`.
    pub extent: Vector3<f64>,
    /// Structures per 100 m² of ground area. Zero produces an empty world.
    pub feature_density: f64,
    /// Grid spacing of the surface sampling, meters.
    pub point_spacing: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            extent: Vector3::new(200.0, 200.0, 8.0),
            feature_density: 3.0,
            point_spacing: 0.35,
            seed: 1,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.extent.min() > 0.0) {
            return Err("extent must be positive on every axis".into());
        }
        if !(self.point_spacing > 0.0) {
            return Err("point_spacing must be positive".into());
        }
        if self.feature_density < 0.0 {
            return Err("feature_density must be nonnegative".into());
        }
        Ok(())
    }
}

fn jitter(rng: &mut ChaCha12Rng, spacing: f64) -> f64 {
    rng.gen_range(-0.35 * spacing..0.35 * spacing)
}

fn sample_ground(points: &mut Vec<Vector3<f64>>, spec: &WorldSpec, rng: &mut ChaCha12Rng) {
    // ground sampled coarser than structures to keep clouds tractable
    let spacing = spec.point_spacing * 2.0;
    let (hx, hy) = (spec.extent.x / 2.0, spec.extent.y / 2.0);
    let mut x = -hx;
    while x <= hx {
        let mut y = -hy;
        while y <= hy {
            points.push(Vector3::new(x + jitter(rng, spacing), y + jitter(rng, spacing), 0.0));
            y += spacing;
        }
        x += spacing;
    }
}

fn sample_wall(
    points: &mut Vec<Vector3<f64>>,
    center: Vector3<f64>,
    yaw: f64,
    length: f64,
    height: f64,
    spacing: f64,
    rng: &mut ChaCha12Rng,
) {
    let dir = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let mut u = -length / 2.0;
    while u <= length / 2.0 {
        let mut z = 0.0;
        while z <= height {
            points.push(
                center + dir * (u + jitter(rng, spacing)) + Vector3::new(0.0, 0.0, z + jitter(rng, spacing)),
            );
            z += spacing;
        }
        u += spacing;
    }
}

fn sample_box(
    points: &mut Vec<Vector3<f64>>,
    center: Vector3<f64>,
    size: Vector3<f64>,
    spacing: f64,
    rng: &mut ChaCha12Rng,
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

fn sample_pillar(
    points: &mut Vec<Vector3<f64>>,
    center: Vector3<f64>,
    radius: f64,
    height: f64,
    spacing: f64,
    rng: &mut ChaCha12Rng,
) {
    let steps = ((2.0 * std::f64::consts::PI * radius / spacing).ceil() as usize).max(6);
    for k in 0..steps {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / steps as f64;
        let mut z = 0.0;
        while z <= height {
            let a = angle + jitter(rng, spacing) / radius.max(spacing);
            points.push(
                center + Vector3::new(radius * a.cos(), radius * a.sin(), z + jitter(rng, spacing)),
            );
            z += spacing;
        }
    }
}

/// Number of structures drawn for a spec (Poisson in the ground area).
pub fn expected_structure_count(spec: &WorldSpec) -> f64 {
    spec.feature_density * spec.extent.x * spec.extent.y / 100.0
}

/// Generate the world cloud. Deterministic for a fixed spec.
///
/// Returns an empty cloud when the feature density is zero; callers should
/// surface that as a warning.
pub fn generate_world(spec: &WorldSpec) -> PointCloud {
    generate_world_detailed(spec).0
}

/// Like [`generate_world`], additionally reporting how many structures were
/// placed (the Poisson draw).
pub fn generate_world_detailed(spec: &WorldSpec) -> (PointCloud, usize) {
    spec.validate().expect("invalid world spec");
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut points = Vec::new();
    if spec.feature_density == 0.0 {
        return (PointCloud::from_points(points), 0);
    }
    sample_ground(&mut points, spec, &mut rng);

    let lambda = expected_structure_count(spec);
    let count = if lambda > 0.0 {
        Poisson::new(lambda).map(|d| d.sample(&mut rng) as usize).unwrap_or(0)
    } else {
        0
    };
    let (hx, hy) = (spec.extent.x / 2.0, spec.extent.y / 2.0);
    let max_height = spec.extent.z;
    for _ in 0..count {
        let center = Vector3::new(rng.gen_range(-hx..hx), rng.gen_range(-hy..hy), 0.0);
        let spacing = spec.point_spacing;
        match rng.gen_range(0..3) {
            0 => {
                let yaw = rng.gen_range(0.0..std::f64::consts::PI);
                let length = rng.gen_range(6.0..16.0);
                let height = rng.gen_range(2.5..5.0_f64).min(max_height);
                sample_wall(&mut points, center, yaw, length, height, spacing, &mut rng);
            }
            1 => {
                let size = Vector3::new(
                    rng.gen_range(1.0..4.0),
                    rng.gen_range(1.0..4.0),
                    rng.gen_range(1.0..3.0_f64).min(max_height),
                );
                sample_box(&mut points, center, size, spacing, &mut rng);
            }
            _ => {
                let radius = rng.gen_range(0.2..0.5);
                let height = rng.gen_range(2.0..5.0_f64).min(max_height);
                sample_pillar(&mut points, center, radius, height, spacing, &mut rng);
            }
        }
    }
    (PointCloud::from_points(points), count)
}
