//! Scan-to-map ICP registration restricted to a GNSS-seeded local region of
//! the prior map, with adaptive region growth for re-localization.
//!
//! The transform convention is fixed here once: the registration result `T_k`
//! maps scan-frame points into the map frame, and the platform pose `p_k` in
//! the map frame is `T_k` itself. All seeds and results use that convention.
//!
//! Registration runs in two nested loops. The inner loop is classic
//! point-to-point ICP against a radius-bounded region of the map: transform
//! the scan, gate nearest-neighbor correspondences, solve the best rigid
//! alignment in closed form, repeat until the mean gated residual drops
//! below the error tolerance (converged) or stalls. The outer loop, used for
//! re-localization, grows the region radius geometrically when an attempt
//! fails, up to `r_max`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{Pose, Rotation3};
use crate::map::{voxel_downsample, GlobalMap, PointCloud, SpatialIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    pub max_iterations: u32,
    /// Mean gated residual below which the registration is converged, m.
    pub error_tolerance: f64,
    /// Correspondence gate, m: scan points farther than this from every
    /// region point are treated as outliers for the iteration.
    pub correspondence_max_distance: f64,
    /// Fewer region points than this is a failed region selection.
    pub min_region_points: usize,
    /// Region radius bounds, m.
    pub r_min: f64,
    pub r_max: f64,
    /// Geometric growth factor applied to the radius between attempts.
    pub radius_growth: f64,
    /// Stall threshold on the change of the mean residual between
    /// iterations, m.
    pub convergence_delta: f64,
    /// Voxel leaf for scan downsampling before registration, m; 0 disables.
    pub scan_voxel_leaf: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            error_tolerance: 0.05,
            correspondence_max_distance: 2.0,
            min_region_points: 100,
            r_min: 20.0,
            r_max: 200.0,
            radius_growth: 2.0,
            convergence_delta: 1e-4,
            scan_voxel_leaf: 0.4,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 {
            return Err("max_iterations must be positive".into());
        }
        for (name, v) in [
            ("error_tolerance", self.error_tolerance),
            ("correspondence_max_distance", self.correspondence_max_distance),
            ("r_min", self.r_min),
            ("r_max", self.r_max),
            ("convergence_delta", self.convergence_delta),
        ] {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.scan_voxel_leaf < 0.0 {
            return Err("scan_voxel_leaf must be nonnegative".into());
        }
        if self.r_min > self.r_max {
            return Err("r_min must not exceed r_max".into());
        }
        if self.radius_growth <= 1.0 {
            return Err("radius_growth must exceed 1".into());
        }
        Ok(())
    }
}

/// Outcome of one registration call.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Map-from-scan transform `T_k`.
    pub transform: Pose,
    /// Platform pose in the map frame (equal to `transform` by convention).
    pub pose: Pose,
    /// Mean gated correspondence residual, m.
    pub fitness: f64,
    pub iterations: u32,
    /// True iff the fitness dropped below the error tolerance.
    pub converged: bool,
    /// Gated correspondences over registered scan size.
    pub inlier_fraction: f64,
}

/// Result of an adaptive-radius re-localization.
#[derive(Debug, Clone, PartialEq)]
pub struct RelocalizationOutcome {
    pub registration: RegistrationResult,
    /// Number of radii tried, including the successful one.
    pub attempts: u32,
    /// Region radius of the successful attempt, m.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IcpError {
    #[error("local region has {found} points, need at least {needed}")]
    RegionEmpty { found: usize, needed: usize },
    #[error("no correspondences survive the distance gate")]
    NoCorrespondences,
    #[error("correspondence geometry is degenerate (collinear or coincident)")]
    DegenerateConfiguration,
    #[error("re-localization failed after {attempts} attempts up to r_max")]
    RelocalizationFailed {
        attempts: u32,
        /// Best-fitness attempt, for diagnostics.
        best: Option<Box<RegistrationResult>>,
    },
}

/// Region radius from the GNSS position covariance: three sigmas of total
/// position spread, clamped to the configured bounds.
pub fn initial_radius(position_covariance: &Matrix3<f64>, config: &RegistrationConfig) -> f64 {
    (3.0 * position_covariance.trace().max(0.0).sqrt()).clamp(config.r_min, config.r_max)
}

/// Closed-form least-squares rigid alignment of paired points
/// (centroid alignment + orthogonal Procrustes on the cross-covariance).
///
/// Minimizes `Σ ‖target − (R·source + t)‖²` over rotations and translations;
/// the returned pose maps source points onto target points.
pub fn best_rigid_transform(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<Pose, IcpError> {
    if pairs.len() < 3 {
        return Err(IcpError::DegenerateConfiguration);
    }
    let n = pairs.len() as f64;
    let mut source_centroid = Vector3::zeros();
    let mut target_centroid = Vector3::zeros();
    for (s, t) in pairs {
        source_centroid += s;
        target_centroid += t;
    }
    source_centroid /= n;
    target_centroid /= n;

    let mut cross = Matrix3::zeros();
    let mut source_scatter = Matrix3::zeros();
    for (s, t) in pairs {
        let sc = s - source_centroid;
        let tc = t - target_centroid;
        cross += sc * tc.transpose();
        source_scatter += sc * sc.transpose();
    }

    // collinear or coincident sources leave the rotation underdetermined
    let scatter_eigs = source_scatter.symmetric_eigen().eigenvalues;
    let mut eigs: Vec<f64> = scatter_eigs.iter().copied().collect();
    eigs.sort_by(|a, b| b.total_cmp(a));
    if eigs[1] <= 1e-12 * eigs[0].max(1e-12) {
        return Err(IcpError::DegenerateConfiguration);
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    // cross = Σ s t^T, so the rotation taking source to target is V D U^T
    let d = (v_t.transpose() * u.transpose()).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    let rotation = Rotation3::nearest(&(v_t.transpose() * fix * u.transpose()));
    let translation = target_centroid - rotation.apply(&source_centroid);
    Ok(Pose::new(rotation.to_quaternion(), translation))
}

struct Correspondences {
    pairs: Vec<(Vector3<f64>, Vector3<f64>)>,
    mean_residual: f64,
    inlier_fraction: f64,
}

fn gated_correspondences(
    scan: &PointCloud,
    transform: &Pose,
    region: &PointCloud,
    index: &SpatialIndex,
    gate: f64,
    region_center: &Vector3<f64>,
    region_radius: f64,
) -> Result<Correspondences, IcpError> {
    let gate_sq = gate * gate;
    // a scan point that lands outside the region cannot have its true match
    // inside it; keep such points out of the residual instead of letting
    // them pair with whatever sits at the region boundary
    let reach = region_radius - gate;
    let reach_sq = if reach > 0.0 { reach * reach } else { f64::INFINITY };
    let mut pairs = Vec::with_capacity(scan.len());
    let mut residual_sum = 0.0;
    for p in &scan.points {
        let moved = transform.apply(p);
        if (moved - region_center).norm_squared() > reach_sq {
            continue;
        }
        let (idx, d_sq) = index.nearest_index(&moved).expect("non-empty region");
        if d_sq <= gate_sq {
            residual_sum += d_sq.sqrt();
            pairs.push((moved, region.points[idx]));
        }
    }
    if pairs.is_empty() {
        return Err(IcpError::NoCorrespondences);
    }
    Ok(Correspondences {
        mean_residual: residual_sum / pairs.len() as f64,
        inlier_fraction: pairs.len() as f64 / scan.len() as f64,
        pairs,
    })
}

/// Register a scan against the map inside a region of radius `radius`
/// centered on the initial guess.
pub fn register(
    scan: &PointCloud,
    map: &GlobalMap,
    initial_guess: &Pose,
    radius: f64,
    config: &RegistrationConfig,
) -> Result<RegistrationResult, IcpError> {
    icp_loop(scan, map, initial_guess, radius, config, true)
}

/// The ICP iteration itself. With `allow_rotation` off the per-iteration
/// correction is the translation-only centroid shift, which re-localization
/// uses while the alignment error is still large: sampled walls are close to
/// symmetric under yaw flips, and a full 6-DoF fit on mostly-wrong
/// correspondences happily locks onto the flipped mode.
fn icp_loop(
    scan: &PointCloud,
    map: &GlobalMap,
    initial_guess: &Pose,
    radius: f64,
    config: &RegistrationConfig,
    allow_rotation: bool,
) -> Result<RegistrationResult, IcpError> {
    assert!(!scan.is_empty(), "scan must be non-empty");
    let scan = if config.scan_voxel_leaf > 0.0 {
        voxel_downsample(scan, config.scan_voxel_leaf)
    } else {
        scan.clone()
    };

    let mut region_center = initial_guess.translation;
    let mut region = map.extract_local_region(&region_center, radius);
    if region.len() < config.min_region_points {
        return Err(IcpError::RegionEmpty {
            found: region.len(),
            needed: config.min_region_points,
        });
    }
    let mut index = SpatialIndex::build(region.points.clone());

    let mut transform = *initial_guess;
    let mut previous_residual = f64::INFINITY;
    let mut last_step = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut fitness = f64::INFINITY;
    let mut inlier_fraction = 0.0;

    while iterations < config.max_iterations {
        iterations += 1;

        // follow the pose estimate: re-extract when it drifts well away
        // from the region center so the region keeps covering the scan
        if (transform.translation - region_center).norm() > radius / 4.0 {
            region_center = transform.translation;
            let fresh = map.extract_local_region(&region_center, radius);
            if fresh.len() < config.min_region_points {
                return Err(IcpError::RegionEmpty {
                    found: fresh.len(),
                    needed: config.min_region_points,
                });
            }
            region = fresh;
            index = SpatialIndex::build(region.points.clone());
        }

        let corr = gated_correspondences(
            &scan,
            &transform,
            &region,
            &index,
            config.correspondence_max_distance,
            &region_center,
            radius,
        )?;
        fitness = corr.mean_residual;
        inlier_fraction = corr.inlier_fraction;

        #[cfg(feature = "trace-reloc")]
        eprintln!(
            "    iter {iterations}: E={fitness:.5} inliers={:.3} pairs={} rot={allow_rotation}",
            inlier_fraction,
            corr.pairs.len()
        );

        if fitness < config.error_tolerance {
            converged = true;
            break;
        }
        // stalled: the residual has flattened AND the pose stopped moving.
        // The step condition matters when a dominant plane (ground) dilutes
        // the residual signal while the estimate is still crawling sideways.
        if (previous_residual - fitness).abs() < config.convergence_delta
            && last_step < config.convergence_delta
        {
            break;
        }
        previous_residual = fitness;

        let correction = if allow_rotation {
            best_rigid_transform(&corr.pairs)?
        } else {
            let shift = corr
                .pairs
                .iter()
                .fold(Vector3::zeros(), |acc, (s, t)| acc + (t - s))
                / corr.pairs.len() as f64;
            Pose::from_translation(shift)
        };
        // rotation contributes through a nominal 10 m lever arm
        last_step = correction.translation.norm()
            + 10.0 * correction.rotation.angle_to(&crate::geometry::UnitQuaternion::identity());
        transform = correction.compose(&transform);
    }

    Ok(RegistrationResult {
        transform,
        pose: transform,
        fitness,
        iterations,
        converged,
        inlier_fraction,
    })
}

/// Minimum inlier fraction for a re-localization attempt to count as found.
const MIN_RELOCALIZATION_INLIERS: f64 = 0.3;

/// Vertical clearance above the estimated ground level that a point must
/// have to survive ground stripping.
const GROUND_BAND: f64 = 0.5;

/// Remove the ground: everything within `GROUND_BAND` of the cloud's
/// 10th-percentile height. `level` rotates points upright first (for
/// body-frame scans whose attitude is known from the seed).
fn strip_ground(cloud: &PointCloud, level: Option<&Rotation3>) -> PointCloud {
    let heights: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| level.map_or(p.z, |r| r.apply(p).z))
        .collect();
    let mut sorted = heights.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let ground_level = sorted[sorted.len() / 10];
    PointCloud::from_points(
        cloud
            .points
            .iter()
            .zip(&heights)
            .filter(|(_, h)| **h > ground_level + GROUND_BAND)
            .map(|(p, _)| *p)
            .collect(),
    )
}

/// Coarse-to-fine registration from one start pose.
///
/// The coarse stages align ground-stripped clouds: with a dominant ground
/// plane present, nearest-neighbor matching sends every elevated point to
/// the ground below it and the lateral alignment signal disappears, so the
/// plane is removed while the error is large. The correspondence gate starts
/// at a third of the region radius (the seed error the radius was sized for)
/// and halves stage by stage down to the configured gate; rotation is frozen
/// to the trusted seed attitude until the gate is tight. The final pass runs
/// on the full clouds with the caller's config and is the one that judges
/// convergence.
fn cascade_registration(
    scan: &PointCloud,
    coarse_scan: &PointCloud,
    map: &GlobalMap,
    coarse_map: Option<&GlobalMap>,
    start: &Pose,
    radius: f64,
    config: &RegistrationConfig,
) -> Result<RegistrationResult, IcpError> {
    let mut estimate = *start;
    if let Some(coarse_map) = coarse_map {
        let mut gate = radius / 3.0;
        while gate > config.correspondence_max_distance {
            let stage_config = RegistrationConfig {
                correspondence_max_distance: gate,
                convergence_delta: config.convergence_delta.max(1e-3 * gate),
                ..config.clone()
            };
            // the seed attitude comes from a trusted prior; rotate only once
            // the gate is tight enough that correspondences are mostly right
            let allow_rotation = gate <= 4.0 * config.correspondence_max_distance;
            let stage = icp_loop(coarse_scan, coarse_map, &estimate, radius, &stage_config, allow_rotation)?;
            #[cfg(feature = "trace-reloc")]
            eprintln!(
                "  stage gate={gate:6.2} rot={allow_rotation}: fitness={:.4} inliers={:.3} iters={}",
                stage.fitness, stage.inlier_fraction, stage.iterations
            );
            estimate = stage.transform;
            gate /= 2.0;
        }
    }
    icp_loop(scan, map, &estimate, radius, config, true)
}

/// One re-localization attempt at a fixed radius: multi-start coarse-to-fine
/// registration.
///
/// Locally self-similar environments admit false alignments several meters
/// from the truth, and a single descent from the seed deterministically
/// lands in whichever basin is nearest. A ring of extra start positions
/// spread over the search radius gives the true basin a start close to it;
/// the first start that converges with enough inliers wins. A converged fit
/// sits at the sensor noise floor, far below anything a false alignment
/// reaches, so acceptance by the fitness tolerance is unambiguous.
fn attempt_relocalization(
    scan: &PointCloud,
    map: &GlobalMap,
    seed: &Pose,
    radius: f64,
    config: &RegistrationConfig,
) -> Result<RegistrationResult, IcpError> {
    let region = map.extract_local_region(&seed.translation, radius);
    if region.len() < config.min_region_points {
        return Err(IcpError::RegionEmpty {
            found: region.len(),
            needed: config.min_region_points,
        });
    }
    let coarse_region = strip_ground(&region, None);
    let coarse_scan = strip_ground(scan, Some(&seed.rotation.to_rotation()));
    let coarse_map = if coarse_region.len() >= config.min_region_points && coarse_scan.len() >= 50 {
        Some(GlobalMap::from_cloud(coarse_region).expect("non-empty stripped region"))
    } else {
        None
    };

    let ring = radius / 2.5;
    let mut starts = vec![Vector3::zeros()];
    for k in 0..6 {
        let angle = k as f64 * std::f64::consts::FRAC_PI_3;
        starts.push(Vector3::new(ring * angle.cos(), ring * angle.sin(), 0.0));
    }

    let mut best: Option<RegistrationResult> = None;
    let mut last_error: Option<IcpError> = None;
    for offset in starts {
        let start = Pose::new(seed.rotation, seed.translation + offset);
        match cascade_registration(
            scan,
            &coarse_scan,
            map,
            coarse_map.as_ref(),
            &start,
            radius,
            config,
        ) {
            Ok(result) => {
                if result.converged && result.inlier_fraction >= MIN_RELOCALIZATION_INLIERS {
                    return Ok(result);
                }
                let better = best.as_ref().map(|b| result.fitness < b.fitness).unwrap_or(true);
                if better {
                    best = Some(result);
                }
            }
            Err(e) => last_error = Some(e),
        }
    }
    match best {
        Some(result) => Ok(result),
        None => Err(last_error.unwrap_or(IcpError::NoCorrespondences)),
    }
}

/// Adaptive-radius re-localization from a GNSS seed.
///
/// Starts at the covariance-derived radius and grows it geometrically after
/// every failed attempt until an attempt converges with enough inliers or
/// `r_max` is exhausted.
pub fn relocalize(
    scan: &PointCloud,
    map: &GlobalMap,
    seed: &Pose,
    seed_position_covariance: &Matrix3<f64>,
    config: &RegistrationConfig,
) -> Result<RelocalizationOutcome, IcpError> {
    assert!(!scan.is_empty(), "scan must be non-empty");
    let mut radius = initial_radius(seed_position_covariance, config);
    let mut attempts = 0;
    let mut best: Option<RegistrationResult> = None;

    loop {
        attempts += 1;
        let outcome = attempt_relocalization(scan, map, seed, radius, config);
        #[cfg(feature = "trace-reloc")]
        match &outcome {
            Ok(r) => eprintln!(
                "reloc attempt {attempts}: r={radius:.1} converged={} fitness={:.4} inliers={:.3} iters={} pose=({:.2},{:.2},{:.2}) yaw={:.3}",
                r.converged,
                r.fitness,
                r.inlier_fraction,
                r.iterations,
                r.pose.translation.x,
                r.pose.translation.y,
                r.pose.translation.z,
                r.pose.rotation.to_rotation().to_euler().map(|e| e.yaw).unwrap_or(f64::NAN)
            ),
            Err(e) => eprintln!("reloc attempt {attempts}: r={radius:.1} error={e}"),
        }
        match outcome {
            Ok(result) => {
                if result.converged && result.inlier_fraction >= MIN_RELOCALIZATION_INLIERS {
                    return Ok(RelocalizationOutcome { registration: result, attempts, radius });
                }
                let better = best
                    .as_ref()
                    .map(|b| result.fitness < b.fitness)
                    .unwrap_or(true);
                if better {
                    best = Some(result);
                }
            }
            Err(IcpError::RegionEmpty { .. })
            | Err(IcpError::NoCorrespondences)
            | Err(IcpError::DegenerateConfiguration) => {}
            Err(fatal) => return Err(fatal),
        }
        if radius >= config.r_max {
            return Err(IcpError::RelocalizationFailed {
                attempts,
                best: best.map(Box::new),
            });
        }
        radius = (radius * config.radius_growth).min(config.r_max);
    }
}

/// Evaluate the registration cost at a fixed transform against the whole
/// map: mean gated nearest-neighbor residual and the gated fraction.
pub fn evaluate_fitness(
    scan: &PointCloud,
    map: &GlobalMap,
    transform: &Pose,
    gate: f64,
) -> Result<(f64, f64), IcpError> {
    assert!(!scan.is_empty(), "scan must be non-empty");
    let gate_sq = gate * gate;
    let mut residual_sum = 0.0;
    let mut inliers = 0usize;
    for p in &scan.points {
        let moved = transform.apply(p);
        let (_, d_sq) = map.index().nearest_index(&moved).expect("non-empty map");
        if d_sq <= gate_sq {
            residual_sum += d_sq.sqrt();
            inliers += 1;
        }
    }
    if inliers == 0 {
        return Err(IcpError::NoCorrespondences);
    }
    Ok((
        residual_sum / inliers as f64,
        inliers as f64 / scan.len() as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitQuaternion;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_vec(rng: &mut StdRng, scale: f64) -> Vector3<f64> {
        Vector3::new(
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
        )
    }

    fn random_pose(rng: &mut StdRng, t_scale: f64, angle_scale: f64) -> Pose {
        let axis = random_vec(rng, 1.0).normalize();
        Pose::new(
            UnitQuaternion::from_axis_angle(&axis, rng.gen_range(-angle_scale..angle_scale)),
            random_vec(rng, t_scale),
        )
    }

    /// Generic nonlinear least-squares oracle on the 6-DoF objective:
    /// Gauss-Newton over (rotation vector, translation) with a numeric
    /// Jacobian, entirely independent of the closed-form solver.
    fn numeric_rigid_fit(pairs: &[(Vector3<f64>, Vector3<f64>)], start: &Pose) -> (Pose, f64) {
        let cost = |params: &[f64; 6]| -> f64 {
            let rot = Rotation3::exp(&Vector3::new(params[0], params[1], params[2]));
            let t = Vector3::new(params[3], params[4], params[5]);
            pairs
                .iter()
                .map(|(s, d)| (d - (rot.apply(s) + t)).norm_squared())
                .sum()
        };
        let residuals = |params: &[f64; 6]| -> Vec<f64> {
            let rot = Rotation3::exp(&Vector3::new(params[0], params[1], params[2]));
            let t = Vector3::new(params[3], params[4], params[5]);
            pairs
                .iter()
                .flat_map(|(s, d)| {
                    let r = d - (rot.apply(s) + t);
                    [r.x, r.y, r.z]
                })
                .collect()
        };
        let r0 = start.rotation.to_rotation_vector();
        let mut params = [r0.x, r0.y, r0.z, start.translation.x, start.translation.y, start.translation.z];
        for _ in 0..100 {
            let base = residuals(&params);
            let m = base.len();
            // numeric Jacobian of the residual vector
            let mut jt_j = nalgebra::SMatrix::<f64, 6, 6>::zeros();
            let mut jt_r = nalgebra::SVector::<f64, 6>::zeros();
            let mut jac = vec![[0.0f64; 6]; m];
            let h = 1e-7;
            for k in 0..6 {
                let mut plus = params;
                plus[k] += h;
                let mut minus = params;
                minus[k] -= h;
                let rp = residuals(&plus);
                let rm = residuals(&minus);
                for i in 0..m {
                    jac[i][k] = (rp[i] - rm[i]) / (2.0 * h);
                }
            }
            for i in 0..m {
                for a in 0..6 {
                    jt_r[a] += jac[i][a] * base[i];
                    for b in 0..6 {
                        jt_j[(a, b)] += jac[i][a] * jac[i][b];
                    }
                }
            }
            let step = jt_j
                .lu()
                .solve(&jt_r)
                .unwrap_or_else(nalgebra::SVector::<f64, 6>::zeros);
            let mut next = params;
            for k in 0..6 {
                next[k] -= step[k];
            }
            if cost(&next) <= cost(&params) {
                let moved: f64 = step.norm();
                params = next;
                if moved < 1e-12 {
                    break;
                }
            } else {
                break;
            }
        }
        let pose = Pose::new(
            UnitQuaternion::from_rotation_vector(&Vector3::new(params[0], params[1], params[2])),
            Vector3::new(params[3], params[4], params[5]),
        );
        (pose, cost(&params))
    }

    #[test]
    fn initial_radius_clamps_and_scales() {
        let config = RegistrationConfig::default();
        assert_eq!(initial_radius(&Matrix3::zeros(), &config), config.r_min);
        assert_eq!(initial_radius(&(Matrix3::identity() * (1e6 / 3.0)), &config), config.r_max);
        let iso = Matrix3::identity() * 100.0; // σ = 10 m per axis, trace 300
        assert_abs_diff_eq!(
            initial_radius(&iso, &config),
            3.0 * 300.0_f64.sqrt(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn rigid_fit_identity_on_identical_sets() {
        let mut rng = StdRng::seed_from_u64(70);
        let pairs: Vec<_> = (0..40).map(|_| {
            let p = random_vec(&mut rng, 10.0);
            (p, p)
        }).collect();
        let pose = best_rigid_transform(&pairs).unwrap();
        assert!(pose.translation.norm() < 1e-12);
        assert!(pose.rotation.angle_to(&UnitQuaternion::identity()) < 1e-12);
    }

    #[test]
    fn rigid_fit_pure_translation() {
        let mut rng = StdRng::seed_from_u64(71);
        let shift = Vector3::new(1.0, 0.0, 0.0);
        let pairs: Vec<_> = (0..40).map(|_| {
            let p = random_vec(&mut rng, 10.0);
            (p, p + shift)
        }).collect();
        let pose = best_rigid_transform(&pairs).unwrap();
        assert_abs_diff_eq!(pose.translation, shift, epsilon = 1e-12);
        assert!(pose.rotation.angle_to(&UnitQuaternion::identity()) < 1e-12);
    }

    #[test]
    fn rigid_fit_recovers_truth_and_matches_numeric_oracle() {
        let mut rng = StdRng::seed_from_u64(72);
        for _ in 0..20 {
            let truth = random_pose(&mut rng, 8.0, 1.2);
            let source: Vec<Vector3<f64>> = (0..60).map(|_| random_vec(&mut rng, 10.0)).collect();
            let pairs: Vec<_> = source.iter().map(|s| (*s, truth.apply(s))).collect();

            let fitted = best_rigid_transform(&pairs).unwrap();
            let (dt, dr) = fitted.distance_to(&truth);
            assert!(dt < 1e-10 && dr < 1e-10, "dt={dt} dr={dr}");

            let closed_cost: f64 = pairs
                .iter()
                .map(|(s, d)| (d - fitted.apply(s)).norm_squared())
                .sum();
            let (_, numeric_cost) = numeric_rigid_fit(&pairs, &Pose::identity());
            assert!((closed_cost - numeric_cost).abs() <= 1e-8,
                "closed {closed_cost} vs numeric {numeric_cost}");
        }
    }

    #[test]
    fn rigid_fit_cost_is_global_minimum_on_noisy_pairs() {
        // with noise the exact transform no longer fits; the closed form must
        // still match the independent numeric minimizer
        let mut rng = StdRng::seed_from_u64(73);
        let truth = random_pose(&mut rng, 3.0, 0.8);
        let pairs: Vec<_> = (0..80)
            .map(|_| {
                let s = random_vec(&mut rng, 10.0);
                (s, truth.apply(&s) + random_vec(&mut rng, 0.05))
            })
            .collect();
        let fitted = best_rigid_transform(&pairs).unwrap();
        let closed_cost: f64 = pairs.iter().map(|(s, d)| (d - fitted.apply(s)).norm_squared()).sum();
        let (_, numeric_cost) = numeric_rigid_fit(&pairs, &truth);
        assert!(closed_cost <= numeric_cost + 1e-8, "closed {closed_cost} vs numeric {numeric_cost}");
    }

    #[test]
    fn rigid_fit_rejects_degenerate_geometry() {
        assert!(matches!(
            best_rigid_transform(&[(Vector3::zeros(), Vector3::zeros())]),
            Err(IcpError::DegenerateConfiguration)
        ));
        // collinear sources
        let pairs: Vec<_> = (0..10)
            .map(|i| {
                let p = Vector3::new(i as f64, 0.0, 0.0);
                (p, p + Vector3::new(0.0, 1.0, 0.0))
            })
            .collect();
        assert!(matches!(
            best_rigid_transform(&pairs),
            Err(IcpError::DegenerateConfiguration)
        ));
        // coincident sources
        let pairs: Vec<_> = (0..10).map(|_| (Vector3::new(1.0, 2.0, 3.0), Vector3::new(4.0, 5.0, 6.0))).collect();
        assert!(matches!(
            best_rigid_transform(&pairs),
            Err(IcpError::DegenerateConfiguration)
        ));
    }

    #[test]
    fn rigid_fit_exact_regardless_of_magnitude() {
        let mut rng = StdRng::seed_from_u64(74);
        for scale in [0.1, 10.0, 500.0] {
            let truth = Pose::new(
                UnitQuaternion::from_axis_angle(&random_vec(&mut rng, 1.0).normalize(), 2.9),
                random_vec(&mut rng, scale),
            );
            let pairs: Vec<_> = (0..50)
                .map(|_| {
                    let s = random_vec(&mut rng, 20.0);
                    (s, truth.apply(&s))
                })
                .collect();
            let fitted = best_rigid_transform(&pairs).unwrap();
            let residual: f64 = pairs
                .iter()
                .map(|(s, d)| (d - fitted.apply(s)).norm())
                .sum::<f64>()
                / pairs.len() as f64;
            assert!(residual <= 1e-10, "residual {residual} at scale {scale}");
        }
    }
}
