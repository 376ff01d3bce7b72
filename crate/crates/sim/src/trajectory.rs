//! Reference trajectories: a natural cubic spline through timed waypoints,
//! with analytic velocity and acceleration, plus the body-frame kinematics
//! an IMU would sense along it.

use maploc_core::geometry::{Pose, Rotation3, UnitQuaternion};
use nalgebra::Vector3;

/// Timed waypoint: position and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub t: f64,
    pub position: Vector3<f64>,
    pub yaw: f64,
}

/// Spline trajectory specification.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub waypoints: Vec<Waypoint>,
}

impl TrajectorySpec {
    pub fn duration(&self) -> f64 {
        self.waypoints.last().map(|w| w.t).unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.waypoints.len() < 2 {
            return Err("need at least two waypoints".into());
        }
        for pair in self.waypoints.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(format!(
                    "waypoint times must strictly increase ({} then {})",
                    pair[0].t, pair[1].t
                ));
            }
        }
        Ok(())
    }
}

/// Natural cubic spline through `(t_i, y_i)` with analytic derivatives.
#[derive(Debug, Clone)]
struct CubicSpline {
    times: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots (natural: zero at the ends).
    second: Vec<f64>,
}

impl CubicSpline {
    fn fit(times: &[f64], values: &[f64]) -> Self {
        let n = times.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut lower = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for i in 0..m {
                let h0 = times[i + 1] - times[i];
                let h1 = times[i + 2] - times[i + 1];
                lower[i] = h0;
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0
                    * ((values[i + 2] - values[i + 1]) / h1 - (values[i + 1] - values[i]) / h0);
            }
            // Thomas algorithm
            for i in 1..m {
                let w = lower[i] / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            let mut x = vec![0.0; m];
            x[m - 1] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                x[i] = (rhs[i] - upper[i] * x[i + 1]) / diag[i];
            }
            second[1..=m].copy_from_slice(&x);
        }
        Self { times: times.to_vec(), values: values.to_vec(), second }
    }

    fn segment(&self, t: f64) -> usize {
        match self.times.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(i) => i.min(self.times.len() - 2),
            Err(i) => i.clamp(1, self.times.len() - 1) - 1,
        }
    }

    /// Value, first, and second derivative at `t` (clamped to the range).
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let i = self.segment(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let a = (t1 - t) / h;
        let b = (t - t0) / h;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let value = a * y0
            + b * y1
            + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let deriv = (y1 - y0) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0
            + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        let second = a * m0 + b * m1;
        (value, deriv, second)
    }
}

/// One sampled instant of the reference trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl TrajectorySample {
    pub fn pose(&self) -> Pose {
        Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::z(), self.yaw),
            self.position,
        )
    }

    /// Body angular rate for a yaw-only attitude.
    pub fn body_angular_rate(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.yaw_rate)
    }

    /// Specific force an accelerometer senses: `R_n^b (a − g)`.
    pub fn body_specific_force(&self, gravity: f64) -> Vector3<f64> {
        let accel_minus_g = self.acceleration + Vector3::new(0.0, 0.0, gravity);
        Rotation3::rotation_z(self.yaw).transpose().apply(&accel_minus_g)
    }
}

/// Spline evaluator over a trajectory spec.
#[derive(Debug, Clone)]
pub struct Trajectory {
    splines: [CubicSpline; 3],
    yaw_spline: CubicSpline,
    duration: f64,
}

impl Trajectory {
    pub fn new(spec: &TrajectorySpec) -> Result<Self, String> {
        spec.validate()?;
        let times: Vec<f64> = spec.waypoints.iter().map(|w| w.t).collect();
        let axis = |pick: fn(&Waypoint) -> f64| -> Vec<f64> {
            spec.waypoints.iter().map(pick).collect()
        };
        // unwrap yaw so the spline never takes the long way around
        let mut yaw_values = Vec::with_capacity(spec.waypoints.len());
        let mut previous = spec.waypoints[0].yaw;
        let mut offset = 0.0;
        for w in &spec.waypoints {
            let mut delta = w.yaw - previous;
            while delta > std::f64::consts::PI {
                delta -= 2.0 * std::f64::consts::PI;
                offset -= 2.0 * std::f64::consts::PI;
            }
            while delta < -std::f64::consts::PI {
                delta += 2.0 * std::f64::consts::PI;
                offset += 2.0 * std::f64::consts::PI;
            }
            yaw_values.push(w.yaw + offset);
            previous = w.yaw;
        }
        Ok(Self {
            splines: [
                CubicSpline::fit(&times, &axis(|w| w.position.x)),
                CubicSpline::fit(&times, &axis(|w| w.position.y)),
                CubicSpline::fit(&times, &axis(|w| w.position.z)),
            ],
            yaw_spline: CubicSpline::fit(&times, &yaw_values),
            duration: *times.last().unwrap(),
        })
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn sample(&self, t: f64) -> TrajectorySample {
        let (x, vx, ax) = self.splines[0].eval(t);
        let (y, vy, ay) = self.splines[1].eval(t);
        let (z, vz, az) = self.splines[2].eval(t);
        let (yaw, yaw_rate, _) = self.yaw_spline.eval(t);
        TrajectorySample {
            t,
            position: Vector3::new(x, y, z),
            velocity: Vector3::new(vx, vy, vz),
            acceleration: Vector3::new(ax, ay, az),
            yaw,
            yaw_rate,
        }
    }
}

/// Waypoints of a rounded-rectangle loop with heading tangent to the path,
/// convenient for closed-course scenarios.
pub fn loop_waypoints(half_x: f64, half_y: f64, speed: f64, samples_per_side: usize) -> Vec<Waypoint> {
    let mut corners = Vec::new();
    // counterclockwise starting east along the south edge
    let sides = [
        (Vector3::new(-half_x, -half_y, 1.0), Vector3::new(half_x, -half_y, 1.0)),
        (Vector3::new(half_x, -half_y, 1.0), Vector3::new(half_x, half_y, 1.0)),
        (Vector3::new(half_x, half_y, 1.0), Vector3::new(-half_x, half_y, 1.0)),
        (Vector3::new(-half_x, half_y, 1.0), Vector3::new(-half_x, -half_y, 1.0)),
    ];
    for (from, to) in sides {
        for k in 0..samples_per_side {
            let s = k as f64 / samples_per_side as f64;
            let position = from + (to - from) * s;
            let dir = to - from;
            corners.push((position, dir.y.atan2(dir.x)));
        }
    }
    corners.push(corners[0].clone());

    let mut waypoints = Vec::with_capacity(corners.len());
    let mut t = 0.0;
    for i in 0..corners.len() {
        if i > 0 {
            let step = (corners[i].0 - corners[i - 1].0).norm();
            t += step / speed;
        }
        waypoints.push(Waypoint { t, position: corners[i].0, yaw: corners[i].1 });
    }
    waypoints
}
