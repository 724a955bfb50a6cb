use serde::{Deserialize, Serialize};

use crate::trajectory::{RobotLimits, SplineTrajectory, WaypointPath, MAX_ORDER};
use crate::Result;

/// Kinematic residuals must stay above this on the dense grid.
pub const KINEMATIC_TOLERANCE: f64 = -1e-9;
/// Bound on boundary and interpolation residual magnitudes.
pub const EQUALITY_TOLERANCE: f64 = 1e-6;

/// Dense audit of a trajectory against unmargined limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Samples per knot span.
    pub samples_per_span: usize,
    /// Smallest `limit - |value|` over joints, orders and samples.
    pub min_kinematic_residual: f64,
    /// Where the minimum occurs: `(joint, order, time)`.
    pub worst: (usize, usize, f64),
    pub max_boundary_residual: f64,
    pub max_interpolation_residual: f64,
    pub passed: bool,
}

/// Uniform samples, `samples_per_span` per span, every span end included.
pub fn dense_times(waypoint_times: &[f64], samples_per_span: usize) -> Vec<f64> {
    let n = samples_per_span.max(2) - 1;
    let mut out = Vec::with_capacity((waypoint_times.len() - 1) * n + 1);
    for w in waypoint_times.windows(2) {
        for i in 0..n {
            out.push(w[0] + (w[1] - w[0]) * i as f64 / n as f64);
        }
    }
    out.push(*waypoint_times.last().unwrap());
    out
}

pub fn dense_check(
    traj: &SplineTrajectory,
    path: &WaypointPath,
    limits: &RobotLimits,
    samples_per_span: usize,
) -> Result<FeasibilityReport> {
    let times = traj.knots().waypoint_times();
    let grid = dense_times(&times, samples_per_span);
    let mut min = f64::INFINITY;
    let mut worst = (0, 0, 0.0);
    for &t in &grid {
        for (k, s) in traj.state(t)?.iter().enumerate() {
            for (r, v) in s.iter().enumerate().take(MAX_ORDER + 1) {
                let res = limits.bound(r, k) - v.abs();
                if res < min {
                    min = res;
                    worst = (k, r, t);
                }
            }
        }
    }
    let max_boundary = traj.boundary_residuals().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_interp = traj.interpolation_residuals(path, &times)?.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(FeasibilityReport {
        samples_per_span,
        min_kinematic_residual: min,
        worst,
        max_boundary_residual: max_boundary,
        max_interpolation_residual: max_interp,
        passed: min > KINEMATIC_TOLERANCE && max_boundary < EQUALITY_TOLERANCE && max_interp < EQUALITY_TOLERANCE,
    })
}
