use serde::{Deserialize, Serialize};

use crate::trajectory::{JointSpline, KnotVector, SplineTrajectory, WaypointPath};
use crate::{Error, Result};

/// Optimization variables: span durations, then joint-major control points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub durations: Vec<f64>,
    /// `K × (I + 4)`.
    pub control_points: Vec<Vec<f64>>,
}

/// Cumulative sums `0, d0, d0 + d1, …`, accumulated left to right.
pub fn cumulative_times(durations: &[f64]) -> Vec<f64> {
    let mut times = Vec::with_capacity(durations.len() + 1);
    let mut t = 0.0;
    times.push(t);
    for d in durations {
        t += d;
        times.push(t);
    }
    times
}

/// A duration `d` with `start + d == end` in floating point.
fn exact_duration(start: f64, end: f64) -> f64 {
    let mut d = end - start;
    while start + d < end {
        d = d.next_up();
    }
    while start + d > end {
        d = d.next_down();
    }
    d
}

impl DecisionVector {
    pub fn new(durations: Vec<f64>, control_points: Vec<Vec<f64>>) -> Result<Self> {
        if durations.is_empty() {
            return Err(Error::param("need at least one span"));
        }
        if durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::param("durations must be positive and finite"));
        }
        let m = durations.len() + 5;
        if control_points.is_empty() || control_points.iter().any(|c| c.len() != m) {
            return Err(Error::param(format!("each joint needs {m} control points")));
        }
        Ok(Self { durations, control_points })
    }

    /// Waypoint count `I`.
    pub fn num_waypoints(&self) -> usize {
        self.durations.len() + 1
    }

    pub fn num_joints(&self) -> usize {
        self.control_points.len()
    }

    /// Flat length `(I - 1) + K (I + 4)`.
    pub fn len(&self) -> usize {
        self.durations.len() + self.control_points.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn waypoint_times(&self) -> Vec<f64> {
        cumulative_times(&self.durations)
    }

    pub fn end_time(&self) -> f64 {
        *self.waypoint_times().last().unwrap()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut x = self.durations.clone();
        for c in &self.control_points {
            x.extend_from_slice(c);
        }
        x
    }

    pub fn from_slice(x: &[f64], waypoints: usize, joints: usize) -> Result<Self> {
        if waypoints < 2 || joints == 0 {
            return Err(Error::param("need at least two waypoints and one joint"));
        }
        let spans = waypoints - 1;
        let m = waypoints + 4;
        if x.len() != spans + joints * m {
            return Err(Error::param(format!(
                "decision vector has {} entries, expected {}",
                x.len(),
                spans + joints * m
            )));
        }
        let control_points = x[spans..].chunks(m).map(<[f64]>::to_vec).collect();
        Self::new(x[..spans].to_vec(), control_points)
    }

    /// Durations whose cumulative sums reproduce the waypoint knots exactly.
    pub fn encode(traj: &SplineTrajectory) -> Result<Self> {
        let times = traj.knots().waypoint_times();
        let mut durations = Vec::with_capacity(times.len() - 1);
        let mut t = 0.0;
        for &next in &times[1..] {
            let d = exact_duration(t, next);
            durations.push(d);
            t += d;
        }
        let control_points = traj.joints().iter().map(|j| j.control_points.clone()).collect();
        Self::new(durations, control_points)
    }

    pub fn decode(&self, path: &WaypointPath) -> Result<SplineTrajectory> {
        if path.num_waypoints() != self.num_waypoints() || path.num_joints() != self.num_joints() {
            return Err(Error::param(format!(
                "decision vector is for {} waypoints × {} joints, path has {} × {}",
                self.num_waypoints(),
                self.num_joints(),
                path.num_waypoints(),
                path.num_joints()
            )));
        }
        self.to_trajectory()
    }

    /// The trajectory without checking against a path.
    pub fn to_trajectory(&self) -> Result<SplineTrajectory> {
        let knots = KnotVector::from_waypoint_times(&self.waypoint_times())?;
        let joints = self.control_points.iter().map(|c| JointSpline::new(c.clone())).collect();
        SplineTrajectory::new(knots, joints)
    }
}
