//! Total jerk, the scalarized time-jerk objective, and constraint residuals.

use super::{dot6, RobotLimits, SplineTrajectory, WaypointPath, DEGREE, MAX_ORDER};
use crate::quadrature::gauss_legendre;
use crate::{Error, Result};

/// Nodes per knot span; exact for the degree-4 squared-jerk integrand.
pub const JERK_QUADRATURE_NODES: usize = 3;

/// `lambda * jerk + (1 - lambda) * duration`.
pub fn scalarize(jerk: f64, duration: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(lambda * jerk + (1.0 - lambda) * duration)
}

impl SplineTrajectory {
    /// Per-joint `∫ q'''(t)^2 dt` over `[0, T]`.
    pub fn jerk_integrals(&self) -> Vec<f64> {
        let (nodes, weights) = gauss_legendre(JERK_QUADRATURE_NODES);
        let knots = self.knots.as_slice();
        let mut acc = vec![0.0; self.joints.len()];
        for span in DEGREE..self.knots.num_control_points() {
            let (a, b) = (knots[span], knots[span + 1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in nodes.iter().zip(&weights) {
                let t = mid + half * x;
                let ders = super::basis_derivatives(knots, span, t);
                for (k, joint) in self.joints.iter().enumerate() {
                    let jerk = dot6(&ders[3], &joint.control_points[span - DEGREE..=span]);
                    acc[k] += w * half * jerk * jerk;
                }
            }
        }
        acc
    }

    /// `J = Σ_k sqrt(∫ q_k'''^2 dt / T)`.
    pub fn total_jerk(&self) -> Result<f64> {
        let t = self.end_time();
        if !(t > 0.0) {
            return Err(Error::Degenerate("zero duration".into()));
        }
        Ok(self.jerk_integrals().iter().map(|e| (e / t).sqrt()).sum())
    }

    pub fn scalar_objective(&self, lambda: f64) -> Result<f64> {
        scalarize(self.total_jerk()?, self.end_time(), lambda)
    }

    /// `limit - |value|` for every joint, grid time and derivative order
    /// (joint-major, then time, then order). Positive means satisfied.
    pub fn kinematic_residuals(&self, limits: &RobotLimits, grid: &[f64]) -> Result<Vec<f64>> {
        if grid.is_empty() {
            return Err(Error::param("empty collocation grid"));
        }
        if limits.num_joints() != self.num_joints() {
            return Err(Error::param("limits and trajectory disagree on joint count"));
        }
        let states = grid.iter().map(|&t| self.state(t)).collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(self.num_joints() * grid.len() * (MAX_ORDER + 1));
        for k in 0..self.num_joints() {
            for s in &states {
                for (r, v) in s[k].iter().enumerate() {
                    out.push(limits.bound(r, k) - v.abs());
                }
            }
        }
        Ok(out)
    }

    /// `(q̇_k(0), q̇_k(T), q̈_k(0), q̈_k(T))` for each joint, concatenated.
    pub fn boundary_residuals(&self) -> Vec<f64> {
        let start = self.state(0.0).expect("0 is in the domain");
        let end = self.state(self.end_time()).expect("T is in the domain");
        start.iter().zip(&end).flat_map(|(s, e)| [s[1], e[1], s[2], e[2]]).collect()
    }

    /// `q_k(t_i) - path[i][k]` as an `I × K` matrix.
    pub fn interpolation_residuals(&self, path: &WaypointPath, waypoint_times: &[f64]) -> Result<Vec<Vec<f64>>> {
        if waypoint_times.len() != path.num_waypoints() {
            return Err(Error::param(format!(
                "{} waypoint times for {} waypoints",
                waypoint_times.len(),
                path.num_waypoints()
            )));
        }
        if path.num_joints() != self.num_joints() {
            return Err(Error::param("path and trajectory disagree on joint count"));
        }
        if waypoint_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("waypoint times must be strictly increasing"));
        }
        waypoint_times
            .iter()
            .enumerate()
            .map(|(i, &t)| (0..self.num_joints()).map(|k| Ok(self.eval(k, t, 0)? - path.get(i, k))).collect())
            .collect()
    }
}
