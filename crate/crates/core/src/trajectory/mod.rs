//! Quintic B-spline joint trajectories and the functionals defined on them.
//!
//! All joints share one clamped [`KnotVector`]; waypoint `i` sits at knot
//! `DEGREE + i`, so a path of `I` waypoints uses `I + 10` knots and `I + 4`
//! control points per joint.

mod basis;
mod functional;
mod interpolate;
mod knots;
mod robot;

use serde::{Deserialize, Serialize};

pub use basis::{basis_derivatives, basis_derivatives_n, DEGREE, MAX_ORDER};
pub use functional::{scalarize, JERK_QUADRATURE_NODES};
pub use interpolate::interpolate;
pub use knots::{BasisValues, KnotVector};
pub use robot::{RobotLimits, WaypointPath};

use crate::{Error, Result};

/// Control points of one joint's spline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointSpline {
    pub control_points: Vec<f64>,
}

impl JointSpline {
    pub fn new(control_points: Vec<f64>) -> Self {
        Self { control_points }
    }
}

/// `K` quintic B-splines over one shared knot vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryDoc", into = "TrajectoryDoc")]
pub struct SplineTrajectory {
    knots: KnotVector,
    joints: Vec<JointSpline>,
}

/// On-disk layout: `{degree, knots, joints}`.
#[derive(Serialize, Deserialize)]
struct TrajectoryDoc {
    degree: usize,
    knots: Vec<f64>,
    joints: Vec<Vec<f64>>,
}

impl SplineTrajectory {
    pub fn new(knots: KnotVector, joints: Vec<JointSpline>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::param("trajectory needs at least one joint"));
        }
        let m = knots.num_control_points();
        for (k, j) in joints.iter().enumerate() {
            if j.control_points.len() != m {
                return Err(Error::param(format!(
                    "joint {k} has {} control points, knot vector needs {m}",
                    j.control_points.len()
                )));
            }
            if j.control_points.iter().any(|c| !c.is_finite()) {
                return Err(Error::param(format!("joint {k} has a non-finite control point")));
            }
        }
        Ok(Self { knots, joints })
    }

    /// Every joint held at `values[k]` over `[0, end_time]` with `spans` uniform spans.
    pub fn constant(values: &[f64], end_time: f64, spans: usize) -> Result<Self> {
        let times: Vec<f64> = (0..=spans).map(|i| end_time * i as f64 / spans as f64).collect();
        let knots = KnotVector::from_waypoint_times(&times)?;
        let m = knots.num_control_points();
        let joints = values.iter().map(|&v| JointSpline::new(vec![v; m])).collect();
        Self::new(knots, joints)
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn joints(&self) -> &[JointSpline] {
        &self.joints
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn end_time(&self) -> f64 {
        self.knots.end_time()
    }

    /// The `order`-th time derivative of `joint` at `t`.
    pub fn eval(&self, joint: usize, t: f64, order: usize) -> Result<f64> {
        if joint >= self.joints.len() {
            return Err(Error::Index { index: joint, len: self.joints.len() });
        }
        if order > MAX_ORDER {
            return Err(Error::param(format!("derivative order {order} exceeds {MAX_ORDER}")));
        }
        let (first, ders) = self.knots.basis_derivatives(t)?;
        let c = &self.joints[joint].control_points[first..first + DEGREE + 1];
        Ok(dot6(&ders[order], c))
    }

    /// Position, velocity, acceleration and jerk of every joint at `t`.
    pub fn state(&self, t: f64) -> Result<Vec<[f64; MAX_ORDER + 1]>> {
        let (first, ders) = self.knots.basis_derivatives(t)?;
        Ok(self
            .joints
            .iter()
            .map(|j| {
                let c = &j.control_points[first..first + DEGREE + 1];
                std::array::from_fn(|r| dot6(&ders[r], c))
            })
            .collect())
    }

    /// Uniformly stretch time by `alpha`.
    pub fn time_scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(self.knots.scaled(alpha)?, self.joints.clone())
    }
}

#[inline]
pub(crate) fn dot6(a: &[f64; DEGREE + 1], c: &[f64]) -> f64 {
    a.iter().zip(c).map(|(a, c)| a * c).sum()
}

impl TryFrom<TrajectoryDoc> for SplineTrajectory {
    type Error = Error;
    fn try_from(d: TrajectoryDoc) -> Result<Self> {
        if d.degree != DEGREE {
            return Err(Error::param(format!("only degree {DEGREE} splines are supported, got {}", d.degree)));
        }
        Self::new(KnotVector::new(d.knots)?, d.joints.into_iter().map(JointSpline::new).collect())
    }
}

impl From<SplineTrajectory> for TrajectoryDoc {
    fn from(t: SplineTrajectory) -> Self {
        TrajectoryDoc {
            degree: DEGREE,
            knots: t.knots.into(),
            joints: t.joints.into_iter().map(|j| j.control_points).collect(),
        }
    }
}
