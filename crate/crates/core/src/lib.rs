//! Two-stage time-jerk optimal trajectory planning for robot arms.
//!
//! A dual-encoder transformer ([`neural`]) predicts quintic B-spline knots and
//! control points for a joint-space waypoint path; an SQP solver ([`sqp`])
//! refines that guess into a trajectory that minimizes
//! `λ·jerk + (1 − λ)·duration` subject to kinematic limits and rest-to-rest
//! boundary conditions ([`planner`]).

pub mod benchmark;
pub mod datagen;
pub mod dual;
pub mod error;
pub mod json;
pub mod neural;
pub mod planner;
pub mod quadrature;
pub mod sqp;
pub mod trajectory;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use trajectory::{JointSpline, KnotVector, RobotLimits, SplineTrajectory, WaypointPath};
