//! The two-stage planning pipeline: initial guess, then SQP refinement.
//!
//! A trajectory is parameterized by a [`DecisionVector`] of span durations
//! and control points. [`TrajectoryNlp`] poses the time-jerk program over it
//! with interpolation and rest-to-rest boundary equalities and kinematic
//! limits enforced at the per-span extrema of each derivative; [`plan`]
//! solves it and audits the result on a dense grid.

mod check;
mod decision;
mod nlp;
mod warm;

#[cfg(test)]
mod tests;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use check::{dense_check, dense_times, FeasibilityReport, EQUALITY_TOLERANCE, KINEMATIC_TOLERANCE};
pub use decision::{cumulative_times, DecisionVector};
pub use nlp::{polynomial_extrema, SpanExtrema, TrajectoryNlp, JERK_SMOOTHING, SEARCH_INTERVALS_PER_DENSITY};
pub use warm::{
    assemble_prediction, interpolation_residual, knots_to_durations, linear_baseline, plan_with_model, time_stretch,
    warm_start_from_model, InitialGuessModel, CONTROL_POINT_BOX, STRETCH_SAMPLES,
};

use crate::sqp::{self, SqpResult, SqpSettings, SqpStatus};
use crate::trajectory::{interpolate, RobotLimits, SplineTrajectory, WaypointPath};
use crate::{Error, Result};

/// Minimum span duration in seconds.
pub const EPS_SPAN: f64 = 1e-4;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_DENSITY: usize = 5;
pub const DEFAULT_MARGIN: f64 = 0.99;
/// Dense post-check samples per span, relative to the collocation density.
pub const CHECK_FACTOR: usize = 10;

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_density() -> usize {
    DEFAULT_DENSITY
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub path: WaypointPath,
    pub limits: RobotLimits,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_density")]
    pub collocation_density: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub solver: SqpSettings,
}

impl PlanRequest {
    pub fn new(path: WaypointPath, limits: RobotLimits) -> Self {
        Self {
            path,
            limits,
            lambda: DEFAULT_LAMBDA,
            collocation_density: DEFAULT_DENSITY,
            margin: DEFAULT_MARGIN,
            solver: SqpSettings::default(),
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::param(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.margin > 0.0 && self.margin <= 1.0) {
            return Err(Error::param(format!("margin must lie in (0, 1], got {}", self.margin)));
        }
        if self.collocation_density < 2 {
            return Err(Error::param("collocation density must be at least 2"));
        }
        if self.path.num_joints() != self.limits.num_joints() {
            return Err(Error::param("path and limits disagree on joint count"));
        }
        self.solver.validate()?;
        self.path.check_within(&self.limits)
    }
}

pub fn build_nlp(request: &PlanRequest) -> Result<TrajectoryNlp> {
    request.validate()?;
    TrajectoryNlp::new(&request.path, &request.limits, request.lambda, request.collocation_density, request.margin)
}

/// One SQP solve inside [`plan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub margin: f64,
    pub collocation_density: usize,
    pub status: SqpStatus,
    pub iterations: usize,
    pub objective: f64,
    pub kkt_residual: f64,
    pub violation: f64,
    pub feasibility: FeasibilityReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub warm_start_ns: u64,
    pub sqp_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub trajectory: SplineTrajectory,
    /// `λ·J + (1 − λ)·T` of the returned trajectory.
    pub objective: f64,
    pub jerk: f64,
    pub duration: f64,
    /// The solve that produced `trajectory`.
    pub solver: SqpResult,
    pub attempts: Vec<Attempt>,
    pub feasibility: FeasibilityReport,
    pub timings: StageTimings,
}

impl PlanResult {
    /// SQP converged and the dense post-check passed.
    pub fn converged(&self) -> bool {
        self.solver.status == SqpStatus::Converged && self.feasibility.passed
    }

    /// SQP iterations summed over all attempts.
    pub fn total_iterations(&self) -> usize {
        self.attempts.iter().map(|a| a.iterations).sum()
    }
}

/// Durations from the largest per-joint displacement at half the velocity
/// limit, control points from the interpolation system.
pub fn cold_start(path: &WaypointPath, limits: &RobotLimits) -> Result<DecisionVector> {
    if path.num_joints() != limits.num_joints() {
        return Err(Error::param("path and limits disagree on joint count"));
    }
    path.check_within(limits)?;
    let durations: Vec<f64> = (0..path.num_waypoints() - 1)
        .map(|i| {
            let (a, b) = (path.waypoint(i), path.waypoint(i + 1));
            let d =
                (0..path.num_joints()).map(|k| (b[k] - a[k]).abs() / (0.5 * limits.qd_max()[k])).fold(0.0, f64::max);
            d.max(EPS_SPAN)
        })
        .collect();
    let traj = match interpolate(path, &cumulative_times(&durations)) {
        Err(Error::SingularSystem) => {
            let bumped: Vec<f64> = durations.iter().map(|d| d * 1.01).collect();
            interpolate(path, &cumulative_times(&bumped))?
        }
        other => other?,
    };
    DecisionVector::encode(&traj)
}

fn summarize(traj: &SplineTrajectory, lambda: f64) -> Result<(f64, f64, f64)> {
    let jerk = traj.total_jerk()?;
    let duration = traj.end_time();
    Ok((sqp_objective(jerk, duration, lambda), jerk, duration))
}

fn sqp_objective(jerk: f64, duration: f64, lambda: f64) -> f64 {
    lambda * jerk + (1.0 - lambda) * duration
}

/// Refine `init` with SQP. If the dense post-check fails, solve once more
/// from the first solution with margin `μ²` and doubled collocation density.
/// Fails with [`Error::PlanningFailed`] when neither attempt passes.
pub fn plan(request: &PlanRequest, init: &DecisionVector) -> Result<PlanResult> {
    let result = plan_unchecked(request, init)?;
    if !result.feasibility.passed {
        let diag: Vec<String> = result
            .attempts
            .iter()
            .map(|a| {
                format!(
                    "margin {:.4} density {}: {:?} after {} iterations, min residual {:.3e}, boundary {:.3e}, interpolation {:.3e}",
                    a.margin,
                    a.collocation_density,
                    a.status,
                    a.iterations,
                    a.feasibility.min_kinematic_residual,
                    a.feasibility.max_boundary_residual,
                    a.feasibility.max_interpolation_residual
                )
            })
            .collect();
        return Err(Error::PlanningFailed(diag.join("; ")));
    }
    Ok(result)
}

/// [`plan`] that returns the last attempt even when it fails the dense
/// post-check; `feasibility.passed` tells.
pub fn plan_unchecked(request: &PlanRequest, init: &DecisionVector) -> Result<PlanResult> {
    request.validate()?;
    if init.num_waypoints() != request.path.num_waypoints() || init.num_joints() != request.path.num_joints() {
        return Err(Error::param("initial guess does not match the path dimensions"));
    }
    let mut attempts = Vec::with_capacity(2);
    let mut sqp_ns = 0u64;
    let mut x0 = init.to_vec();
    let settings = [
        (request.margin, request.collocation_density),
        (request.margin * request.margin, 2 * request.collocation_density),
    ];
    let mut last = None;
    for (margin, density) in settings {
        let nlp = TrajectoryNlp::new(&request.path, &request.limits, request.lambda, density, margin)?;
        let started = Instant::now();
        let solved = sqp::solve(&nlp, &x0, &request.solver)?;
        sqp_ns += started.elapsed().as_nanos() as u64;
        let dv = DecisionVector::from_slice(&solved.x, request.path.num_waypoints(), request.path.num_joints())?;
        let traj = dv.decode(&request.path)?;
        let feasibility = dense_check(&traj, &request.path, &request.limits, CHECK_FACTOR * density)?;
        attempts.push(Attempt {
            margin,
            collocation_density: density,
            status: solved.status,
            iterations: solved.iterations,
            objective: solved.objective,
            kkt_residual: solved.kkt_residual,
            violation: solved.violation,
            feasibility: feasibility.clone(),
        });
        let passed = feasibility.passed;
        x0 = solved.x.clone();
        last = Some((traj, solved, feasibility));
        if passed {
            break;
        }
    }
    let (trajectory, solver, feasibility) = last.expect("at least one attempt");
    let (objective, jerk, duration) = summarize(&trajectory, request.lambda)?;
    Ok(PlanResult {
        trajectory,
        objective,
        jerk,
        duration,
        solver,
        attempts,
        feasibility,
        timings: StageTimings { warm_start_ns: 0, sqp_ns },
    })
}
