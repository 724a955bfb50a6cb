use std::time::Instant;

use super::{cold_start, cumulative_times, dense_times, plan, DecisionVector, PlanRequest, PlanResult, EPS_SPAN};
use crate::neural::{context_values, predict, ModelOutput, ModelParams};
use crate::trajectory::{RobotLimits, WaypointPath, DEGREE, MAX_ORDER};
use crate::{Error, Result};

/// Anything that predicts spline coefficients and knots for one joint of a
/// path.
pub trait InitialGuessModel {
    fn num_joints(&self) -> usize;
    fn max_waypoints(&self) -> usize;
    /// Output for `joint` as the source; prefixes of length `I + 4` and
    /// `I + 10` are read.
    fn predict(&self, path: &WaypointPath, joint: usize) -> Result<ModelOutput>;
}

impl InitialGuessModel for ModelParams {
    fn num_joints(&self) -> usize {
        self.config.joints
    }

    fn max_waypoints(&self) -> usize {
        self.config.max_waypoints
    }

    fn predict(&self, path: &WaypointPath, joint: usize) -> Result<ModelOutput> {
        predict(self, &path.joint_values(joint), &context_values(path, joint))
    }
}

/// Waypoint times from a raw knot prediction: sorted, clamped at zero,
/// read at the pinned indices, spans floored at [`EPS_SPAN`].
pub fn knots_to_durations(knots: &[f64], waypoints: usize) -> Result<Vec<f64>> {
    if knots.len() < waypoints + 2 * DEGREE {
        return Err(Error::param(format!("{} knots cannot pin {waypoints} waypoints", knots.len())));
    }
    if knots.iter().any(|k| !k.is_finite()) {
        return Err(Error::NumericalBreakdown("non-finite knot prediction".into()));
    }
    let mut sorted = knots[..waypoints + 2 * DEGREE].to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut times = Vec::with_capacity(waypoints);
    times.push(0.0);
    for i in 1..waypoints {
        let prev = times[i - 1];
        times.push(sorted[DEGREE + i].max(prev + EPS_SPAN));
    }
    Ok(times.windows(2).map(|w| (w[1] - w[0]).max(EPS_SPAN)).collect())
}

/// Control points are clipped to `±CONTROL_POINT_BOX·q_max`. The factor is
/// `order·2^order` for order 6, an upper bound on the sup-norm condition
/// number of the quintic B-spline basis, so no trajectory that respects the
/// position limits has a control point outside the box.
pub const CONTROL_POINT_BOX: f64 = 384.0;

/// Fuses per-joint predictions into a decision vector: knots are averaged
/// over joints, control points come from each joint's own pass and are
/// clipped to [`CONTROL_POINT_BOX`] times the position limits.
pub fn assemble_prediction(
    outputs: &[ModelOutput],
    path: &WaypointPath,
    limits: &RobotLimits,
) -> Result<DecisionVector> {
    let (ii, k) = (path.num_waypoints(), path.num_joints());
    if outputs.len() != k || limits.num_joints() != k {
        return Err(Error::param("one prediction per joint is required"));
    }
    let (coef_len, knot_len) = (ii + 4, ii + 2 * DEGREE);
    if outputs.iter().any(|o| o.coefficients.len() < coef_len || o.knots.len() < knot_len) {
        return Err(Error::param("prediction shorter than the path requires"));
    }
    let knots: Vec<f64> = (0..knot_len).map(|j| outputs.iter().map(|o| o.knots[j]).sum::<f64>() / k as f64).collect();
    let durations = knots_to_durations(&knots, ii)?;
    let control_points = outputs
        .iter()
        .enumerate()
        .map(|(j, o)| {
            let q = CONTROL_POINT_BOX * limits.q_max()[j];
            o.coefficients[..coef_len].iter().map(|c| if c.is_finite() { c.clamp(-q, q) } else { 0.0 }).collect()
        })
        .collect();
    DecisionVector::new(durations, control_points)
}

/// Samples per span used by [`time_stretch`].
pub const STRETCH_SAMPLES: usize = 50;

/// Smallest uniform time stretch `α ≥ 1` after which the sampled velocity,
/// acceleration and jerk of `guess` stay within `limits`. Stretching time by
/// `α` divides the `r`-th derivative by `α^r` and keeps the waypoint values
/// and the zero end derivatives.
pub fn time_stretch(guess: &DecisionVector, path: &WaypointPath, limits: &RobotLimits) -> Result<f64> {
    let traj = guess.decode(path)?;
    let mut alpha: f64 = 1.0;
    for t in dense_times(&cumulative_times(&guess.durations), STRETCH_SAMPLES) {
        for (k, s) in traj.state(t)?.iter().enumerate() {
            for (r, v) in s.iter().enumerate().skip(1).take(MAX_ORDER) {
                alpha = alpha.max((v.abs() / limits.bound(r, k)).powf(1.0 / r as f64));
            }
        }
    }
    if !alpha.is_finite() {
        return Err(Error::NumericalBreakdown("kinematic load of the guess".into()));
    }
    Ok(alpha)
}

/// Runs one inference pass per joint and assembles the result; a guess
/// that exceeds the kinematic limits is slowed down by [`time_stretch`].
pub fn warm_start_from_model<M: InitialGuessModel + ?Sized>(
    model: &M,
    path: &WaypointPath,
    limits: &RobotLimits,
) -> Result<DecisionVector> {
    if path.num_joints() != model.num_joints() {
        return Err(Error::UnsupportedConfig(format!(
            "model expects {} joints, path has {}",
            model.num_joints(),
            path.num_joints()
        )));
    }
    if path.num_waypoints() > model.max_waypoints() {
        return Err(Error::UnsupportedLength { len: path.num_waypoints(), max: model.max_waypoints() });
    }
    path.check_within(limits)?;
    let outputs = (0..path.num_joints()).map(|j| model.predict(path, j)).collect::<Result<Vec<_>>>()?;
    let mut guess = assemble_prediction(&outputs, path, limits)?;
    let alpha = time_stretch(&guess, path, limits)?;
    if alpha > 1.0 {
        guess.durations.iter_mut().for_each(|d| *d *= alpha);
    }
    Ok(guess)
}

/// Zero-knowledge guess: uniform spans of the cold-start total duration and
/// control points interpolated linearly between waypoint values.
pub fn linear_baseline(path: &WaypointPath, limits: &RobotLimits) -> Result<DecisionVector> {
    let cold = cold_start(path, limits)?;
    let ii = path.num_waypoints();
    let span = (cold.end_time() / (ii - 1) as f64).max(EPS_SPAN);
    let m = ii + 4;
    let control_points = (0..path.num_joints())
        .map(|k| {
            let values = path.joint_values(k);
            (0..m)
                .map(|j| {
                    let s = j as f64 / (m - 1) as f64 * (ii - 1) as f64;
                    let i = (s.floor() as usize).min(ii - 2);
                    let f = s - i as f64;
                    values[i] * (1.0 - f) + values[i + 1] * f
                })
                .collect()
        })
        .collect();
    DecisionVector::new(vec![span; ii - 1], control_points)
}

/// Largest interpolation error of a guess at its own waypoint times.
pub fn interpolation_residual(guess: &DecisionVector, path: &WaypointPath) -> Result<f64> {
    let traj = guess.decode(path)?;
    let times = cumulative_times(&guess.durations);
    let mut worst: f64 = 0.0;
    for (i, &t) in times.iter().enumerate() {
        for k in 0..path.num_joints() {
            worst = worst.max((traj.eval(k, t, 0)? - path.get(i, k)).abs());
        }
    }
    Ok(worst)
}

/// Warm start from `model`, then [`plan`]; inference time is recorded.
pub fn plan_with_model<M: InitialGuessModel + ?Sized>(request: &PlanRequest, model: &M) -> Result<PlanResult> {
    let started = Instant::now();
    let init = warm_start_from_model(model, &request.path, &request.limits)?;
    let warm_ns = started.elapsed().as_nanos() as u64;
    let mut result = plan(request, &init)?;
    result.timings.warm_start_ns = warm_ns;
    Ok(result)
}
