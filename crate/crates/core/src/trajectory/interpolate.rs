use nalgebra::DMatrix;

use super::{JointSpline, KnotVector, SplineTrajectory, WaypointPath, DEGREE};
use crate::{Error, Result};

/// The unique trajectory with knots pinned at `waypoint_times` that passes
/// through every waypoint with zero velocity and acceleration at both ends.
///
/// Solves the square `(I + 4) × (I + 4)` collocation system once and reuses
/// the factorization for every joint.
pub fn interpolate(path: &WaypointPath, waypoint_times: &[f64]) -> Result<SplineTrajectory> {
    if waypoint_times.len() != path.num_waypoints() {
        return Err(Error::param("one time per waypoint required"));
    }
    let target = KnotVector::from_waypoint_times(waypoint_times)?;
    // control points are invariant under time scaling; solve on [0, 1] for conditioning
    let end = target.end_time();
    let mut unit: Vec<f64> = waypoint_times.iter().map(|t| t / end).collect();
    *unit.last_mut().unwrap() = 1.0;
    let knots = KnotVector::from_waypoint_times(&unit)?;
    let m = knots.num_control_points();
    let end = 1.0;
    let mut a = DMatrix::<f64>::zeros(m, m);

    let mut put = |row: usize, t: f64, order: usize| -> Result<()> {
        let (first, ders) = knots.basis_derivatives(t)?;
        for j in 0..=DEGREE {
            a[(row, first + j)] = ders[order][j];
        }
        Ok(())
    };
    for (i, &t) in unit.iter().enumerate() {
        put(i, t, 0)?;
    }
    let i_count = path.num_waypoints();
    put(i_count, 0.0, 1)?;
    put(i_count + 1, end, 1)?;
    put(i_count + 2, 0.0, 2)?;
    put(i_count + 3, end, 2)?;

    let k = path.num_joints();
    let mut rhs = DMatrix::<f64>::zeros(m, k);
    for i in 0..i_count {
        for j in 0..k {
            rhs[(i, j)] = path.get(i, j);
        }
    }

    let lu = a.clone().lu();
    let sol = lu.solve(&rhs).ok_or(Error::SingularSystem)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let resid = (&a * &sol - &rhs).amax();
    let scale = 1.0 + rhs.amax();
    if resid > 1e-8 * scale {
        return Err(Error::SingularSystem);
    }

    let joints = (0..k).map(|j| JointSpline::new(sol.column(j).iter().copied().collect())).collect();
    SplineTrajectory::new(target, joints)
}
