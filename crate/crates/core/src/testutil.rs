//! Shared helpers for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::trajectory::{JointSpline, KnotVector, SplineTrajectory};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random clamped quintic trajectory with `spans` knot spans.
pub fn random_trajectory(rng: &mut impl Rng, joints: usize, spans: usize) -> SplineTrajectory {
    let mut times = vec![0.0];
    for _ in 0..spans {
        let last = *times.last().unwrap();
        times.push(last + rng.random_range(0.2..2.0));
    }
    let knots = KnotVector::from_waypoint_times(&times).unwrap();
    let m = knots.num_control_points();
    let js = (0..joints).map(|_| JointSpline::new((0..m).map(|_| rng.random_range(-2.0..2.0)).collect())).collect();
    SplineTrajectory::new(knots, js).unwrap()
}

/// Textbook Cox–de Boor recursion, closed at the right end of the domain.
pub fn cox_de_boor(knots: &[f64], i: usize, p: usize, t: f64) -> f64 {
    let end = *knots.last().unwrap();
    if p == 0 {
        let (a, b) = (knots[i], knots[i + 1]);
        return if (a <= t && t < b) || (t == end && a < b && b == end) { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 > 0.0 {
        v += (t - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, t);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + p + 1] - t) / d2 * cox_de_boor(knots, i + 1, p - 1, t);
    }
    v
}
