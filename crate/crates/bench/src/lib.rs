//! Fixtures shared by the benchmarks.

use trajopt::RobotLimits;
use trajopt::WaypointPath;

/// Deterministic zig-zag path inside the desk limits.
pub fn zigzag(waypoints: usize, limits: &RobotLimits) -> WaypointPath {
    let rows = (0..waypoints)
        .map(|i| {
            limits
                .q_max()
                .iter()
                .enumerate()
                .map(|(k, q)| {
                    let phase = (i * (k + 2)) as f64 * 0.7;
                    0.4 * q * phase.sin()
                })
                .collect()
        })
        .collect();
    WaypointPath::new(rows).expect("fixture is well formed")
}
