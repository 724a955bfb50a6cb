use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-joint symmetric kinematic bounds: position, velocity, acceleration, jerk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LimitsDoc", into = "LimitsDoc")]
pub struct RobotLimits {
    q_max: Vec<f64>,
    qd_max: Vec<f64>,
    qdd_max: Vec<f64>,
    qddd_max: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LimitsDoc {
    q_max: Vec<f64>,
    qd_max: Vec<f64>,
    qdd_max: Vec<f64>,
    qddd_max: Vec<f64>,
}

impl RobotLimits {
    pub fn new(q_max: Vec<f64>, qd_max: Vec<f64>, qdd_max: Vec<f64>, qddd_max: Vec<f64>) -> Result<Self> {
        let k = q_max.len();
        if k == 0 {
            return Err(Error::param("limits need at least one joint"));
        }
        for (name, v) in [("qd_max", &qd_max), ("qdd_max", &qdd_max), ("qddd_max", &qddd_max)] {
            if v.len() != k {
                return Err(Error::param(format!("{name} has {} entries, q_max has {k}", v.len())));
            }
        }
        for v in [&q_max, &qd_max, &qdd_max, &qddd_max] {
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::param("all limits must be finite and strictly positive"));
            }
        }
        Ok(Self { q_max, qd_max, qdd_max, qddd_max })
    }

    /// The same limits for every one of `joints` joints.
    pub fn uniform(joints: usize, q: f64, qd: f64, qdd: f64, qddd: f64) -> Result<Self> {
        Self::new(vec![q; joints], vec![qd; joints], vec![qdd; joints], vec![qddd; joints])
    }

    pub fn num_joints(&self) -> usize {
        self.q_max.len()
    }

    pub fn q_max(&self) -> &[f64] {
        &self.q_max
    }
    pub fn qd_max(&self) -> &[f64] {
        &self.qd_max
    }
    pub fn qdd_max(&self) -> &[f64] {
        &self.qdd_max
    }
    pub fn qddd_max(&self) -> &[f64] {
        &self.qddd_max
    }

    /// Bound on the `order`-th derivative (0 = position .. 3 = jerk) of `joint`.
    pub fn bound(&self, order: usize, joint: usize) -> f64 {
        match order {
            0 => self.q_max[joint],
            1 => self.qd_max[joint],
            2 => self.qdd_max[joint],
            3 => self.qddd_max[joint],
            _ => panic!("derivative order {order} has no limit"),
        }
    }

    /// Every bound multiplied by `factor` (a safety margin in (0, 1]).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let s = |v: &[f64]| v.iter().map(|x| x * factor).collect::<Vec<_>>();
        Self::new(s(&self.q_max), s(&self.qd_max), s(&self.qdd_max), s(&self.qddd_max))
    }

    /// Limits of the first `joints` joints.
    pub fn truncated(&self, joints: usize) -> Result<Self> {
        if joints == 0 || joints > self.num_joints() {
            return Err(Error::param(format!("cannot keep {joints} of {} joints", self.num_joints())));
        }
        Self::new(
            self.q_max[..joints].to_vec(),
            self.qd_max[..joints].to_vec(),
            self.qdd_max[..joints].to_vec(),
            self.qddd_max[..joints].to_vec(),
        )
    }

    /// Stand-in limits for a 6-DOF collaborative arm.
    ///
    /// Position and velocity bounds follow a Kinova Gen3 6-DOF datasheet
    /// (unbounded joints capped at ±π); acceleration and jerk bounds are
    /// conservative desk defaults since no vendor value is published.
    pub fn gen3_desk() -> Self {
        Self::new(
            vec![std::f64::consts::PI, 2.25, std::f64::consts::PI, 2.58, std::f64::consts::PI, 2.10],
            vec![1.3963, 1.3963, 1.3963, 1.2218, 1.2218, 1.2218],
            vec![3.0, 3.0, 3.0, 4.0, 4.0, 4.0],
            vec![15.0, 15.0, 15.0, 20.0, 20.0, 20.0],
        )
        .expect("static limits are valid")
    }
}

impl TryFrom<LimitsDoc> for RobotLimits {
    type Error = Error;
    fn try_from(d: LimitsDoc) -> Result<Self> {
        Self::new(d.q_max, d.qd_max, d.qdd_max, d.qddd_max)
    }
}

impl From<RobotLimits> for LimitsDoc {
    fn from(l: RobotLimits) -> Self {
        LimitsDoc { q_max: l.q_max, qd_max: l.qd_max, qdd_max: l.qdd_max, qddd_max: l.qddd_max }
    }
}

/// `I` waypoints of a `K`-joint arm, stored waypoint-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct WaypointPath {
    waypoints: Vec<Vec<f64>>,
}

impl WaypointPath {
    pub fn new(waypoints: Vec<Vec<f64>>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::param("a path needs at least two waypoints"));
        }
        let k = waypoints[0].len();
        if k == 0 {
            return Err(Error::param("waypoints need at least one joint"));
        }
        if waypoints.iter().any(|w| w.len() != k) {
            return Err(Error::param("all waypoints must have the same number of joints"));
        }
        if waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("non-finite waypoint value"));
        }
        Ok(Self { waypoints })
    }

    pub fn num_waypoints(&self) -> usize {
        self.waypoints.len()
    }

    pub fn num_joints(&self) -> usize {
        self.waypoints[0].len()
    }

    pub fn waypoint(&self, i: usize) -> &[f64] {
        &self.waypoints[i]
    }

    pub fn get(&self, i: usize, joint: usize) -> f64 {
        self.waypoints[i][joint]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.waypoints
    }

    /// Values of one joint across all waypoints.
    pub fn joint_values(&self, joint: usize) -> Vec<f64> {
        self.waypoints.iter().map(|w| w[joint]).collect()
    }

    /// Fails with [`Error::InfeasiblePath`] if any waypoint leaves `±q_max`.
    pub fn check_within(&self, limits: &RobotLimits) -> Result<()> {
        if limits.num_joints() != self.num_joints() {
            return Err(Error::param(format!(
                "path has {} joints, limits have {}",
                self.num_joints(),
                limits.num_joints()
            )));
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            for (k, v) in w.iter().enumerate() {
                if v.abs() >= limits.q_max()[k] {
                    return Err(Error::InfeasiblePath(format!(
                        "waypoint {i} joint {k} = {v} violates q_max = {}",
                        limits.q_max()[k]
                    )));
                }
            }
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for WaypointPath {
    type Error = Error;
    fn try_from(v: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WaypointPath> for Vec<Vec<f64>> {
    fn from(p: WaypointPath) -> Self {
        p.waypoints
    }
}
