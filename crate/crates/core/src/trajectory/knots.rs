use serde::{Deserialize, Serialize};

use super::basis::{basis_derivatives, DEGREE, MAX_ORDER};
use crate::{Error, Result};

/// Clamped knot vector of a quintic B-spline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct KnotVector {
    knots: Vec<f64>,
}

/// The non-zero basis values at one parameter value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisValues {
    /// Index of the control point multiplied by `values[0]`.
    pub first: usize,
    pub values: [f64; DEGREE + 1],
}

impl KnotVector {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        let n = knots.len();
        if n < 2 * (DEGREE + 1) {
            return Err(Error::Knots(format!("need at least {} knots, got {n}", 2 * (DEGREE + 1))));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::Knots("non-finite knot".into()));
        }
        if let Some(i) = knots.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::Knots(format!("knots decrease at index {}", i + 1)));
        }
        let end = knots[n - 1];
        if !(end > 0.0) {
            return Err(Error::Knots(format!("end time must be positive, got {end}")));
        }
        if knots[..=DEGREE].iter().any(|&k| k != 0.0) {
            return Err(Error::Knots("first six knots must equal 0".into()));
        }
        if knots[n - DEGREE - 1..].iter().any(|&k| k != end) {
            return Err(Error::Knots("last six knots must equal the end time".into()));
        }
        let interior = &knots[DEGREE + 1..n - DEGREE - 1];
        if interior.iter().any(|&k| k <= 0.0 || k >= end) {
            return Err(Error::Knots("interior knots must lie strictly inside (0, T)".into()));
        }
        Ok(Self { knots })
    }

    /// Clamped knots with waypoint `i` pinned to knot `DEGREE + i`.
    ///
    /// `times` are the waypoint times: strictly increasing, starting at 0.
    pub fn from_waypoint_times(times: &[f64]) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::param("need at least two waypoint times"));
        }
        if times[0] != 0.0 {
            return Err(Error::param("first waypoint time must be 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("waypoint times must be strictly increasing"));
        }
        let end = *times.last().unwrap();
        let mut knots = Vec::with_capacity(times.len() + 2 * DEGREE);
        knots.extend(std::iter::repeat_n(0.0, DEGREE + 1));
        knots.extend_from_slice(&times[1..times.len() - 1]);
        knots.extend(std::iter::repeat_n(end, DEGREE + 1));
        Self::new(knots)
    }

    pub fn degree(&self) -> usize {
        DEGREE
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn end_time(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    pub fn num_control_points(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    /// Knot values at the waypoint-pinned positions (clamped start, interior, clamped end).
    pub fn waypoint_times(&self) -> Vec<f64> {
        self.knots[DEGREE..self.knots.len() - DEGREE].to_vec()
    }

    /// Non-empty spans as `(start, end)` pairs.
    pub fn spans(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.knots.windows(2).filter(|w| w[1] > w[0]).map(|w| (w[0], w[1]))
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::param("scale factor must be positive"));
        }
        Self::new(self.knots.iter().map(|k| k * alpha).collect())
    }

    pub(crate) fn check_domain(&self, t: f64) -> Result<()> {
        let end = self.end_time();
        if !(0.0..=end).contains(&t) {
            return Err(Error::Domain { t, end });
        }
        Ok(())
    }

    /// Index `s` with `knots[s] <= t < knots[s + 1]`; `t == T` maps to the last non-empty span.
    pub fn span(&self, t: f64) -> Result<usize> {
        self.check_domain(t)?;
        Ok(self.span_unchecked(t))
    }

    pub(crate) fn span_unchecked(&self, t: f64) -> usize {
        let last = self.num_control_points() - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        // partition_point returns the first index with knots[i] > t
        let upper = self.knots[..=last + 1].partition_point(|&k| k <= t);
        (upper - 1).clamp(DEGREE, last)
    }

    pub fn basis(&self, t: f64) -> Result<BasisValues> {
        let span = self.span(t)?;
        let ders = basis_derivatives(&self.knots, span, t);
        Ok(BasisValues { first: span - DEGREE, values: ders[0] })
    }

    /// All basis derivatives up to jerk at `t`, with the first active index.
    pub fn basis_derivatives(&self, t: f64) -> Result<(usize, [[f64; DEGREE + 1]; MAX_ORDER + 1])> {
        let span = self.span(t)?;
        Ok((span - DEGREE, basis_derivatives(&self.knots, span, t)))
    }
}

impl TryFrom<Vec<f64>> for KnotVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<KnotVector> for Vec<f64> {
    fn from(k: KnotVector) -> Self {
        k.knots
    }
}
