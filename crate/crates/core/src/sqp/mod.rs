//! Dense sequential quadratic programming.
//!
//! Each iteration solves a convex QP built from a damped-BFGS approximation
//! of the Lagrangian Hessian and the linearized constraints, then takes a
//! backtracking step on the ℓ1 exact-penalty merit function. Inconsistent
//! linearizations fall back to an elastic restoration step that only
//! reduces constraint violation.

mod bfgs;
mod fd;
mod linesearch;
mod problem;
mod qp;


use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use bfgs::{bfgs_update, sr1_update};
pub use fd::{finite_diff_gradient, finite_diff_jacobian};
pub use linesearch::{
    l1_violation, merit, merit_line_search, merit_noise, update_penalty, LineSearchOutcome, MeritModel,
};
pub use problem::{Derivatives, FnProblem, NlpProblem, Values};
pub use qp::{qp_elastic, qp_step, QpError, QpProblem, QpSolution};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqpSettings {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    pub constraint_tolerance: f64,
    pub penalty_growth: f64,
    pub backtracking: f64,
    pub armijo: f64,
    pub min_step: f64,
    pub fd_step: f64,
    pub record_trace: bool,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            kkt_tolerance: 1e-6,
            constraint_tolerance: 1e-8,
            penalty_growth: 10.0,
            backtracking: 0.5,
            armijo: 1e-4,
            min_step: 1e-12,
            fd_step: 1e-7,
            record_trace: false,
        }
    }
}

impl SqpSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kkt_tolerance", self.kkt_tolerance),
            ("constraint_tolerance", self.constraint_tolerance),
            ("min_step", self.min_step),
            ("fd_step", self.fd_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::param(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("backtracking", self.backtracking), ("armijo", self.armijo)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::param(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::param("penalty_growth must exceed 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SqpStatus {
    Converged,
    MaxIterations,
    LineSearchFailure,
    QpInfeasible,
    NumericalBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub equalities: Vec<f64>,
    pub inequalities: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Multipliers {
    fn from_qp(sol: &QpSolution) -> Self {
        Self {
            equalities: sol.eq_multipliers.iter().copied().collect(),
            inequalities: sol.ineq_multipliers.iter().copied().collect(),
            lower: sol.lower_multipliers.iter().copied().collect(),
            upper: sol.upper_multipliers.iter().copied().collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.equalities
            .iter()
            .chain(&self.inequalities)
            .chain(&self.lower)
            .chain(&self.upper)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// One accepted iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub violation: f64,
    pub step_length: f64,
    pub penalty: f64,
    pub merit_before: f64,
    pub merit_after: f64,
    pub restoration: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqpResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    /// ∞-norm of constraint and bound violation.
    pub violation: f64,
    pub iterations: usize,
    pub status: SqpStatus,
    pub multipliers: Multipliers,
    pub penalty: f64,
    /// The starting point lay outside the bounds and was clamped.
    pub start_clamped: bool,
    pub numeric_derivatives: bool,
    pub trace: Vec<TraceRow>,
}

impl SqpResult {
    pub fn converged(&self) -> bool {
        self.status == SqpStatus::Converged
    }

    /// Iteration trace as CSV: `iteration,objective,violation,step_length,penalty`.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,objective,violation,step_length,penalty")?;
        for r in &self.trace {
            writeln!(w, "{},{:e},{:e},{:e},{:e}", r.iteration, r.objective, r.violation, r.step_length, r.penalty)?;
        }
        Ok(())
    }
}

const PENALTY_FLOOR: f64 = 1e-6;

/// ∞-norm of constraint and bound violation.
pub fn max_violation(values: &Values, x: &DVector<f64>, lower: &[f64], upper: &[f64]) -> f64 {
    let eq = values.equalities.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let ineq = values.inequalities.iter().fold(0.0f64, |m, c| m.max(-c));
    let bounds = x.iter().zip(lower.iter().zip(upper)).fold(0.0f64, |m, (v, (lo, hi))| m.max(lo - v).max(v - hi));
    eq.max(ineq).max(bounds)
}

/// Stationarity and complementarity of the Lagrangian
/// `f - λ_Eᵀ c_E - λ_Iᵀ c_I - λ_loᵀ (x - lo) - λ_upᵀ (up - x)`.
pub fn kkt_residual(
    values: &Values,
    derivs: &Derivatives,
    x: &DVector<f64>,
    lower: &[f64],
    upper: &[f64],
    mult: &Multipliers,
) -> f64 {
    let mut grad = derivs.gradient.clone();
    grad -= derivs.eq_jacobian.transpose() * DVector::from_column_slice(&mult.equalities);
    grad -= derivs.ineq_jacobian.transpose() * DVector::from_column_slice(&mult.inequalities);
    for j in 0..x.len() {
        grad[j] -= mult.lower[j];
        grad[j] += mult.upper[j];
    }
    let mut res = grad.amax();
    for (l, c) in mult.inequalities.iter().zip(values.inequalities.iter()) {
        res = res.max((l * c).abs()).max(-l);
    }
    for j in 0..x.len() {
        if lower[j].is_finite() {
            res = res.max((mult.lower[j] * (x[j] - lower[j])).abs());
        }
        if upper[j].is_finite() {
            res = res.max((mult.upper[j] * (upper[j] - x[j])).abs());
        }
    }
    res
}

fn guarded<T>(iteration: usize, what: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(Error::Solver { iteration, message: format!("{what}: {e}") }),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "callback panicked".into());
            Err(Error::Solver { iteration, message: format!("{what} panicked: {msg}") })
        }
    }
}

fn check_shapes<P: NlpProblem + ?Sized>(p: &P, v: &Values, d: Option<&Derivatives>) -> Result<()> {
    let (n, me, mi) = (p.dimension(), p.num_equalities(), p.num_inequalities());
    if v.equalities.len() != me || v.inequalities.len() != mi {
        return Err(Error::param(format!(
            "constraint callbacks returned {}/{} values, declared {me}/{mi}",
            v.equalities.len(),
            v.inequalities.len()
        )));
    }
    if let Some(d) = d {
        if d.gradient.len() != n || d.eq_jacobian.shape() != (me, n) || d.ineq_jacobian.shape() != (mi, n) {
            return Err(Error::param("derivative callback returned mismatched shapes"));
        }
    }
    Ok(())
}

fn finite_values(v: &Values) -> bool {
    v.objective.is_finite()
        && v.equalities.iter().all(|c| c.is_finite())
        && v.inequalities.iter().all(|c| c.is_finite())
}

fn finite_derivatives(d: &Derivatives) -> bool {
    d.gradient.iter().all(|c| c.is_finite())
        && d.eq_jacobian.iter().all(|c| c.is_finite())
        && d.ineq_jacobian.iter().all(|c| c.is_finite())
}

/// Lagrangian gradient without the (linear) bound terms.
fn lagrangian_gradient(d: &Derivatives, mult: &Multipliers) -> DVector<f64> {
    &d.gradient
        - d.eq_jacobian.transpose() * DVector::from_column_slice(&mult.equalities)
        - d.ineq_jacobian.transpose() * DVector::from_column_slice(&mult.inequalities)
}

/// Minimize `problem` from `x0`.
///
/// Deterministic: identical inputs give bitwise-identical iterates. Callback
/// errors and panics surface as [`Error::Solver`]; non-finite callback
/// output ends the solve with [`SqpStatus::NumericalBreakdown`].
pub fn solve<P: NlpProblem + ?Sized>(problem: &P, x0: &[f64], settings: &SqpSettings) -> Result<SqpResult> {
    settings.validate()?;
    let n = problem.dimension();
    if x0.len() != n {
        return Err(Error::param(format!("x0 has {} entries, problem has {n}", x0.len())));
    }
    let lower = problem.lower_bounds();
    let upper = problem.upper_bounds();
    if lower.len() != n || upper.len() != n || lower.iter().zip(&upper).any(|(l, u)| l > u) {
        return Err(Error::param("invalid variable bounds"));
    }
    let mut start_clamped = false;
    let mut x = DVector::from_iterator(
        n,
        x0.iter().zip(lower.iter().zip(&upper)).map(|(&v, (&lo, &hi))| {
            let c = v.clamp(lo, hi);
            start_clamped |= c != v;
            c
        }),
    );

    let mut values = guarded(0, "values", || problem.values(&x))?;
    check_shapes(problem, &values, None)?;
    let mut state = Run {
        history: Vec::new(),
        trace: Vec::new(),
        penalty: 1.0,
        mult: Multipliers {
            equalities: vec![0.0; problem.num_equalities()],
            inequalities: vec![0.0; problem.num_inequalities()],
            lower: vec![0.0; n],
            upper: vec![0.0; n],
        },
    };
    if !finite_values(&values) {
        return Ok(state.finish(
            problem,
            x,
            values,
            f64::INFINITY,
            0,
            SqpStatus::NumericalBreakdown,
            start_clamped,
            &lower,
            &upper,
            settings,
        ));
    }
    let mut derivs = guarded(0, "derivatives", || problem.derivatives(&x))?;
    check_shapes(problem, &values, Some(&derivs))?;
    if !finite_derivatives(&derivs) {
        return Ok(state.finish(
            problem,
            x,
            values,
            f64::INFINITY,
            0,
            SqpStatus::NumericalBreakdown,
            start_clamped,
            &lower,
            &upper,
            settings,
        ));
    }
    state.history.push((x.clone(), values.objective, l1_violation(&values, &x, &lower, &upper)));

    let mut hessian = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut kkt = f64::INFINITY;

    for iteration in 0..settings.max_iterations {
        let lo_step: Vec<f64> = lower.iter().zip(x.iter()).map(|(l, v)| l - v).collect();
        let hi_step: Vec<f64> = upper.iter().zip(x.iter()).map(|(u, v)| u - v).collect();
        let mut attempt = subproblem(&hessian, &derivs, &values, &lo_step, &hi_step);
        if matches!(attempt, Err(QpError::NotPositiveDefinite)) {
            hessian = DMatrix::identity(n, n);
            attempt = subproblem(&hessian, &derivs, &values, &lo_step, &hi_step);
        }
        let (sol, restoration) = match attempt {
            Ok(s) => s,
            Err(_) => {
                return Ok(state.finish(
                    problem,
                    x,
                    values,
                    kkt,
                    iteration,
                    SqpStatus::QpInfeasible,
                    start_clamped,
                    &lower,
                    &upper,
                    settings,
                ));
            }
        };
        let d = &sol.step;
        if d.iter().any(|v| !v.is_finite()) {
            return Ok(state.finish(
                problem,
                x,
                values,
                kkt,
                iteration,
                SqpStatus::NumericalBreakdown,
                start_clamped,
                &lower,
                &upper,
                settings,
            ));
        }

        if !restoration {
            state.mult = Multipliers::from_qp(&sol);
            kkt = kkt_residual(&values, &derivs, &x, &lower, &upper, &state.mult);
            let viol = max_violation(&values, &x, &lower, &upper);
            if kkt <= settings.kkt_tolerance && viol <= settings.constraint_tolerance {
                return Ok(state.finish(
                    problem,
                    x,
                    values,
                    kkt,
                    iteration,
                    SqpStatus::Converged,
                    start_clamped,
                    &lower,
                    &upper,
                    settings,
                ));
            }
        }

        let lin_eq = &values.equalities + &derivs.eq_jacobian * d;
        let lin_ineq = &values.inequalities + &derivs.ineq_jacobian * d;
        let linearized_violation =
            lin_eq.iter().map(|c| c.abs()).sum::<f64>() + lin_ineq.iter().map(|c| (-c).max(0.0)).sum::<f64>();
        let model = MeritModel {
            directional: derivs.gradient.dot(d),
            curvature: d.dot(&(&hessian * d)),
            violation: l1_violation(&values, &x, &lower, &upper),
            linearized_violation,
            multiplier_norm: if restoration { 0.0 } else { state.mult.max_abs() },
        };
        // let an outdated penalty decay toward what the current step requires
        let required = (settings.penalty_growth * model.multiplier_norm).max(linesearch::descent_penalty(&model));
        if state.penalty > required {
            state.penalty = required.max(0.5 * (state.penalty + required)).max(PENALTY_FLOOR);
        }
        let mut correct = |trial: &Values| -> Option<DVector<f64>> {
            if restoration {
                return None;
            }
            let eq_residual = &trial.equalities - &derivs.eq_jacobian * d;
            let ineq_residual = &trial.inequalities - &derivs.ineq_jacobian * d;
            let qp = QpProblem {
                hessian: &hessian,
                gradient: &derivs.gradient,
                eq_jacobian: &derivs.eq_jacobian,
                eq_residual: &eq_residual,
                ineq_jacobian: &derivs.ineq_jacobian,
                ineq_residual: &ineq_residual,
                lower: &lo_step,
                upper: &hi_step,
            };
            qp_step(&qp).ok().map(|s| s.step).filter(|s| s.iter().all(|v| v.is_finite()))
        };
        let outcome = guarded(iteration, "line search", || {
            linesearch::search(problem, &x, d, &values, &model, state.penalty, settings, Some(&mut correct))
        })?;
        let Some(step) = outcome else {
            return Ok(state.finish(
                problem,
                x,
                values,
                kkt,
                iteration,
                SqpStatus::LineSearchFailure,
                start_clamped,
                &lower,
                &upper,
                settings,
            ));
        };
        state.penalty = step.penalty;

        let x_new = &x + &step.displacement;
        if !finite_values(&step.values) {
            return Ok(state.finish(
                problem,
                x,
                values,
                kkt,
                iteration,
                SqpStatus::NumericalBreakdown,
                start_clamped,
                &lower,
                &upper,
                settings,
            ));
        }
        check_shapes(problem, &step.values, None)?;
        let derivs_new = guarded(iteration + 1, "derivatives", || problem.derivatives(&x_new))?;
        check_shapes(problem, &step.values, Some(&derivs_new))?;
        if !finite_derivatives(&derivs_new) {
            return Ok(state.finish(
                problem,
                x,
                values,
                kkt,
                iteration,
                SqpStatus::NumericalBreakdown,
                start_clamped,
                &lower,
                &upper,
                settings,
            ));
        }

        let s = &x_new - &x;
        let y = lagrangian_gradient(&derivs_new, &state.mult) - lagrangian_gradient(&derivs, &state.mult);
        if !scaled {
            let sy = s.dot(&y);
            if sy > 0.0 {
                hessian = DMatrix::identity(n, n) * (y.dot(&y) / sy);
                scaled = true;
            }
        }
        hessian = sr1_update(&hessian, &s, &y).unwrap_or_else(|| bfgs_update(&hessian, &s, &y));

        x = x_new;
        values = step.values;
        derivs = derivs_new;
        let v1 = l1_violation(&values, &x, &lower, &upper);
        state.history.push((x.clone(), values.objective, v1));
        if settings.record_trace {
            state.trace.push(TraceRow {
                iteration: iteration + 1,
                objective: values.objective,
                violation: max_violation(&values, &x, &lower, &upper),
                step_length: step.step_length,
                penalty: state.penalty,
                merit_before: step.merit_before,
                merit_after: step.merit_after,
                restoration,
            });
        }
    }

    // out of iterations: report the final point's KKT state
    let iterations = settings.max_iterations;
    Ok(state.finish(
        problem,
        x,
        values,
        kkt,
        iterations,
        SqpStatus::MaxIterations,
        start_clamped,
        &lower,
        &upper,
        settings,
    ))
}

/// QP step, falling back to elastic restoration when the linearization is inconsistent.
fn subproblem(
    hessian: &DMatrix<f64>,
    derivs: &Derivatives,
    values: &Values,
    lower: &[f64],
    upper: &[f64],
) -> std::result::Result<(QpSolution, bool), QpError> {
    let qp = QpProblem {
        hessian,
        gradient: &derivs.gradient,
        eq_jacobian: &derivs.eq_jacobian,
        eq_residual: &values.equalities,
        ineq_jacobian: &derivs.ineq_jacobian,
        ineq_residual: &values.inequalities,
        lower,
        upper,
    };
    match qp_step(&qp) {
        Ok(s) => Ok((s, false)),
        Err(QpError::Infeasible) | Err(QpError::DependentEqualities) => qp_elastic(&qp, 1e-3).map(|s| (s, true)),
        Err(e) => Err(e),
    }
}

struct Run {
    /// Accepted iterates with objective and ℓ1 violation.
    history: Vec<(DVector<f64>, f64, f64)>,
    trace: Vec<TraceRow>,
    penalty: f64,
    mult: Multipliers,
}

impl Run {
    #[allow(clippy::too_many_arguments)]
    fn finish<P: NlpProblem + ?Sized>(
        self,
        problem: &P,
        x: DVector<f64>,
        values: Values,
        kkt: f64,
        iterations: usize,
        status: SqpStatus,
        start_clamped: bool,
        lower: &[f64],
        upper: &[f64],
        _settings: &SqpSettings,
    ) -> SqpResult {
        let (x, values) = if status == SqpStatus::Converged || self.history.is_empty() {
            (x, values)
        } else {
            // best accepted iterate under the final penalty
            let rho = self.penalty;
            let best = self
                .history
                .iter()
                .enumerate()
                .filter(|(_, h)| (h.1 + rho * h.2).is_finite())
                .min_by(|a, b| (a.1 .1 + rho * a.1 .2).total_cmp(&(b.1 .1 + rho * b.1 .2)))
                .map(|(i, _)| i);
            match best {
                Some(i) if i + 1 != self.history.len() => {
                    let xb = self.history[i].0.clone();
                    match problem.values(&xb) {
                        Ok(v) => (xb, v),
                        Err(_) => (x, values),
                    }
                }
                _ => (x, values),
            }
        };
        SqpResult {
            violation: max_violation(&values, &x, lower, upper),
            objective: values.objective,
            x: x.iter().copied().collect(),
            kkt_residual: kkt,
            iterations,
            status,
            multipliers: self.mult,
            penalty: self.penalty,
            start_clamped,
            numeric_derivatives: problem.numeric_derivatives(),
            trace: self.trace,
        }
    }
}
