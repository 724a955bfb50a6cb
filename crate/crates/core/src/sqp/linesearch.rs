use nalgebra::DVector;

use super::{NlpProblem, SqpSettings, Values};
use crate::Result;

/// ℓ1 violation of constraint values plus bound violations of `x`.
pub fn l1_violation(values: &Values, x: &DVector<f64>, lower: &[f64], upper: &[f64]) -> f64 {
    let eq: f64 = values.equalities.iter().map(|c| c.abs()).sum();
    let ineq: f64 = values.inequalities.iter().map(|c| (-c).max(0.0)).sum();
    let bounds: f64 =
        x.iter().zip(lower.iter().zip(upper)).map(|(v, (lo, hi))| (lo - v).max(0.0) + (v - hi).max(0.0)).sum();
    eq + ineq + bounds
}

/// `f(x) + penalty · ‖violation(x)‖₁`.
pub fn merit(values: &Values, x: &DVector<f64>, lower: &[f64], upper: &[f64], penalty: f64) -> f64 {
    values.objective + penalty * l1_violation(values, x, lower, upper)
}

/// First-order information about a search direction, used to choose the
/// penalty parameter and the Armijo slope.
#[derive(Debug, Clone, Copy)]
pub struct MeritModel {
    /// `∇f(x)ᵀ d`
    pub directional: f64,
    /// `dᵀ H d`
    pub curvature: f64,
    /// ℓ1 violation at `x`
    pub violation: f64,
    /// ℓ1 violation of the linearized constraints at `x + d`
    pub linearized_violation: f64,
    /// `‖λ‖∞` of the QP multipliers
    pub multiplier_norm: f64,
}

impl MeritModel {
    /// Predicted directional derivative of the merit function.
    pub fn slope(&self, penalty: f64) -> f64 {
        self.directional - penalty * (self.violation - self.linearized_violation)
    }
}

/// Raise `penalty` until it dominates the multipliers and `d` is a descent
/// direction of the merit function.
pub fn update_penalty(penalty: f64, model: &MeritModel, settings: &SqpSettings) -> f64 {
    let mut rho = penalty;
    if rho < model.multiplier_norm {
        rho = rho.max(settings.penalty_growth * model.multiplier_norm);
    }
    rho.max(descent_penalty(model))
}

/// Smallest penalty for which the merit model drops by at least half the
/// predicted reduction in infeasibility.
pub(crate) fn descent_penalty(model: &MeritModel) -> f64 {
    let reduction = model.violation - model.linearized_violation;
    if reduction > 1e-14 * (1.0 + model.violation) {
        (model.directional + 0.5 * model.curvature.max(0.0)) / (0.5 * reduction)
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub step_length: f64,
    /// Accepted displacement from `x`; differs from `step_length · d`
    /// when a second-order correction was taken.
    pub displacement: DVector<f64>,
    pub second_order: bool,
    pub penalty: f64,
    pub values: Values,
    pub merit_before: f64,
    pub merit_after: f64,
}

/// Backtracking Armijo search on the ℓ1 merit function over
/// `α ∈ {1, ρ, ρ², …}`. Returns `Ok(None)` when no step above
/// `settings.min_step` gives sufficient decrease.
#[allow(clippy::too_many_arguments)]
pub fn merit_line_search<P: NlpProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    d: &DVector<f64>,
    current: &Values,
    model: &MeritModel,
    penalty: f64,
    settings: &SqpSettings,
) -> Result<Option<LineSearchOutcome>> {
    search(problem, x, d, current, model, penalty, settings, None)
}

/// Rounding allowance on merit comparisons, `10·ε·max(|φ|, 1)`.
pub fn merit_noise(phi: f64) -> f64 {
    10.0 * f64::EPSILON * phi.abs().max(1.0)
}

/// Maps the constraint values at `x + d` to a corrected displacement.
pub(crate) type Correction<'a> = &'a mut dyn FnMut(&Values) -> Option<DVector<f64>>;

/// [`merit_line_search`] that, when the unit step is rejected, tries the
/// corrected displacement `d + e` produced by `correction` and then
/// backtracks along the arc `α·d + α²·e`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn search<P: NlpProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    d: &DVector<f64>,
    current: &Values,
    model: &MeritModel,
    penalty: f64,
    settings: &SqpSettings,
    mut correction: Option<Correction>,
) -> Result<Option<LineSearchOutcome>> {
    let lower = problem.lower_bounds();
    let upper = problem.upper_bounds();
    let penalty = update_penalty(penalty, model, settings);
    let phi0 = merit(current, x, &lower, &upper, penalty);
    let slope = model.slope(penalty).min(0.0);
    let noise = merit_noise(phi0);
    let sufficient = |phi: f64, alpha: f64| phi.is_finite() && phi <= phi0 + settings.armijo * alpha * slope + noise;
    let mut arc: Option<DVector<f64>> = None;
    let mut alpha = 1.0;
    while alpha >= settings.min_step {
        let displacement = match &arc {
            Some(e) => d * alpha + e * (alpha * alpha),
            None => d * alpha,
        };
        let trial = x + &displacement;
        let values = problem.values(&trial)?;
        let phi = merit(&values, &trial, &lower, &upper, penalty);
        if sufficient(phi, alpha) {
            return Ok(Some(LineSearchOutcome {
                step_length: alpha,
                displacement,
                second_order: arc.is_some(),
                penalty,
                values,
                merit_before: phi0,
                merit_after: phi,
            }));
        }
        if alpha == 1.0 && arc.is_none() && phi.is_finite() {
            if let Some(corrected) = correction.as_mut().and_then(|c| c(&values)) {
                arc = Some(corrected - d);
                continue;
            }
        }
        alpha *= settings.backtracking;
    }
    Ok(None)
}
