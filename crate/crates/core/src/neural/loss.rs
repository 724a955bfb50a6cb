use serde::{Deserialize, Serialize};

use super::model::ModelOutput;
use crate::{Error, Result};

/// Weights of the coefficient and knot terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub coef: f64,
    pub knot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { coef: 1.0, knot: 1.0 }
    }
}

/// `0.5·x²` for `|x| < 1`, else `|x| − 0.5`.
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

pub fn l1(x: f64) -> f64 {
    x.abs()
}

/// Subgradient with `0` at the kink.
pub fn l1_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check(pred: &ModelOutput, target: &ModelOutput, coef_len: usize, knot_len: usize, w: LossWeights) -> Result<()> {
    if coef_len == 0 || knot_len == 0 {
        return Err(Error::param("valid prefixes must be non-empty"));
    }
    if coef_len > pred.coefficients.len().min(target.coefficients.len())
        || knot_len > pred.knots.len().min(target.knots.len())
    {
        return Err(Error::param("valid prefix longer than the outputs"));
    }
    if !(w.coef >= 0.0 && w.knot >= 0.0) {
        return Err(Error::param("loss weights must be non-negative"));
    }
    Ok(())
}

/// `θ1·mean smoothL1(coef error) + θ2·mean |knot error|` over the valid
/// prefixes.
pub fn composite_loss(
    pred: &ModelOutput,
    target: &ModelOutput,
    coef_len: usize,
    knot_len: usize,
    weights: LossWeights,
) -> Result<f64> {
    check(pred, target, coef_len, knot_len, weights)?;
    let coef = (0..coef_len).map(|i| smooth_l1(pred.coefficients[i] - target.coefficients[i])).sum::<f64>();
    let knot = (0..knot_len).map(|i| l1(pred.knots[i] - target.knots[i])).sum::<f64>();
    Ok(weights.coef * coef / coef_len as f64 + weights.knot * knot / knot_len as f64)
}

/// Loss value and its gradient with respect to the full-length prediction;
/// entries past the valid prefixes are zero.
pub fn composite_loss_grad(
    pred: &ModelOutput,
    target: &ModelOutput,
    coef_len: usize,
    knot_len: usize,
    weights: LossWeights,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let value = composite_loss(pred, target, coef_len, knot_len, weights)?;
    let mut dcoef = vec![0.0; pred.coefficients.len()];
    let mut dknot = vec![0.0; pred.knots.len()];
    for i in 0..coef_len {
        dcoef[i] = weights.coef * smooth_l1_grad(pred.coefficients[i] - target.coefficients[i]) / coef_len as f64;
    }
    for i in 0..knot_len {
        dknot[i] = weights.knot * l1_grad(pred.knots[i] - target.knots[i]) / knot_len as f64;
    }
    Ok((value, dcoef, dknot))
}
