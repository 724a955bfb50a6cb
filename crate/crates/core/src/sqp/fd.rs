use nalgebra::DMatrix;

use crate::{Error, Result};

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::param("finite-difference step must be positive"));
    }
    let mut z = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        z[i] = x[i] + h;
        let fp = f(&z);
        z[i] = x[i] - h;
        let fm = f(&z);
        z[i] = x[i];
        let d = (fp - fm) / (2.0 * h);
        if !d.is_finite() {
            return Err(Error::NumericalBreakdown(format!("finite difference of component {i}")));
        }
        g.push(d);
    }
    Ok(g)
}

/// Central-difference Jacobian (`outputs × inputs`) of a vector function.
pub fn finite_diff_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::param("finite-difference step must be positive"));
    }
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut z = x.to_vec();
    for i in 0..x.len() {
        z[i] = x[i] + h;
        let fp = f(&z);
        z[i] = x[i] - h;
        let fm = f(&z);
        z[i] = x[i];
        for r in 0..m {
            let d = (fp[r] - fm[r]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::NumericalBreakdown(format!("finite difference of output {r}, input {i}")));
            }
            jac[(r, i)] = d;
        }
    }
    Ok(jac)
}
