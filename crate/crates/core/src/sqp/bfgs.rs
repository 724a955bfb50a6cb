use nalgebra::{DMatrix, DVector};

/// Powell-damped BFGS update of a Hessian approximation.
///
/// When `sᵀy < 0.2 sᵀHs` the curvature pair is blended toward `Hs` so the
/// result stays symmetric positive definite. A zero or numerically
/// degenerate step leaves `H` unchanged.
pub fn bfgs_update(h: &DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
    let hs = h * s;
    let shs = s.dot(&hs);
    if !(s.norm() > 0.0) || !(shs > f64::MIN_POSITIVE) || !shs.is_finite() {
        return h.clone();
    }
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * shs { 1.0 } else { 0.8 * shs / (shs - sy) };
    let r = y * theta + &hs * (1.0 - theta);
    let sr = s.dot(&r);
    if !(sr > 0.0) || !sr.is_finite() {
        return h.clone();
    }
    let mut out = h - &hs * hs.transpose() / shs + &r * r.transpose() / sr;
    // enforce exact symmetry against rounding
    let n = out.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Symmetric rank-one update, or `None` when it is undefined, would leave
/// `H` indefinite, or would shrink `det H` by more than a factor of 1000.
pub fn sr1_update(h: &DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> Option<DMatrix<f64>> {
    let r = y - h * s;
    let denom = r.dot(s);
    if !(denom.abs() > 1e-8 * r.norm() * s.norm()) || !denom.is_finite() {
        return None;
    }
    let hinv_r = h.clone().cholesky()?.solve(&r);
    // det(H + rrᵀ/δ) / det(H)
    let det_ratio = 1.0 + r.dot(&hinv_r) / denom;
    if !(det_ratio > 1e-3) {
        return None;
    }
    let mut out = h + &r * r.transpose() / denom;
    let n = out.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out.clone().cholesky()?;
    Some(out)
}
