//! Quintic B-spline basis functions and their first three derivatives.

use crate::dual::Real;

pub const DEGREE: usize = 5;
/// Highest derivative order evaluated (jerk).
pub const MAX_ORDER: usize = 3;

/// Values and derivatives of the `DEGREE + 1` basis functions that are
/// non-zero on knot span `span` (`knots[span] <= t < knots[span + 1]`).
///
/// `out[k][j]` is the `k`-th derivative of basis function `span - DEGREE + j`.
/// Only `knots[span - 4 ..= span + 5]` are read. Follows the triangular
/// `ndu` table scheme of Piegl and Tiller.
pub fn basis_derivatives<R: Real>(knots: &[R], span: usize, t: R) -> [[R; DEGREE + 1]; MAX_ORDER + 1] {
    basis_derivatives_n::<R, { MAX_ORDER + 1 }>(knots, span, t)
}

/// [`basis_derivatives`] for derivative orders `0..N`, `N <= DEGREE + 1`.
pub fn basis_derivatives_n<R: Real, const N: usize>(knots: &[R], span: usize, t: R) -> [[R; DEGREE + 1]; N] {
    const P: usize = DEGREE;
    assert!(N >= 1 && N <= P + 1, "derivative orders 0..{N} exceed the degree");
    let zero = R::constant(0.0);
    let one = R::constant(1.0);

    let mut ndu = [[zero; P + 1]; P + 1];
    let mut left = [zero; P + 1];
    let mut right = [zero; P + 1];
    ndu[0][0] = one;
    for j in 1..=P {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = zero;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            // multiply before dividing so clamped ends give exact ones
            ndu[r][j] = saved + right[r + 1] * ndu[r][j - 1] / ndu[j][r];
            saved = left[j - r] * ndu[r][j - 1] / ndu[j][r];
        }
        ndu[j][j] = saved;
    }

    let mut ders = [[zero; P + 1]; N];
    for j in 0..=P {
        ders[0][j] = ndu[j][P];
    }

    let mut a = [[zero; P + 1]; 2];
    for r in 0..=P {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = one;
        for k in 1..N {
            let mut d = zero;
            let rk = r as isize - k as isize;
            let pk = P - k;
            if r >= k {
                let rk = rk as usize;
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { P - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }

    let mut factor = P as f64;
    for (k, row) in ders.iter_mut().enumerate().skip(1) {
        for v in row.iter_mut() {
            *v = *v * factor;
        }
        factor *= (P - k) as f64;
    }
    ders
}
