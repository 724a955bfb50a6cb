//! Dense strictly convex QP subproblem.
//!
//! ```text
//!     minimize    ½ dᵀ H d + gᵀ d
//!     subject to  A_E d + c_E  = 0
//!                 A_I d + c_I >= 0
//!                 lower <= d <= upper
//! ```
//!
//! Equalities are eliminated with a QR null-space basis; the reduced
//! inequality problem is solved with the Goldfarb–Idnani dual active-set
//! method, which needs no feasible starting point and reports an
//! inconsistent linearization directly.

use nalgebra::{DMatrix, DVector};

/// Borrowed QP data. Bounds may be infinite.
#[derive(Debug, Clone, Copy)]
pub struct QpProblem<'a> {
    pub hessian: &'a DMatrix<f64>,
    pub gradient: &'a DVector<f64>,
    pub eq_jacobian: &'a DMatrix<f64>,
    pub eq_residual: &'a DVector<f64>,
    pub ineq_jacobian: &'a DMatrix<f64>,
    pub ineq_residual: &'a DVector<f64>,
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub step: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    /// Non-negative multipliers of `A_I d + c_I >= 0`.
    pub ineq_multipliers: DVector<f64>,
    pub lower_multipliers: DVector<f64>,
    pub upper_multipliers: DVector<f64>,
    /// Largest elastic relaxation used (zero for an ordinary solve).
    pub elastic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum QpError {
    #[error("linearized constraints are inconsistent")]
    Infeasible,
    #[error("reduced Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("equality constraint gradients are linearly dependent")]
    DependentEqualities,
}

/// Null-space decomposition of `A_E`: `A_E d = -c_E` iff `d = particular + basis·y`.
struct NullSpace {
    particular: DVector<f64>,
    basis: DMatrix<f64>,
    /// Thin Q and R of `A_Eᵀ`, kept for recovering equality multipliers.
    range: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

fn null_space(a_eq: &DMatrix<f64>, c_eq: &DVector<f64>) -> Result<NullSpace, QpError> {
    let (p, n) = a_eq.shape();
    if p == 0 {
        return Ok(NullSpace { particular: DVector::zeros(n), basis: DMatrix::identity(n, n), range: None });
    }
    if p > n {
        return Err(QpError::DependentEqualities);
    }
    let qr = a_eq.transpose().qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if rmax == 0.0 || r.diagonal().iter().any(|d| d.abs() <= 1e-12 * rmax) {
        return Err(QpError::DependentEqualities);
    }
    let mut qt = DMatrix::identity(n, n);
    qr.q_tr_mul(&mut qt);
    let q = qt.transpose();
    let q1 = q.columns(0, p).into_owned();
    let basis = q.columns(p, n - p).into_owned();
    // A_E = Rᵀ Q₁ᵀ, so d_p = Q₁ R⁻ᵀ (-c_E) is the minimum-norm solution
    let z = r.transpose().solve_lower_triangular(&(-c_eq)).ok_or(QpError::DependentEqualities)?;
    let particular = &q1 * z;
    Ok(NullSpace { particular, basis, range: Some((q1, r)) })
}

/// Inequality rows `C y >= b` of the reduced problem, tagged by origin.
struct ReducedRows {
    c: DMatrix<f64>,
    b: DVector<f64>,
    origin: Vec<RowOrigin>,
}

#[derive(Debug, Clone, Copy)]
enum RowOrigin {
    General(usize),
    Lower(usize),
    Upper(usize),
}

fn reduced_rows(qp: &QpProblem, ns: &NullSpace) -> ReducedRows {
    let n = qp.gradient.len();
    let r = ns.basis.ncols();
    let m = qp.ineq_jacobian.nrows();
    let lower: Vec<usize> = (0..n).filter(|&j| qp.lower[j].is_finite()).collect();
    let upper: Vec<usize> = (0..n).filter(|&j| qp.upper[j].is_finite()).collect();
    let rows = m + lower.len() + upper.len();
    let mut c = DMatrix::zeros(rows, r);
    let mut b = DVector::zeros(rows);
    let mut origin = Vec::with_capacity(rows);
    if m > 0 {
        c.rows_mut(0, m).copy_from(&(qp.ineq_jacobian * &ns.basis));
        let shift = qp.ineq_jacobian * &ns.particular;
        for i in 0..m {
            b[i] = -(qp.ineq_residual[i] + shift[i]);
            origin.push(RowOrigin::General(i));
        }
    }
    let mut row = m;
    for &j in &lower {
        c.row_mut(row).copy_from(&ns.basis.row(j));
        b[row] = qp.lower[j] - ns.particular[j];
        origin.push(RowOrigin::Lower(j));
        row += 1;
    }
    for &j in &upper {
        c.row_mut(row).copy_from(&(-ns.basis.row(j)));
        b[row] = ns.particular[j] - qp.upper[j];
        origin.push(RowOrigin::Upper(j));
        row += 1;
    }
    ReducedRows { c, b, origin }
}

/// Solve the QP; see the module docs.
pub fn qp_step(qp: &QpProblem) -> Result<QpSolution, QpError> {
    let ns = null_space(qp.eq_jacobian, qp.eq_residual)?;
    let rows = reduced_rows(qp, &ns);
    let z = &ns.basis;
    let g_red = z.transpose() * qp.hessian * z;
    let a_red = z.transpose() * (qp.gradient + qp.hessian * &ns.particular);
    let (y, u) = dual_active_set(&g_red, &a_red, &rows.c, &rows.b)?;
    Ok(assemble(qp, &ns, &rows, &y, &u, 0.0))
}

/// Feasibility restoration: minimize the largest violation `σ` of the
/// general inequalities while keeping the equality linearization and the
/// bounds hard. A small multiple of `H` keeps the step bounded.
pub fn qp_elastic(qp: &QpProblem, regularization: f64) -> Result<QpSolution, QpError> {
    let ns = null_space(qp.eq_jacobian, qp.eq_residual)?;
    let rows = reduced_rows(qp, &ns);
    let z = &ns.basis;
    let r = z.ncols();
    let mut g = DMatrix::zeros(r + 1, r + 1);
    g.view_mut((0, 0), (r, r)).copy_from(&(z.transpose() * qp.hessian * z * regularization));
    g[(r, r)] = regularization;
    let mut a = DVector::zeros(r + 1);
    a[r] = 1.0;
    let nrows = rows.c.nrows();
    let mut c = DMatrix::zeros(nrows + 1, r + 1);
    c.view_mut((0, 0), (nrows, r)).copy_from(&rows.c);
    for (i, o) in rows.origin.iter().enumerate() {
        if matches!(o, RowOrigin::General(_)) {
            c[(i, r)] = 1.0;
        }
    }
    c[(nrows, r)] = 1.0;
    let mut b = DVector::zeros(nrows + 1);
    b.rows_mut(0, nrows).copy_from(&rows.b);
    let (ys, u) = dual_active_set(&g, &a, &c, &b)?;
    let y = ys.rows(0, r).into_owned();
    let sigma = ys[r].max(0.0);
    Ok(assemble(qp, &ns, &rows, &y, &u.rows(0, nrows).into_owned(), sigma))
}

fn assemble(
    qp: &QpProblem,
    ns: &NullSpace,
    rows: &ReducedRows,
    y: &DVector<f64>,
    u: &DVector<f64>,
    elastic: f64,
) -> QpSolution {
    let n = qp.gradient.len();
    let step = &ns.particular + &ns.basis * y;
    let mut ineq = DVector::zeros(qp.ineq_jacobian.nrows());
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    for (i, o) in rows.origin.iter().enumerate() {
        match *o {
            RowOrigin::General(k) => ineq[k] = u[i],
            RowOrigin::Lower(j) => lower[j] = u[i],
            RowOrigin::Upper(j) => upper[j] = u[i],
        }
    }
    let eq = match &ns.range {
        None => DVector::zeros(0),
        Some((q1, r)) => {
            // A_Eᵀ λ_E = H d + g - A_Iᵀ λ_I - λ_lo + λ_up, solved in the range of A_Eᵀ
            let rhs = qp.hessian * &step + qp.gradient - qp.ineq_jacobian.transpose() * &ineq - &lower + &upper;
            r.solve_upper_triangular(&(q1.transpose() * rhs)).unwrap_or_else(|| DVector::zeros(r.nrows()))
        }
    };
    QpSolution {
        step,
        eq_multipliers: eq,
        ineq_multipliers: ineq,
        lower_multipliers: lower,
        upper_multipliers: upper,
        elastic,
    }
}

/// Goldfarb–Idnani dual active-set method for
/// `min ½ yᵀ G y + aᵀ y  s.t.  C y >= b`, with `G` positive definite.
///
/// Returns the minimizer and one non-negative multiplier per row of `C`.
pub(crate) fn dual_active_set(
    g: &DMatrix<f64>,
    a: &DVector<f64>,
    c: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), QpError> {
    let r = g.nrows();
    let nc = c.nrows();
    if r == 0 {
        // nothing to optimize: every constraint must hold at y = []
        if b.iter().any(|&bi| bi > 1e-9) {
            return Err(QpError::Infeasible);
        }
        return Ok((DVector::zeros(0), DVector::zeros(nc)));
    }
    let chol = g.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let l = chol.l();
    let mut j = l.solve_lower_triangular(&DMatrix::identity(r, r)).ok_or(QpError::NotPositiveDefinite)?.transpose();
    let mut y = -chol.solve(a);
    let row_norm: Vec<f64> = (0..nc).map(|i| c.row(i).norm().max(1e-300)).collect();

    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut rmat = DMatrix::<f64>::zeros(r, r);
    let mut is_active = vec![false; nc];
    let mut slack = c * &y - b;
    let max_iter = 10 * (nc + r) + 100;
    let tol = 1e-11;

    for _ in 0..max_iter {
        // most violated inactive constraint, by normalized slack
        let mut p = None;
        let mut worst = -tol;
        for i in 0..nc {
            if !is_active[i] {
                let s = slack[i] / row_norm[i];
                if s < worst {
                    worst = s;
                    p = Some(i);
                }
            }
        }
        let Some(p) = p else {
            let mut mult = DVector::zeros(nc);
            for (k, &i) in active.iter().enumerate() {
                mult[i] = u[k].max(0.0);
            }
            return Ok((y, mult));
        };
        let np = c.row(p).transpose();
        let mut u_p = 0.0;

        loop {
            let q = active.len();
            let d = j.transpose() * &np;
            let z = j.columns(q, r - q) * d.rows(q, r - q);
            let rvec = if q > 0 {
                rmat.view((0, 0), (q, q))
                    .into_owned()
                    .solve_upper_triangular(&d.rows(0, q).into_owned())
                    .ok_or(QpError::Infeasible)?
            } else {
                DVector::zeros(0)
            };
            // partial (dual) step length
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..q {
                if rvec[k] > 0.0 {
                    let t = u[k] / rvec[k];
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            // full (primal) step length
            let dependent = d.rows(q, r - q).norm() <= 1e-10 * d.norm().max(1e-300);
            let sp = (np.dot(&y) - b[p]).min(0.0);
            let t2 = if dependent { f64::INFINITY } else { -sp / z.dot(&np) };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }
            if t2.is_finite() {
                y += &z * t;
            }
            for k in 0..q {
                u[k] -= t * rvec[k];
            }
            u_p += t;

            if t2 <= t1 {
                // full step: p joins the active set
                add_constraint(&mut j, &mut rmat, q, &d);
                active.push(p);
                u.push(u_p);
                is_active[p] = true;
                break;
            }
            let k = drop.expect("partial step drops a constraint");
            drop_constraint(&mut j, &mut rmat, q, k);
            is_active[active[k]] = false;
            active.remove(k);
            u.remove(k);
        }
        slack = c * &y - b;
    }
    Err(QpError::Infeasible)
}

/// Rotate columns `q..` of `J` so that `Jᵀ n` has zeros below row `q`, and
/// append the resulting column to `R`.
fn add_constraint(j: &mut DMatrix<f64>, rmat: &mut DMatrix<f64>, q: usize, d: &DVector<f64>) {
    let r = j.nrows();
    let mut d = d.clone();
    for i in (q + 1..r).rev() {
        let (x0, x1) = (d[i - 1], d[i]);
        if x1 == 0.0 {
            continue;
        }
        let h = x0.hypot(x1);
        let (cs, sn) = (x0 / h, x1 / h);
        d[i - 1] = h;
        d[i] = 0.0;
        for row in 0..r {
            let (a, b) = (j[(row, i - 1)], j[(row, i)]);
            j[(row, i - 1)] = cs * a + sn * b;
            j[(row, i)] = -sn * a + cs * b;
        }
    }
    for i in 0..=q {
        rmat[(i, q)] = d[i];
    }
}

/// Remove active constraint `k` of `q` and restore `R` to upper triangular form.
fn drop_constraint(j: &mut DMatrix<f64>, rmat: &mut DMatrix<f64>, q: usize, k: usize) {
    let r = j.nrows();
    for col in k..q - 1 {
        for row in 0..q {
            rmat[(row, col)] = rmat[(row, col + 1)];
        }
    }
    for row in 0..q {
        rmat[(row, q - 1)] = 0.0;
    }
    for i in k..q - 1 {
        let (x0, x1) = (rmat[(i, i)], rmat[(i + 1, i)]);
        if x1 == 0.0 {
            continue;
        }
        let h = x0.hypot(x1);
        let (cs, sn) = (x0 / h, x1 / h);
        for col in i..q - 1 {
            let (a, b) = (rmat[(i, col)], rmat[(i + 1, col)]);
            rmat[(i, col)] = cs * a + sn * b;
            rmat[(i + 1, col)] = -sn * a + cs * b;
        }
        for row in 0..r {
            let (a, b) = (j[(row, i)], j[(row, i + 1)]);
            j[(row, i)] = cs * a + sn * b;
            j[(row, i + 1)] = -sn * a + cs * b;
        }
    }
}
