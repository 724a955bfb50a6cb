use nalgebra::{DMatrix, DVector};

use super::EPS_SPAN;
use crate::dual::Dual;
use crate::quadrature::gauss_legendre;
use crate::sqp::{Derivatives, NlpProblem, Values};
use crate::trajectory::{
    basis_derivatives, basis_derivatives_n, RobotLimits, WaypointPath, DEGREE, JERK_QUADRATURE_NODES, MAX_ORDER,
};
use crate::{Error, Result};

/// Per-joint smoothing of `sqrt(E/T)` so joints with zero jerk stay differentiable.
pub const JERK_SMOOTHING: f64 = 1e-6;

/// Local knots `knots[s-4 ..= s+5]` that a span's basis functions depend on.
const LOCAL: usize = 2 * DEGREE;

type LocalDual = Dual<LOCAL>;
type Basis<R> = [[R; DEGREE + 1]; MAX_ORDER + 1];

/// Bracketing intervals per span and unit of collocation density used to
/// locate derivative extrema.
pub const SEARCH_INTERVALS_PER_DENSITY: usize = 4;

/// Where `q⁽ʳ⁾` of one joint attains its maximum and minimum on one span,
/// as fractions of the span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanExtrema {
    pub argmax: f64,
    pub argmin: f64,
}

/// Horner evaluation of `Σ c[m]·x^m`.
fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

fn differentiate(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(m, v)| m as f64 * v).collect()
}

/// Extrema of the polynomial `c` on `[0, 1]`: the endpoints plus every sign
/// change of `c'` over `intervals` uniform brackets, refined by bisection.
pub fn polynomial_extrema(c: &[f64], intervals: usize) -> SpanExtrema {
    let dc = differentiate(c);
    let mut candidates = vec![0.0, 1.0];
    let n = intervals.max(1);
    let mut lo = 0.0;
    let mut f_lo = horner(&dc, lo);
    for i in 1..=n {
        let hi = i as f64 / n as f64;
        let f_hi = horner(&dc, hi);
        if f_lo == 0.0 {
            candidates.push(lo);
        } else if f_lo * f_hi < 0.0 {
            let (mut a, mut b, mut fa) = (lo, hi, f_lo);
            while b - a > 1e-15 {
                let m = 0.5 * (a + b);
                let fm = horner(&dc, m);
                if fm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if fa * fm < 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            candidates.push(0.5 * (a + b));
        }
        lo = hi;
        f_lo = f_hi;
    }
    let mut best = SpanExtrema { argmax: 0.0, argmin: 0.0 };
    let (mut vmax, mut vmin) = (f64::NEG_INFINITY, f64::INFINITY);
    for &x in &candidates {
        let v = horner(c, x);
        if v > vmax {
            vmax = v;
            best.argmax = x;
        }
        if v < vmin {
            vmin = v;
            best.argmin = x;
        }
    }
    best
}

/// The time-jerk trajectory program over a [`super::DecisionVector`].
///
/// Equalities, per joint: `q(t_i) - w_i` for every waypoint, then
/// `q̇(0), q̇(T), q̈(0), q̈(T)`. Inequalities, per span, joint and derivative
/// order: `μ - max q⁽ʳ⁾/L >= 0` and `μ + min q⁽ʳ⁾/L >= 0` with the extrema
/// taken over the whole span, so a feasible point satisfies the limits
/// everywhere. Their gradients are those of `q⁽ʳ⁾` at the fixed maximizing
/// span fraction.
#[derive(Debug, Clone)]
pub struct TrajectoryNlp {
    path: WaypointPath,
    limits: RobotLimits,
    lambda: f64,
    margin: f64,
    density: usize,
    quad_nodes: Vec<f64>,
    quad_weights: Vec<f64>,
}

impl TrajectoryNlp {
    pub fn new(path: &WaypointPath, limits: &RobotLimits, lambda: f64, density: usize, margin: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::param(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        if !(margin > 0.0 && margin <= 1.0) {
            return Err(Error::param(format!("margin must lie in (0, 1], got {margin}")));
        }
        if path.num_joints() != limits.num_joints() {
            return Err(Error::param("path and limits disagree on joint count"));
        }
        if density < 2 {
            return Err(Error::param("collocation density must be at least 2"));
        }
        path.check_within(limits)?;
        let (quad_nodes, quad_weights) = gauss_legendre(JERK_QUADRATURE_NODES);
        Ok(Self { path: path.clone(), limits: limits.clone(), lambda, margin, density, quad_nodes, quad_weights })
    }

    pub fn path(&self) -> &WaypointPath {
        &self.path
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn density(&self) -> usize {
        self.density
    }

    /// Extremum locations of every joint and derivative order on every
    /// span, indexed `[span][joint][order]`.
    pub fn extrema(&self, x: &DVector<f64>) -> Result<Vec<Vec<[SpanExtrema; MAX_ORDER + 1]>>> {
        let (knots, cps) = self.unpack(x)?;
        Ok(self.locate(&knots, &cps))
    }

    fn locate(&self, knots: &[f64], cps: &[&[f64]]) -> Vec<Vec<[SpanExtrema; MAX_ORDER + 1]>> {
        let intervals = SEARCH_INTERVALS_PER_DENSITY * self.density;
        (0..self.spans())
            .map(|span| {
                let s = span + DEGREE;
                let h = knots[s + 1] - knots[s];
                let b = basis_derivatives_n::<f64, { DEGREE + 1 }>(knots, s, knots[s]);
                cps.iter()
                    .map(|c| {
                        // q(U_s + φh) = Σ_m q⁽ᵐ⁾(U_s)·hᵐ/m!·φᵐ
                        let mut poly = [0.0; DEGREE + 1];
                        let mut scale = 1.0;
                        for (m, coef) in poly.iter_mut().enumerate() {
                            if m > 0 {
                                scale *= h / m as f64;
                            }
                            *coef = scale * b[m].iter().zip(&c[span..]).map(|(n, p)| n * p).sum::<f64>();
                        }
                        let mut out = [SpanExtrema { argmax: 0.0, argmin: 0.0 }; MAX_ORDER + 1];
                        let mut deriv = poly.to_vec();
                        for slot in out.iter_mut() {
                            *slot = polynomial_extrema(&deriv, intervals);
                            deriv = differentiate(&deriv);
                        }
                        out
                    })
                    .collect()
            })
            .collect()
    }

    fn waypoints(&self) -> usize {
        self.path.num_waypoints()
    }

    fn joints(&self) -> usize {
        self.path.num_joints()
    }

    fn spans(&self) -> usize {
        self.waypoints() - 1
    }

    fn cps_per_joint(&self) -> usize {
        self.waypoints() + 4
    }

    /// Row of the upper-limit inequality; the lower one follows it.
    fn ineq_row(&self, span: usize, joint: usize, order: usize) -> usize {
        ((span * self.joints() + joint) * (MAX_ORDER + 1) + order) * 2
    }

    fn cp_column(&self, joint: usize, cp: usize) -> usize {
        self.spans() + joint * self.cps_per_joint() + cp
    }

    /// Waypoint whose time knot `m` equals.
    fn knot_waypoint(&self, m: usize) -> usize {
        m.saturating_sub(DEGREE).min(self.waypoints() - 1)
    }

    fn unpack<'a>(&self, x: &'a DVector<f64>) -> Result<(Vec<f64>, Vec<&'a [f64]>)> {
        let n = self.dimension();
        if x.len() != n {
            return Err(Error::param(format!("expected {n} variables, got {}", x.len())));
        }
        let x = x.as_slice();
        let durations = &x[..self.spans()];
        if durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Degenerate("non-positive span duration".into()));
        }
        let times = super::cumulative_times(durations);
        let mut knots = Vec::with_capacity(self.waypoints() + 2 * DEGREE);
        knots.extend(std::iter::repeat_n(0.0, DEGREE));
        knots.extend_from_slice(&times);
        knots.extend(std::iter::repeat_n(*times.last().unwrap(), DEGREE));
        let cps = x[self.spans()..].chunks(self.cps_per_joint()).collect();
        Ok((knots, cps))
    }

    fn basis(knots: &[f64], span: usize, frac: f64) -> Basis<f64> {
        let s = span + DEGREE;
        let t = knots[s] + frac * (knots[s + 1] - knots[s]);
        basis_derivatives(knots, s, t)
    }

    /// Basis with tangents along the local knots `knots[s-4 ..= s+5]`.
    fn basis_dual(knots: &[f64], span: usize, frac: f64) -> Basis<LocalDual> {
        let s = span + DEGREE;
        let mut local = [LocalDual::constant(0.0); LOCAL + 1];
        for (j, slot) in local.iter_mut().enumerate().skip(1) {
            *slot = LocalDual::variable(knots[s - DEGREE + j], j - 1);
        }
        let t = local[DEGREE] + (local[DEGREE + 1] - local[DEGREE]) * frac;
        basis_derivatives(&local, DEGREE, t)
    }

    /// Value and local-knot tangent of `Σ_j basis[order][j] · cps[j]`.
    fn combine(basis: &Basis<LocalDual>, order: usize, cps: &[f64]) -> (f64, [f64; LOCAL]) {
        let mut v = 0.0;
        let mut g = [0.0; LOCAL];
        for (b, c) in basis[order].iter().zip(cps) {
            v += b.re * c;
            for (gi, e) in g.iter_mut().zip(&b.eps) {
                *gi += e * c;
            }
        }
        (v, g)
    }

    /// Map a local-knot gradient of span `span` onto duration partials.
    ///
    /// Knot `m` moves with every duration before its waypoint; durations
    /// before the window move all local knots together and contribute zero.
    fn chain_local(&self, span: usize, g: &[f64; LOCAL], mut emit: impl FnMut(usize, f64)) {
        let first = span + 1; // global index of local tangent 0
        let w_lo = self.knot_waypoint(first);
        let w_hi = self.knot_waypoint(first + LOCAL - 1);
        let mut per_waypoint = [0.0; LOCAL + 1];
        for (i, gi) in g.iter().enumerate() {
            per_waypoint[self.knot_waypoint(first + i) - w_lo] += gi;
        }
        let mut acc = 0.0;
        for j in (w_lo..w_hi).rev() {
            acc += per_waypoint[j + 1 - w_lo];
            emit(j, acc);
        }
    }

    fn jerk_integrals(&self, knots: &[f64], cps: &[&[f64]]) -> Vec<f64> {
        let mut e = vec![0.0; self.joints()];
        for span in 0..self.spans() {
            let s = span + DEGREE;
            let half = 0.5 * (knots[s + 1] - knots[s]);
            for (x, w) in self.quad_nodes.iter().zip(&self.quad_weights) {
                let b = Self::basis(knots, span, 0.5 * (1.0 + x));
                for (k, c) in cps.iter().enumerate() {
                    let jerk: f64 = b[3].iter().zip(&c[span..span + DEGREE + 1]).map(|(n, p)| n * p).sum();
                    e[k] += w * half * jerk * jerk;
                }
            }
        }
        e
    }

    fn objective(&self, e: &[f64], end: f64) -> f64 {
        let j: f64 = e.iter().map(|ek| (ek / end + JERK_SMOOTHING * JERK_SMOOTHING).sqrt() - JERK_SMOOTHING).sum();
        self.lambda * j + (1.0 - self.lambda) * end
    }
}

impl NlpProblem for TrajectoryNlp {
    fn dimension(&self) -> usize {
        self.spans() + self.joints() * self.cps_per_joint()
    }

    fn num_equalities(&self) -> usize {
        self.joints() * (self.waypoints() + 4)
    }

    fn num_inequalities(&self) -> usize {
        self.spans() * self.joints() * (MAX_ORDER + 1) * 2
    }

    fn lower_bounds(&self) -> Vec<f64> {
        let mut lo = vec![f64::NEG_INFINITY; self.dimension()];
        lo[..self.spans()].fill(EPS_SPAN);
        lo
    }

    fn values(&self, x: &DVector<f64>) -> Result<Values> {
        let (knots, cps) = self.unpack(x)?;
        let end = knots[knots.len() - 1];
        let e = self.jerk_integrals(&knots, &cps);
        let objective = self.objective(&e, end);

        let (ii, spans) = (self.waypoints(), self.spans());
        let mut eq = DVector::zeros(self.num_equalities());
        let first = Self::basis(&knots, 0, 0.0);
        let last = Self::basis(&knots, spans - 1, 1.0);
        for (k, c) in cps.iter().enumerate() {
            let row = k * (ii + 4);
            for i in 0..ii {
                let (span, frac) = if i < spans { (i, 0.0) } else { (spans - 1, 1.0) };
                let b = Self::basis(&knots, span, frac);
                let q: f64 = b[0].iter().zip(&c[span..]).map(|(n, p)| n * p).sum();
                eq[row + i] = q - self.path.get(i, k);
            }
            let dot = |b: &Basis<f64>, order: usize, span: usize| -> f64 {
                b[order].iter().zip(&c[span..]).map(|(n, p)| n * p).sum()
            };
            eq[row + ii] = dot(&first, 1, 0);
            eq[row + ii + 1] = dot(&last, 1, spans - 1);
            eq[row + ii + 2] = dot(&first, 2, 0);
            eq[row + ii + 3] = dot(&last, 2, spans - 1);
        }

        let located = self.locate(&knots, &cps);
        let mut ineq = DVector::zeros(self.num_inequalities());
        for (span, per_joint) in located.iter().enumerate() {
            for (k, c) in cps.iter().enumerate() {
                for (r, ext) in per_joint[k].iter().enumerate() {
                    let row = self.ineq_row(span, k, r);
                    let at = |frac: f64| -> f64 {
                        let b = Self::basis(&knots, span, frac);
                        b[r].iter().zip(&c[span..]).map(|(n, p)| n * p).sum::<f64>() / self.limits.bound(r, k)
                    };
                    ineq[row] = self.margin - at(ext.argmax);
                    ineq[row + 1] = self.margin + at(ext.argmin);
                }
            }
        }
        Ok(Values { objective, equalities: eq, inequalities: ineq })
    }

    fn derivatives(&self, x: &DVector<f64>) -> Result<Derivatives> {
        let (knots, cps) = self.unpack(x)?;
        let n = self.dimension();
        let (ii, spans, kk) = (self.waypoints(), self.spans(), self.joints());
        let end = knots[knots.len() - 1];

        // jerk integrals with gradients
        let mut e = vec![0.0; kk];
        let mut de_cp = vec![vec![0.0; self.cps_per_joint()]; kk];
        let mut de_dur = vec![vec![0.0; spans]; kk];
        for span in 0..spans {
            for (x, w) in self.quad_nodes.iter().zip(&self.quad_weights) {
                let b = Self::basis_dual(&knots, span, 0.5 * (1.0 + x));
                let half = 0.5 * (knots[span + DEGREE + 1] - knots[span + DEGREE]);
                for k in 0..kk {
                    let c = &cps[k][span..span + DEGREE + 1];
                    let (jerk, djerk) = Self::combine(&b, 3, c);
                    e[k] += w * half * jerk * jerk;
                    for (j, bj) in b[3].iter().enumerate() {
                        de_cp[k][span + j] += w * half * 2.0 * jerk * bj.re;
                    }
                    let mut gk = [0.0; LOCAL];
                    for (i, gi) in gk.iter_mut().enumerate() {
                        *gi = w * half * 2.0 * jerk * djerk[i];
                    }
                    // half = (knot[s+1] - knot[s]) / 2: local tangents 4 and 5
                    gk[DEGREE - 1] -= 0.5 * w * jerk * jerk;
                    gk[DEGREE] += 0.5 * w * jerk * jerk;
                    self.chain_local(span, &gk, |j, v| de_dur[k][j] += v);
                }
            }
        }
        let mut gradient = DVector::zeros(n);
        let mut dobj_dt = 1.0 - self.lambda;
        for k in 0..kk {
            let root = (e[k] / end + JERK_SMOOTHING * JERK_SMOOTHING).sqrt();
            let dj_de = self.lambda / (2.0 * end * root);
            dobj_dt -= self.lambda * e[k] / (2.0 * end * end * root);
            for (c, d) in de_cp[k].iter().enumerate() {
                gradient[self.cp_column(k, c)] += dj_de * d;
            }
            for (j, d) in de_dur[k].iter().enumerate() {
                gradient[j] += dj_de * d;
            }
        }
        for j in 0..spans {
            gradient[j] += dobj_dt;
        }

        let mut eq_jacobian = DMatrix::zeros(self.num_equalities(), n);
        let point_rows = |span: usize,
                          frac: f64,
                          orders: &[(usize, usize)],
                          jac: &mut DMatrix<f64>,
                          row_of: &dyn Fn(usize, usize) -> usize| {
            let b = Self::basis_dual(&knots, span, frac);
            for k in 0..kk {
                let c = &cps[k][span..span + DEGREE + 1];
                for &(order, tag) in orders {
                    let row = row_of(k, tag);
                    let (_, g) = Self::combine(&b, order, c);
                    for (j, bj) in b[order].iter().enumerate() {
                        jac[(row, self.cp_column(k, span + j))] = bj.re;
                    }
                    self.chain_local(span, &g, |j, v| jac[(row, j)] = v);
                }
            }
        };
        for i in 0..ii {
            let (span, frac) = if i < spans { (i, 0.0) } else { (spans - 1, 1.0) };
            point_rows(span, frac, &[(0, i)], &mut eq_jacobian, &|k, i| k * (ii + 4) + i);
        }
        point_rows(0, 0.0, &[(1, 0), (2, 2)], &mut eq_jacobian, &|k, t| k * (ii + 4) + ii + t);
        point_rows(spans - 1, 1.0, &[(1, 1), (2, 3)], &mut eq_jacobian, &|k, t| k * (ii + 4) + ii + t);

        let located = self.locate(&knots, &cps);
        let mut ineq_jacobian = DMatrix::zeros(self.num_inequalities(), n);
        for (span, per_joint) in located.iter().enumerate() {
            for k in 0..kk {
                let c = &cps[k][span..span + DEGREE + 1];
                for (r, ext) in per_joint[k].iter().enumerate() {
                    let row = self.ineq_row(span, k, r);
                    let scale = 1.0 / self.limits.bound(r, k);
                    for (side, frac, sign) in [(0, ext.argmax, -scale), (1, ext.argmin, scale)] {
                        let b = Self::basis_dual(&knots, span, frac);
                        let (_, dg) = Self::combine(&b, r, c);
                        for (j, bj) in b[r].iter().enumerate() {
                            ineq_jacobian[(row + side, self.cp_column(k, span + j))] = sign * bj.re;
                        }
                        self.chain_local(span, &dg, |j, v| ineq_jacobian[(row + side, j)] = sign * v);
                    }
                }
            }
        }
        Ok(Derivatives { gradient, eq_jacobian, ineq_jacobian })
    }
}
