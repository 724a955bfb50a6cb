use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Function values at one point.
#[derive(Debug, Clone)]
pub struct Values {
    pub objective: f64,
    pub equalities: DVector<f64>,
    /// Feasible when every entry is `>= 0`.
    pub inequalities: DVector<f64>,
}

/// First derivatives at one point; Jacobians are `constraints × dimension`.
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub gradient: DVector<f64>,
    pub eq_jacobian: DMatrix<f64>,
    pub ineq_jacobian: DMatrix<f64>,
}

/// A dense nonlinear program
///
/// ```text
///     minimize f(x)  s.t.  c_E(x) = 0,  c_I(x) >= 0,  lower <= x <= upper
/// ```
pub trait NlpProblem {
    fn dimension(&self) -> usize;
    fn num_equalities(&self) -> usize;
    fn num_inequalities(&self) -> usize;

    fn lower_bounds(&self) -> Vec<f64> {
        vec![f64::NEG_INFINITY; self.dimension()]
    }

    fn upper_bounds(&self) -> Vec<f64> {
        vec![f64::INFINITY; self.dimension()]
    }

    fn values(&self, x: &DVector<f64>) -> Result<Values>;

    fn derivatives(&self, x: &DVector<f64>) -> Result<Derivatives>;

    /// Whether [`NlpProblem::derivatives`] is a finite-difference approximation.
    fn numeric_derivatives(&self) -> bool {
        false
    }
}

type ScalarFn<'a> = Box<dyn Fn(&[f64]) -> f64 + Send + Sync + 'a>;
type VectorFn<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a>;
pub type MatrixFn<'a> = Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'a>;

struct ConstraintFns<'a> {
    count: usize,
    values: VectorFn<'a>,
    jacobian: Option<MatrixFn<'a>>,
}

/// An [`NlpProblem`] assembled from closures.
///
/// Missing gradients or Jacobians are filled in by central differences and
/// the problem then reports [`NlpProblem::numeric_derivatives`].
pub struct FnProblem<'a> {
    dimension: usize,
    objective: ScalarFn<'a>,
    gradient: Option<VectorFn<'a>>,
    equalities: Option<ConstraintFns<'a>>,
    inequalities: Option<ConstraintFns<'a>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    fd_step: f64,
}

impl<'a> FnProblem<'a> {
    pub fn new(dimension: usize, objective: impl Fn(&[f64]) -> f64 + Send + Sync + 'a) -> Self {
        Self {
            dimension,
            objective: Box::new(objective),
            gradient: None,
            equalities: None,
            inequalities: None,
            lower: vec![f64::NEG_INFINITY; dimension],
            upper: vec![f64::INFINITY; dimension],
            fd_step: 1e-7,
        }
    }

    pub fn gradient(mut self, g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a) -> Self {
        self.gradient = Some(Box::new(g));
        self
    }

    pub fn equalities(
        mut self,
        count: usize,
        values: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a,
        jacobian: Option<MatrixFn<'a>>,
    ) -> Self {
        self.equalities = Some(ConstraintFns { count, values: Box::new(values), jacobian });
        self
    }

    pub fn inequalities(
        mut self,
        count: usize,
        values: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a,
        jacobian: Option<MatrixFn<'a>>,
    ) -> Self {
        self.inequalities = Some(ConstraintFns { count, values: Box::new(values), jacobian });
        self
    }

    pub fn bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), self.dimension);
        assert_eq!(upper.len(), self.dimension);
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    fn constraint_values(c: &Option<ConstraintFns<'a>>, x: &[f64], what: &str) -> Result<DVector<f64>> {
        match c {
            None => Ok(DVector::zeros(0)),
            Some(c) => {
                let v = (c.values)(x);
                if v.len() != c.count {
                    return Err(Error::param(format!(
                        "{what} callback returned {} values, expected {}",
                        v.len(),
                        c.count
                    )));
                }
                Ok(DVector::from_vec(v))
            }
        }
    }

    fn constraint_jacobian(&self, c: &Option<ConstraintFns<'a>>, x: &[f64], what: &str) -> Result<DMatrix<f64>> {
        match c {
            None => Ok(DMatrix::zeros(0, self.dimension)),
            Some(c) => {
                let j = match &c.jacobian {
                    Some(jac) => jac(x),
                    None => super::finite_diff_jacobian(|z| (c.values)(z), x, self.fd_step)?,
                };
                if j.shape() != (c.count, self.dimension) {
                    return Err(Error::param(format!("{what} Jacobian has shape {:?}", j.shape())));
                }
                Ok(j)
            }
        }
    }
}

impl NlpProblem for FnProblem<'_> {
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn num_equalities(&self) -> usize {
        self.equalities.as_ref().map_or(0, |c| c.count)
    }
    fn num_inequalities(&self) -> usize {
        self.inequalities.as_ref().map_or(0, |c| c.count)
    }
    fn lower_bounds(&self) -> Vec<f64> {
        self.lower.clone()
    }
    fn upper_bounds(&self) -> Vec<f64> {
        self.upper.clone()
    }

    fn values(&self, x: &DVector<f64>) -> Result<Values> {
        let xs = x.as_slice();
        Ok(Values {
            objective: (self.objective)(xs),
            equalities: Self::constraint_values(&self.equalities, xs, "equality")?,
            inequalities: Self::constraint_values(&self.inequalities, xs, "inequality")?,
        })
    }

    fn derivatives(&self, x: &DVector<f64>) -> Result<Derivatives> {
        let xs = x.as_slice();
        let gradient = match &self.gradient {
            Some(g) => g(xs),
            None => super::finite_diff_gradient(|z| (self.objective)(z), xs, self.fd_step)?,
        };
        if gradient.len() != self.dimension {
            return Err(Error::param(format!("gradient has {} entries, expected {}", gradient.len(), self.dimension)));
        }
        Ok(Derivatives {
            gradient: DVector::from_vec(gradient),
            eq_jacobian: self.constraint_jacobian(&self.equalities, xs, "equality")?,
            ineq_jacobian: self.constraint_jacobian(&self.inequalities, xs, "inequality")?,
        })
    }

    fn numeric_derivatives(&self) -> bool {
        self.gradient.is_none()
            || self.equalities.as_ref().is_some_and(|c| c.jacobian.is_none())
            || self.inequalities.as_ref().is_some_and(|c| c.jacobian.is_none())
    }
}
