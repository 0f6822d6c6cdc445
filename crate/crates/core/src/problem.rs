//! Problem representation for programs with switching constraints.
//!
//! An [`MpscProblem`] bundles a smooth objective `f`, inequality constraints
//! `g(x) <= 0`, equality constraints `h(x) = 0` and `q` switching pairs
//! `G_l(x) * H_l(x) = 0`. Every map carries its own first derivatives.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A smooth scalar function with gradient.
pub trait ScalarFn: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// A smooth vector-valued map with Jacobian (`len() x n`).
pub trait VectorFn: Send + Sync {
    fn len(&self) -> usize;
    fn values(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

type ScalarClosure = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
type GradClosure = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacClosure = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// [`ScalarFn`] backed by a pair of closures.
pub struct ClosureScalar {
    value: Box<ScalarClosure>,
    gradient: Box<GradClosure>,
}

impl ClosureScalar {
    pub fn new(
        value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Box::new(value),
            gradient: Box::new(gradient),
        }
    }
}

impl ScalarFn for ClosureScalar {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }
}

/// [`VectorFn`] backed by a pair of closures.
pub struct ClosureMap {
    len: usize,
    values: Box<GradClosure>,
    jacobian: Box<JacClosure>,
}

impl ClosureMap {
    pub fn new(
        len: usize,
        values: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            len,
            values: Box::new(values),
            jacobian: Box::new(jacobian),
        }
    }
}

impl VectorFn for ClosureMap {
    fn len(&self) -> usize {
        self.len
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.values)(x)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(x)
    }
}

/// The map with no components.
pub struct EmptyMap;

impl VectorFn for EmptyMap {
    fn len(&self) -> usize {
        0
    }

    fn values(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, x.len())
    }
}

/// Affine map `x -> A x + b`.
pub struct AffineMap {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl VectorFn for AffineMap {
    fn len(&self) -> usize {
        self.b.len()
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
}

impl<T: ScalarFn + ?Sized> ScalarFn for Arc<T> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (**self).value(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).gradient(x)
    }
}

impl<T: VectorFn + ?Sized> VectorFn for Arc<T> {
    fn len(&self) -> usize {
        (**self).len()
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).values(x)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).jacobian(x)
    }
}

/// Quadratic `x^T Q x + c^T x + d`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl ScalarFn for Quadratic {
    fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x)) + self.c.dot(x) + self.d
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + self.q.tr_mul(x) + &self.c
    }
}

/// Vertical concatenation of maps over the same variables.
pub struct StackMap(pub Vec<Arc<dyn VectorFn>>);

impl VectorFn for StackMap {
    fn len(&self) -> usize {
        self.0.iter().map(|m| m.len()).sum()
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        let mut at = 0;
        for m in &self.0 {
            let v = m.values(x);
            out.rows_mut(at, v.len()).copy_from(&v);
            at += v.len();
        }
        out
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.len(), x.len());
        let mut at = 0;
        for m in &self.0 {
            let j = m.jacobian(x);
            out.rows_mut(at, j.nrows()).copy_from(&j);
            at += j.nrows();
        }
        out
    }
}

/// A map of the leading `inner_n` variables, viewed as a map of `n >= inner_n`.
pub struct Lifted<T> {
    pub inner: T,
    pub inner_n: usize,
}

impl<T> Lifted<T> {
    fn head(&self, x: &DVector<f64>) -> DVector<f64> {
        x.rows(0, self.inner_n).into_owned()
    }
}

impl<T: VectorFn> VectorFn for Lifted<T> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.values(&self.head(x))
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let j = self.inner.jacobian(&self.head(x));
        let mut out = DMatrix::zeros(j.nrows(), x.len());
        out.columns_mut(0, self.inner_n).copy_from(&j);
        out
    }
}

impl<T: ScalarFn> ScalarFn for Lifted<T> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.inner.value(&self.head(x))
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let g = self.inner.gradient(&self.head(x));
        let mut out = DVector::zeros(x.len());
        out.rows_mut(0, self.inner_n).copy_from(&g);
        out
    }
}

/// A reference point with its objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownSolution {
    pub x: DVector<f64>,
    pub objective: f64,
}

/// A mathematical program with switching constraints.
///
/// Immutable after construction; clones share the underlying evaluators.
#[derive(Clone)]
pub struct MpscProblem {
    name: String,
    n: usize,
    objective: Arc<dyn ScalarFn>,
    g: Arc<dyn VectorFn>,
    h: Arc<dyn VectorFn>,
    switch_g: Arc<dyn VectorFn>,
    switch_h: Arc<dyn VectorFn>,
    /// Reference points (optima or other notable points).
    pub known_solutions: Vec<KnownSolution>,
    /// Box `[lo, hi]` (per coordinate) used to draw random starting points.
    pub start_box: (DVector<f64>, DVector<f64>),
    /// Starting points shipped with the problem.
    pub starts: Vec<DVector<f64>>,
}

impl fmt::Debug for MpscProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MpscProblem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m())
            .field("p", &self.p())
            .field("q", &self.q())
            .finish()
    }
}

impl MpscProblem {
    pub fn builder(
        name: impl Into<String>,
        n: usize,
        objective: impl ScalarFn + 'static,
    ) -> MpscBuilder {
        MpscBuilder {
            name: name.into(),
            n,
            objective: Arc::new(objective),
            g: Arc::new(EmptyMap),
            h: Arc::new(EmptyMap),
            switch_g: Arc::new(EmptyMap),
            switch_h: Arc::new(EmptyMap),
            known_solutions: Vec::new(),
            start_box: None,
            starts: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.g.len()
    }

    pub fn p(&self) -> usize {
        self.h.len()
    }

    pub fn q(&self) -> usize {
        self.switch_g.len()
    }

    pub fn objective(&self) -> &Arc<dyn ScalarFn> {
        &self.objective
    }

    pub fn ineq(&self) -> &Arc<dyn VectorFn> {
        &self.g
    }

    pub fn eq(&self) -> &Arc<dyn VectorFn> {
        &self.h
    }

    /// The `G` half of the switching pairs.
    pub fn switch_g(&self) -> &Arc<dyn VectorFn> {
        &self.switch_g
    }

    /// The `H` half of the switching pairs.
    pub fn switch_h(&self) -> &Arc<dyn VectorFn> {
        &self.switch_h
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub(crate) fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: x.len(),
                context: "point",
            });
        }
        Ok(())
    }

    /// Objective value at `x` without any checks.
    pub fn f(&self, x: &DVector<f64>) -> f64 {
        self.objective.value(x)
    }

    /// Largest violation of `g <= 0`, `h = 0` and `G_l H_l = 0`.
    pub fn feasibility_violation(&self, x: &DVector<f64>) -> f64 {
        let g = self.g.values(x);
        let h = self.h.values(x);
        let gv = g.iter().fold(0.0_f64, |acc, &v| acc.max(v));
        let hv = h.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()));
        gv.max(hv).max(self.switching_violation(x))
    }

    /// `max_l |G_l(x) H_l(x)|`.
    pub fn switching_violation(&self, x: &DVector<f64>) -> f64 {
        let gg = self.switch_g.values(x);
        let hh = self.switch_h.values(x);
        gg.iter()
            .zip(hh.iter())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a * b).abs()))
    }
}

pub struct MpscBuilder {
    name: String,
    n: usize,
    objective: Arc<dyn ScalarFn>,
    g: Arc<dyn VectorFn>,
    h: Arc<dyn VectorFn>,
    switch_g: Arc<dyn VectorFn>,
    switch_h: Arc<dyn VectorFn>,
    known_solutions: Vec<KnownSolution>,
    start_box: Option<(DVector<f64>, DVector<f64>)>,
    starts: Vec<DVector<f64>>,
}

impl MpscBuilder {
    pub fn inequalities(mut self, g: impl VectorFn + 'static) -> Self {
        self.g = Arc::new(g);
        self
    }

    pub fn equalities(mut self, h: impl VectorFn + 'static) -> Self {
        self.h = Arc::new(h);
        self
    }

    pub fn switching(
        mut self,
        big_g: impl VectorFn + 'static,
        big_h: impl VectorFn + 'static,
    ) -> Self {
        self.switch_g = Arc::new(big_g);
        self.switch_h = Arc::new(big_h);
        self
    }

    pub fn known_solution(mut self, x: &[f64], objective: f64) -> Self {
        self.known_solutions.push(KnownSolution {
            x: DVector::from_column_slice(x),
            objective,
        });
        self
    }

    pub fn start_box(mut self, lo: DVector<f64>, hi: DVector<f64>) -> Self {
        self.start_box = Some((lo, hi));
        self
    }

    pub fn start(mut self, x: DVector<f64>) -> Self {
        self.starts.push(x);
        self
    }

    pub fn build(self) -> Result<MpscProblem> {
        if self.n == 0 {
            return Err(Error::InvalidParameter(
                "problem dimension must be positive".into(),
            ));
        }
        if self.switch_g.len() != self.switch_h.len() {
            return Err(Error::DimensionMismatch {
                expected: self.switch_g.len(),
                actual: self.switch_h.len(),
                context: "switching pairs G/H",
            });
        }
        let start_box = match self.start_box {
            Some((lo, hi)) => {
                if lo.len() != self.n || hi.len() != self.n {
                    return Err(Error::DimensionMismatch {
                        expected: self.n,
                        actual: lo.len().min(hi.len()),
                        context: "start box",
                    });
                }
                (lo, hi)
            }
            None => (
                DVector::from_element(self.n, -1.0),
                DVector::from_element(self.n, 1.0),
            ),
        };
        for s in &self.starts {
            if s.len() != self.n {
                return Err(Error::DimensionMismatch {
                    expected: self.n,
                    actual: s.len(),
                    context: "starting point",
                });
            }
        }
        Ok(MpscProblem {
            name: self.name,
            n: self.n,
            objective: self.objective,
            g: self.g,
            h: self.h,
            switch_g: self.switch_g,
            switch_h: self.switch_h,
            known_solutions: self.known_solutions,
            start_box,
            starts: self.starts,
        })
    }
}

/// All function values and first derivatives at one point.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub f: f64,
    pub grad_f: DVector<f64>,
    pub g: DVector<f64>,
    pub jac_g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub jac_h: DMatrix<f64>,
    pub big_g: DVector<f64>,
    pub jac_big_g: DMatrix<f64>,
    pub big_h: DVector<f64>,
    pub jac_big_h: DMatrix<f64>,
}

impl EvalRecord {
    /// Largest absolute function value, used to scale activity tolerances.
    pub fn value_scale(&self) -> f64 {
        self.g
            .iter()
            .chain(self.h.iter())
            .chain(self.big_g.iter())
            .chain(self.big_h.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

/// Default activity tolerance `1e-8 * (1 + value scale)`.
pub fn default_activity_tol(record: &EvalRecord) -> f64 {
    1e-8 * (1.0 + record.value_scale())
}

fn ensure_finite<'a>(what: &str, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_jac(j: &DMatrix<f64>, rows: usize, n: usize, context: &'static str) -> Result<()> {
    if j.nrows() != rows || j.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: rows * n,
            actual: j.nrows() * j.ncols(),
            context,
        });
    }
    Ok(())
}

/// Evaluates every function and derivative of `problem` at `x`.
pub fn evaluate(problem: &MpscProblem, x: &DVector<f64>) -> Result<EvalRecord> {
    problem.check_dim(x)?;
    let n = problem.n();
    let f = problem.objective.value(x);
    let grad_f = problem.objective.gradient(x);
    if grad_f.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: grad_f.len(),
            context: "objective gradient",
        });
    }
    ensure_finite("objective", std::iter::once(&f).chain(grad_f.iter()))?;

    let mut blocks = Vec::with_capacity(4);
    for (map, ctx_v, ctx_j) in [
        (&problem.g, "g", "jacobian of g"),
        (&problem.h, "h", "jacobian of h"),
        (&problem.switch_g, "G", "jacobian of G"),
        (&problem.switch_h, "H", "jacobian of H"),
    ] {
        let v = map.values(x);
        if v.len() != map.len() {
            return Err(Error::DimensionMismatch {
                expected: map.len(),
                actual: v.len(),
                context: ctx_j,
            });
        }
        let j = map.jacobian(x);
        check_jac(&j, map.len(), n, ctx_j)?;
        ensure_finite(ctx_v, v.iter().chain(j.iter()))?;
        blocks.push((v, j));
    }
    let mut it = blocks.into_iter();
    let (g, jac_g) = it.next().unwrap();
    let (h, jac_h) = it.next().unwrap();
    let (big_g, jac_big_g) = it.next().unwrap();
    let (big_h, jac_big_h) = it.next().unwrap();
    Ok(EvalRecord {
        f,
        grad_f,
        g,
        jac_g,
        h,
        jac_h,
        big_g,
        jac_big_g,
        big_h,
        jac_big_h,
    })
}

/// Central finite-difference Jacobian of `map` at `x`.
pub fn fd_jacobian(map: &dyn VectorFn, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(map.len(), x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let orig = xp[j];
        xp[j] = orig + step;
        let plus = map.values(&xp);
        xp[j] = orig - step;
        let minus = map.values(&xp);
        xp[j] = orig;
        for i in 0..map.len() {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    jac
}

/// Central finite-difference gradient of `func` at `x`.
pub fn fd_gradient(func: &dyn ScalarFn, x: &DVector<f64>, step: f64) -> DVector<f64> {
    let mut grad = DVector::zeros(x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let orig = xp[j];
        xp[j] = orig + step;
        let plus = func.value(&xp);
        xp[j] = orig - step;
        let minus = func.value(&xp);
        xp[j] = orig;
        grad[j] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Relative error `|a - b| / max(1, |a|, |b|)`, maximised entrywise.
pub fn max_relative_error<'a>(
    a: impl IntoIterator<Item = &'a f64>,
    b: impl IntoIterator<Item = &'a f64>,
) -> f64 {
    a.into_iter().zip(b).fold(0.0_f64, |acc, (x, y)| {
        let scale = 1.0_f64.max(x.abs()).max(y.abs());
        acc.max((x - y).abs() / scale)
    })
}

/// Largest relative disagreement between analytic and finite-difference
/// derivatives of every map of `problem` at `x`.
pub fn derivative_check(problem: &MpscProblem, x: &DVector<f64>, step: f64) -> f64 {
    let g_an = problem.objective.gradient(x);
    let g_fd = fd_gradient(problem.objective.as_ref(), x, step);
    let mut worst = max_relative_error(g_an.iter(), g_fd.iter());
    for map in [&problem.g, &problem.h, &problem.switch_g, &problem.switch_h] {
        let an = map.jacobian(x);
        let fd = fd_jacobian(map.as_ref(), x, step);
        worst = worst.max(max_relative_error(an.iter(), fd.iter()));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::benchmarks::example_4_1;

    #[test]
    fn evaluate_example_at_unit_axis_point() {
        let p = example_4_1();
        let r = evaluate(&p, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(r.f, 0.5);
        assert_eq!(r.big_g[0], 1.0);
        assert_eq!(r.big_h[0], 0.0);
    }

    #[test]
    fn evaluate_example_at_origin() {
        let p = example_4_1();
        let r = evaluate(&p, &DVector::zeros(2)).unwrap();
        assert_eq!(r.f, 1.0);
        assert_eq!(r.grad_f.as_slice(), &[-1.0, -1.0]);
    }

    #[test]
    fn unconstrained_problem_has_empty_blocks() {
        let p = MpscProblem::builder(
            "quad",
            3,
            ClosureScalar::new(|x| x.norm_squared(), |x| 2.0 * x),
        )
        .build()
        .unwrap();
        let r = evaluate(&p, &DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(r.f, 14.0);
        assert_eq!(r.g.len() + r.h.len() + r.big_g.len() + r.big_h.len(), 0);
        assert_eq!(r.jac_g.shape(), (0, 3));
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let p = example_4_1();
        let err = evaluate(&p, &DVector::zeros(3)).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 2,
                actual: 3,
                ..
            }
        ));
    }

    #[test]
    fn non_finite_values_are_reported() {
        let p = MpscProblem::builder(
            "log",
            1,
            ClosureScalar::new(|x| x[0].ln(), |x| DVector::from_element(1, 1.0 / x[0])),
        )
        .build()
        .unwrap();
        let err = evaluate(&p, &DVector::from_element(1, -1.0)).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn mismatched_switching_maps_fail_to_build() {
        let err =
            MpscProblem::builder("bad", 1, ClosureScalar::new(|_| 0.0, |_| DVector::zeros(1)))
                .switching(
                    AffineMap {
                        a: DMatrix::from_element(1, 1, 1.0),
                        b: DVector::zeros(1),
                    },
                    EmptyMap,
                )
                .build()
                .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
