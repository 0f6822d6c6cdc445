//! Augmented-Lagrangian NLP subsolver.
//!
//! Inequalities use the PHR form, the inner problems are solved by L-BFGS
//! and the multipliers are updated first-order after every inner solve.

pub mod lbfgs;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::bounded_lstsq;
use crate::relax::NlpProblem;
use lbfgs::{minimize, LbfgsOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlpOptions {
    pub tol_kkt: f64,
    pub max_outer: usize,
    /// Evaluation budget of each inner minimisation.
    pub max_inner_evals: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Upper bound on the magnitude of every multiplier estimate.
    pub multiplier_safeguard: f64,
    pub lbfgs_memory: usize,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-6,
            max_outer: 50,
            max_inner_evals: 5000,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e12,
            multiplier_safeguard: 1e8,
            lbfgs_memory: 10,
        }
    }
}

impl NlpOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol_kkt", self.tol_kkt),
            ("penalty_init", self.penalty_init),
            ("penalty_max", self.penalty_max),
            ("multiplier_safeguard", self.multiplier_safeguard),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "penalty_growth must exceed 1, got {}",
                self.penalty_growth
            )));
        }
        if self.max_outer == 0 || self.max_inner_evals == 0 || self.lbfgs_memory == 0 {
            return Err(Error::InvalidParameter(
                "iteration budgets must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlpStatus {
    Converged,
    MaxIter,
    UnboundedSuspected,
    Failed,
}

impl NlpStatus {
    pub fn label(self) -> &'static str {
        match self {
            NlpStatus::Converged => "converged",
            NlpStatus::MaxIter => "max_iter",
            NlpStatus::UnboundedSuspected => "unbounded_suspected",
            NlpStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    /// Evaluations of the augmented Lagrangian (value and gradient).
    pub evaluations: usize,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
}

impl std::ops::AddAssign for EvalCounts {
    fn add_assign(&mut self, o: Self) {
        self.evaluations += o.evaluations;
        self.inner_iterations += o.inner_iterations;
        self.outer_iterations += o.outer_iterations;
    }
}

#[derive(Debug, Clone)]
pub struct NlpResult {
    pub x: DVector<f64>,
    pub lambda_ineq: DVector<f64>,
    pub rho_eq: DVector<f64>,
    pub kkt_residual: f64,
    pub feas_violation: f64,
    pub status: NlpStatus,
    pub evals: EvalCounts,
}

fn check_point(nlp: &NlpProblem, x: &DVector<f64>) -> Result<()> {
    if x.len() != nlp.n() {
        return Err(Error::DimensionMismatch {
            expected: nlp.n(),
            actual: x.len(),
            context: "point",
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("starting point".into()));
    }
    Ok(())
}

/// Components of the KKT residual at `(x, lambda, rho)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktParts {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktParts {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.feasibility)
            .max(self.complementarity)
    }
}

/// Stationarity, feasibility and complementarity violations (infinity norms).
pub fn kkt_parts(
    nlp: &NlpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    rho: &DVector<f64>,
) -> Result<KktParts> {
    if x.len() != nlp.n() {
        return Err(Error::DimensionMismatch {
            expected: nlp.n(),
            actual: x.len(),
            context: "point",
        });
    }
    if lambda.len() != nlp.n_ineq() {
        return Err(Error::DimensionMismatch {
            expected: nlp.n_ineq(),
            actual: lambda.len(),
            context: "inequality multipliers",
        });
    }
    if rho.len() != nlp.n_eq() {
        return Err(Error::DimensionMismatch {
            expected: nlp.n_eq(),
            actual: rho.len(),
            context: "equality multipliers",
        });
    }
    if lambda.iter().any(|&l| l < 0.0) {
        return Err(Error::InvalidParameter(
            "inequality multipliers must be nonnegative".into(),
        ));
    }
    let c = nlp.ineq().values(x);
    let e = nlp.eq().values(x);
    let grad = nlp.objective().gradient(x)
        + nlp.ineq().jacobian(x).tr_mul(lambda)
        + nlp.eq().jacobian(x).tr_mul(rho);
    let feas = c
        .iter()
        .map(|v| v.max(0.0))
        .chain(e.iter().map(|v| v.abs()))
        .fold(0.0_f64, f64::max);
    let compl = c
        .iter()
        .zip(lambda.iter())
        .map(|(c, l)| (c * l).abs())
        .fold(0.0_f64, f64::max);
    Ok(KktParts {
        stationarity: grad.amax(),
        feasibility: feas,
        complementarity: compl,
    })
}

/// `max(|grad L|_inf, feasibility violation, max_i |lambda_i c_i|)`.
pub fn kkt_residual(
    nlp: &NlpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    rho: &DVector<f64>,
) -> Result<f64> {
    Ok(kkt_parts(nlp, x, lambda, rho)?.max())
}

/// Largest violation `max(c^+, |e|)`.
pub fn feasibility_violation(nlp: &NlpProblem, x: &DVector<f64>) -> f64 {
    let c = nlp.ineq().values(x);
    let e = nlp.eq().values(x);
    c.iter()
        .map(|v| v.max(0.0))
        .chain(e.iter().map(|v| v.abs()))
        .fold(0.0_f64, f64::max)
}

/// Least-squares multipliers at `x` over the rows with `c_i >= -active_tol`;
/// inactive rows get zero.
pub fn estimate_multipliers(
    nlp: &NlpProblem,
    x: &DVector<f64>,
    active_tol: f64,
) -> (DVector<f64>, DVector<f64>) {
    let c = nlp.ineq().values(x);
    let active: Vec<usize> = (0..c.len()).filter(|&i| c[i] >= -active_tol).collect();
    let jc = nlp.ineq().jacobian(x);
    let je = nlp.eq().jacobian(x);
    let n = nlp.n();
    let k = active.len() + je.nrows();
    let mut a = nalgebra::DMatrix::zeros(n, k);
    for (col, &i) in active.iter().enumerate() {
        a.set_column(col, &jc.row(i).transpose());
    }
    for j in 0..je.nrows() {
        a.set_column(active.len() + j, &je.row(j).transpose());
    }
    let nonneg: Vec<bool> = (0..k).map(|j| j < active.len()).collect();
    let b = -nlp.objective().gradient(x);
    let sol = bounded_lstsq(&a, &b, &nonneg);
    let mut lambda = DVector::zeros(c.len());
    for (col, &i) in active.iter().enumerate() {
        lambda[i] = sol[col];
    }
    let rho = DVector::from_fn(je.nrows(), |j, _| sol[active.len() + j]);
    (lambda, rho)
}

/// Solves `nlp` from `x0` with zero initial multipliers.
pub fn solve_nlp(nlp: &NlpProblem, x0: &DVector<f64>, opts: &NlpOptions) -> Result<NlpResult> {
    solve_nlp_warm(nlp, x0, None, None, opts)
}

struct AugLag<'a> {
    nlp: &'a NlpProblem,
    lambda: DVector<f64>,
    rho: DVector<f64>,
    sigma: f64,
}

impl AugLag<'_> {
    fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let f = self.nlp.objective().value(x);
        let mut grad = self.nlp.objective().gradient(x);
        let mut val = f;
        let s = self.sigma;
        if self.nlp.n_ineq() > 0 {
            let c = self.nlp.ineq().values(x);
            let shifted = DVector::from_fn(c.len(), |i, _| (self.lambda[i] + s * c[i]).max(0.0));
            for i in 0..c.len() {
                let lr = self.lambda[i] / s;
                val += 0.5 * s * ((c[i] + lr).max(0.0).powi(2) - lr * lr);
            }
            if shifted.iter().any(|&v| v != 0.0) {
                grad += self.nlp.ineq().jacobian(x).tr_mul(&shifted);
            }
        }
        if self.nlp.n_eq() > 0 {
            let e = self.nlp.eq().values(x);
            val += self.rho.dot(&e) + 0.5 * s * e.norm_squared();
            grad += self.nlp.eq().jacobian(x).tr_mul(&(&self.rho + &e * s));
        }
        (val, grad)
    }
}

/// Residual after replacing the multipliers with least-squares estimates when
/// that certifies the point better.
fn certify(
    nlp: &NlpProblem,
    x: &DVector<f64>,
    lam: DVector<f64>,
    rho: DVector<f64>,
    tol: f64,
) -> (DVector<f64>, DVector<f64>, f64) {
    let r = kkt_residual(nlp, x, &lam, &rho).unwrap_or(f64::INFINITY);
    if r <= 1e-3 * tol {
        return (lam, rho, r);
    }
    let (l2, r2) = estimate_multipliers(nlp, x, (10.0 * tol).max(1e-8));
    let res2 = kkt_residual(nlp, x, &l2, &r2).unwrap_or(f64::INFINITY);
    if res2 < r {
        (l2, r2, res2)
    } else {
        (lam, rho, r)
    }
}

/// [`solve_nlp`] with optional initial multipliers. Negative inequality
/// multipliers are clipped to zero; mismatched lengths fall back to zero.
pub fn solve_nlp_warm(
    nlp: &NlpProblem,
    x0: &DVector<f64>,
    lambda0: Option<&DVector<f64>>,
    rho0: Option<&DVector<f64>>,
    opts: &NlpOptions,
) -> Result<NlpResult> {
    opts.validate()?;
    check_point(nlp, x0)?;
    let mi = nlp.n_ineq();
    let me = nlp.n_eq();
    let lambda = match lambda0 {
        Some(l) if l.len() == mi => l.map(|v| v.max(0.0).min(opts.multiplier_safeguard)),
        _ => DVector::zeros(mi),
    };
    let rho = match rho0 {
        Some(r) if r.len() == me => {
            r.map(|v| v.clamp(-opts.multiplier_safeguard, opts.multiplier_safeguard))
        }
        _ => DVector::zeros(me),
    };
    let mut al = AugLag {
        nlp,
        lambda,
        rho,
        sigma: opts.penalty_init,
    };
    let (v0, g0) = al.eval(x0);
    if !v0.is_finite() || !g0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{}: evaluation at the starting point",
            nlp.provenance.source
        )));
    }

    let mut x = x0.clone();
    let mut counts = EvalCounts::default();
    let mut best: Option<(f64, NlpResult)> = None;
    let mut v_prev = f64::INFINITY;
    let mut status = NlpStatus::MaxIter;
    let inner_tol = 0.1 * opts.tol_kkt;

    for _ in 0..opts.max_outer {
        counts.outer_iterations += 1;
        let lopts = LbfgsOptions {
            memory: opts.lbfgs_memory,
            grad_tol: inner_tol,
            max_evals: opts.max_inner_evals,
            ..Default::default()
        };
        let out = minimize(|z| al.eval(z), x.clone(), &lopts);
        counts.evaluations += out.evals;
        counts.inner_iterations += out.iterations;
        x = out.x;

        let c = nlp.ineq().values(&x);
        let e = nlp.eq().values(&x);
        let s = al.sigma;
        let v = c
            .iter()
            .zip(al.lambda.iter())
            .map(|(ci, li)| ci.max(-li / s).abs())
            .chain(e.iter().map(|ei| ei.abs()))
            .fold(0.0_f64, f64::max);
        let safe = opts.multiplier_safeguard;
        al.lambda = DVector::from_fn(mi, |i, _| (al.lambda[i] + s * c[i]).clamp(0.0, safe));
        al.rho = DVector::from_fn(me, |j, _| (al.rho[j] + s * e[j]).clamp(-safe, safe));

        let (lam, rho, res) = certify(nlp, &x, al.lambda.clone(), al.rho.clone(), opts.tol_kkt);
        let feas = feasibility_violation(nlp, &x);
        let candidate = NlpResult {
            x: x.clone(),
            lambda_ineq: lam,
            rho_eq: rho,
            kkt_residual: res,
            feas_violation: feas,
            status: NlpStatus::MaxIter,
            evals: counts,
        };
        if best.as_ref().is_none_or(|(r, _)| res < *r) {
            best = Some((res, candidate));
        }
        if res <= opts.tol_kkt && feas <= opts.tol_kkt {
            status = NlpStatus::Converged;
            break;
        }
        let fx = nlp.objective().value(&x);
        if fx < -1e20 || x.amax() > 1e15 {
            status = NlpStatus::UnboundedSuspected;
            break;
        }
        if !x.iter().all(|v| v.is_finite()) {
            status = NlpStatus::Failed;
            break;
        }
        if v > 0.5 * v_prev {
            al.sigma = (al.sigma * opts.penalty_growth).min(opts.penalty_max);
        }
        v_prev = v;
    }
    let (_, mut result) = best.expect("at least one outer iteration");
    result.status = if status == NlpStatus::Converged && result.kkt_residual <= opts.tol_kkt {
        NlpStatus::Converged
    } else {
        status
    };
    result.evals = counts;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::benchmarks::example_4_1;
    use crate::problem::{AffineMap, ClosureScalar, Quadratic};
    use crate::relax::{build_relaxed, SchemeKind};
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn shifted_square() -> NlpProblem {
        NlpProblem::unconstrained(
            "shifted_square",
            1,
            Arc::new(ClosureScalar::new(
                |x| (x[0] - 1.0).powi(2),
                |x| dv(&[2.0 * (x[0] - 1.0)]),
            )),
        )
    }

    fn bounded_square() -> NlpProblem {
        NlpProblem::new(
            "bounded_square",
            1,
            Arc::new(ClosureScalar::new(|x| x[0] * x[0], |x| dv(&[2.0 * x[0]]))),
            Arc::new(AffineMap {
                a: DMatrix::from_element(1, 1, -1.0),
                b: dv(&[1.0]),
            }),
            Arc::new(crate::problem::EmptyMap),
        )
    }

    #[test]
    fn unconstrained_quadratic() {
        let r = solve_nlp(&shifted_square(), &dv(&[0.0]), &NlpOptions::default()).unwrap();
        assert_eq!(r.status, NlpStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!(r.kkt_residual <= 1e-6);
    }

    #[test]
    fn one_sided_bound() {
        let r = solve_nlp(&bounded_square(), &dv(&[3.0]), &NlpOptions::default()).unwrap();
        assert_eq!(r.status, NlpStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!((r.lambda_ineq[0] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn residual_examples() {
        assert_eq!(
            kkt_residual(&bounded_square(), &dv(&[1.0]), &dv(&[2.0]), &dv(&[])).unwrap(),
            0.0
        );
        assert_eq!(
            kkt_residual(&shifted_square(), &dv(&[0.0]), &dv(&[]), &dv(&[])).unwrap(),
            2.0
        );
        assert!(kkt_residual(&bounded_square(), &dv(&[1.0]), &dv(&[-1.0]), &dv(&[])).is_err());
        assert!(kkt_residual(&bounded_square(), &dv(&[1.0, 2.0]), &dv(&[0.0]), &dv(&[])).is_err());
    }

    #[test]
    fn scholtes_surrogate_reaches_diagonal_point() {
        let nlp = build_relaxed(&example_4_1(), &SchemeKind::Scholtes, 0.01).unwrap();
        let r = solve_nlp(&nlp, &dv(&[1.0, 1.0]), &NlpOptions::default()).unwrap();
        assert_eq!(r.status, NlpStatus::Converged);
        assert!(
            (r.x[0] - 0.1).abs() < 1e-4 && (r.x[1] - 0.1).abs() < 1e-4,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn solves_are_deterministic() {
        let nlp = build_relaxed(&example_4_1(), &SchemeKind::Ks, 0.01).unwrap();
        let a = solve_nlp(&nlp, &dv(&[0.3, 0.7]), &NlpOptions::default()).unwrap();
        let b = solve_nlp(&nlp, &dv(&[0.3, 0.7]), &NlpOptions::default()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.lambda_ineq, b.lambda_ineq);
        assert_eq!(a.evals, b.evals);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(solve_nlp(&shifted_square(), &dv(&[f64::NAN]), &NlpOptions::default()).is_err());
        let bad = NlpOptions {
            penalty_growth: 1.0,
            ..Default::default()
        };
        assert!(solve_nlp(&shifted_square(), &dv(&[0.0]), &bad).is_err());
    }

    /// Active-set reference for `min 1/2 x^T P x + c^T x` s.t. `A x <= b`:
    /// enumerate active sets, keep the primal-dual feasible one.
    fn qp_reference(
        p: &DMatrix<f64>,
        c: &DVector<f64>,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
    ) -> DVector<f64> {
        let n = p.nrows();
        let m = a.nrows();
        for mask in 0u32..(1 << m) {
            let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            let k = act.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(p);
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(&(-c));
            for (r, &i) in act.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + r, j)] = a[(i, j)];
                    kkt[(j, n + r)] = a[(i, j)];
                }
                rhs[n + r] = b[i];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                continue;
            };
            let x = sol.rows(0, n).into_owned();
            let feasible = (a * &x - b).iter().all(|&v| v <= 1e-9);
            let dual_ok = (0..k).all(|r| sol[n + r] >= -1e-9);
            if feasible && dual_ok {
                return x;
            }
        }
        panic!("no reference solution");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_convex_qps(
            n in 2usize..6,
            m in 1usize..4,
            entries in prop::collection::vec(-1.0f64..1.0, 120),
        ) {
            let mut it = entries.into_iter().cycle();
            let f = DMatrix::from_fn(n, n, |_, _| it.next().unwrap());
            let p = f.tr_mul(&f) + DMatrix::identity(n, n) * 0.5;
            let c = DVector::from_fn(n, |_, _| 2.0 * it.next().unwrap());
            let a = DMatrix::from_fn(m, n, |_, _| it.next().unwrap());
            // The origin is strictly feasible.
            let b = DVector::from_fn(m, |_, _| 0.1 + it.next().unwrap().abs());
            let nlp = NlpProblem::new(
                "qp",
                n,
                Arc::new(Quadratic { q: &p * 0.5, c: c.clone(), d: 0.0 }),
                Arc::new(AffineMap { a: a.clone(), b: -&b }),
                Arc::new(crate::problem::EmptyMap),
            );
            let r = solve_nlp(&nlp, &DVector::zeros(n), &NlpOptions::default()).unwrap();
            prop_assert_eq!(r.status, NlpStatus::Converged);
            prop_assert!(r.kkt_residual <= 1e-6);
            prop_assert!(r.lambda_ineq.iter().all(|&l| l >= 0.0));
            let reference = qp_reference(&p, &c, &a, &b);
            prop_assert!((&r.x - &reference).amax() < 1e-4, "{} vs {}", r.x, reference);
        }
    }
}
