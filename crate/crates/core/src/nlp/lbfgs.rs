//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use nalgebra::DVector;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    /// Stop when the gradient infinity norm drops to this value.
    pub grad_tol: f64,
    /// Budget of function-and-gradient evaluations.
    pub max_evals: usize,
    pub armijo_c1: f64,
    pub backtrack: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-8,
            max_evals: 5000,
            armijo_c1: 1e-4,
            backtrack: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStop {
    GradientTolerance,
    EvalBudget,
    /// The line search could not decrease the function further.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub evals: usize,
    pub iterations: usize,
    pub stop: LbfgsStop,
}

/// Minimises `fun` from `x0`. `fun` returns the value and gradient; the
/// starting value must be finite. Non-finite trial values are treated as
/// failed Armijo tests.
pub fn minimize<F>(mut fun: F, x0: DVector<f64>, opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = x0;
    let (mut fx, mut gx) = fun(&x);
    let mut evals = 1;
    let mut iterations = 0;
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)> =
        VecDeque::with_capacity(opts.memory);

    let stop = loop {
        if gx.amax() <= opts.grad_tol {
            break LbfgsStop::GradientTolerance;
        }
        if evals >= opts.max_evals {
            break LbfgsStop::EvalBudget;
        }
        let mut d = two_loop(&gx, &pairs);
        let mut slope = gx.dot(&d);
        if !(slope < 0.0) {
            pairs.clear();
            d = -&gx;
            slope = -gx.norm_squared();
        }
        // First iteration without curvature information: keep the step modest.
        let mut step = if pairs.is_empty() {
            (1.0 / gx.amax()).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        while evals < opts.max_evals {
            let trial = &x + &d * step;
            let (ft, gt) = fun(&trial);
            evals += 1;
            if ft.is_finite()
                && gt.iter().all(|v| v.is_finite())
                && ft <= fx + opts.armijo_c1 * step * slope
            {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= opts.backtrack;
            if step * d.amax() <= 1e-16 * (1.0 + x.amax()) {
                break;
            }
        }
        let Some((xn, fnew, gn)) = accepted else {
            if pairs.is_empty() {
                break if evals >= opts.max_evals {
                    LbfgsStop::EvalBudget
                } else {
                    LbfgsStop::Stalled
                };
            }
            // Retry once along steepest descent.
            pairs.clear();
            continue;
        };
        let s = &xn - &x;
        let y = &gn - &gx;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - fnew;
        x = xn;
        fx = fnew;
        gx = gn;
        iterations += 1;
        if decrease <= 1e-16 * fx.abs().max(1.0) && gx.amax() > opts.grad_tol && iterations > 3 {
            // No measurable progress; one more attempt from steepest descent
            // happens through the memory reset below.
            if pairs.is_empty() {
                break LbfgsStop::Stalled;
            }
            pairs.clear();
        }
    };
    LbfgsOutcome {
        x,
        value: fx,
        gradient: gx,
        evals,
        iterations,
        stop,
    }
}

fn two_loop(g: &DVector<f64>, pairs: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = s.dot(y) / y.norm_squared();
        q *= gamma;
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    -q
}
