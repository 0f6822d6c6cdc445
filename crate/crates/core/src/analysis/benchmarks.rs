//! Built-in benchmark problems.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::problem::{
    AffineMap, ClosureMap, ClosureScalar, EmptyMap, Lifted, MpscProblem, Quadratic, ScalarFn,
    StackMap, VectorFn,
};

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn coord_map(n: usize, idx: usize) -> AffineMap {
    let mut a = DMatrix::zeros(1, n);
    a[(0, idx)] = 1.0;
    AffineMap {
        a,
        b: DVector::zeros(1),
    }
}

/// `1/2 (x1 - 1)^2 + 1/2 (x2 - 1)^2` with `x1 x2 = 0`.
///
/// Optima `(1, 0)` and `(0, 1)` with value `1/2`; the origin is weakly
/// stationary only.
pub fn example_4_1() -> MpscProblem {
    let objective = ClosureScalar::new(
        |x| 0.5 * (x[0] - 1.0).powi(2) + 0.5 * (x[1] - 1.0).powi(2),
        |x| dv(&[x[0] - 1.0, x[1] - 1.0]),
    );
    MpscProblem::builder("example_4_1", 2, objective)
        .switching(coord_map(2, 0), coord_map(2, 1))
        .known_solution(&[1.0, 0.0], 0.5)
        .known_solution(&[0.0, 1.0], 0.5)
        .start_box(dv(&[0.0, 0.0]), dv(&[1.0, 1.0]))
        .build()
        .expect("static benchmark")
}

/// `x1 x2 - x1 - x2` with `x1^2 + x2^2 <= 1` and `x1 x2 = 0`.
///
/// Optima `(1, 0)` and `(0, 1)` with value `-1`, both strongly stationary.
pub fn example_su() -> MpscProblem {
    let objective = ClosureScalar::new(
        |x| x[0] * x[1] - x[0] - x[1],
        |x| dv(&[x[1] - 1.0, x[0] - 1.0]),
    );
    let disc = ClosureMap::new(
        1,
        |x| dv(&[x[0] * x[0] + x[1] * x[1] - 1.0]),
        |x| DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]]),
    );
    MpscProblem::builder("example_su", 2, objective)
        .inequalities(disc)
        .switching(coord_map(2, 0), coord_map(2, 1))
        .known_solution(&[1.0, 0.0], -1.0)
        .known_solution(&[0.0, 1.0], -1.0)
        .start_box(dv(&[0.0, 0.0]), dv(&[1.0, 1.0]))
        .build()
        .expect("static benchmark")
}

/// Either-or program in `(x1, x2, z1..z4)`:
/// `(x1 - 8)^2 + (x2 + 3)^2` with `z <= 0`,
/// `(x1 - 2 x2 + 4 - z1)(x1 - 2 - z2) = 0` and
/// `(x1^2 - 4 x2 - z3)((x1 - 3)^2 + (x2 - 1)^2 - 10 - z4) = 0`.
///
/// Global minimiser `x = (2, -2)` (value 37), local minimiser `x = (4, 4)`
/// (value 65).
pub fn either_or_e2() -> MpscProblem {
    let objective = ClosureScalar::new(
        |x| (x[0] - 8.0).powi(2) + (x[1] + 3.0).powi(2),
        |x| {
            let mut g = DVector::zeros(6);
            g[0] = 2.0 * (x[0] - 8.0);
            g[1] = 2.0 * (x[1] + 3.0);
            g
        },
    );
    let mut za = DMatrix::zeros(4, 6);
    for i in 0..4 {
        za[(i, 2 + i)] = 1.0;
    }
    let z_nonpos = AffineMap {
        a: za,
        b: DVector::zeros(4),
    };
    let big_g = ClosureMap::new(
        2,
        |x| {
            dv(&[
                x[0] - 2.0 * x[1] + 4.0 - x[2],
                x[0] * x[0] - 4.0 * x[1] - x[4],
            ])
        },
        |x| {
            DMatrix::from_row_slice(
                2,
                6,
                &[
                    1.0,
                    -2.0,
                    -1.0,
                    0.0,
                    0.0,
                    0.0,
                    2.0 * x[0],
                    -4.0,
                    0.0,
                    0.0,
                    -1.0,
                    0.0,
                ],
            )
        },
    );
    let big_h = ClosureMap::new(
        2,
        |x| {
            dv(&[
                x[0] - 2.0 - x[3],
                (x[0] - 3.0).powi(2) + (x[1] - 1.0).powi(2) - 10.0 - x[5],
            ])
        },
        |x| {
            DMatrix::from_row_slice(
                2,
                6,
                &[
                    1.0,
                    0.0,
                    0.0,
                    -1.0,
                    0.0,
                    0.0,
                    2.0 * (x[0] - 3.0),
                    2.0 * (x[1] - 1.0),
                    0.0,
                    0.0,
                    0.0,
                    -1.0,
                ],
            )
        },
    );
    MpscProblem::builder("either_or_e2", 6, objective)
        .inequalities(z_nonpos)
        .switching(big_g, big_h)
        .known_solution(&[2.0, -2.0, 0.0, 0.0, 0.0, 0.0], 37.0)
        .known_solution(&[4.0, 4.0, 0.0, 0.0, 0.0, 0.0], 65.0)
        .start_box(DVector::zeros(6), DVector::from_element(6, 1.0))
        .build()
        .expect("static benchmark")
}

/// The base program handed to [`semicontinuous_reformulate`]: objective and
/// constraints in the original variables `x` only.
#[derive(Clone)]
pub struct SemicontinuousBase {
    pub name: String,
    pub n: usize,
    pub objective: Arc<dyn ScalarFn>,
    pub ineq: Arc<dyn VectorFn>,
    pub eq: Arc<dyn VectorFn>,
}

impl SemicontinuousBase {
    pub fn unconstrained(name: impl Into<String>, n: usize, objective: Arc<dyn ScalarFn>) -> Self {
        Self {
            name: name.into(),
            n,
            objective,
            ineq: Arc::new(EmptyMap),
            eq: Arc::new(EmptyMap),
        }
    }
}

/// Rewrites `x_i = 0 or x_i in [l_i, u_i]` with one slack vector `y`:
/// variables `(x, y)`, inequalities `[base g; x - u; -y]`, equalities
/// `base h`, switching pairs `G = x`, `H = x - l - y`.
pub fn semicontinuous_reformulate(
    base: SemicontinuousBase,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<MpscProblem> {
    let n = base.n;
    for (v, ctx) in [(lower, "lower bounds"), (upper, "upper bounds")] {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: v.len(),
                context: ctx,
            });
        }
    }
    for i in 0..n {
        if !(upper[i] >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "upper bound u[{i}] = {} is negative",
                upper[i]
            )));
        }
        if !(lower[i] >= 0.0) || lower[i] > upper[i] {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= l[{i}] <= u[{i}], got l = {}, u = {}",
                lower[i], upper[i]
            )));
        }
    }
    let id = DMatrix::<f64>::identity(n, n);
    let zero = DMatrix::<f64>::zeros(n, n);
    let block = |left: &DMatrix<f64>, right: &DMatrix<f64>| {
        let mut a = DMatrix::zeros(n, 2 * n);
        a.columns_mut(0, n).copy_from(left);
        a.columns_mut(n, n).copy_from(right);
        a
    };
    let x_le_u = AffineMap {
        a: block(&id, &zero),
        b: -upper,
    };
    let y_ge_0 = AffineMap {
        a: block(&zero, &(-&id)),
        b: DVector::zeros(n),
    };
    let ineq = StackMap(vec![
        Arc::new(Lifted {
            inner: base.ineq.clone(),
            inner_n: n,
        }),
        Arc::new(x_le_u),
        Arc::new(y_ge_0),
    ]);
    let big_g = AffineMap {
        a: block(&id, &zero),
        b: DVector::zeros(n),
    };
    let big_h = AffineMap {
        a: block(&id, &(-&id)),
        b: -lower,
    };
    let mut lo = DVector::zeros(2 * n);
    let mut hi = DVector::from_element(2 * n, 1.0);
    for i in 0..n {
        lo[i] = 0.0;
        hi[i] = upper[i];
    }
    lo.rows_mut(n, n).fill(0.0);
    MpscProblem::builder(
        base.name,
        2 * n,
        Lifted {
            inner: base.objective.clone(),
            inner_n: n,
        },
    )
    .inequalities(ineq)
    .equalities(Lifted {
        inner: base.eq.clone(),
        inner_n: n,
    })
    .switching(big_g, big_h)
    .start_box(lo, hi)
    .build()
}

/// Data of a seeded portfolio instance
/// `min x^T Q x` s.t. `e^T x = 1`, `mu^T x >= rho`, `x_i = 0 or x_i in [l_i, u_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioInstance {
    pub q: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub rho: f64,
    /// A feasible portfolio used to place `rho` and `u`.
    pub planted: DVector<f64>,
    pub seed: u64,
}

/// Draws a portfolio instance with `n >= 2` assets from a ChaCha8 stream.
///
/// `Q = B^T B / n + D` is positive definite. A planted portfolio on
/// `max(2, n/2)` assets is built first; `u` is raised to cover it and
/// `rho = 0.95 mu^T x_planted`, so the instance is feasible by construction.
pub fn portfolio_instance(n: usize, seed: u64) -> Result<PortfolioInstance> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "portfolio needs n >= 2, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = n as f64;
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut q = b.tr_mul(&b) / nf;
    for i in 0..n {
        q[(i, i)] += rng.gen_range(0.01..0.1);
    }
    q = (&q + q.transpose()) * 0.5;
    let mu = DVector::from_fn(n, |_, _| rng.gen_range(0.002..0.02));
    let lower = DVector::from_fn(n, |_, _| rng.gen_range(0.4..1.2) / nf);
    let mut upper = DVector::from_fn(n, |i, _| lower[i] + rng.gen_range(0.2..0.6));

    let k = (n / 2).max(2);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let chosen = &idx[..k];
    let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let wsum: f64 = weights.iter().sum();
    let lsum: f64 = chosen.iter().map(|&i| lower[i]).sum();
    let mut planted = DVector::zeros(n);
    for (w, &i) in weights.iter().zip(chosen) {
        planted[i] = lower[i] + w / wsum * (1.0 - lsum);
        upper[i] = upper[i].max(planted[i]);
    }
    let rho = 0.95 * mu.dot(&planted);
    Ok(PortfolioInstance {
        q,
        mu,
        lower,
        upper,
        rho,
        planted,
        seed,
    })
}

impl PortfolioInstance {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    /// The planted point lifted to `(x, y)` with `y = max(x - l, 0)` on its support.
    pub fn planted_point(&self) -> DVector<f64> {
        let n = self.n();
        let mut z = DVector::zeros(2 * n);
        for i in 0..n {
            z[i] = self.planted[i];
            if self.planted[i] > 0.0 {
                z[n + i] = (self.planted[i] - self.lower[i]).max(0.0);
            }
        }
        z
    }

    pub fn to_problem(&self) -> Result<MpscProblem> {
        let n = self.n();
        let mut a = DMatrix::zeros(1, n);
        a.row_mut(0).copy_from(&(-self.mu.transpose()));
        let base = SemicontinuousBase {
            name: format!("portfolio_n{n}_s{}", self.seed),
            n,
            objective: Arc::new(Quadratic {
                q: self.q.clone(),
                c: DVector::zeros(n),
                d: 0.0,
            }),
            ineq: Arc::new(AffineMap {
                a,
                b: DVector::from_element(1, self.rho),
            }),
            eq: Arc::new(AffineMap {
                a: DMatrix::from_element(1, n, 1.0),
                b: DVector::from_element(1, -1.0),
            }),
        };
        semicontinuous_reformulate(base, &self.lower, &self.upper)
    }
}

/// Seeded portfolio benchmark in variables `(x, y)`.
pub fn portfolio(n: usize, seed: u64) -> Result<MpscProblem> {
    portfolio_instance(n, seed)?.to_problem()
}

/// Separable demonstration of semi-continuity:
/// `1/2 |x - c|^2` with `c_i = 0.6 l_i` for even `i` and `0.4 l_i` for odd `i`
/// (0-based), so the optimum takes `x_i = l_i` on even and `x_i = 0` on odd
/// indices, with value `sum 0.08 l_i^2`.
pub fn semicontinuous_demo(lower: &DVector<f64>, upper: &DVector<f64>) -> Result<MpscProblem> {
    let n = lower.len();
    if n == 0 {
        return Err(Error::InvalidParameter(
            "semicontinuous demo needs n >= 1".into(),
        ));
    }
    let c = DVector::from_fn(n, |i, _| if i % 2 == 0 { 0.6 } else { 0.4 } * lower[i]);
    let objective = Quadratic {
        q: DMatrix::identity(n, n) * 0.5,
        c: -&c,
        d: 0.5 * c.norm_squared(),
    };
    let base = SemicontinuousBase::unconstrained("semicontinuous", n, Arc::new(objective));
    let mut p = semicontinuous_reformulate(base, lower, upper)?;
    let mut xs = DVector::zeros(2 * n);
    for i in (0..n).step_by(2) {
        xs[i] = lower[i];
    }
    let value = lower.iter().map(|l| 0.08 * l * l).sum();
    p.known_solutions.push(crate::problem::KnownSolution {
        x: xs,
        objective: value,
    });
    Ok(p)
}

/// Names accepted by [`make_benchmark`].
#[derive(Debug, Clone, PartialEq)]
pub enum BenchmarkName {
    Example41,
    ExampleSu,
    EitherOrE2,
    Portfolio {
        n: usize,
        seed: u64,
    },
    /// [`semicontinuous_demo`] with `l_i = 0.2`, `u_i = 1`.
    Semicontinuous {
        n: usize,
    },
}

impl fmt::Display for BenchmarkName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchmarkName::Example41 => f.write_str("example_4_1"),
            BenchmarkName::ExampleSu => f.write_str("example_su"),
            BenchmarkName::EitherOrE2 => f.write_str("either_or_e2"),
            BenchmarkName::Portfolio { n, seed } => write!(f, "portfolio:{n}:{seed}"),
            BenchmarkName::Semicontinuous { n } => write!(f, "semicontinuous:{n}"),
        }
    }
}

impl FromStr for BenchmarkName {
    type Err = Error;

    /// Accepts `example_4_1`, `example_su`, `either_or_e2`,
    /// `portfolio[:n[:seed]]` (default 8 and 0) and `semicontinuous[:n]`
    /// (default 4).
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let head = parts.next().unwrap_or_default();
        let rest: Vec<&str> = parts.collect();
        let num = |i: usize, default: u64| -> Result<u64> {
            match rest.get(i) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad parameter `{v}` in `{s}`"))),
            }
        };
        let name = match head {
            "example_4_1" => BenchmarkName::Example41,
            "example_su" => BenchmarkName::ExampleSu,
            "either_or_e2" | "e2" => BenchmarkName::EitherOrE2,
            "portfolio" => BenchmarkName::Portfolio {
                n: num(0, 8)? as usize,
                seed: num(1, 0)?,
            },
            "semicontinuous" => BenchmarkName::Semicontinuous {
                n: num(0, 4)? as usize,
            },
            _ => return Err(Error::UnknownProblem(s.to_string())),
        };
        let max_args = match name {
            BenchmarkName::Portfolio { .. } => 2,
            BenchmarkName::Semicontinuous { .. } => 1,
            _ => 0,
        };
        if rest.len() > max_args {
            return Err(Error::InvalidParameter(format!(
                "too many parameters in `{s}`"
            )));
        }
        Ok(name)
    }
}

pub fn make_benchmark(name: &BenchmarkName) -> Result<MpscProblem> {
    match name {
        BenchmarkName::Example41 => Ok(example_4_1()),
        BenchmarkName::ExampleSu => Ok(example_su()),
        BenchmarkName::EitherOrE2 => Ok(either_or_e2()),
        BenchmarkName::Portfolio { n, seed } => portfolio(*n, *seed),
        BenchmarkName::Semicontinuous { n } => semicontinuous_demo(
            &DVector::from_element(*n, 0.2),
            &DVector::from_element(*n, 1.0),
        )
        .map(|p| p.with_name(name.to_string())),
    }
}

/// Parses `name` and builds the benchmark.
pub fn make_benchmark_by_name(name: &str) -> Result<MpscProblem> {
    make_benchmark(&name.parse()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{derivative_check, evaluate};

    #[test]
    fn dimensions_of_builtins() {
        let p = example_4_1();
        assert_eq!((p.n(), p.m(), p.p(), p.q()), (2, 0, 0, 1));
        assert_eq!(p.known_solutions.len(), 2);
        let p = example_su();
        assert_eq!((p.n(), p.m(), p.q()), (2, 1, 1));
        let p = either_or_e2();
        assert_eq!((p.n(), p.m(), p.p(), p.q()), (6, 4, 0, 2));
    }

    #[test]
    fn e2_known_points_are_feasible_with_expected_values() {
        let p = either_or_e2();
        for ks in &p.known_solutions {
            assert!(p.feasibility_violation(&ks.x) < 1e-14);
            assert_eq!(p.f(&ks.x), ks.objective);
        }
    }

    #[test]
    fn su_optima_values() {
        let p = example_su();
        assert_eq!(p.f(&dv(&[1.0, 0.0])), -1.0);
        assert_eq!(p.feasibility_violation(&dv(&[0.0, 1.0])), 0.0);
    }

    #[test]
    fn derivatives_of_all_builtins() {
        for name in [
            "example_4_1",
            "example_su",
            "either_or_e2",
            "portfolio:5:2",
            "semicontinuous:3",
        ] {
            let p = make_benchmark_by_name(name).unwrap();
            let x = DVector::from_fn(p.n(), |i, _| 0.3 + 0.17 * i as f64);
            assert!(derivative_check(&p, &x, 1e-6) < 1e-6, "{name}");
        }
    }

    #[test]
    fn semicontinuous_examples() {
        let base = SemicontinuousBase::unconstrained(
            "sc",
            2,
            Arc::new(Quadratic {
                q: DMatrix::zeros(2, 2),
                c: DVector::zeros(2),
                d: 0.0,
            }),
        );
        let p =
            semicontinuous_reformulate(base.clone(), &dv(&[0.1, 0.1]), &dv(&[1.0, 1.0])).unwrap();
        assert_eq!(p.q(), 2);
        assert_eq!(p.n(), 4);
        assert!(p.feasibility_violation(&dv(&[0.0, 0.5, 0.0, 0.4])) < 1e-15);
        assert!(p.feasibility_violation(&dv(&[0.05, 0.0, 0.0, 0.0])) > 1e-3);

        let p0 =
            semicontinuous_reformulate(base.clone(), &dv(&[0.0, 0.0]), &dv(&[1.0, 1.0])).unwrap();
        let r = evaluate(&p0, &dv(&[0.3, 0.2, 0.1, 0.05])).unwrap();
        assert!((r.big_h[0] - 0.2).abs() < 1e-15 && (r.big_h[1] - 0.15).abs() < 1e-15);

        assert!(semicontinuous_reformulate(base, &dv(&[0.0, 0.0]), &dv(&[1.0, -0.5])).is_err());
    }

    #[test]
    fn portfolio_generator_properties() {
        for seed in 0..5 {
            let inst = portfolio_instance(8, seed).unwrap();
            assert_eq!(inst.q, inst.q.transpose());
            assert!(inst.q.clone().symmetric_eigenvalues().min() > 0.0);
            assert!(inst
                .lower
                .iter()
                .zip(inst.upper.iter())
                .all(|(l, u)| l <= u));
            let p = inst.to_problem().unwrap();
            assert_eq!((p.n(), p.m(), p.p(), p.q()), (16, 17, 1, 8));
            assert!(p.feasibility_violation(&inst.planted_point()) < 1e-12);
        }
        assert_eq!(
            portfolio_instance(8, 3).unwrap(),
            portfolio_instance(8, 3).unwrap()
        );
        assert!(portfolio_instance(1, 0).is_err());
    }

    #[test]
    fn benchmark_names() {
        assert_eq!(
            "portfolio:8:3".parse::<BenchmarkName>().unwrap(),
            BenchmarkName::Portfolio { n: 8, seed: 3 }
        );
        assert!(matches!(
            "nope".parse::<BenchmarkName>(),
            Err(Error::UnknownProblem(_))
        ));
        assert!("example_4_1:3".parse::<BenchmarkName>().is_err());
        let p = make_benchmark_by_name("semicontinuous:3").unwrap();
        let ks = &p.known_solutions[0];
        assert!(p.feasibility_violation(&ks.x) < 1e-15);
        assert!((p.f(&ks.x) - ks.objective).abs() < 1e-15);
    }
}
