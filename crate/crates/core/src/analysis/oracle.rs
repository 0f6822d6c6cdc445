//! Global solutions by branch enumeration: every switching pair is resolved
//! to `G_l = 0` or `H_l = 0` and each of the `2^q` branch NLPs is solved
//! from several starting points.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nlp::{solve_nlp, NlpOptions, NlpStatus};
use crate::problem::{MpscProblem, VectorFn};
use crate::relax::{EqOrigin, NlpProblem, Provenance, RowOrigin};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pinned {
    GZero,
    HZero,
}

/// One branch: which map of every pair is pinned to zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BranchSpec {
    pub assignment: Vec<Pinned>,
}

impl BranchSpec {
    /// Bit `l` of `id` set means `H_l = 0`, clear means `G_l = 0`.
    pub fn from_id(id: u64, q: usize) -> Self {
        Self {
            assignment: (0..q)
                .map(|l| {
                    if id >> l & 1 == 1 {
                        Pinned::HZero
                    } else {
                        Pinned::GZero
                    }
                })
                .collect(),
        }
    }

    pub fn id(&self) -> u64 {
        self.assignment
            .iter()
            .enumerate()
            .map(|(l, p)| if *p == Pinned::HZero { 1u64 << l } else { 0 })
            .sum()
    }

    /// The NLP `min f` s.t. `g <= 0`, `h = 0` and the pinned maps `= 0`.
    pub fn to_nlp(&self, problem: &MpscProblem) -> Result<NlpProblem> {
        if self.assignment.len() != problem.q() {
            return Err(Error::DimensionMismatch {
                expected: problem.q(),
                actual: self.assignment.len(),
                context: "branch assignment",
            });
        }
        let mut eq_rows: Vec<EqOrigin> = (0..problem.p()).map(EqOrigin::Original).collect();
        for (l, p) in self.assignment.iter().enumerate() {
            eq_rows.push(match p {
                Pinned::GZero => EqOrigin::PinG(l),
                Pinned::HZero => EqOrigin::PinH(l),
            });
        }
        let eq = BranchEq {
            problem: problem.clone(),
            assignment: self.assignment.clone(),
        };
        let mut nlp = NlpProblem::new(
            format!("{}#branch{}", problem.name(), self.id()),
            problem.n(),
            problem.objective().clone(),
            problem.ineq().clone(),
            Arc::new(eq),
        );
        nlp.provenance = Provenance {
            source: problem.name().to_string(),
            relaxation: None,
            ineq_rows: (0..problem.m()).map(RowOrigin::Original).collect(),
            eq_rows,
        };
        Ok(nlp)
    }
}

struct BranchEq {
    problem: MpscProblem,
    assignment: Vec<Pinned>,
}

impl VectorFn for BranchEq {
    fn len(&self) -> usize {
        self.problem.p() + self.assignment.len()
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.problem.p();
        let mut out = DVector::zeros(self.len());
        out.rows_mut(0, p).copy_from(&self.problem.eq().values(x));
        let gg = self.problem.switch_g().values(x);
        let hh = self.problem.switch_h().values(x);
        for (l, pin) in self.assignment.iter().enumerate() {
            out[p + l] = if *pin == Pinned::GZero { gg[l] } else { hh[l] };
        }
        out
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let p = self.problem.p();
        let mut out = DMatrix::zeros(self.len(), x.len());
        out.rows_mut(0, p).copy_from(&self.problem.eq().jacobian(x));
        let jg = self.problem.switch_g().jacobian(x);
        let jh = self.problem.switch_h().jacobian(x);
        for (l, pin) in self.assignment.iter().enumerate() {
            let src = if *pin == Pinned::GZero {
                jg.row(l)
            } else {
                jh.row(l)
            };
            out.row_mut(p + l).copy_from(&src);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct OracleOptions {
    /// Largest `q` that is enumerated.
    pub cap: usize,
    pub subsolver: NlpOptions,
    /// Starting points per branch: the problem's own starts, the centre of
    /// its start box, then seeded uniform draws from the box.
    pub multistarts: usize,
    pub seed: u64,
    /// Feasibility tolerance for accepting a branch solution.
    pub feas_tol: f64,
    pub jobs: Option<usize>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            cap: 16,
            subsolver: NlpOptions {
                tol_kkt: 1e-9,
                ..Default::default()
            },
            multistarts: 3,
            seed: 0,
            feas_tol: 1e-7,
            jobs: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BranchOutcome {
    pub branch: u64,
    /// Best feasible solution of the branch, if any.
    pub best: Option<(DVector<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub branch: BranchSpec,
    pub branches_visited: usize,
    pub outcomes: Vec<BranchOutcome>,
}

fn branch_starts(problem: &MpscProblem, count: usize, seed: u64, branch: u64) -> Vec<DVector<f64>> {
    let (lo, hi) = &problem.start_box;
    let mut starts: Vec<DVector<f64>> = problem.starts.iter().take(count).cloned().collect();
    if starts.len() < count {
        starts.push((lo + hi) * 0.5);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ branch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    while starts.len() < count {
        starts.push(DVector::from_fn(problem.n(), |i, _| {
            if hi[i] > lo[i] {
                rng.gen_range(lo[i]..hi[i])
            } else {
                lo[i]
            }
        }));
    }
    starts
}

fn solve_branch(problem: &MpscProblem, id: u64, opts: &OracleOptions) -> Result<BranchOutcome> {
    let spec = BranchSpec::from_id(id, problem.q());
    let nlp = spec.to_nlp(problem)?;
    let mut best: Option<(DVector<f64>, f64)> = None;
    for x0 in branch_starts(problem, opts.multistarts.max(1), opts.seed, id) {
        let r = match solve_nlp(&nlp, &x0, &opts.subsolver) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => continue,
            Err(e) => return Err(e),
        };
        if matches!(r.status, NlpStatus::Failed | NlpStatus::UnboundedSuspected) {
            continue;
        }
        if problem.feasibility_violation(&r.x) > opts.feas_tol {
            continue;
        }
        let f = problem.f(&r.x);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((r.x, f));
        }
    }
    Ok(BranchOutcome { branch: id, best })
}

/// [`branch_enumerate_global`] visiting the branches in the given order.
/// `order` must be a permutation of `0..2^q`.
pub fn branch_enumerate_in_order(
    problem: &MpscProblem,
    opts: &OracleOptions,
    order: &[u64],
) -> Result<OracleResult> {
    let q = problem.q();
    if q > opts.cap || q >= 64 {
        return Err(Error::EnumerationCap {
            count: q,
            cap: opts.cap,
        });
    }
    let total = 1u64 << q;
    if order.len() as u64 != total {
        return Err(Error::InvalidParameter(format!(
            "branch order has {} entries, expected {total}",
            order.len()
        )));
    }
    let run = || -> Result<Vec<BranchOutcome>> {
        order
            .par_iter()
            .map(|&id| solve_branch(problem, id, opts))
            .collect()
    };
    let outcomes = match opts.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    let mut best: Option<(&BranchOutcome, f64)> = None;
    for o in &outcomes {
        if let Some((_, f)) = &o.best {
            let better = match best {
                None => true,
                Some((b, bf)) => *f < bf || (*f == bf && o.branch < b.branch),
            };
            if better {
                best = Some((o, *f));
            }
        }
    }
    let Some((winner, f)) = best else {
        return Err(Error::AllBranchesInfeasible);
    };
    let (x, _) = winner.best.clone().expect("winner has a solution");
    Ok(OracleResult {
        x,
        f,
        branch: BranchSpec::from_id(winner.branch, q),
        branches_visited: outcomes.len(),
        outcomes,
    })
}

/// Best feasible point over all `2^q` branches.
pub fn branch_enumerate_global(
    problem: &MpscProblem,
    opts: &OracleOptions,
) -> Result<OracleResult> {
    let q = problem.q();
    if q > opts.cap || q >= 64 {
        return Err(Error::EnumerationCap {
            count: q,
            cap: opts.cap,
        });
    }
    let order: Vec<u64> = (0..1u64 << q).collect();
    branch_enumerate_in_order(problem, opts, &order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::benchmarks::{either_or_e2, example_4_1, example_su};
    use crate::problem::{AffineMap, ClosureScalar};

    #[test]
    fn example_4_1_optimum() {
        let r = branch_enumerate_global(&example_4_1(), &OracleOptions::default()).unwrap();
        assert!((r.f - 0.5).abs() < 1e-8);
        assert_eq!(r.branches_visited, 2);
        let d1 = (&r.x - DVector::from_vec(vec![1.0, 0.0])).amax();
        let d2 = (&r.x - DVector::from_vec(vec![0.0, 1.0])).amax();
        assert!(d1.min(d2) < 1e-6);
    }

    #[test]
    fn example_su_optimum() {
        let r = branch_enumerate_global(&example_su(), &OracleOptions::default()).unwrap();
        assert!((r.f + 1.0).abs() < 1e-7, "{}", r.f);
    }

    #[test]
    fn e2_optimum_and_order_invariance() {
        let p = either_or_e2();
        let opts = OracleOptions::default();
        let r = branch_enumerate_global(&p, &opts).unwrap();
        assert!((r.f - 37.0).abs() < 1e-6, "{}", r.f);
        assert!((r.x[0] - 2.0).abs() < 1e-6 && (r.x[1] + 2.0).abs() < 1e-6);
        assert_eq!(r.branches_visited, 4);
        let r2 = branch_enumerate_in_order(&p, &opts, &[3, 1, 2, 0]).unwrap();
        assert_eq!(r.f, r2.f);
    }

    #[test]
    fn cap_is_enforced() {
        let n = 20;
        let objective = ClosureScalar::new(|x: &DVector<f64>| x.norm_squared(), |x| x * 2.0);
        let p = MpscProblem::builder("wide", n, objective)
            .switching(
                AffineMap {
                    a: DMatrix::identity(n, n),
                    b: DVector::zeros(n),
                },
                AffineMap {
                    a: DMatrix::identity(n, n),
                    b: DVector::from_element(n, -1.0),
                },
            )
            .build()
            .unwrap();
        assert!(matches!(
            branch_enumerate_global(&p, &OracleOptions::default()),
            Err(Error::EnumerationCap { count: 20, cap: 16 })
        ));
    }

    #[test]
    fn all_infeasible_branches() {
        // x1 x2 = 0 with x1 >= 1 and x2 >= 1.
        let objective = ClosureScalar::new(|x: &DVector<f64>| x.norm_squared(), |x| x * 2.0);
        let p = MpscProblem::builder("empty", 2, objective)
            .inequalities(AffineMap {
                a: -DMatrix::identity(2, 2),
                b: DVector::from_element(2, 1.0),
            })
            .switching(
                AffineMap {
                    a: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                    b: DVector::zeros(1),
                },
                AffineMap {
                    a: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
                    b: DVector::zeros(1),
                },
            )
            .build()
            .unwrap();
        let opts = OracleOptions {
            multistarts: 1,
            subsolver: NlpOptions {
                max_outer: 15,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(matches!(
            branch_enumerate_global(&p, &opts),
            Err(Error::AllBranchesInfeasible)
        ));
    }

    #[test]
    fn branch_ids_round_trip() {
        for id in 0..16 {
            assert_eq!(BranchSpec::from_id(id, 4).id(), id);
        }
    }
}
