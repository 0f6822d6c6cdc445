//! Performance profiles over the quality measure
//! `Q_delta = f - f_min + delta` for feasible final points and `+inf`
//! otherwise.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};

/// One final point of one solver on one (problem, start) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub solver: String,
    pub problem: String,
    pub start_id: usize,
    pub status: String,
    pub f: f64,
    /// Feasibility violation of the final point.
    pub feasibility: f64,
    pub time_ms: Option<f64>,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FMinSource {
    Oracle,
    BestKnown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FMin {
    pub value: f64,
    pub source: FMinSource,
}

#[derive(Debug, Clone)]
pub struct ProfileTable {
    pub solvers: Vec<String>,
    /// Profile instances: (problem, start id).
    pub instances: Vec<(String, usize)>,
    /// `q[s][i]`: quality of solver `s` on instance `i` (`+inf` if missing or infeasible).
    pub q: Vec<Vec<f64>>,
    /// `ratio[s][i] = q[s][i] / min_s q[s][i]`.
    pub ratio: Vec<Vec<f64>>,
    pub delta: f64,
    pub feas_tol: f64,
    pub fmin: BTreeMap<String, FMin>,
    /// Breakpoints of the curves: 1 and every finite ratio, ascending.
    pub taus: Vec<f64>,
    /// `curves[s][j]`: fraction of instances with ratio `<= taus[j]`.
    pub curves: Vec<Vec<f64>>,
    /// Quality of every input run, in input order.
    pub run_q: Vec<f64>,
}

/// `Q_delta` of a single run. Values below `f_min` count as `delta`.
pub fn q_delta(f: f64, feasibility: f64, f_min: f64, delta: f64, feas_tol: f64) -> f64 {
    if feasibility <= feas_tol && f.is_finite() {
        (f - f_min).max(0.0) + delta
    } else {
        f64::INFINITY
    }
}

fn ratio(q: f64, best: f64) -> f64 {
    if !q.is_finite() {
        f64::INFINITY
    } else if best > 0.0 {
        q / best
    } else if q == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Builds the profile of `runs`. Problems missing from `fmin` use the best
/// feasible objective among the runs.
pub fn performance_profile(
    runs: &[RunRecord],
    fmin: &BTreeMap<String, f64>,
    delta: f64,
    feas_tol: f64,
) -> Result<ProfileTable> {
    if runs.is_empty() {
        return Err(Error::EmptyResults);
    }
    if !(delta >= 0.0) || !(feas_tol >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta and feas_tol must be nonnegative, got {delta} and {feas_tol}"
        )));
    }
    let mut solvers: Vec<String> = Vec::new();
    let mut instances: Vec<(String, usize)> = Vec::new();
    for r in runs {
        if !solvers.contains(&r.solver) {
            solvers.push(r.solver.clone());
        }
        let key = (r.problem.clone(), r.start_id);
        if !instances.contains(&key) {
            instances.push(key);
        }
    }
    let mut fmins: BTreeMap<String, FMin> = BTreeMap::new();
    for r in runs {
        if fmins.contains_key(&r.problem) {
            continue;
        }
        let entry = match fmin.get(&r.problem) {
            Some(&v) => FMin {
                value: v,
                source: FMinSource::Oracle,
            },
            None => {
                let best = runs
                    .iter()
                    .filter(|o| {
                        o.problem == r.problem && o.feasibility <= feas_tol && o.f.is_finite()
                    })
                    .map(|o| o.f)
                    .fold(f64::INFINITY, f64::min);
                FMin {
                    value: best,
                    source: FMinSource::BestKnown,
                }
            }
        };
        fmins.insert(r.problem.clone(), entry);
    }

    let mut q = vec![vec![f64::INFINITY; instances.len()]; solvers.len()];
    let mut run_q = Vec::with_capacity(runs.len());
    for r in runs {
        let s = solvers.iter().position(|x| *x == r.solver).unwrap();
        let i = instances
            .iter()
            .position(|(p, id)| *p == r.problem && *id == r.start_id)
            .unwrap();
        let v = q_delta(r.f, r.feasibility, fmins[&r.problem].value, delta, feas_tol);
        run_q.push(v);
        q[s][i] = q[s][i].min(v);
    }
    let best: Vec<f64> = (0..instances.len())
        .map(|i| {
            (0..solvers.len())
                .map(|s| q[s][i])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let ratios: Vec<Vec<f64>> = q
        .iter()
        .map(|row| row.iter().zip(&best).map(|(&v, &b)| ratio(v, b)).collect())
        .collect();
    let mut taus: Vec<f64> = std::iter::once(1.0)
        .chain(ratios.iter().flatten().cloned().filter(|r| r.is_finite()))
        .collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let n_inst = instances.len() as f64;
    let curves = ratios
        .iter()
        .map(|row| {
            taus.iter()
                .map(|&tau| row.iter().filter(|&&r| r <= tau).count() as f64 / n_inst)
                .collect()
        })
        .collect();
    Ok(ProfileTable {
        solvers,
        instances,
        q,
        ratio: ratios,
        delta,
        feas_tol,
        fmin: fmins,
        taus,
        curves,
        run_q,
    })
}

impl ProfileTable {
    /// Fraction of instances on which `solver` is within factor `tau` of the best.
    pub fn rho(&self, solver: &str, tau: f64) -> Option<f64> {
        let s = self.solvers.iter().position(|x| x == solver)?;
        let hits = self.ratio[s].iter().filter(|&&r| r <= tau).count();
        Some(hits as f64 / self.instances.len() as f64)
    }

    /// Results CSV: `solver,problem,start_id,status,f,Q_delta,time_ms,evals`.
    pub fn write_results_csv<W: Write>(&self, runs: &[RunRecord], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Csv(e.to_string());
        w.write_record([
            "solver", "problem", "start_id", "status", "f", "Q_delta", "time_ms", "evals",
        ])
        .map_err(err)?;
        for (r, q) in runs.iter().zip(&self.run_q) {
            w.write_record([
                r.solver.clone(),
                r.problem.clone(),
                r.start_id.to_string(),
                r.status.clone(),
                r.f.to_string(),
                q.to_string(),
                r.time_ms.map(|t| format!("{t:.3}")).unwrap_or_default(),
                r.evals.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))
    }

    /// Profile CSV: `tau` followed by one column per solver.
    pub fn write_profile_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Csv(e.to_string());
        let mut header = vec!["tau".to_string()];
        header.extend(self.solvers.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for (j, tau) in self.taus.iter().enumerate() {
            let mut row = vec![tau.to_string()];
            row.extend(self.curves.iter().map(|c| c[j].to_string()));
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))
    }
}
