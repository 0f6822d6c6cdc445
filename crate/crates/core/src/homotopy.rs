//! The relaxation loop: solve `P(t_k)` for a decreasing sequence `t_k`,
//! warm-starting each solve from the previous one, and map the surrogate
//! multipliers back to multipliers of the switching-constrained program.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{bounded_lstsq, lstsq_min_norm};
use crate::nlp::{
    feasibility_violation, kkt_residual, solve_nlp_warm, EvalCounts, NlpOptions, NlpResult,
    NlpStatus,
};
use crate::problem::{evaluate, EvalRecord, MpscProblem};
use crate::relax::{
    build_relaxed, row_terms, EqOrigin, NlpProblem, RowOrigin, SchemeKind, KS_SIGNS,
};
use crate::stationarity::{
    classify_stationarity, stationarity_vector, CertTolerances, Multipliers,
    StationarityCertificate, DEFAULT_ENUMERATION_CAP,
};

#[derive(Debug, Clone)]
pub struct DriverOptions {
    pub t0: f64,
    /// Factor applied to `t` after every iteration, so `t_k = t0 * t_shrink^(k-1)`.
    pub t_shrink: f64,
    /// The loop stops before solving once `t_k < t_min`.
    pub t_min: f64,
    /// Stationarity tolerance of the stopping test and of the final certificate.
    pub tol_outer: f64,
    /// Switching-feasibility tolerance of the stopping test.
    pub tol_feas: f64,
    pub scheme: SchemeKind,
    pub subsolver: NlpOptions,
    /// Active-set polishing of KS iterates.
    pub polish: bool,
    pub enumeration_cap: usize,
    /// Cold restarts from perturbed starting points after a subsolve that
    /// did not converge.
    pub restarts: usize,
    /// Perturbation radius of a restart, relative to `1 + |x|_inf`.
    pub restart_radius: f64,
}

impl Default for DriverOptions {
    fn default() -> Self {
        Self {
            t0: 0.01,
            t_shrink: 0.01,
            t_min: 1e-8,
            tol_outer: 1e-4,
            tol_feas: 1e-7,
            scheme: SchemeKind::Ks,
            subsolver: NlpOptions::default(),
            polish: true,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            restarts: 2,
            restart_radius: 0.1,
        }
    }
}

impl DriverOptions {
    pub fn with_scheme(scheme: SchemeKind) -> Self {
        Self {
            scheme,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0) || !self.t0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "t0 must be positive, got {}",
                self.t0
            )));
        }
        if !(self.t_shrink > 0.0 && self.t_shrink < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "t_shrink must lie in (0, 1), got {}",
                self.t_shrink
            )));
        }
        if !(self.t_min < self.t0) {
            return Err(Error::InvalidParameter(format!(
                "t_min = {} must be below t0 = {}",
                self.t_min, self.t0
            )));
        }
        if !(self.tol_outer > 0.0) || !(self.tol_feas > 0.0) {
            return Err(Error::InvalidParameter(
                "tolerances must be positive".into(),
            ));
        }
        self.subsolver.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    /// Switching feasibility and recovered residual both within tolerance.
    Converged,
    /// The next parameter would fall below `t_min`.
    ParameterFloor,
    /// The subsolver failed at some iteration; the trace stops there.
    SubsolverFailure(String),
}

impl StopReason {
    pub fn label(&self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::ParameterFloor => "t_min",
            StopReason::SubsolverFailure(_) => "subsolver_failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: usize,
    pub t: f64,
    pub nlp: NlpResult,
    pub multipliers: Multipliers,
    pub objective: f64,
    /// `max_l |G_l H_l|`.
    pub switching_violation: f64,
    /// `max(g^+, |h|, |G H|)`.
    pub feasibility: f64,
    /// `|grad f + J_c^T lambda + J_e^T rho|_inf` of the surrogate.
    pub surrogate_stationarity: f64,
    /// Stationarity-equation residual of the program at the recovered multipliers.
    pub mpsc_stationarity: f64,
    pub polished: bool,
    /// Restarts used at this iteration.
    pub restarts: usize,
}

#[derive(Debug, Clone)]
pub struct SolveTrace {
    pub problem: String,
    pub scheme: String,
    pub x0: DVector<f64>,
    pub iterations: Vec<IterationRecord>,
    pub x: DVector<f64>,
    pub objective: f64,
    pub certificate: Option<StationarityCertificate>,
    pub certificate_error: Option<String>,
    pub stop: StopReason,
    /// Some subsolve ended without convergence.
    pub degraded: bool,
    pub elapsed: Duration,
    pub evals: EvalCounts,
}

impl SolveTrace {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    /// Converged or stopped at the parameter floor.
    pub fn completed(&self) -> bool {
        !matches!(self.stop, StopReason::SubsolverFailure(_)) && !self.iterations.is_empty()
    }

    pub fn feasibility(&self) -> f64 {
        self.last().map_or(f64::INFINITY, |r| r.feasibility)
    }
}

/// Surrogate stationarity vector `grad f + J_c^T lambda + J_e^T rho`.
pub fn surrogate_stationarity_vector(
    nlp: &NlpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    rho: &DVector<f64>,
) -> DVector<f64> {
    nlp.objective().gradient(x)
        + nlp.ineq().jacobian(x).tr_mul(lambda)
        + nlp.eq().jacobian(x).tr_mul(rho)
}

/// Tolerance below which a KS row coordinate counts as pinned during
/// multiplier recovery.
fn ks_pin_tol(rec: &EvalRecord) -> f64 {
    1e-12 * (1.0 + rec.value_scale())
}

/// Maps surrogate multipliers to `(lambda, rho, mu, nu)`.
///
/// Original rows copy their multiplier. A relaxation row of pair `l` with
/// multiplier `w` and chain-rule coefficients `(c_G, c_H)` contributes
/// `w c_G` to `mu_l` and `w c_H` to `nu_l`. For KS rows whose first
/// (second) argument of `phi` vanishes only the `mu` (`nu`) part is kept,
/// which reproduces the assignment on the relaxed index sets; rows at a
/// corner contribute nothing. For Scholtes this is `mu = xi H`, `nu = xi G`
/// with `xi = w_1 - w_2`.
pub fn recover_mpsc_multipliers(
    problem: &MpscProblem,
    nlp: &NlpProblem,
    x: &DVector<f64>,
    lambda_ineq: &DVector<f64>,
    rho_eq: &DVector<f64>,
) -> Result<Multipliers> {
    let prov = &nlp.provenance;
    if prov.ineq_rows.len() != lambda_ineq.len() || prov.eq_rows.len() != rho_eq.len() {
        return Err(Error::MissingProvenance(format!(
            "{} inequality and {} equality multipliers for {} and {} mapped rows",
            lambda_ineq.len(),
            rho_eq.len(),
            prov.ineq_rows.len(),
            prov.eq_rows.len()
        )));
    }
    let rec = evaluate(problem, x)?;
    let relaxation = prov.relaxation.as_ref();
    if let Some((_, t)) = relaxation {
        if !(*t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "multiplier recovery needs t > 0, got {t}"
            )));
        }
    }
    let pin_tol = ks_pin_tol(&rec);
    let mut mult = Multipliers::for_problem(problem);
    for (row, origin) in prov.ineq_rows.iter().enumerate() {
        let w = lambda_ineq[row];
        match *origin {
            RowOrigin::Original(i) => {
                if i >= problem.m() {
                    return Err(Error::MissingProvenance(format!(
                        "row {row} maps to g[{i}]"
                    )));
                }
                mult.lambda[i] += w;
            }
            RowOrigin::Relaxation { pair, row: s } => {
                let Some((scheme, t)) = relaxation else {
                    return Err(Error::MissingProvenance(format!(
                        "row {row} is a relaxation row of a problem without relaxation data"
                    )));
                };
                if pair >= problem.q() {
                    return Err(Error::MissingProvenance(format!(
                        "row {row} maps to pair {pair}"
                    )));
                }
                if w == 0.0 {
                    continue;
                }
                let (g, h) = (rec.big_g[pair], rec.big_h[pair]);
                let (_, mut cg, mut ch) = row_terms(scheme, s, g, h, *t)?;
                if matches!(scheme, SchemeKind::Ks) {
                    let (sg, sh) = KS_SIGNS[s];
                    let a = sg * g - t;
                    let b = sh * h - t;
                    let a0 = a.abs() <= pin_tol;
                    let b0 = b.abs() <= pin_tol;
                    if a0 && b0 {
                        cg = 0.0;
                        ch = 0.0;
                    } else if a0 {
                        ch = 0.0;
                    } else if b0 {
                        cg = 0.0;
                    }
                }
                mult.mu[pair] += w * cg;
                mult.nu[pair] += w * ch;
            }
        }
    }
    for (row, origin) in prov.eq_rows.iter().enumerate() {
        let w = rho_eq[row];
        match *origin {
            EqOrigin::Original(j) if j < problem.p() => mult.rho[j] += w,
            EqOrigin::PinG(l) if l < problem.q() => mult.mu[l] += w,
            EqOrigin::PinH(l) if l < problem.q() => mult.nu[l] += w,
            other => {
                return Err(Error::MissingProvenance(format!(
                    "equality row {row} maps to {other:?}"
                )));
            }
        }
    }
    Ok(mult)
}

/// Multipliers minimising the surrogate stationarity residual with support
/// restricted to `rows` (inequalities, kept nonnegative) and all equalities.
fn multipliers_on_rows(
    nlp: &NlpProblem,
    x: &DVector<f64>,
    rows: &[usize],
) -> (DVector<f64>, DVector<f64>) {
    let jc = nlp.ineq().jacobian(x);
    let je = nlp.eq().jacobian(x);
    let k = rows.len() + je.nrows();
    let mut a = DMatrix::zeros(nlp.n(), k);
    for (col, &i) in rows.iter().enumerate() {
        a.set_column(col, &jc.row(i).transpose());
    }
    for j in 0..je.nrows() {
        a.set_column(rows.len() + j, &je.row(j).transpose());
    }
    let nonneg: Vec<bool> = (0..k).map(|j| j < rows.len()).collect();
    let sol = bounded_lstsq(&a, &(-nlp.objective().gradient(x)), &nonneg);
    let mut lambda = DVector::zeros(nlp.n_ineq());
    for (col, &i) in rows.iter().enumerate() {
        lambda[i] = sol[col];
    }
    let rho = DVector::from_fn(je.nrows(), |j, _| sol[rows.len() + j]);
    (lambda, rho)
}

/// Moves a KS iterate onto the relaxed active set suggested by its
/// multipliers and re-fits the multipliers there.
///
/// Rows carrying a multiplier but far from active lose it. For the others the
/// smaller of `a = sigma_G G - t`, `b = sigma_H H - t` is driven to zero (both
/// when the larger is already negligible) by a Gauss–Newton projection that
/// also keeps `h = 0` and the active original inequalities tight. An
/// active-set re-solve on that face follows, then a cleanup of variables the
/// objective ignores. The result is rejected if the point moves too far or the
/// KKT residual grows.
fn polish_ks(
    problem: &MpscProblem,
    nlp: &NlpProblem,
    res: &NlpResult,
    t: f64,
    opts: &NlpOptions,
) -> Option<NlpResult> {
    let rec = evaluate(problem, &res.x).ok()?;
    let scale = 1.0 + rec.value_scale();
    let snap_tol = 1e-5 * scale;
    let part_tol = 1e-10 * scale;
    let m = problem.m();
    let q = problem.q();

    // Candidate pins (pair, pin G?, sign, distance); one sign per coordinate
    // survives, the closer one.
    let mut cand: Vec<(usize, bool, f64, f64)> = Vec::new();
    for l in 0..q {
        for (s, &(sg, sh)) in KS_SIGNS.iter().enumerate() {
            if res.lambda_ineq[m + 4 * l + s] <= 0.0 {
                continue;
            }
            let a = sg * rec.big_g[l] - t;
            let b = sh * rec.big_h[l] - t;
            if a.abs().min(b.abs()) > snap_tol {
                continue;
            }
            let corner = a.abs().max(b.abs()) <= 10.0 * part_tol;
            if corner || a.abs() <= b.abs() {
                cand.push((l, true, sg, a.abs()));
            }
            if corner || b.abs() < a.abs() {
                cand.push((l, false, sh, b.abs()));
            }
        }
    }
    cand.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)).then(x.3.total_cmp(&y.3)));
    cand.dedup_by_key(|c| (c.0, c.1));
    let pins: Vec<(usize, bool, f64)> = cand.iter().map(|c| (c.0, c.1, c.2)).collect();

    let tight: Vec<usize> = (0..m)
        .filter(|&i| res.lambda_ineq[i] > 0.0 && rec.g[i].abs() <= snap_tol)
        .collect();

    let x = project_onto_face(problem, &res.x, t, &pins, &tight)?;

    // `unbounded` marks variables exempt from the move limit.
    let accept = |x: &DVector<f64>, unbounded: &[bool]| -> Option<NlpResult> {
        let moved = (0..x.len())
            .filter(|&k| !unbounded[k])
            .fold(0.0_f64, |acc, k| acc.max((x[k] - res.x[k]).abs()));
        if moved > 1e-3 * (1.0 + res.x.amax()) {
            return None;
        }
        let rec2 = evaluate(problem, x).ok()?;
        let act = (10.0 * opts.tol_kkt).max(1e-8);
        let c = nlp.ineq().values(x);
        let mut rows: Vec<usize> = (0..m).filter(|&i| c[i] >= -act).collect();
        let pin_tol = ks_pin_tol(&rec2);
        for l in 0..q {
            for (s, &(sg, sh)) in KS_SIGNS.iter().enumerate() {
                let row = m + 4 * l + s;
                let (a, b) = (sg * rec2.big_g[l] - t, sh * rec2.big_h[l] - t);
                let pinned = (a.abs() <= pin_tol && b >= 0.0) || (b.abs() <= pin_tol && a >= 0.0);
                if pinned && !rows.contains(&row) {
                    rows.push(row);
                }
            }
        }
        let (lambda, rho) = multipliers_on_rows(nlp, x, &rows);
        let kkt = kkt_residual(nlp, x, &lambda, &rho).ok()?;
        let feas = feasibility_violation(nlp, x);
        if kkt > res.kkt_residual.max(opts.tol_kkt) || feas > res.feas_violation.max(1e-9 * scale) {
            return None;
        }
        let status = if kkt <= opts.tol_kkt && feas <= opts.tol_kkt {
            NlpStatus::Converged
        } else {
            res.status
        };
        Some(NlpResult {
            x: x.clone(),
            lambda_ineq: lambda,
            rho_eq: rho,
            kkt_residual: kkt,
            feas_violation: feas,
            status,
            evals: res.evals,
        })
    };

    let objective_grad = |y: &DVector<f64>| problem.objective().gradient(y);
    let all_free = vec![true; x.len()];
    let mut face = Face {
        pins: pins.clone(),
        tight: tight.clone(),
    };
    let z = face_active_set(
        problem,
        nlp,
        t,
        &x,
        &mut face,
        (0, 0),
        &objective_grad,
        &all_free,
        scale,
    )?;

    // Variables the objective ignores are then moved to shrink the free
    // coordinate of every half-pinned pair, which keeps `f` unchanged.
    let flat = flat_variables(problem, &z, scale);
    let half: Vec<(usize, bool)> = (0..q)
        .filter_map(|l| {
            let g = face.pins.iter().any(|p| p.0 == l && p.1);
            let h = face.pins.iter().any(|p| p.0 == l && !p.1);
            (g != h).then_some((l, h))
        })
        .collect();
    let cleaned = if flat.iter().any(|&f| f) && !half.is_empty() {
        let spread_grad = |y: &DVector<f64>| -> DVector<f64> {
            let Ok(r) = evaluate(problem, y) else {
                return DVector::from_element(y.len(), f64::NAN);
            };
            half.iter()
                .fold(DVector::zeros(y.len()), |acc, &(l, free_g)| {
                    if free_g {
                        acc + r.jac_big_g.row(l).transpose() * r.big_g[l]
                    } else {
                        acc + r.jac_big_h.row(l).transpose() * r.big_h[l]
                    }
                })
        };
        let fixed = (face.pins.len(), face.tight.len());
        face_active_set(
            problem,
            nlp,
            t,
            &z,
            &mut face,
            fixed,
            &spread_grad,
            &flat,
            scale,
        )
    } else {
        None
    };

    if let Some(c) = cleaned.as_ref().and_then(|c| accept(c, &flat)) {
        return Some(c);
    }
    let bounded = vec![false; x.len()];
    match (accept(&z, &bounded), accept(&x, &bounded)) {
        (Some(a), Some(b)) => Some(if a.kkt_residual <= b.kkt_residual {
            a
        } else {
            b
        }),
        (a, b) => a.or(b),
    }
}

/// Equality set of the polish re-solve: coordinate pins `(pair, on G, sign)`
/// and original inequality rows held at zero.
struct Face {
    pins: Vec<(usize, bool, f64)>,
    tight: Vec<usize>,
}

/// Newton steps per face in the polish re-solve.
const POLISH_SQP_STEPS: usize = 3;

/// Face changes allowed in the polish re-solve.
const POLISH_ACTIVE_SET_ROUNDS: usize = 30;

/// Primal active-set minimisation of the objective with gradient `grad`
/// over `face`, moving only the `free` variables. The first `fixed` pins and
/// tight rows stay unless a pin stops touching an active row; relaxed rows
/// crossed by a step join the face, and rows whose multiplier turns negative
/// leave it.
#[allow(clippy::too_many_arguments)]
fn face_active_set(
    problem: &MpscProblem,
    nlp: &NlpProblem,
    t: f64,
    x0: &DVector<f64>,
    face: &mut Face,
    mut fixed: (usize, usize),
    grad: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    free: &[bool],
    scale: f64,
) -> Option<DVector<f64>> {
    let m = problem.m();
    let mut z = x0.clone();
    for _ in 0..POLISH_ACTIVE_SET_ROUNDS {
        let residual = |y: &DVector<f64>| face_residual(problem, y, t, &face.pins, &face.tight);
        let mut trial = z.clone();
        let mut mult = DVector::zeros(0);
        let mut solved = false;
        for _ in 0..POLISH_SQP_STEPS {
            let (step, y, done) = face_sqp_step(&trial, &residual, grad, free, scale)?;
            mult = y;
            if done {
                solved = true;
                break;
            }
            trial += step;
        }
        let rt = evaluate(problem, &trial).ok()?;
        let viol_tol = 1e-12 * (1.0 + rt.value_scale());
        let c = nlp.ineq().values(&trial);
        let mut violated = false;
        let mut added = false;
        for (i, &ci) in c.iter().enumerate() {
            if ci <= viol_tol {
                continue;
            }
            violated = true;
            if i < m {
                if !face.tight.contains(&i) {
                    face.tight.push(i);
                    added = true;
                }
                continue;
            }
            let (l, s) = ((i - m) / 4, (i - m) % 4);
            let (sg, sh) = KS_SIGNS[s];
            let on_g = sg * rt.big_g[l] - t <= sh * rt.big_h[l] - t;
            if !face.pins.iter().any(|p| p.0 == l && p.1 == on_g) {
                face.pins.push((l, on_g, if on_g { sg } else { sh }));
                added = true;
            }
        }
        if violated {
            if added {
                continue;
            }
            break;
        }
        z = trial;
        if !solved {
            continue;
        }
        // A pin whose partner sits strictly inside the band touches no
        // active KS row.
        let band = t - 1e-12 * (1.0 + rt.value_scale());
        let loose = face.pins.iter().position(|&(l, on_g, _)| {
            let partner = if on_g { rt.big_h[l] } else { rt.big_g[l] };
            partner.abs() < band
        });
        if let Some(k) = loose {
            face.pins.remove(k);
            if k < fixed.0 {
                fixed.0 -= 1;
            }
            continue;
        }
        let np = face.pins.len();
        let off = np + problem.p();
        let worst = (fixed.0..np)
            .map(|k| (k, mult[k]))
            .chain((fixed.1..face.tight.len()).map(|k| (off + k, mult[off + k])))
            .min_by(|u, v| u.1.total_cmp(&v.1));
        match worst {
            Some((k, y)) if y < -1e-10 * scale => {
                if k < np {
                    face.pins.remove(k);
                } else {
                    face.tight.remove(k - off);
                }
            }
            _ => break,
        }
    }
    project_onto_face(problem, &z, t, &face.pins, &face.tight)
}

/// Gauss-Newton projection of `x` onto the face given by `pins`, `h = 0`
/// and the `tight` rows. Past a tolerance relative to the values at the
/// current point, steps continue while they still shrink the residual.
fn project_onto_face(
    problem: &MpscProblem,
    x: &DVector<f64>,
    t: f64,
    pins: &[(usize, bool, f64)],
    tight: &[usize],
) -> Option<DVector<f64>> {
    let mut x = x.clone();
    let (mut v, mut j) = face_residual(problem, &x, t, pins, tight)?;
    for _ in 0..30 {
        if v.iter().all(|&r| r == 0.0) {
            break;
        }
        let next = &x + lstsq_min_norm(&j, &(-&v));
        let (vn, jn) = face_residual(problem, &next, t, pins, tight)?;
        if vn.norm() >= v.norm() {
            let scale = 1.0 + evaluate(problem, &x).ok()?.value_scale();
            if v.amax() <= 1e-15 * scale {
                break;
            }
        }
        (x, v, j) = (next, vn, jn);
    }
    Some(refine_pins(problem, x, t, pins, tight))
}

/// Drives the pin residuals below the resolution of the full projection.
///
/// Steps are scaled by `1 / |x_k|`, so they land on variables near zero, whose
/// floating-point grid is fine enough to carry them. A step is kept only if it shrinks the
/// pins while the other face rows stay within `1e-15 * scale`.
fn refine_pins(
    problem: &MpscProblem,
    x: DVector<f64>,
    t: f64,
    pins: &[(usize, bool, f64)],
    tight: &[usize],
) -> DVector<f64> {
    let np = pins.len();
    let Some((v, _)) = face_residual(problem, &x, t, pins, tight) else {
        return x;
    };
    let Ok(rec) = evaluate(problem, &x) else {
        return x;
    };
    let rest_tol = v
        .rows(np, v.len() - np)
        .amax()
        .max(1e-15 * (1.0 + rec.value_scale()));
    let mut x = x;
    for _ in 0..10 {
        let Some((v, j)) = face_residual(problem, &x, t, pins, tight) else {
            break;
        };
        let pin_v = v.rows(0, np).into_owned();
        if pin_v.iter().all(|&r| r == 0.0) {
            break;
        }
        let w = x.map(|v| 1e-30 / v.abs().max(1e-30));
        let jw = DMatrix::from_fn(np, x.len(), |r, c| j[(r, c)] * w[c]);
        let next = &x + lstsq_min_norm(&jw, &(-&pin_v)).component_mul(&w);
        let Some((vn, _)) = face_residual(problem, &next, t, pins, tight) else {
            break;
        };
        if vn.rows(0, np).amax() >= pin_v.amax() || vn.rows(np, vn.len() - np).amax() > rest_tol {
            break;
        }
        x = next;
    }
    x
}

/// Variables with zero objective gradient and zero objective Hessian column at `x`.
fn flat_variables(problem: &MpscProblem, x: &DVector<f64>, scale: f64) -> Vec<bool> {
    let grad = problem.objective().gradient(x);
    (0..x.len())
        .map(|k| {
            if grad[k].abs() > 1e-12 * scale {
                return false;
            }
            let h = 1e-6 * (1.0 + x[k].abs());
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let col =
                (problem.objective().gradient(&xp) - problem.objective().gradient(&xm)) / (2.0 * h);
            col.amax() <= 1e-9 * scale
        })
        .collect()
}

/// Values and Jacobian of `sign G_l - t` (or `sign H_l - t`) over `pins`,
/// `h`, and `g_i` over `tight`.
fn face_residual(
    problem: &MpscProblem,
    x: &DVector<f64>,
    t: f64,
    pins: &[(usize, bool, f64)],
    tight: &[usize],
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let r = evaluate(problem, x).ok()?;
    let rows = pins.len() + problem.p() + tight.len();
    let mut v = DVector::zeros(rows);
    let mut j = DMatrix::zeros(rows, x.len());
    for (i, &(l, on_g, sign)) in pins.iter().enumerate() {
        if on_g {
            v[i] = sign * r.big_g[l] - t;
            j.row_mut(i).copy_from(&(r.jac_big_g.row(l) * sign));
        } else {
            v[i] = sign * r.big_h[l] - t;
            j.row_mut(i).copy_from(&(r.jac_big_h.row(l) * sign));
        }
    }
    for k in 0..problem.p() {
        v[pins.len() + k] = r.h[k];
        j.row_mut(pins.len() + k).copy_from(&r.jac_h.row(k));
    }
    let off = pins.len() + problem.p();
    for (k, &i) in tight.iter().enumerate() {
        v[off + k] = r.g[i];
        j.row_mut(off + k).copy_from(&r.jac_g.row(i));
    }
    Some((v, j))
}

/// One Newton step on the KKT system of `min psi` subject to `c(x) = 0`
/// over the `free` variables, where `grad` is the gradient of `psi` and
/// `residual` returns `(c, J_c)`. The Lagrangian Hessian comes from central
/// differences of its gradient. Returns the step, the multipliers after it,
/// and whether `x` was already stationary (zero step).
fn face_sqp_step<F>(
    x: &DVector<f64>,
    residual: &F,
    grad: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    free: &[bool],
    scale: f64,
) -> Option<(DVector<f64>, DVector<f64>, bool)>
where
    F: Fn(&DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)>,
{
    let n = x.len();
    let mask = |mut m: DMatrix<f64>| {
        for k in (0..n).filter(|&k| !free[k]) {
            m.column_mut(k).fill(0.0);
        }
        m
    };
    let (v, j) = residual(x)?;
    let j = mask(j);
    let g0 = DVector::from_iterator(
        n,
        grad(x)
            .iter()
            .zip(free)
            .map(|(&g, &f)| if f { g } else { 0.0 }),
    );
    let y = lstsq_min_norm(&j.transpose(), &(-&g0));
    let grad_l = &g0 + j.tr_mul(&y);
    if !grad_l.iter().all(|g| g.is_finite()) {
        return None;
    }
    if grad_l.amax() <= 1e-13 * scale && v.amax() <= 1e-15 * scale {
        return Some((DVector::zeros(n), y, true));
    }
    let lag_grad = |z: &DVector<f64>| -> Option<DVector<f64>> {
        let (_, jz) = residual(z)?;
        Some(grad(z) + mask(jz).tr_mul(&y))
    };
    let mut hess = DMatrix::zeros(n, n);
    for k in (0..n).filter(|&k| free[k]) {
        let h = 1e-6 * (1.0 + x[k].abs());
        let mut xp = x.clone();
        xp[k] += h;
        let mut xm = x.clone();
        xm[k] -= h;
        hess.set_column(k, &((lag_grad(&xp)? - lag_grad(&xm)?) / (2.0 * h)));
    }
    for k in (0..n).filter(|&k| !free[k]) {
        hess.row_mut(k).fill(0.0);
        hess.column_mut(k).fill(0.0);
        hess[(k, k)] = 1.0;
    }
    // The proximal term keeps steps finite along directions the objective ignores.
    let hess = (&hess + hess.transpose()) * 0.5 + DMatrix::identity(n, n) * (1e-8 * scale);
    let r = j.nrows();
    let mut kkt = DMatrix::zeros(n + r, n + r);
    kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
    kkt.view_mut((0, n), (n, r)).copy_from(&j.transpose());
    kkt.view_mut((n, 0), (r, n)).copy_from(&j);
    let mut rhs = DVector::zeros(n + r);
    rhs.rows_mut(0, n).copy_from(&(-grad_l));
    rhs.rows_mut(n, r).copy_from(&(-v));
    let sol = lstsq_min_norm(&kkt, &rhs);
    let step = sol.rows(0, n).into_owned();
    let y_new = &y + sol.rows(n, r);
    step.iter()
        .all(|s| s.is_finite())
        .then_some((step, y_new, false))
}

fn finish_subsolve(
    problem: &MpscProblem,
    nlp: &NlpProblem,
    res: NlpResult,
    t: f64,
    opts: &DriverOptions,
) -> (NlpResult, bool) {
    if opts.polish && matches!(opts.scheme, SchemeKind::Ks) {
        if let Some(p) = polish_ks(problem, nlp, &res, t, &opts.subsolver) {
            return (p, true);
        }
    }
    (res, false)
}

/// Runs the relaxation loop from `x0`.
///
/// A subsolve that does not converge is repeated from up to `restarts`
/// seeded perturbations of its starting point, keeping the best result.
/// Stops after a converged subsolve whose point is switching-feasible within
/// `tol_feas` and whose recovered multipliers leave a stationarity residual
/// within `tol_outer`, or before solving with `t_k < t_min`. The final point is classified with
/// activity tolerance `10 max(tol_outer, sqrt(t_last))`.
pub fn solve_mpsc(
    problem: &MpscProblem,
    x0: &DVector<f64>,
    opts: &DriverOptions,
) -> Result<SolveTrace> {
    opts.validate()?;
    problem.check_dim(x0)?;
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("starting point".into()));
    }
    let start = Instant::now();
    let mut trace = SolveTrace {
        problem: problem.name().to_string(),
        scheme: opts.scheme.label().to_string(),
        x0: x0.clone(),
        iterations: Vec::new(),
        x: x0.clone(),
        objective: problem.f(x0),
        certificate: None,
        certificate_error: None,
        stop: StopReason::ParameterFloor,
        degraded: false,
        elapsed: Duration::ZERO,
        evals: EvalCounts::default(),
    };
    let mut x = x0.clone();
    let mut warm: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut t = opts.t0;
    let mut k = 1;
    loop {
        if t < opts.t_min {
            trace.stop = StopReason::ParameterFloor;
            break;
        }
        let nlp = build_relaxed(problem, &opts.scheme, t)?;
        let solved = solve_nlp_warm(
            &nlp,
            &x,
            warm.as_ref().map(|w| &w.0),
            warm.as_ref().map(|w| &w.1),
            &opts.subsolver,
        );
        let (mut res, mut polished) = match solved {
            Ok(r) => {
                trace.evals += r.evals;
                finish_subsolve(problem, &nlp, r, t, opts)
            }
            Err(e) => {
                trace.stop = StopReason::SubsolverFailure(format!("k = {k}: {e}"));
                break;
            }
        };
        let mut restarts = 0;
        while res.status != NlpStatus::Converged && restarts < opts.restarts {
            restarts += 1;
            let mut rng = ChaCha8Rng::seed_from_u64((k as u64) << 8 | restarts as u64);
            let radius = opts.restart_radius * (1.0 + x.amax());
            let x_try = DVector::from_fn(x.len(), |i, _| x[i] + radius * rng.gen_range(-1.0..1.0));
            let Ok(r) = solve_nlp_warm(&nlp, &x_try, None, None, &opts.subsolver) else {
                continue;
            };
            trace.evals += r.evals;
            let (r, p) = finish_subsolve(problem, &nlp, r, t, opts);
            let better = r.status == NlpStatus::Converged
                || (!matches!(r.status, NlpStatus::Failed | NlpStatus::UnboundedSuspected)
                    && r.kkt_residual < res.kkt_residual);
            if better {
                res = r;
                polished = p;
            }
        }
        if matches!(
            res.status,
            NlpStatus::Failed | NlpStatus::UnboundedSuspected
        ) {
            trace.stop = StopReason::SubsolverFailure(format!(
                "k = {k}: subsolver status {}",
                res.status.label()
            ));
            break;
        }
        if res.status != NlpStatus::Converged {
            trace.degraded = true;
        }
        let mult = recover_mpsc_multipliers(problem, &nlp, &res.x, &res.lambda_ineq, &res.rho_eq)?;
        let rec = evaluate(problem, &res.x)?;
        let mpsc_stat = stationarity_vector(&rec, &mult).amax();
        let sur_stat =
            surrogate_stationarity_vector(&nlp, &res.x, &res.lambda_ineq, &res.rho_eq).amax();
        let record = IterationRecord {
            k,
            t,
            objective: rec.f,
            switching_violation: problem.switching_violation(&res.x),
            feasibility: problem.feasibility_violation(&res.x),
            surrogate_stationarity: sur_stat,
            mpsc_stationarity: mpsc_stat,
            multipliers: mult,
            polished,
            restarts,
            nlp: res.clone(),
        };
        let done = res.status == NlpStatus::Converged
            && record.feasibility <= opts.tol_feas
            && record.mpsc_stationarity <= opts.tol_outer;
        trace.iterations.push(record);
        x = res.x;
        warm = Some((res.lambda_ineq, res.rho_eq));
        if done {
            trace.stop = StopReason::Converged;
            break;
        }
        t *= opts.t_shrink;
        k += 1;
    }
    if let Some(last) = trace.iterations.last() {
        trace.x = last.nlp.x.clone();
        trace.objective = last.objective;
        let act = 10.0 * opts.tol_outer.max(last.t.sqrt());
        let tols = CertTolerances {
            active: act,
            residual: opts.tol_outer,
            enumeration_cap: opts.enumeration_cap,
        };
        match classify_stationarity(problem, &trace.x, tols) {
            Ok(c) => trace.certificate = Some(c),
            Err(e) => trace.certificate_error = Some(e.to_string()),
        }
    }
    trace.elapsed = start.elapsed();
    Ok(trace)
}

/// Runs [`solve_mpsc`] from every start, in parallel on at most `jobs`
/// threads (all available when `None`). Results keep the order of `starts`.
pub fn solve_multistart(
    problem: &MpscProblem,
    starts: &[DVector<f64>],
    opts: &DriverOptions,
    jobs: Option<usize>,
) -> Vec<Result<SolveTrace>> {
    let run = || {
        starts
            .par_iter()
            .map(|x0| solve_mpsc(problem, x0, opts))
            .collect()
    };
    match jobs {
        Some(j) => match rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
        {
            Ok(pool) => pool.install(run),
            Err(_) => starts
                .iter()
                .map(|x0| solve_mpsc(problem, x0, opts))
                .collect(),
        },
        None => run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::benchmarks::{either_or_e2, example_4_1, example_su};
    use crate::stationarity::StationarityKind;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn zero_multipliers_recover_to_zero() {
        let p = example_4_1();
        for scheme in [
            SchemeKind::Ks,
            SchemeKind::Scholtes,
            SchemeKind::su(),
            SchemeKind::kdb(),
        ] {
            let nlp = build_relaxed(&p, &scheme, 0.1).unwrap();
            let m = recover_mpsc_multipliers(
                &p,
                &nlp,
                &dv(&[0.3, 0.05]),
                &DVector::zeros(nlp.n_ineq()),
                &dv(&[]),
            )
            .unwrap();
            assert_eq!(m, Multipliers::for_problem(&p));
        }
    }

    #[test]
    fn ks_recovery_on_pinned_g() {
        // G = t = 1, H = 3: pair in the G-pinned set of row 1.
        let p = example_4_1();
        let nlp = build_relaxed(&p, &SchemeKind::Ks, 1.0).unwrap();
        let lam = dv(&[2.0, 0.0, 0.0, 0.0]);
        let m = recover_mpsc_multipliers(&p, &nlp, &dv(&[1.0, 3.0]), &lam, &dv(&[])).unwrap();
        assert_eq!(m.mu[0], 4.0);
        assert_eq!(m.nu[0], 0.0);
    }

    #[test]
    fn scholtes_recovery_on_diagonal() {
        let p = example_4_1();
        for t in [1e-2, 1e-4] {
            let nlp = build_relaxed(&p, &SchemeKind::Scholtes, t).unwrap();
            let s = t.sqrt();
            let xi = (1.0 - s) / s;
            let m = recover_mpsc_multipliers(&p, &nlp, &dv(&[s, s]), &dv(&[xi, 0.0]), &dv(&[]))
                .unwrap();
            assert!((m.mu[0] - xi * s).abs() < 1e-12 && (m.nu[0] - xi * s).abs() < 1e-12);
        }
    }

    #[test]
    fn recovery_errors() {
        let p = example_4_1();
        let nlp = build_relaxed(&p, &SchemeKind::Ks, 0.0).unwrap();
        assert!(
            recover_mpsc_multipliers(&p, &nlp, &dv(&[0.0, 0.0]), &DVector::zeros(4), &dv(&[]))
                .is_err()
        );
        let nlp = build_relaxed(&p, &SchemeKind::Ks, 0.1).unwrap();
        assert!(matches!(
            recover_mpsc_multipliers(&p, &nlp, &dv(&[0.0, 0.0]), &DVector::zeros(3), &dv(&[])),
            Err(Error::MissingProvenance(_))
        ));
    }

    #[test]
    fn scholtes_driver_reaches_weak_point() {
        let p = example_4_1();
        let tr = solve_mpsc(
            &p,
            &dv(&[1.0, 1.0]),
            &DriverOptions::with_scheme(SchemeKind::Scholtes),
        )
        .unwrap();
        assert!(tr.x.amax() < 1e-3, "{}", tr.x);
        assert_eq!(tr.certificate.as_ref().unwrap().kind, StationarityKind::W);
        for w in tr.iterations.windows(2) {
            assert!(w[1].t < w[0].t);
        }
    }

    #[test]
    fn ks_driver_reaches_an_optimum() {
        let p = example_4_1();
        let tr = solve_mpsc(&p, &dv(&[1.0, 0.5]), &DriverOptions::default()).unwrap();
        assert!((tr.objective - 0.5).abs() < 1e-4, "{tr:?}");
        assert!(tr.certificate.as_ref().unwrap().kind >= StationarityKind::M);
        for it in &tr.iterations {
            assert!(it.multipliers.overlapping_support().is_empty());
            assert!((it.mpsc_stationarity - it.surrogate_stationarity).abs() <= 1e-10);
        }
    }

    #[test]
    fn su_residual_at_analytic_point() {
        let p = example_su();
        for t in [1.0, 0.1, 0.01] {
            let nlp = build_relaxed(&p, &SchemeKind::su(), t).unwrap();
            let a = t / 2.0 * (1.0 - 2.0 / std::f64::consts::PI);
            let x = dv(&[a, a]);
            let c = nlp.ineq().values(&x);
            assert!(c[1].abs() < 1e-14, "{c}");
        }
    }

    #[test]
    fn options_are_validated() {
        let p = example_4_1();
        let bad = DriverOptions {
            t_shrink: 1.5,
            ..Default::default()
        };
        assert!(solve_mpsc(&p, &dv(&[1.0, 1.0]), &bad).is_err());
        let bad = DriverOptions {
            t_min: 1.0,
            ..Default::default()
        };
        assert!(solve_mpsc(&p, &dv(&[1.0, 1.0]), &bad).is_err());
    }

    #[test]
    fn face_projection_pins_below_coarse_grid() {
        // G_1 = t and H_2 = t at (4.0000008, 3.9999999, 0, 0, 0, 0); both
        // expressions mix O(10) terms, so only the slack variables resolve
        // the last digits.
        let p = either_or_e2();
        let t = 1e-6;
        let x0 = dv(&[4.0000008 + 1e-9, 3.9999999 - 2e-9, 0.0, 0.0, 0.0, 0.0]);
        let pins = [(0, true, 1.0), (1, false, 1.0)];
        let x = project_onto_face(&p, &x0, t, &pins, &[0, 3]).unwrap();
        let r = evaluate(&p, &x).unwrap();
        assert!((r.big_g[0] - t).abs() <= 1e-21, "{:e}", r.big_g[0] - t);
        assert!((r.big_h[1] - t).abs() <= 1e-21, "{:e}", r.big_h[1] - t);
        assert!(r.g[0].abs() <= 1e-14 && r.g[3].abs() <= 1e-14);
        assert!((&x - &x0).amax() < 1e-8);
    }
}
