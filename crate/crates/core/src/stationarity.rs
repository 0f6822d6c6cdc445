//! Active-index classification, W-/M-/S-stationarity certificates and the
//! switching-tailored constraint qualifications (NNAMCQ, MFCQ, LICQ).
//!
//! All decisions are numerical: activity, residual and rank tests use the
//! absolute tolerances passed in by the caller.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{evaluate, EvalRecord, MpscProblem};

/// Default cap on the number of biactive indices enumerated by the M-test
/// and the NNAMCQ probe (`2^20` branches).
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Active sets of a switching-feasible point. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndexPartition {
    /// Active inequalities, `g_i(x) >= -tol`.
    pub active_ineq: Vec<usize>,
    /// `G_l = 0`, `H_l != 0`.
    pub g_only: Vec<usize>,
    /// `G_l != 0`, `H_l = 0`.
    pub h_only: Vec<usize>,
    /// `G_l = H_l = 0` (biactive).
    pub biactive: Vec<usize>,
    pub tol_active: f64,
}

/// Multipliers for `g`, `h`, `G`, `H` respectively.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub lambda: DVector<f64>,
    pub rho: DVector<f64>,
    pub mu: DVector<f64>,
    pub nu: DVector<f64>,
}

impl Multipliers {
    pub fn zeros(m: usize, p: usize, q: usize) -> Self {
        Self {
            lambda: DVector::zeros(m),
            rho: DVector::zeros(p),
            mu: DVector::zeros(q),
            nu: DVector::zeros(q),
        }
    }

    pub fn for_problem(problem: &MpscProblem) -> Self {
        Self::zeros(problem.m(), problem.p(), problem.q())
    }

    /// Indices `l` where both `mu_l` and `nu_l` are nonzero.
    pub fn overlapping_support(&self) -> Vec<usize> {
        (0..self.mu.len())
            .filter(|&l| self.mu[l] != 0.0 && self.nu[l] != 0.0)
            .collect()
    }
}

/// Stationarity notions, ordered by strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StationarityKind {
    None,
    W,
    M,
    S,
}

impl StationarityKind {
    pub fn label(self) -> &'static str {
        match self {
            StationarityKind::None => "none",
            StationarityKind::W => "W",
            StationarityKind::M => "M",
            StationarityKind::S => "S",
        }
    }
}

impl std::fmt::Display for StationarityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for StationarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "w" => Ok(StationarityKind::W),
            "m" => Ok(StationarityKind::M),
            "s" => Ok(StationarityKind::S),
            "none" => Ok(StationarityKind::None),
            other => Err(Error::InvalidParameter(format!(
                "unknown stationarity kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqFlags {
    pub nnamcq: bool,
    pub mpsc_mfcq: bool,
    pub mpsc_licq: bool,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityCertificate {
    /// The kind that was certified, or `None` if no multiplier pattern fit.
    pub kind: StationarityKind,
    /// Best multipliers found for the requested pattern.
    pub multipliers: Multipliers,
    /// Infinity norm of the stationarity equation at `multipliers`.
    pub residual: f64,
    pub tol: f64,
    pub partition: IndexPartition,
    /// Constraint qualification probes, when they were requested.
    pub cq_flags: Option<CqFlags>,
}

/// Tolerances for certificate computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertTolerances {
    /// Activity decisions for `g`, `G`, `H`.
    pub active: f64,
    /// Accepted stationarity residual.
    pub residual: f64,
    /// Largest `|I^GH|` enumerated for the M-test.
    pub enumeration_cap: usize,
}

impl CertTolerances {
    pub fn uniform(tol: f64) -> Self {
        Self {
            active: tol,
            residual: tol,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

fn check_feasible(rec: &EvalRecord, tol: f64) -> Result<()> {
    if let Some((i, v)) = rec.g.iter().enumerate().find(|(_, &v)| v > tol) {
        return Err(Error::Infeasible(format!(
            "g[{i}] = {v:e} exceeds tolerance {tol:e}"
        )));
    }
    if let Some((j, v)) = rec.h.iter().enumerate().find(|(_, &v)| v.abs() > tol) {
        return Err(Error::Infeasible(format!(
            "h[{j}] = {v:e} exceeds tolerance {tol:e}"
        )));
    }
    for l in 0..rec.big_g.len() {
        let (a, b) = (rec.big_g[l], rec.big_h[l]);
        if a.abs() > tol && b.abs() > tol {
            return Err(Error::Infeasible(format!(
                "switching pair {l}: |G| = {:e} and |H| = {:e} both exceed {tol:e}",
                a.abs(),
                b.abs()
            )));
        }
    }
    Ok(())
}

fn partition_from_record(rec: &EvalRecord, tol: f64) -> Result<IndexPartition> {
    check_feasible(rec, tol)?;
    let mut part = IndexPartition {
        tol_active: tol,
        ..Default::default()
    };
    part.active_ineq = (0..rec.g.len()).filter(|&i| rec.g[i] >= -tol).collect();
    for l in 0..rec.big_g.len() {
        let g0 = rec.big_g[l].abs() <= tol;
        let h0 = rec.big_h[l].abs() <= tol;
        match (g0, h0) {
            (true, true) => part.biactive.push(l),
            (true, false) => part.g_only.push(l),
            (false, true) => part.h_only.push(l),
            (false, false) => unreachable!("screened by check_feasible"),
        }
    }
    Ok(part)
}

/// Splits the switching indices into `I^G`, `I^H`, `I^GH` and collects the
/// active inequalities.
pub fn classify_indices(
    problem: &MpscProblem,
    x: &DVector<f64>,
    tol: f64,
) -> Result<IndexPartition> {
    let rec = evaluate(problem, x)?;
    partition_from_record(&rec, tol)
}

/// `grad f + J_g^T lambda + J_h^T rho + J_G^T mu + J_H^T nu`.
pub fn stationarity_vector(rec: &EvalRecord, mult: &Multipliers) -> DVector<f64> {
    &rec.grad_f
        + rec.jac_g.transpose() * &mult.lambda
        + rec.jac_h.transpose() * &mult.rho
        + rec.jac_big_g.transpose() * &mult.mu
        + rec.jac_big_h.transpose() * &mult.nu
}

/// Infinity norm of [`stationarity_vector`].
pub fn stationarity_residual(
    problem: &MpscProblem,
    x: &DVector<f64>,
    mult: &Multipliers,
) -> Result<f64> {
    let rec = evaluate(problem, x)?;
    Ok(stationarity_vector(&rec, mult).amax())
}

/// Which switching multipliers are allowed to be nonzero.
#[derive(Debug, Clone)]
struct SupportPattern {
    mu_free: Vec<bool>,
    nu_free: Vec<bool>,
}

impl SupportPattern {
    fn weak(part: &IndexPartition, q: usize) -> Self {
        let mut mu_free = vec![true; q];
        let mut nu_free = vec![true; q];
        for &l in &part.h_only {
            mu_free[l] = false;
        }
        for &l in &part.g_only {
            nu_free[l] = false;
        }
        Self { mu_free, nu_free }
    }
}

/// Column layout of the multiplier least-squares problem.
struct MultiplierSystem {
    matrix: DMatrix<f64>,
    nonneg: Vec<bool>,
    slots: Vec<Slot>,
}

#[derive(Clone, Copy)]
enum Slot {
    Lambda(usize),
    Rho(usize),
    Mu(usize),
    Nu(usize),
}

fn assemble(rec: &EvalRecord, part: &IndexPartition, pattern: &SupportPattern) -> MultiplierSystem {
    let n = rec.grad_f.len();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut nonneg = Vec::new();
    let mut slots = Vec::new();
    for &i in &part.active_ineq {
        cols.push(rec.jac_g.row(i).transpose());
        nonneg.push(true);
        slots.push(Slot::Lambda(i));
    }
    for j in 0..rec.h.len() {
        cols.push(rec.jac_h.row(j).transpose());
        nonneg.push(false);
        slots.push(Slot::Rho(j));
    }
    for l in 0..rec.big_g.len() {
        if pattern.mu_free[l] {
            cols.push(rec.jac_big_g.row(l).transpose());
            nonneg.push(false);
            slots.push(Slot::Mu(l));
        }
        if pattern.nu_free[l] {
            cols.push(rec.jac_big_h.row(l).transpose());
            nonneg.push(false);
            slots.push(Slot::Nu(l));
        }
    }
    MultiplierSystem {
        matrix: linalg::columns(&cols, n),
        nonneg,
        slots,
    }
}

fn scatter(
    sys: &MultiplierSystem,
    sol: &DVector<f64>,
    m: usize,
    p: usize,
    q: usize,
) -> Multipliers {
    let mut mult = Multipliers::zeros(m, p, q);
    for (k, slot) in sys.slots.iter().enumerate() {
        match *slot {
            Slot::Lambda(i) => mult.lambda[i] = sol[k],
            Slot::Rho(j) => mult.rho[j] = sol[k],
            Slot::Mu(l) => mult.mu[l] = sol[k],
            Slot::Nu(l) => mult.nu[l] = sol[k],
        }
    }
    mult
}

fn best_multipliers(
    rec: &EvalRecord,
    part: &IndexPartition,
    pattern: &SupportPattern,
) -> (Multipliers, f64) {
    let sys = assemble(rec, part, pattern);
    let sol = linalg::bounded_lstsq(&sys.matrix, &(-&rec.grad_f), &sys.nonneg);
    let mult = scatter(&sys, &sol, rec.g.len(), rec.h.len(), rec.big_g.len());
    let res = stationarity_vector(rec, &mult).amax();
    (mult, res)
}

/// Searches for multipliers of the requested kind at `x`.
///
/// W and S are single bounded least-squares problems; M enumerates the
/// `2^|I^GH|` branches `mu_l = 0` or `nu_l = 0`. The returned certificate
/// carries `kind = None` when no pattern reaches the residual tolerance, in
/// which case the multipliers are the best ones found.
pub fn verify_stationarity(
    problem: &MpscProblem,
    x: &DVector<f64>,
    kind: StationarityKind,
    tols: CertTolerances,
) -> Result<StationarityCertificate> {
    let rec = evaluate(problem, x)?;
    let part = partition_from_record(&rec, tols.active)?;
    verify_with_record(&rec, part, kind, tols)
}

fn verify_with_record(
    rec: &EvalRecord,
    part: IndexPartition,
    kind: StationarityKind,
    tols: CertTolerances,
) -> Result<StationarityCertificate> {
    let q = rec.big_g.len();
    let base = SupportPattern::weak(&part, q);
    let (mult, residual) = match kind {
        StationarityKind::None => {
            return Err(Error::InvalidParameter("cannot verify kind `none`".into()));
        }
        StationarityKind::W => best_multipliers(rec, &part, &base),
        StationarityKind::S => {
            let mut pat = base.clone();
            for &l in &part.biactive {
                pat.mu_free[l] = false;
                pat.nu_free[l] = false;
            }
            best_multipliers(rec, &part, &pat)
        }
        StationarityKind::M => {
            let nb = part.biactive.len();
            if nb > tols.enumeration_cap {
                return Err(Error::EnumerationCap {
                    count: nb,
                    cap: tols.enumeration_cap,
                });
            }
            let mut best: Option<(Multipliers, f64)> = None;
            for mask in 0u64..(1u64 << nb) {
                let mut pat = base.clone();
                for (bit, &l) in part.biactive.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        pat.nu_free[l] = false;
                    } else {
                        pat.mu_free[l] = false;
                    }
                }
                let cand = best_multipliers(rec, &part, &pat);
                let better = match &best {
                    None => true,
                    Some((_, r)) => cand.1 < *r,
                };
                if better {
                    best = Some(cand);
                }
                if best.as_ref().is_some_and(|(_, r)| *r <= tols.residual) {
                    break;
                }
            }
            best.expect("at least one branch")
        }
    };
    let certified = if residual <= tols.residual {
        kind
    } else {
        StationarityKind::None
    };
    Ok(StationarityCertificate {
        kind: certified,
        multipliers: mult,
        residual,
        tol: tols.residual,
        partition: part,
        cq_flags: None,
    })
}

/// Strongest kind (S, then M, then W) that can be certified at `x`.
pub fn classify_stationarity(
    problem: &MpscProblem,
    x: &DVector<f64>,
    tols: CertTolerances,
) -> Result<StationarityCertificate> {
    let rec = evaluate(problem, x)?;
    let part = partition_from_record(&rec, tols.active)?;
    let mut last = None;
    for kind in [
        StationarityKind::S,
        StationarityKind::M,
        StationarityKind::W,
    ] {
        let cert = match verify_with_record(&rec, part.clone(), kind, tols) {
            Ok(c) => c,
            Err(Error::EnumerationCap { .. }) => continue,
            Err(e) => return Err(e),
        };
        if cert.kind != StationarityKind::None {
            return Ok(cert);
        }
        last = Some(cert);
    }
    Ok(last.expect("W test always runs"))
}

/// Like [`classify_stationarity`] and additionally fills in the CQ probes.
pub fn classify_with_cq(
    problem: &MpscProblem,
    x: &DVector<f64>,
    tols: CertTolerances,
) -> Result<StationarityCertificate> {
    let mut cert = classify_stationarity(problem, x, tols)?;
    let rec = evaluate(problem, x)?;
    let cq_tol = tols.active.max(1e-8);
    cert.cq_flags = Some(CqFlags {
        nnamcq: nnamcq_with(&rec, &cert.partition, cq_tol, tols.enumeration_cap).unwrap_or(false),
        mpsc_mfcq: mfcq_with(&rec, &cert.partition, cq_tol),
        mpsc_licq: licq_with(&rec, &cert.partition, cq_tol),
        tol: cq_tol,
    });
    Ok(cert)
}

fn tnlp_family(rec: &EvalRecord, part: &IndexPartition) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let nonneg: Vec<_> = part
        .active_ineq
        .iter()
        .map(|&i| rec.jac_g.row(i).transpose())
        .collect();
    let mut free: Vec<_> = (0..rec.h.len())
        .map(|j| rec.jac_h.row(j).transpose())
        .collect();
    for &l in part.g_only.iter().chain(part.biactive.iter()) {
        free.push(rec.jac_big_g.row(l).transpose());
    }
    for &l in part.h_only.iter().chain(part.biactive.iter()) {
        free.push(rec.jac_big_h.row(l).transpose());
    }
    (free, nonneg)
}

fn licq_with(rec: &EvalRecord, part: &IndexPartition, tol: f64) -> bool {
    let (mut free, nonneg) = tnlp_family(rec, part);
    free.extend(nonneg);
    if free.is_empty() {
        return true;
    }
    let n = rec.grad_f.len();
    let normalized: Vec<_> = free
        .iter()
        .map(|v| {
            let nv = v.norm();
            if nv > 0.0 {
                v / nv
            } else {
                v.clone()
            }
        })
        .collect();
    linalg::rank(&linalg::columns(&normalized, n), tol) == free.len()
}

fn mfcq_with(rec: &EvalRecord, part: &IndexPartition, tol: f64) -> bool {
    let (free, nonneg) = tnlp_family(rec, part);
    linalg::positively_linearly_independent(&free, &nonneg, rec.grad_f.len(), tol)
}

fn nnamcq_with(rec: &EvalRecord, part: &IndexPartition, tol: f64, cap: usize) -> Result<bool> {
    let nb = part.biactive.len();
    if nb > cap {
        return Err(Error::EnumerationCap { count: nb, cap });
    }
    let n = rec.grad_f.len();
    let nonneg: Vec<_> = part
        .active_ineq
        .iter()
        .map(|&i| rec.jac_g.row(i).transpose())
        .collect();
    let mut base: Vec<_> = (0..rec.h.len())
        .map(|j| rec.jac_h.row(j).transpose())
        .collect();
    for &l in &part.g_only {
        base.push(rec.jac_big_g.row(l).transpose());
    }
    for &l in &part.h_only {
        base.push(rec.jac_big_h.row(l).transpose());
    }
    for mask in 0u64..(1u64 << nb) {
        let mut free = base.clone();
        for (bit, &l) in part.biactive.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                free.push(rec.jac_big_g.row(l).transpose());
            } else {
                free.push(rec.jac_big_h.row(l).transpose());
            }
        }
        if !linalg::positively_linearly_independent(&free, &nonneg, n, tol) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// MPSC-NNAMCQ probe: every sign-support branch of the homogeneous
/// multiplier system admits only the zero solution.
pub fn check_nnamcq(problem: &MpscProblem, x: &DVector<f64>, tol: f64) -> Result<bool> {
    check_nnamcq_capped(problem, x, tol, DEFAULT_ENUMERATION_CAP)
}

pub fn check_nnamcq_capped(
    problem: &MpscProblem,
    x: &DVector<f64>,
    tol: f64,
    cap: usize,
) -> Result<bool> {
    let rec = evaluate(problem, x)?;
    let part = partition_from_record(&rec, tol)?;
    nnamcq_with(&rec, &part, tol, cap)
}

/// MPSC-LICQ: linear independence of the gradients of the tightened problem.
pub fn check_mpsc_licq(problem: &MpscProblem, x: &DVector<f64>, tol: f64) -> Result<bool> {
    let rec = evaluate(problem, x)?;
    let part = partition_from_record(&rec, tol)?;
    Ok(licq_with(&rec, &part, tol))
}

/// MPSC-MFCQ: positive-linear independence of the same gradient family,
/// with the active inequality gradients as the sign-constrained part.
pub fn check_mpsc_mfcq(problem: &MpscProblem, x: &DVector<f64>, tol: f64) -> Result<bool> {
    let rec = evaluate(problem, x)?;
    let part = partition_from_record(&rec, tol)?;
    Ok(mfcq_with(&rec, &part, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::benchmarks::{example_4_1, example_su};
    use crate::problem::{ClosureMap, ClosureScalar};
    use nalgebra::DMatrix;

    fn pt(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn classify_example_points() {
        let p = example_4_1();
        let a = classify_indices(&p, &pt(&[1.0, 0.0]), 1e-8).unwrap();
        assert!(a.g_only.is_empty() && a.biactive.is_empty());
        assert_eq!(a.h_only, vec![0]);
        let b = classify_indices(&p, &pt(&[0.0, 0.0]), 1e-8).unwrap();
        assert_eq!(b.biactive, vec![0]);
        let c = classify_indices(&p, &pt(&[0.0, 1.0]), 1e-8).unwrap();
        assert_eq!(c.g_only, vec![0]);
    }

    #[test]
    fn classify_rejects_switching_infeasible_point() {
        let p = example_4_1();
        let err = classify_indices(&p, &pt(&[0.5, 0.5]), 1e-8).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn origin_is_weakly_stationary_with_unit_multipliers() {
        let p = example_4_1();
        let cert = verify_stationarity(
            &p,
            &pt(&[0.0, 0.0]),
            StationarityKind::W,
            CertTolerances::uniform(1e-8),
        )
        .unwrap();
        assert_eq!(cert.kind, StationarityKind::W);
        assert!((cert.multipliers.mu[0] - 1.0).abs() < 1e-12);
        assert!((cert.multipliers.nu[0] - 1.0).abs() < 1e-12);
        assert!(cert.residual < 1e-12);
    }

    #[test]
    fn origin_is_not_m_stationary() {
        let p = example_4_1();
        let cert = verify_stationarity(
            &p,
            &pt(&[0.0, 0.0]),
            StationarityKind::M,
            CertTolerances::uniform(1e-8),
        )
        .unwrap();
        assert_eq!(cert.kind, StationarityKind::None);
        assert!(cert.residual > 0.5);
    }

    #[test]
    fn axis_point_is_strongly_stationary() {
        let p = example_4_1();
        let cert = verify_stationarity(
            &p,
            &pt(&[1.0, 0.0]),
            StationarityKind::S,
            CertTolerances::uniform(1e-8),
        )
        .unwrap();
        assert_eq!(cert.kind, StationarityKind::S);
        assert_eq!(cert.multipliers.mu[0], 0.0);
        assert!((cert.multipliers.nu[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn m_enumeration_cap_is_enforced() {
        let p = example_4_1();
        let tols = CertTolerances {
            enumeration_cap: 0,
            ..CertTolerances::uniform(1e-8)
        };
        let err = verify_stationarity(&p, &pt(&[0.0, 0.0]), StationarityKind::M, tols).unwrap_err();
        assert!(matches!(err, Error::EnumerationCap { count: 1, cap: 0 }));
    }

    #[test]
    fn nnamcq_holds_for_independent_switching_gradients() {
        assert!(check_nnamcq(&example_4_1(), &pt(&[0.0, 0.0]), 1e-8).unwrap());
    }

    fn linear_pairs(pairs: &'static [(usize, usize)]) -> MpscProblem {
        let q = pairs.len();
        let gi: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let hi: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let sel = |idx: Vec<usize>| {
            let idx2 = idx.clone();
            ClosureMap::new(
                q,
                move |x| DVector::from_iterator(idx.len(), idx.iter().map(|&i| x[i])),
                move |x| {
                    let mut j = DMatrix::zeros(idx2.len(), x.len());
                    for (r, &i) in idx2.iter().enumerate() {
                        j[(r, i)] = 1.0;
                    }
                    j
                },
            )
        };
        MpscProblem::builder(
            "pairs",
            2,
            ClosureScalar::new(|x| x.norm_squared(), |x| 2.0 * x),
        )
        .switching(sel(gi), sel(hi))
        .build()
        .unwrap()
    }

    #[test]
    fn nnamcq_with_single_duplicated_pair_follows_the_m_sign_rule() {
        // G_1 = H_1 = x_1: the pair (mu, nu) = (1, -1) cancels, but it violates
        // mu * nu = 0, so every M-branch only admits the zero multiplier.
        let p = linear_pairs(&[(0, 0)]);
        assert!(check_nnamcq(&p, &pt(&[0.0, 0.0]), 1e-8).unwrap());
        assert!(!check_mpsc_licq(&p, &pt(&[0.0, 0.0]), 1e-8).unwrap());
    }

    #[test]
    fn nnamcq_fails_with_two_identical_pairs() {
        // Pairs (x1, x2) twice: mu = (1, -1), nu = 0 is a nonzero abnormal multiplier.
        let p = linear_pairs(&[(0, 1), (0, 1)]);
        assert!(!check_nnamcq(&p, &pt(&[0.0, 0.0]), 1e-8).unwrap());
        assert!(!check_mpsc_mfcq(&p, &pt(&[0.0, 0.0]), 1e-8).unwrap());
    }

    #[test]
    fn empty_problem_satisfies_all_cqs() {
        let p = MpscProblem::builder(
            "free",
            2,
            ClosureScalar::new(|x| x.norm_squared(), |x| 2.0 * x),
        )
        .build()
        .unwrap();
        let x = pt(&[0.3, -0.2]);
        assert!(check_nnamcq(&p, &x, 1e-8).unwrap());
        assert!(check_mpsc_mfcq(&p, &x, 1e-8).unwrap());
        assert!(check_mpsc_licq(&p, &x, 1e-8).unwrap());
    }

    #[test]
    fn licq_at_origin_of_both_counterexamples() {
        assert!(check_mpsc_licq(&example_4_1(), &pt(&[0.0, 0.0]), 1e-8).unwrap());
        assert!(check_mpsc_licq(&example_su(), &pt(&[0.0, 0.0]), 1e-8).unwrap());
    }

    #[test]
    fn su_example_origin_is_weak_only() {
        let p = example_su();
        let cert =
            classify_stationarity(&p, &pt(&[0.0, 0.0]), CertTolerances::uniform(1e-8)).unwrap();
        assert_eq!(cert.kind, StationarityKind::W);
        let axis =
            classify_stationarity(&p, &pt(&[1.0, 0.0]), CertTolerances::uniform(1e-8)).unwrap();
        assert_eq!(axis.kind, StationarityKind::S);
    }
}
