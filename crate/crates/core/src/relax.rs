//! Surrogate problems `P(t)` for the four relaxation families and the
//! relaxed index sets of the Kanzow–Schwartz-type scheme.
//!
//! Every relaxation row has the form `c(G_l(x), H_l(x); t) <= 0`, so its
//! gradient is `dc/dG * grad G_l + dc/dH * grad H_l`. [`row_terms`] returns
//! the value together with those two chain-rule coefficients; the Jacobian
//! and the multiplier recovery are both built from it.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ncp::{grad_phi, phi, phi_su_with, ThetaSpec};
use crate::problem::{evaluate, EmptyMap, MpscProblem, ScalarFn, VectorFn};

/// How the KDB surrogate is written down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KdbMode {
    /// The four product rows taken as a conjunction.
    Literal,
    /// One row `(G^2 - t^2)(H^2 - t^2) <= 0` per pair.
    #[default]
    Quartic,
}

/// Relaxation family.
#[derive(Debug, Clone)]
pub enum SchemeKind {
    /// Four `phi`-based rows per pair (the scheme with M-stationary limits).
    Ks,
    /// `-t <= G H <= t`, split into two rows.
    Scholtes,
    /// Smoothed-absolute-value rows of Steffensen and Ulbrich.
    Su(ThetaSpec),
    /// Shifted product rows of Kadrani, Dussault and Benchakroun.
    Kdb(KdbMode),
}

impl SchemeKind {
    pub fn rows_per_pair(&self) -> usize {
        match self {
            SchemeKind::Ks | SchemeKind::Su(_) | SchemeKind::Kdb(KdbMode::Literal) => 4,
            SchemeKind::Scholtes => 2,
            SchemeKind::Kdb(KdbMode::Quartic) => 1,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SchemeKind::Ks => "ks",
            SchemeKind::Scholtes => "scholtes",
            SchemeKind::Su(_) => "su",
            SchemeKind::Kdb(KdbMode::Quartic) => "kdb",
            SchemeKind::Kdb(KdbMode::Literal) => "kdb-literal",
        }
    }

    pub fn su() -> Self {
        SchemeKind::Su(ThetaSpec::Sine)
    }

    pub fn kdb() -> Self {
        SchemeKind::Kdb(KdbMode::Quartic)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ks" => Ok(SchemeKind::Ks),
            "scholtes" | "s" => Ok(SchemeKind::Scholtes),
            "su" => Ok(SchemeKind::su()),
            "kdb" | "kdb-quartic" => Ok(SchemeKind::Kdb(KdbMode::Quartic)),
            "kdb-literal" => Ok(SchemeKind::Kdb(KdbMode::Literal)),
            other => Err(Error::InvalidParameter(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Sign patterns `(sigma_G, sigma_H)` of the four KS rows:
/// `Phi^s = phi(sigma_G G - t, sigma_H H - t)`.
pub const KS_SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];

/// Value of relaxation row `row` for the pair value `(g, h)` and its
/// chain-rule coefficients `(dc/dG, dc/dH)`.
pub fn row_terms(
    scheme: &SchemeKind,
    row: usize,
    g: f64,
    h: f64,
    t: f64,
) -> Result<(f64, f64, f64)> {
    Ok(match scheme {
        SchemeKind::Ks => {
            let (sg, sh) = KS_SIGNS[row];
            let a = sg * g - t;
            let b = sh * h - t;
            let (pa, pb) = grad_phi(a, b);
            (phi(a, b), sg * pa, sh * pb)
        }
        SchemeKind::Scholtes => match row {
            0 => (g * h - t, h, g),
            _ => (-g * h - t, -h, -g),
        },
        SchemeKind::Su(theta) => {
            let (sa, sb, sc, sd) = match row {
                0 => (1.0, 1.0, 1.0, -1.0),
                1 => (1.0, -1.0, 1.0, 1.0),
                2 => (-1.0, 1.0, -1.0, -1.0),
                _ => (-1.0, -1.0, -1.0, 1.0),
            };
            // c = sa G + sb H - phi(sc G + sd H; t)
            let (pv, pd) = phi_su_with(theta, sc * g + sd * h, t)?;
            (sa * g + sb * h - pv, sa - pd * sc, sb - pd * sd)
        }
        SchemeKind::Kdb(KdbMode::Literal) => match row {
            0 => ((g - t) * (h - t), h - t, g - t),
            1 => ((-g - t) * (h - t), -(h - t), -g - t),
            2 => ((g + t) * (h + t), h + t, g + t),
            _ => ((g - t) * (-h - t), -h - t, -(g - t)),
        },
        SchemeKind::Kdb(KdbMode::Quartic) => {
            let a = g * g - t * t;
            let b = h * h - t * t;
            (a * b, 2.0 * g * b, 2.0 * h * a)
        }
    })
}

/// Where an inequality row of an [`NlpProblem`] comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOrigin {
    /// Row `i` of the source problem's `g` (or of a generic NLP).
    Original(usize),
    /// Relaxation row `row` of switching pair `pair`.
    Relaxation { pair: usize, row: usize },
}

/// Where an equality row comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EqOrigin {
    Original(usize),
    /// `G_l = 0` imposed by a branch.
    PinG(usize),
    /// `H_l = 0` imposed by a branch.
    PinH(usize),
}

#[derive(Debug, Clone)]
pub struct Provenance {
    pub source: String,
    /// Scheme and parameter, for relaxation surrogates.
    pub relaxation: Option<(SchemeKind, f64)>,
    pub ineq_rows: Vec<RowOrigin>,
    pub eq_rows: Vec<EqOrigin>,
}

/// A smooth NLP `min f(x)` s.t. `c_ineq(x) <= 0`, `c_eq(x) = 0`.
#[derive(Clone)]
pub struct NlpProblem {
    n: usize,
    objective: Arc<dyn ScalarFn>,
    ineq: Arc<dyn VectorFn>,
    eq: Arc<dyn VectorFn>,
    pub provenance: Provenance,
}

impl fmt::Debug for NlpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NlpProblem")
            .field("n", &self.n)
            .field("n_ineq", &self.ineq.len())
            .field("n_eq", &self.eq.len())
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl NlpProblem {
    /// A plain NLP; every row is tagged [`RowOrigin::Original`].
    pub fn new(
        name: impl Into<String>,
        n: usize,
        objective: Arc<dyn ScalarFn>,
        ineq: Arc<dyn VectorFn>,
        eq: Arc<dyn VectorFn>,
    ) -> Self {
        let provenance = Provenance {
            source: name.into(),
            relaxation: None,
            ineq_rows: (0..ineq.len()).map(RowOrigin::Original).collect(),
            eq_rows: (0..eq.len()).map(EqOrigin::Original).collect(),
        };
        Self {
            n,
            objective,
            ineq,
            eq,
            provenance,
        }
    }

    pub fn unconstrained(name: impl Into<String>, n: usize, objective: Arc<dyn ScalarFn>) -> Self {
        Self::new(name, n, objective, Arc::new(EmptyMap), Arc::new(EmptyMap))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq.len()
    }

    pub fn n_eq(&self) -> usize {
        self.eq.len()
    }

    pub fn objective(&self) -> &Arc<dyn ScalarFn> {
        &self.objective
    }

    pub fn ineq(&self) -> &Arc<dyn VectorFn> {
        &self.ineq
    }

    pub fn eq(&self) -> &Arc<dyn VectorFn> {
        &self.eq
    }
}

/// Inequality block `[g(x); relaxation rows]` of a surrogate.
struct RelaxedIneq {
    problem: MpscProblem,
    scheme: SchemeKind,
    t: f64,
}

impl RelaxedIneq {
    fn rows(&self) -> usize {
        self.problem.q() * self.scheme.rows_per_pair()
    }
}

impl VectorFn for RelaxedIneq {
    fn len(&self) -> usize {
        self.problem.m() + self.rows()
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = self.problem.m();
        let k = self.scheme.rows_per_pair();
        let mut out = DVector::zeros(self.len());
        out.rows_mut(0, m).copy_from(&self.problem.ineq().values(x));
        let gg = self.problem.switch_g().values(x);
        let hh = self.problem.switch_h().values(x);
        for l in 0..self.problem.q() {
            for s in 0..k {
                // t > 0 is validated at build time for SU.
                let (v, _, _) =
                    row_terms(&self.scheme, s, gg[l], hh[l], self.t).expect("validated");
                out[m + l * k + s] = v;
            }
        }
        out
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let m = self.problem.m();
        let k = self.scheme.rows_per_pair();
        let mut jac = DMatrix::zeros(self.len(), n);
        jac.rows_mut(0, m)
            .copy_from(&self.problem.ineq().jacobian(x));
        let gg = self.problem.switch_g().values(x);
        let hh = self.problem.switch_h().values(x);
        let jg = self.problem.switch_g().jacobian(x);
        let jh = self.problem.switch_h().jacobian(x);
        for l in 0..self.problem.q() {
            for s in 0..k {
                let (_, cg, ch) =
                    row_terms(&self.scheme, s, gg[l], hh[l], self.t).expect("validated");
                let row = jg.row(l) * cg + jh.row(l) * ch;
                jac.row_mut(m + l * k + s).copy_from(&row);
            }
        }
        jac
    }
}

/// Builds the surrogate `P(t)` of `problem` for `scheme`.
///
/// The inequality block is `[g; relaxation rows]` with the relaxation rows
/// of pair `l` stored contiguously; the equality block is `h`.
pub fn build_relaxed(problem: &MpscProblem, scheme: &SchemeKind, t: f64) -> Result<NlpProblem> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "relaxation parameter must be a non-negative finite number, got {t}"
        )));
    }
    if matches!(scheme, SchemeKind::Su(_)) && t == 0.0 {
        return Err(Error::InvalidParameter(
            "the smoothed scheme needs t > 0".into(),
        ));
    }
    let k = scheme.rows_per_pair();
    let mut ineq_rows: Vec<RowOrigin> = (0..problem.m()).map(RowOrigin::Original).collect();
    for l in 0..problem.q() {
        for s in 0..k {
            ineq_rows.push(RowOrigin::Relaxation { pair: l, row: s });
        }
    }
    let provenance = Provenance {
        source: problem.name().to_string(),
        relaxation: Some((scheme.clone(), t)),
        ineq_rows,
        eq_rows: (0..problem.p()).map(EqOrigin::Original).collect(),
    };
    Ok(NlpProblem {
        n: problem.n(),
        objective: problem.objective().clone(),
        ineq: Arc::new(RelaxedIneq {
            problem: problem.clone(),
            scheme: scheme.clone(),
            t,
        }),
        eq: problem.eq().clone(),
        provenance,
    })
}

/// Index sets of a point feasible for the KS surrogate, per row `s`
/// (0-based, rows in the order of [`KS_SIGNS`]).
///
/// With `a = sigma_G G - t`, `b = sigma_H H - t`:
/// `corner[s]` holds `|a|, |b| <= tol`; `g_pinned[s]` holds `|a| <= tol < b`;
/// `h_pinned[s]` holds `|b| <= tol < a`. So `g_pinned` is
/// `(I^{0+}_{t,1}, I^{0+}_{t,2}, I^{0-}_{t,3}, I^{0-}_{t,4})`, `h_pinned` is
/// `(I^{+0}_{t,1}, I^{-0}_{t,2}, I^{-0}_{t,3}, I^{+0}_{t,4})` and `corner`
/// is `(I^{00}_{t,s})`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelaxedPartition {
    pub corner: [Vec<usize>; 4],
    pub g_pinned: [Vec<usize>; 4],
    pub h_pinned: [Vec<usize>; 4],
    pub t: f64,
    pub tol: f64,
}

impl RelaxedPartition {
    /// The twelve primitive sets, in the order corner, g_pinned, h_pinned.
    pub fn primitive_sets(&self) -> Vec<&Vec<usize>> {
        self.corner
            .iter()
            .chain(self.g_pinned.iter())
            .chain(self.h_pinned.iter())
            .collect()
    }

    /// `I^0_{t,s}`: pairs where row `s` is active.
    pub fn active(&self, s: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.corner[s]
            .iter()
            .chain(&self.g_pinned[s])
            .chain(&self.h_pinned[s])
            .cloned()
            .collect();
        v.sort_unstable();
        v
    }

    /// `I^{00}_t`.
    pub fn all_corners(&self) -> Vec<usize> {
        union(&self.corner)
    }

    /// `I^{0±}_t`: `G` pinned at `±t`, `|H| > t`.
    pub fn all_g_pinned(&self) -> Vec<usize> {
        union(&self.g_pinned)
    }

    /// `I^{±0}_t`: `H` pinned at `±t`, `|G| > t`.
    pub fn all_h_pinned(&self) -> Vec<usize> {
        union(&self.h_pinned)
    }

    pub fn is_empty(&self) -> bool {
        self.primitive_sets().iter().all(|s| s.is_empty())
    }
}

fn union(sets: &[Vec<usize>; 4]) -> Vec<usize> {
    let mut v: Vec<usize> = sets.iter().flatten().cloned().collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Classifies the pair values `(G_l, H_l)` into the relaxed index sets.
pub fn partition_from_values(
    big_g: &DVector<f64>,
    big_h: &DVector<f64>,
    t: f64,
    tol: f64,
) -> RelaxedPartition {
    let mut part = RelaxedPartition {
        t,
        tol,
        ..Default::default()
    };
    for l in 0..big_g.len() {
        for (s, &(sg, sh)) in KS_SIGNS.iter().enumerate() {
            let a = sg * big_g[l] - t;
            let b = sh * big_h[l] - t;
            let a0 = a.abs() <= tol;
            let b0 = b.abs() <= tol;
            if a0 && b0 {
                part.corner[s].push(l);
            } else if a0 && b > tol {
                part.g_pinned[s].push(l);
            } else if b0 && a > tol {
                part.h_pinned[s].push(l);
            }
        }
    }
    part
}

/// Relaxed index sets of `x` for the KS surrogate at parameter `t`.
///
/// Requires `0 <= tol < t` and `x` feasible for `P(t)` within `tol`.
pub fn relaxed_partition(
    problem: &MpscProblem,
    x: &DVector<f64>,
    t: f64,
    tol: f64,
) -> Result<RelaxedPartition> {
    if !(t > 0.0) || !(tol >= 0.0) || tol >= t {
        return Err(Error::InvalidParameter(format!(
            "relaxed partition needs 0 <= tol < t, got t = {t}, tol = {tol}"
        )));
    }
    let rec = evaluate(problem, x)?;
    if let Some((i, v)) = rec.g.iter().enumerate().find(|(_, &v)| v > tol) {
        return Err(Error::Infeasible(format!("g[{i}] = {v:e}")));
    }
    if let Some((j, v)) = rec.h.iter().enumerate().find(|(_, &v)| v.abs() > tol) {
        return Err(Error::Infeasible(format!("h[{j}] = {v:e}")));
    }
    for l in 0..problem.q() {
        let (a, b) = (rec.big_g[l].abs(), rec.big_h[l].abs());
        if a > t + tol && b > t + tol {
            return Err(Error::Infeasible(format!(
                "pair {l} lies outside the relaxed set: |G| = {a:e}, |H| = {b:e}, t = {t:e}"
            )));
        }
    }
    Ok(partition_from_values(&rec.big_g, &rec.big_h, t, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::benchmarks::example_4_1;
    use crate::problem::{fd_jacobian, max_relative_error};

    fn pt(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn ks_surrogate_detects_infeasible_point() {
        let nlp = build_relaxed(&example_4_1(), &SchemeKind::Ks, 1.0).unwrap();
        assert_eq!(nlp.n_ineq(), 4);
        let c = nlp.ineq().values(&pt(&[2.0, 2.0]));
        assert_eq!(c[0], 1.0);
    }

    #[test]
    fn scholtes_boundary_point() {
        for t in [0.25, 0.01, 1.0] {
            let nlp = build_relaxed(&example_4_1(), &SchemeKind::Scholtes, t).unwrap();
            assert_eq!(nlp.n_ineq(), 2);
            let c = nlp.ineq().values(&pt(&[t.sqrt(), t.sqrt()]));
            assert!(c[0].abs() < 1e-15);
            assert!(c[1] < 0.0);
        }
    }

    #[test]
    fn row_counts_per_scheme() {
        let p = example_4_1();
        assert_eq!(
            build_relaxed(&p, &SchemeKind::su(), 0.1).unwrap().n_ineq(),
            4
        );
        assert_eq!(
            build_relaxed(&p, &SchemeKind::Kdb(KdbMode::Literal), 0.1)
                .unwrap()
                .n_ineq(),
            4
        );
        assert_eq!(
            build_relaxed(&p, &SchemeKind::kdb(), 0.1).unwrap().n_ineq(),
            1
        );
    }

    #[test]
    fn builder_rejects_bad_parameters() {
        let p = example_4_1();
        assert!(build_relaxed(&p, &SchemeKind::Ks, -1e-3).is_err());
        assert!(build_relaxed(&p, &SchemeKind::su(), 0.0).is_err());
        assert!(build_relaxed(&p, &SchemeKind::Ks, 0.0).is_ok());
        assert!(build_relaxed(&p, &SchemeKind::Scholtes, 0.0).is_ok());
        assert!(build_relaxed(&p, &SchemeKind::kdb(), 0.0).is_ok());
    }

    #[test]
    fn ks_rows_at_zero_describe_the_switching_set() {
        let nlp = build_relaxed(&example_4_1(), &SchemeKind::Ks, 0.0).unwrap();
        let feasible = |x: &[f64]| nlp.ineq().values(&pt(x)).iter().all(|&v| v <= 0.0);
        assert!(feasible(&[0.0, 3.0]));
        assert!(feasible(&[-2.0, 0.0]));
        assert!(feasible(&[0.0, 0.0]));
        assert!(!feasible(&[1e-3, -1e-3]));
        assert!(!feasible(&[-0.5, -0.5]));
    }

    #[test]
    fn relaxed_partition_examples() {
        let p = example_4_1();
        let a = relaxed_partition(&p, &pt(&[1.0, 1.0]), 1.0, 1e-9).unwrap();
        assert_eq!(a.corner[0], vec![0]);
        assert_eq!(a.primitive_sets().iter().map(|s| s.len()).sum::<usize>(), 1);
        let b = relaxed_partition(&p, &pt(&[1.0, 2.0]), 1.0, 1e-9).unwrap();
        assert_eq!(b.g_pinned[0], vec![0]);
        assert_eq!(b.primitive_sets().iter().map(|s| s.len()).sum::<usize>(), 1);
        let c = relaxed_partition(&p, &pt(&[0.0, 0.0]), 1.0, 1e-9).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn relaxed_partition_rejects_outside_points() {
        let p = example_4_1();
        assert!(matches!(
            relaxed_partition(&p, &pt(&[2.0, 2.0]), 1.0, 1e-9),
            Err(Error::Infeasible(_))
        ));
        assert!(relaxed_partition(&p, &pt(&[0.0, 0.0]), 1e-3, 1e-3).is_err());
    }

    #[test]
    fn ks_gradient_vanishes_on_corners() {
        let p = example_4_1();
        let t = 0.5;
        let nlp = build_relaxed(&p, &SchemeKind::Ks, t).unwrap();
        for (s, &(sg, sh)) in KS_SIGNS.iter().enumerate() {
            let x = pt(&[sg * t, sh * t]);
            let jac = nlp.ineq().jacobian(&x);
            assert_eq!(jac.row(s).amax(), 0.0, "row {s}");
        }
    }

    #[test]
    fn jacobians_match_finite_differences_near_kinks() {
        let p = example_4_1();
        let t = 0.3;
        let schemes = [
            SchemeKind::Ks,
            SchemeKind::Scholtes,
            SchemeKind::su(),
            SchemeKind::kdb(),
            SchemeKind::Kdb(KdbMode::Literal),
        ];
        // Points straddling a + b = 0 for phi and |z| = t for phi_su.
        let pts = [
            [0.45, -0.1],
            [0.1, 0.2000001],
            [-0.7, 0.35],
            [0.149, -0.151],
        ];
        for scheme in &schemes {
            let nlp = build_relaxed(&p, scheme, t).unwrap();
            for x in pts {
                let x = pt(&x);
                let an = nlp.ineq().jacobian(&x);
                let fd = fd_jacobian(nlp.ineq().as_ref(), &x, 1e-7);
                assert!(
                    max_relative_error(an.iter(), fd.iter()) < 1e-5,
                    "{scheme} at {x:?}"
                );
            }
        }
    }
}
