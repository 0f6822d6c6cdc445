//! Small dense linear-algebra kernels used by the certificate checks and the
//! active-set polishing step.

use nalgebra::{DMatrix, DVector};

/// Thin SVD `a = u diag(s) v_t`, checked by reconstruction.
///
/// nalgebra's bidiagonal SVD occasionally returns an inaccurate factorization
/// for sparse tall matrices, so a failed check retries on the transpose and
/// finally falls back to the eigendecomposition of `a^T a`.
fn thin_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let tol = 1e-12 * a.amax().max(1.0) * (a.nrows().max(a.ncols()) as f64);
    let ok = |u: &DMatrix<f64>, s: &DVector<f64>, vt: &DMatrix<f64>| {
        (u * DMatrix::from_diagonal(s) * vt - a).amax() <= tol
    };
    let svd = a.clone().svd(true, true);
    let (u, s, vt) = (svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap());
    if ok(&u, &s, &vt) {
        return (u, s, vt);
    }
    let svd = a.transpose().svd(true, true);
    let (u, s, vt) = (
        svd.v_t.unwrap().transpose(),
        svd.singular_values,
        svd.u.unwrap().transpose(),
    );
    if ok(&u, &s, &vt) {
        return (u, s, vt);
    }
    let eig = (a.transpose() * a).symmetric_eigen();
    let s = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let mut u = a * &eig.eigenvectors;
    for (k, &sk) in s.iter().enumerate() {
        if sk > 0.0 {
            u.column_mut(k).unscale_mut(sk);
        } else {
            u.column_mut(k).fill(0.0);
        }
    }
    (u, s, eig.eigenvectors.transpose())
}

/// Minimum-norm least-squares solution of `a x ~= b` via the SVD.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let (u, s, vt) = thin_svd(a);
    let smax = s.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = smax * 1e-13 * (a.nrows().max(a.ncols()) as f64);
    let mut x = DVector::zeros(a.ncols());
    for (k, &sk) in s.iter().enumerate() {
        if sk > cutoff && sk > 0.0 {
            let coef = u.column(k).dot(b) / sk;
            x += vt.row(k).transpose() * coef;
        }
    }
    x
}

/// Numerical rank: number of singular values above `tol * max(1, s_max)`.
pub fn rank(a: &DMatrix<f64>, tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let (_, sv, _) = thin_svd(a);
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = tol * smax.max(1.0);
    sv.iter().filter(|&&s| s > cutoff).count()
}

fn solve_on_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(passive.iter());
    lstsq_min_norm(&sub, b)
}

/// Least squares `min |a x - b|_2` subject to `x_i >= 0` wherever
/// `nonneg[i]` is set; remaining variables are free.
///
/// Lawson–Hanson active-set iteration, with the free variables kept in the
/// passive set throughout. Subproblems use the minimum-norm solution, so the
/// result is deterministic when the optimum is not unique.
pub fn bounded_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, nonneg: &[bool]) -> DVector<f64> {
    let k = a.ncols();
    assert_eq!(nonneg.len(), k);
    let mut x = DVector::zeros(k);
    if k == 0 {
        return x;
    }
    let mut in_passive: Vec<bool> = nonneg.iter().map(|&nn| !nn).collect();
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0)
        * b.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = 1e-12 * scale * (k as f64);

    let passive_idx = |ip: &[bool]| -> Vec<usize> { (0..k).filter(|&i| ip[i]).collect() };

    // Start from the unconstrained solution in the free variables.
    let p = passive_idx(&in_passive);
    if !p.is_empty() {
        let z = solve_on_passive(a, b, &p);
        for (pos, &i) in p.iter().enumerate() {
            x[i] = z[pos];
        }
    }

    let max_outer = 3 * k + 20;
    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..k)
            .filter(|&i| nonneg[i] && !in_passive[i] && w[i] > tol)
            .max_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap());
        let Some(j) = candidate else { break };
        in_passive[j] = true;

        for _ in 0..max_outer {
            let p = passive_idx(&in_passive);
            let zp = solve_on_passive(a, b, &p);
            let mut z = DVector::zeros(k);
            for (pos, &i) in p.iter().enumerate() {
                z[i] = zp[pos];
            }
            let infeasible: Vec<usize> = p
                .iter()
                .cloned()
                .filter(|&i| nonneg[i] && z[i] <= 0.0)
                .collect();
            if infeasible.is_empty() {
                x = z;
                break;
            }
            let mut alpha = 1.0_f64;
            for &i in &infeasible {
                let denom = x[i] - z[i];
                if denom > 0.0 {
                    alpha = alpha.min(x[i] / denom);
                }
            }
            x += (z - &x) * alpha;
            for i in 0..k {
                if nonneg[i] && in_passive[i] && x[i] <= 1e-15 * scale {
                    x[i] = 0.0;
                    in_passive[i] = false;
                }
            }
        }
    }
    for i in 0..k {
        if nonneg[i] && x[i] < 0.0 {
            x[i] = 0.0;
        }
    }
    x
}

/// Builds the column matrix `[v_1 ... v_k]` from vectors of length `n`.
pub fn columns(vectors: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        m.set_column(j, v);
    }
    m
}

/// Decides positive-linear independence of the family `free ∪ nonneg`.
///
/// The family is positive-linearly dependent if some combination
/// `sum a_i f_i + sum b_j v_j = 0` with `b >= 0` and `(a, b) != 0` exists.
/// Vectors are normalised first. Dependence among the free vectors is a
/// rank test at `tol`; otherwise the nonnegative vectors are projected onto
/// the orthogonal complement of `span(free)` and the distance from the origin
/// to their convex hull is computed by a weighted nonnegative least-squares
/// problem. The family is independent iff that distance exceeds `tol`.
pub fn positively_linearly_independent(
    free: &[DVector<f64>],
    nonneg: &[DVector<f64>],
    n: usize,
    tol: f64,
) -> bool {
    let normalize = |v: &DVector<f64>| -> Option<DVector<f64>> {
        let nv = v.norm();
        if nv <= tol {
            None
        } else {
            Some(v / nv)
        }
    };
    let mut free_n = Vec::with_capacity(free.len());
    for v in free {
        match normalize(v) {
            Some(u) => free_n.push(u),
            None => return false,
        }
    }
    let mut nonneg_n = Vec::with_capacity(nonneg.len());
    for v in nonneg {
        match normalize(v) {
            Some(u) => nonneg_n.push(u),
            None => return false,
        }
    }
    let f = columns(&free_n, n);
    if !free_n.is_empty() && rank(&f, tol) < free_n.len() {
        return false;
    }
    if nonneg_n.is_empty() {
        return true;
    }
    // Project onto the orthogonal complement of span(free).
    let projected: Vec<DVector<f64>> = if free_n.is_empty() {
        nonneg_n
    } else {
        let qr = f.clone().qr();
        let q = qr.q();
        nonneg_n
            .iter()
            .map(|v| v - &q * (q.transpose() * v))
            .collect()
    };
    let k = projected.len();
    let weight = 1e3;
    let mut a = DMatrix::zeros(n + 1, k);
    for (j, v) in projected.iter().enumerate() {
        for i in 0..n {
            a[(i, j)] = v[i];
        }
        a[(n, j)] = weight;
    }
    let mut b = DVector::zeros(n + 1);
    b[n] = weight;
    let lam = bounded_lstsq(&a, &b, &vec![true; k]);
    let s: f64 = lam.sum();
    if s <= 0.0 {
        return true;
    }
    let point = columns(&projected, n) * (&lam / s);
    point.norm() > tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_norm_solution_of_underdetermined_system() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = lstsq_min_norm(&a, &DVector::from_element(1, 2.0));
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lstsq_survives_inaccurate_tall_svd() {
        // nalgebra's SVD of this matrix reconstructs it only to about 4e-4.
        let a = DMatrix::from_column_slice(
            16,
            5,
            &[
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                -0.0,
                -0.0,
                -0.0,
                -1.0,
                -0.0,
                -0.0,
                -0.0,
                -0.0,
                0.09664631206388613,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                1.4508955999526548e-5,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                -0.08573779961776241,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0857668374851552,
                0.0,
                0.0,
                0.0,
                0.0,
                -0.0,
                -0.0,
                -0.0,
                -0.0,
                -0.0,
                -0.0,
                -0.0,
                -0.07708697408614758,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                5.187284450547897e-5,
                1.0,
                1.0,
                1.0,
                1.0,
                1.0,
                1.0,
                1.0,
                1.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
            ],
        );
        let b = DVector::from_fn(16, |i, _| (i as f64 * 0.37).sin());
        let x = lstsq_min_norm(&a, &b);
        assert!((a.transpose() * (&b - &a * &x)).amax() < 1e-12);
        assert_eq!(rank(&a, 1e-10), 5);
    }

    #[test]
    fn bounded_lstsq_clips_negative_direction() {
        // min (x - (-1))^2 + (y - 2)^2 with x >= 0, y free.
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let x = bounded_lstsq(&a, &b, &[true, false]);
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn bounded_lstsq_matches_classic_nnls_example() {
        // Three nonnegative columns, optimum on a face.
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, -1.0]);
        let x = bounded_lstsq(&a, &b, &[true, true, true]);
        assert!(x.iter().all(|&v| v >= 0.0));
        // KKT: gradient components on zero variables must be <= 0.
        let w = a.transpose() * (&b - &a * &x);
        for i in 0..3 {
            if x[i] == 0.0 {
                assert!(w[i] <= 1e-12);
            } else {
                assert!(w[i].abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pli_detects_opposite_nonnegative_vectors() {
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert!(!positively_linearly_independent(
            &[],
            &[e1.clone(), -e1.clone()],
            2,
            1e-9
        ));
        assert!(positively_linearly_independent(
            &[],
            &[e1.clone(), DVector::from_vec(vec![0.0, 1.0])],
            2,
            1e-9
        ));
    }

    #[test]
    fn pli_with_free_vectors() {
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, 1.0]);
        // A free vector cancels any nonnegative multiple of itself.
        assert!(!positively_linearly_independent(
            std::slice::from_ref(&e1),
            std::slice::from_ref(&e1),
            2,
            1e-9
        ));
        assert!(positively_linearly_independent(
            std::slice::from_ref(&e1),
            std::slice::from_ref(&e2),
            2,
            1e-9
        ));
        assert!(!positively_linearly_independent(
            &[e1.clone(), e1.clone()],
            &[],
            2,
            1e-9
        ));
        let d = DVector::from_vec(vec![1.0, 1.0]);
        assert!(positively_linearly_independent(&[], &[e1, e2, d], 2, 1e-9));
    }

    #[test]
    fn rank_of_repeated_rows() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(rank(&m, 1e-9), 1);
    }
}
