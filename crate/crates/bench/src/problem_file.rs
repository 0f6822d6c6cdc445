//! Line-oriented problem files.
//!
//! Each non-empty line is `key: value`; `#` starts a comment. Keys:
//! `name`, `vars`, `minimize`, `ineq` (`expr`, `a <= b` or `a >= b`),
//! `eq` (`expr` or `a = b`), `switch` (`G ; H`), `start` (comma list),
//! `box` (`lo ; hi`, each a scalar or a comma list) and `builtin`.
//! `name`, `vars`, `minimize`, `box` and `builtin` appear at most once. A
//! file with `builtin` may only add `name` and `start` lines.

use std::path::Path;

use mpsc_relax::analysis::make_benchmark_by_name;
use mpsc_relax::problem::{derivative_check, MpscProblem, ScalarFn, VectorFn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{parse_expr_at, Expr, ParseError};

/// Finite-difference step and tolerance of the load-time derivative check.
pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{0}")]
    Parse(#[from] ParseError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("unknown built-in `{0}`")]
    UnknownBuiltin(String),
    #[error("{0}")]
    Problem(#[from] mpsc_relax::Error),
    #[error("derivative check failed at {point:?}: relative error {error:e}")]
    DerivativeCheck { point: Vec<f64>, error: f64 },
}

#[derive(Debug, Clone)]
pub struct ExprScalar(pub Expr);

impl ScalarFn for ExprScalar {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.0.value(x.as_slice())
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.0.value_gradient(x.as_slice()).1
    }
}

#[derive(Debug, Clone)]
pub struct ExprMap(pub Vec<Expr>);

impl VectorFn for ExprMap {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.0.len(), self.0.iter().map(|e| e.value(x.as_slice())))
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.0.len(), x.len());
        for (i, e) in self.0.iter().enumerate() {
            j.row_mut(i).tr_copy_from(&e.value_gradient(x.as_slice()).1);
        }
        j
    }
}

struct Line<'a> {
    no: usize,
    key: &'a str,
    key_col: usize,
    text: &'a str,
    col: usize,
}

fn perr(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        column,
        message: message.into(),
    }
}

fn split_lines(src: &str) -> Result<Vec<Line<'_>>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let no = i + 1;
        let body = raw.split('#').next().unwrap_or("");
        if body.trim().is_empty() {
            continue;
        }
        let Some(colon) = body.find(':') else {
            let col = body.len() - body.trim_start().len() + 1;
            return Err(perr(no, col, "expected `key: value`"));
        };
        let key = body[..colon].trim();
        let key_col = body.len() - body.trim_start().len() + 1;
        let rest = &body[colon + 1..];
        let lead = rest.len() - rest.trim_start().len();
        out.push(Line {
            no,
            key,
            key_col,
            text: rest.trim(),
            col: colon + 2 + lead,
        });
    }
    Ok(out)
}

/// Splits `text` at the first occurrence of `sep`, returning both parts with
/// the column of the second.
fn split_at_sep<'a>(text: &'a str, col: usize, sep: &str) -> Option<(&'a str, &'a str, usize)> {
    let at = text.find(sep)?;
    let rhs = &text[at + sep.len()..];
    let lead = rhs.len() - rhs.trim_start().len();
    Some((
        text[..at].trim_end(),
        rhs.trim(),
        col + at + sep.len() + lead,
    ))
}

fn parse_numbers(text: &str, line: usize, col: usize) -> Result<Vec<f64>, ParseError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for part in text.split(',') {
        let lead = part.len() - part.trim_start().len();
        let item = part.trim();
        let v: f64 = item.parse().map_err(|_| {
            perr(
                line,
                col + offset + lead,
                format!("expected a number, found `{item}`"),
            )
        })?;
        out.push(v);
        offset += part.len() + 1;
    }
    Ok(out)
}

fn vector_of(
    values: Vec<f64>,
    n: usize,
    line: usize,
    col: usize,
    what: &str,
) -> Result<DVector<f64>, ParseError> {
    match values.len() {
        1 => Ok(DVector::from_element(n, values[0])),
        k if k == n => Ok(DVector::from_vec(values)),
        k => Err(perr(
            line,
            col,
            format!("{what} has {k} entries, expected 1 or {n}"),
        )),
    }
}

/// Parses `lhs <op> rhs` into `lhs - rhs` (`rhs - lhs` for flipped
/// operators), or a bare expression.
fn parse_relation(l: &Line<'_>, n: usize, ops: &[(&str, bool)]) -> Result<Expr, ParseError> {
    for &(op, flip) in ops {
        if let Some((lhs, rhs, rcol)) = split_at_sep(l.text, l.col, op) {
            let a = parse_expr_at(lhs, n, l.no, l.col)?;
            let b = parse_expr_at(rhs, n, l.no, rcol)?;
            return Ok(if flip {
                Expr::Sub(Box::new(b), Box::new(a))
            } else {
                Expr::Sub(Box::new(a), Box::new(b))
            });
        }
    }
    parse_expr_at(l.text, n, l.no, l.col)
}

/// Parses problem-file text. The derivative check is not run here.
pub fn parse_problem(src: &str) -> Result<MpscProblem, LoadError> {
    let lines = split_lines(src)?;
    let mut name: Option<String> = None;
    let mut builtin: Option<&str> = None;
    let mut n: Option<usize> = None;
    for l in &lines {
        let once = ["name", "builtin", "vars", "minimize", "box"];
        if once.contains(&l.key) && lines.iter().any(|e| e.key == l.key && e.no < l.no) {
            return Err(perr(l.no, l.key_col, format!("duplicate `{}`", l.key)).into());
        }
        match l.key {
            "name" => name = Some(l.text.to_string()),
            "builtin" => builtin = Some(l.text),
            "vars" => {
                let v: usize = l.text.parse().map_err(|_| {
                    perr(
                        l.no,
                        l.col,
                        format!("expected a positive integer, found `{}`", l.text),
                    )
                })?;
                if v == 0 {
                    return Err(perr(l.no, l.col, "`vars` must be positive").into());
                }
                n = Some(v);
            }
            "minimize" | "ineq" | "eq" | "switch" | "start" | "box" => {}
            other => {
                return Err(perr(l.no, l.key_col, format!("unknown key `{other}`")).into());
            }
        }
    }

    if let Some(bname) = builtin {
        if let Some(l) = lines
            .iter()
            .find(|l| !matches!(l.key, "name" | "builtin" | "start"))
        {
            return Err(perr(
                l.no,
                l.key_col,
                format!("key `{}` is not allowed with `builtin`", l.key),
            )
            .into());
        }
        let mut p = make_benchmark_by_name(bname).map_err(|e| match e {
            mpsc_relax::Error::UnknownProblem(_) => LoadError::UnknownBuiltin(bname.to_string()),
            other => LoadError::Problem(other),
        })?;
        for l in lines.iter().filter(|l| l.key == "start") {
            let v = parse_numbers(l.text, l.no, l.col)?;
            if v.len() != p.n() {
                return Err(perr(
                    l.no,
                    l.col,
                    format!("start has {} entries, expected {}", v.len(), p.n()),
                )
                .into());
            }
            p.starts.push(DVector::from_vec(v));
        }
        if let Some(nm) = name {
            p = p.with_name(nm);
        }
        return Ok(p);
    }

    let Some(n) = n else {
        return Err(perr(
            lines.last().map_or(1, |l| l.no),
            1,
            "missing `vars` (or `builtin`)",
        )
        .into());
    };
    let mut objective: Option<Expr> = None;
    let mut ineq = Vec::new();
    let mut eq = Vec::new();
    let mut big_g = Vec::new();
    let mut big_h = Vec::new();
    let mut starts = Vec::new();
    let mut bbox = None;
    for l in &lines {
        match l.key {
            "minimize" => objective = Some(parse_expr_at(l.text, n, l.no, l.col)?),
            "ineq" => ineq.push(parse_relation(l, n, &[("<=", false), (">=", true)])?),
            "eq" => eq.push(parse_relation(l, n, &[("=", false)])?),
            "switch" => {
                let (a, b, bcol) = split_at_sep(l.text, l.col, ";")
                    .ok_or_else(|| perr(l.no, l.col, "expected `G ; H`"))?;
                big_g.push(parse_expr_at(a, n, l.no, l.col)?);
                big_h.push(parse_expr_at(b, n, l.no, bcol)?);
            }
            "start" => {
                let v = parse_numbers(l.text, l.no, l.col)?;
                if v.len() != n {
                    return Err(perr(
                        l.no,
                        l.col,
                        format!("start has {} entries, expected {n}", v.len()),
                    )
                    .into());
                }
                starts.push(DVector::from_vec(v));
            }
            "box" => {
                let (a, b, bcol) = split_at_sep(l.text, l.col, ";")
                    .ok_or_else(|| perr(l.no, l.col, "expected `lo ; hi`"))?;
                let lo = vector_of(
                    parse_numbers(a, l.no, l.col)?,
                    n,
                    l.no,
                    l.col,
                    "box lower bound",
                )?;
                let hi = vector_of(
                    parse_numbers(b, l.no, bcol)?,
                    n,
                    l.no,
                    bcol,
                    "box upper bound",
                )?;
                if lo.iter().zip(hi.iter()).any(|(a, b)| a > b) {
                    return Err(perr(l.no, l.col, "box lower bound exceeds upper bound").into());
                }
                bbox = Some((lo, hi));
            }
            _ => {}
        }
    }
    let Some(objective) = objective else {
        return Err(perr(lines.last().map_or(1, |l| l.no), 1, "missing `minimize`").into());
    };
    let mut b = MpscProblem::builder(
        name.unwrap_or_else(|| "problem".into()),
        n,
        ExprScalar(objective),
    );
    if !ineq.is_empty() {
        b = b.inequalities(ExprMap(ineq));
    }
    if !eq.is_empty() {
        b = b.equalities(ExprMap(eq));
    }
    if !big_g.is_empty() {
        b = b.switching(ExprMap(big_g), ExprMap(big_h));
    }
    if let Some((lo, hi)) = bbox {
        b = b.start_box(lo, hi);
    }
    for s in starts {
        b = b.start(s);
    }
    Ok(b.build()?)
}

/// Compares analytic and finite-difference derivatives at the shipped
/// starts, the box centre and a few seeded box points. Points where some
/// value is not finite are skipped.
pub fn check_derivatives(problem: &MpscProblem) -> Result<(), LoadError> {
    let (lo, hi) = &problem.start_box;
    let mut points: Vec<DVector<f64>> = problem.starts.clone();
    points.push((lo + hi) * 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..3 {
        points.push(DVector::from_fn(problem.n(), |i, _| {
            lo[i] + (hi[i] - lo[i]) * rng.gen::<f64>()
        }));
    }
    for x in points {
        let err = derivative_check(problem, &x, FD_STEP);
        if err.is_nan() {
            continue;
        }
        if err > FD_TOL {
            return Err(LoadError::DerivativeCheck {
                point: x.iter().cloned().collect(),
                error: err,
            });
        }
    }
    Ok(())
}

/// Loads a problem from a built-in name or, if `spec` names an existing
/// file, from that file, and runs the derivative check.
pub fn load_problem(spec: &str) -> Result<MpscProblem, LoadError> {
    let path = Path::new(spec);
    let problem = if path.is_file() {
        let src = std::fs::read_to_string(path).map_err(|e| LoadError::Io {
            path: spec.to_string(),
            source: e,
        })?;
        parse_problem(&src)?
    } else {
        make_benchmark_by_name(spec).map_err(|e| match e {
            mpsc_relax::Error::UnknownProblem(_) => LoadError::UnknownBuiltin(spec.to_string()),
            other => LoadError::Problem(other),
        })?
    };
    check_derivatives(&problem)?;
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mpsc_relax::analysis::benchmarks::example_4_1;
    use mpsc_relax::evaluate;

    const EXAMPLE: &str = "\
# two variables, one switching pair
name: ex41
vars: 2
minimize: 0.5*((x1 - 1)^2 + (x2 - 1)^2)
switch: x1 ; x2
start: 1, 1
box: 0 ; 1
";

    #[test]
    fn file_matches_builtin() {
        let p = parse_problem(EXAMPLE).unwrap();
        let b = example_4_1();
        assert_eq!((p.n(), p.m(), p.p(), p.q()), (2, 0, 0, 1));
        assert_eq!(p.name(), "ex41");
        for x in [[0.3, 0.7], [1.0, 0.0], [2.0, -1.0]] {
            let x = DVector::from_row_slice(&x);
            let (r1, r2) = (evaluate(&p, &x).unwrap(), evaluate(&b, &x).unwrap());
            assert!((r1.f - r2.f).abs() < 1e-14);
            assert_eq!(r1.big_g, r2.big_g);
            assert_eq!(r1.big_h, r2.big_h);
        }
        check_derivatives(&p).unwrap();
    }

    #[test]
    fn relations_and_box() {
        let src = "vars: 2\nminimize: x1\nineq: x1 >= 1\nineq: x2 <= x1\neq: x1 + x2 = 3\nbox: -1, -2 ; 1, 2\n";
        let p = parse_problem(src).unwrap();
        let r = evaluate(&p, &DVector::from_vec(vec![2.0, 0.5])).unwrap();
        assert_eq!(r.g.as_slice(), &[-1.0, -1.5]);
        assert_eq!(r.h.as_slice(), &[-0.5]);
        assert_eq!(p.start_box.0.as_slice(), &[-1.0, -2.0]);
    }

    #[test]
    fn errors_name_line_and_column() {
        let e = parse_problem("vars: 2\nminimize: x1 +\n").unwrap_err();
        match e {
            LoadError::Parse(p) => assert_eq!((p.line, p.column), (2, 15)),
            other => panic!("{other}"),
        }
        let e = parse_problem("vars: 2\nminimize: x1\nswitch: x1 ; x9\n").unwrap_err();
        match e {
            LoadError::Parse(p) => assert_eq!((p.line, p.column), (3, 14)),
            other => panic!("{other}"),
        }
        let e = parse_problem("vars: 2\nminimize: x1\nstart: 1, z\n").unwrap_err();
        match e {
            LoadError::Parse(p) => assert_eq!((p.line, p.column), (3, 11)),
            other => panic!("{other}"),
        }
        assert!(matches!(
            parse_problem("vars: 1\nfoo: 2\n"),
            Err(LoadError::Parse(_))
        ));
        assert!(matches!(
            parse_problem("minimize: 1\n"),
            Err(LoadError::Parse(_))
        ));
        assert!(matches!(
            parse_problem("vars: 1\n"),
            Err(LoadError::Parse(_))
        ));
        assert!(matches!(
            parse_problem("vars: 1\nminimize x1\n"),
            Err(LoadError::Parse(_))
        ));
    }

    #[test]
    fn single_valued_keys_reject_repeats() {
        for src in [
            "vars: 1\nvars: 2\nminimize: x1\n",
            "vars: 1\nminimize: x1\nminimize: x1\n",
            "name: a\nname: b\nvars: 1\nminimize: x1\n",
            "vars: 1\nminimize: x1\nbox: 0 ; 1\nbox: 0 ; 2\n",
            "builtin: e2\nbuiltin: e2\n",
        ] {
            match parse_problem(src) {
                Err(LoadError::Parse(p)) => {
                    assert!(p.to_string().contains("duplicate"), "{p}");
                }
                other => panic!("{src:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn builtin_files() {
        let p = parse_problem("builtin: either_or_e2\nstart: 0,0,0,0,0,0\n").unwrap();
        assert_eq!(p.q(), 2);
        assert_eq!(p.starts.len(), 1);
        assert!(matches!(
            parse_problem("builtin: nope\n"),
            Err(LoadError::UnknownBuiltin(_))
        ));
        assert!(matches!(
            parse_problem("builtin: example_4_1\nvars: 2\n"),
            Err(LoadError::Parse(_))
        ));
    }

    #[test]
    fn wrong_gradient_fails_the_check() {
        use mpsc_relax::problem::ClosureScalar;
        let p = MpscProblem::builder(
            "bad",
            2,
            ClosureScalar::new(
                |x| x[0] * x[1],
                |x| DVector::from_vec(vec![x[1], 2.0 * x[0]]),
            ),
        )
        .start(DVector::from_vec(vec![1.0, 1.0]))
        .build()
        .unwrap();
        assert!(matches!(
            check_derivatives(&p),
            Err(LoadError::DerivativeCheck { .. })
        ));
    }

    #[test]
    fn load_by_name_and_unknown() {
        assert_eq!(load_problem("example_su").unwrap().q(), 1);
        assert!(matches!(
            load_problem("no_such_problem"),
            Err(LoadError::UnknownBuiltin(_))
        ));
    }
}
