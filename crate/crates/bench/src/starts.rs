//! Starting-point sets: `grid`, `grid:<levels>`, `random:<count>:<seed>`
//! and `file:<path>`.

use std::fmt;
use std::str::FromStr;

use mpsc_relax::MpscProblem;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name of the generator behind `random:` start sets.
pub const PRNG_NAME: &str = "ChaCha8";

/// Largest number of points a grid may expand to.
pub const GRID_LIMIT: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub enum StartSpec {
    /// `levels` equispaced values per coordinate over the start box.
    Grid { levels: usize },
    /// Uniform draws from the start box.
    Random { count: usize, seed: u64 },
    /// One point per non-empty line, comma or whitespace separated.
    File(String),
}

impl FromStr for StartSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.splitn(2, ':').collect();
        let num = |t: &str, what: &str| {
            t.parse::<u64>()
                .map_err(|_| format!("invalid {what} `{t}` in `{s}`"))
        };
        match parts[0] {
            "grid" => {
                let levels = match parts.get(1) {
                    None => 3,
                    Some(t) => num(t, "level count")? as usize,
                };
                if levels == 0 {
                    return Err("grid needs at least one level".into());
                }
                Ok(StartSpec::Grid { levels })
            }
            "random" => {
                let rest = parts.get(1).ok_or("expected random:<count>:<seed>")?;
                let (c, sd) = rest
                    .split_once(':')
                    .ok_or("expected random:<count>:<seed>")?;
                Ok(StartSpec::Random {
                    count: num(c, "count")? as usize,
                    seed: num(sd, "seed")?,
                })
            }
            "file" => Ok(StartSpec::File(
                parts.get(1).ok_or("expected file:<path>")?.to_string(),
            )),
            other => Err(format!(
                "unknown start set `{other}` (grid, grid:N, random:N:SEED, file:PATH)"
            )),
        }
    }
}

impl fmt::Display for StartSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StartSpec::Grid { levels } => write!(f, "grid:{levels}"),
            StartSpec::Random { count, seed } => write!(f, "random:{count}:{seed}"),
            StartSpec::File(p) => write!(f, "file:{p}"),
        }
    }
}

/// Parses a point written as comma or whitespace separated numbers.
pub fn parse_point(text: &str) -> Result<DVector<f64>, String> {
    let vals: Result<Vec<f64>, _> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| format!("invalid number `{t}`"))
        })
        .collect();
    let vals = vals?;
    if vals.is_empty() {
        return Err("empty point".into());
    }
    Ok(DVector::from_vec(vals))
}

/// Expands `spec` for `problem`. Grid points vary the last coordinate fastest.
pub fn generate_starts(
    spec: &StartSpec,
    problem: &MpscProblem,
) -> Result<Vec<DVector<f64>>, String> {
    let n = problem.n();
    let (lo, hi) = &problem.start_box;
    match spec {
        StartSpec::Grid { levels } => {
            let total = (0..n).try_fold(1usize, |acc, _| {
                acc.checked_mul(*levels).filter(|&t| t <= GRID_LIMIT)
            });
            let total =
                total.ok_or_else(|| format!("grid of {levels}^{n} points exceeds {GRID_LIMIT}"))?;
            let coord = |i: usize, k: usize| {
                if *levels == 1 {
                    0.5 * (lo[i] + hi[i])
                } else {
                    lo[i] + (hi[i] - lo[i]) * k as f64 / (*levels - 1) as f64
                }
            };
            Ok((0..total)
                .map(|mut idx| {
                    let mut x = DVector::zeros(n);
                    for i in (0..n).rev() {
                        x[i] = coord(i, idx % levels);
                        idx /= levels;
                    }
                    x
                })
                .collect())
        }
        StartSpec::Random { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Ok((0..*count)
                .map(|_| DVector::from_fn(n, |i, _| lo[i] + (hi[i] - lo[i]) * rng.gen::<f64>()))
                .collect())
        }
        StartSpec::File(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| format!("cannot read {path}: {e}"))?;
            let mut out = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let body = line.split('#').next().unwrap_or("").trim();
                if body.is_empty() {
                    continue;
                }
                let x = parse_point(body).map_err(|e| format!("{path}: line {}: {e}", i + 1))?;
                if x.len() != n {
                    return Err(format!(
                        "{path}: line {}: {} entries, expected {n}",
                        i + 1,
                        x.len()
                    ));
                }
                out.push(x);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mpsc_relax::analysis::benchmarks::{either_or_e2, example_4_1};

    #[test]
    fn parse_specs() {
        assert_eq!("grid".parse(), Ok(StartSpec::Grid { levels: 3 }));
        assert_eq!("grid:2".parse(), Ok(StartSpec::Grid { levels: 2 }));
        assert_eq!(
            "random:10:7".parse(),
            Ok(StartSpec::Random { count: 10, seed: 7 })
        );
        assert_eq!(
            "file:a/b.txt".parse(),
            Ok(StartSpec::File("a/b.txt".into()))
        );
        assert!("random:10".parse::<StartSpec>().is_err());
        assert!("grid:0".parse::<StartSpec>().is_err());
        assert!("lattice".parse::<StartSpec>().is_err());
        assert_eq!(
            StartSpec::Random { count: 3, seed: 1 }.to_string(),
            "random:3:1"
        );
    }

    #[test]
    fn default_grid_on_unit_box() {
        let pts = generate_starts(&StartSpec::Grid { levels: 3 }, &example_4_1()).unwrap();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0].as_slice(), &[0.0, 0.0]);
        assert_eq!(pts[1].as_slice(), &[0.0, 0.5]);
        assert_eq!(pts[8].as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn binary_grid_covers_the_cube_vertices() {
        let pts = generate_starts(&StartSpec::Grid { levels: 2 }, &either_or_e2()).unwrap();
        assert_eq!(pts.len(), 64);
        let mut seen: Vec<Vec<u8>> = pts
            .iter()
            .map(|p| p.iter().map(|&v| v as u8).collect())
            .collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 64);
    }

    #[test]
    fn random_starts_are_reproducible() {
        let p = example_4_1();
        let a = generate_starts(&StartSpec::Random { count: 5, seed: 3 }, &p).unwrap();
        let b = generate_starts(&StartSpec::Random { count: 5, seed: 3 }, &p).unwrap();
        let c = generate_starts(&StartSpec::Random { count: 5, seed: 4 }, &p).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn oversized_grid_is_rejected() {
        assert!(generate_starts(&StartSpec::Grid { levels: 1000 }, &either_or_e2()).is_err());
    }

    #[test]
    fn points() {
        assert_eq!(parse_point("1, 2 3").unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        assert!(parse_point("1,x").is_err());
        assert!(parse_point(" ").is_err());
    }
}
