//! Command-line interface: `solve`, `campaign`, `oracle` and `check`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mpsc_relax::analysis::{
    branch_enumerate_global, performance_profile, OracleOptions, RunRecord,
};
use mpsc_relax::homotopy::{solve_mpsc, solve_multistart, DriverOptions, SolveTrace, StopReason};
use mpsc_relax::stationarity::{classify_with_cq, CertTolerances, DEFAULT_ENUMERATION_CAP};
use mpsc_relax::{MpscProblem, SchemeKind};
use nalgebra::DVector;

use crate::problem_file::load_problem;
use crate::starts::{generate_starts, parse_point, StartSpec, PRNG_NAME};

/// Exit code for runs that did not complete or an oracle without a feasible branch.
pub const EXIT_INCOMPLETE: i32 = 1;
/// Exit code for bad input: flags, problem files, start files.
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "mpsc-bench",
    version,
    about = "Relaxation solvers for programs with switching constraints"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one problem from one start and print the trace and certificate.
    Solve(SolveArgs),
    /// Run every problem, scheme and start; write results and profile CSVs.
    Campaign(CampaignArgs),
    /// Global minimum by enumerating the switching branches.
    Oracle(OracleArgs),
    /// Classify the stationarity of a given point.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DriverArgs {
    /// Initial relaxation parameter.
    #[arg(long, default_value_t = 0.01)]
    pub t0: f64,
    /// Factor applied to the parameter after every iteration.
    #[arg(long, default_value_t = 0.01)]
    pub shrink: f64,
    /// Stop before solving once the parameter drops below this value.
    #[arg(long, default_value_t = 1e-8)]
    pub tmin: f64,
    /// Stationarity tolerance of the stopping test and the certificate.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

impl DriverArgs {
    fn options(&self, scheme: SchemeKind) -> DriverOptions {
        DriverOptions {
            t0: self.t0,
            t_shrink: self.shrink,
            t_min: self.tmin,
            tol_outer: self.tol,
            ..DriverOptions::with_scheme(scheme)
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Built-in name or problem file.
    #[arg(long)]
    pub problem: String,
    /// ks, scholtes, su, kdb (quartic) or kdb-literal.
    #[arg(long, default_value = "ks")]
    pub scheme: String,
    /// Starting point, e.g. `1,1`. Defaults to the problem's first start or the box centre.
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<String>,
    #[command(flatten)]
    pub driver: DriverArgs,
    /// Directory for `trace.csv` and `certificate.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CampaignArgs {
    /// Built-in names or problem files (repeat or separate with commas).
    #[arg(long, required = true, value_delimiter = ',')]
    pub problem: Vec<String>,
    /// Schemes (repeat or separate with commas).
    #[arg(long, default_value = "ks", value_delimiter = ',')]
    pub scheme: Vec<String>,
    /// grid, grid:LEVELS, random:COUNT:SEED or file:PATH.
    #[arg(long, default_value = "grid")]
    pub starts: String,
    #[command(flatten)]
    pub driver: DriverArgs,
    /// Offset of the quality measure. Defaults to 1 when every problem is
    /// either_or_e2 and to 0 otherwise.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Feasibility tolerance of the quality measure.
    #[arg(long, default_value_t = 1e-6)]
    pub feas_tol: f64,
    /// Take reference values from the branch oracle instead of known solutions.
    #[arg(long)]
    pub oracle: bool,
    /// Output directory.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Worker threads (all cores when omitted).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Record wall time per run. Makes the results CSV non-reproducible.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub problem: String,
    /// Starting points per branch.
    #[arg(long, default_value_t = 3)]
    pub multistarts: usize,
    /// Seed of the random branch starts.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest number of switching pairs to enumerate.
    #[arg(long, default_value_t = 16)]
    pub cap: usize,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub problem: String,
    /// The point, e.g. `0,0`.
    #[arg(long, allow_hyphen_values = true)]
    pub point: String,
    /// Activity and residual tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

fn fmt_vec(x: &DVector<f64>) -> String {
    x.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn load(spec: &str, err: &mut dyn Write) -> Option<MpscProblem> {
    match load_problem(spec) {
        Ok(p) => Some(p),
        Err(e) => {
            let _ = writeln!(err, "error: {spec}: {e}");
            None
        }
    }
}

fn parse_scheme(s: &str, err: &mut dyn Write) -> Option<SchemeKind> {
    match s.parse() {
        Ok(k) => Some(k),
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            None
        }
    }
}

fn kind_label(trace: &SolveTrace) -> &'static str {
    trace
        .certificate
        .as_ref()
        .map_or("none", |c| c.kind.label())
}

/// Runs a parsed command line. Normal output goes to `out`, diagnostics to
/// `err`. Returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match cli.command {
        Command::Solve(a) => run_solve(a, out, err),
        Command::Campaign(a) => run_campaign(a, out, err),
        Command::Oracle(a) => run_oracle(a, out, err),
        Command::Check(a) => run_check(a, out, err),
    }
}

fn write_trace(trace: &SolveTrace, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "k t_k f feas kkt_res")?;
    for it in &trace.iterations {
        writeln!(
            out,
            "{} {:.3e} {:.10e} {:.3e} {:.3e}",
            it.k, it.t, it.objective, it.feasibility, it.nlp.kkt_residual
        )?;
    }
    Ok(())
}

fn run_solve(a: SolveArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(problem) = load(&a.problem, err) else {
        return EXIT_INPUT;
    };
    let Some(scheme) = parse_scheme(&a.scheme, err) else {
        return EXIT_INPUT;
    };
    let x0 = match &a.start {
        Some(s) => match parse_point(s) {
            Ok(x) if x.len() == problem.n() => x,
            Ok(x) => {
                let _ = writeln!(
                    err,
                    "error: start has {} entries, expected {}",
                    x.len(),
                    problem.n()
                );
                return EXIT_INPUT;
            }
            Err(e) => {
                let _ = writeln!(err, "error: --start: {e}");
                return EXIT_INPUT;
            }
        },
        None => problem
            .starts
            .first()
            .cloned()
            .unwrap_or_else(|| (&problem.start_box.0 + &problem.start_box.1) * 0.5),
    };
    let opts = a.driver.options(scheme);
    let trace = match solve_mpsc(&problem, &x0, &opts) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INPUT;
        }
    };
    if let Err(e) = solve_report(&problem, &opts, &x0, &trace, out) {
        let _ = writeln!(err, "error: {e}");
        return EXIT_INPUT;
    }
    if let Some(dir) = &a.out {
        if let Err(e) = write_solve_files(dir, &trace) {
            let _ = writeln!(err, "error: {}: {e}", dir.display());
            return EXIT_INPUT;
        }
    }
    if trace.completed() {
        0
    } else {
        EXIT_INCOMPLETE
    }
}

fn solve_report(
    problem: &MpscProblem,
    opts: &DriverOptions,
    x0: &DVector<f64>,
    trace: &SolveTrace,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(
        out,
        "# problem {} (n={} m={} p={} q={})",
        problem.name(),
        problem.n(),
        problem.m(),
        problem.p(),
        problem.q()
    )?;
    writeln!(
        out,
        "# scheme {} t0={:e} shrink={:e} tmin={:e} tol={:e}",
        opts.scheme, opts.t0, opts.t_shrink, opts.t_min, opts.tol_outer
    )?;
    writeln!(out, "# start {}", fmt_vec(x0))?;
    write_trace(trace, out)?;
    writeln!(out, "stop {}", trace.stop.label())?;
    if let StopReason::SubsolverFailure(m) = &trace.stop {
        writeln!(out, "reason {m}")?;
    }
    writeln!(out, "x {}", fmt_vec(&trace.x))?;
    writeln!(out, "f {}", trace.objective)?;
    writeln!(out, "feas {:e}", trace.feasibility())?;
    match (&trace.certificate, &trace.certificate_error) {
        (Some(c), _) => writeln!(
            out,
            "certificate {} residual={:e} tol={:e}",
            c.kind.label(),
            c.residual,
            c.tol
        ),
        (None, Some(e)) => writeln!(out, "certificate none ({e})"),
        (None, None) => writeln!(out, "certificate none"),
    }
}

fn write_solve_files(dir: &Path, trace: &SolveTrace) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("trace.csv"))?;
    w.write_record(["k", "t", "f", "feas", "kkt_res", "mpsc_res", "status"])?;
    for it in &trace.iterations {
        w.write_record([
            it.k.to_string(),
            it.t.to_string(),
            it.objective.to_string(),
            it.feasibility.to_string(),
            it.nlp.kkt_residual.to_string(),
            it.mpsc_stationarity.to_string(),
            it.nlp.status.label().to_string(),
        ])?;
    }
    w.flush()?;
    let mut c = String::new();
    c.push_str(&format!(
        "problem={}\nscheme={}\n",
        trace.problem, trace.scheme
    ));
    c.push_str(&format!(
        "stop={}\nx={}\nf={}\n",
        trace.stop.label(),
        fmt_vec(&trace.x),
        trace.objective
    ));
    c.push_str(&format!(
        "feasibility={}\nkind={}\n",
        trace.feasibility(),
        kind_label(trace)
    ));
    if let Some(cert) = &trace.certificate {
        c.push_str(&format!("residual={}\n", cert.residual));
        c.push_str(&format!(
            "mu={}\nnu={}\n",
            fmt_vec(&cert.multipliers.mu),
            fmt_vec(&cert.multipliers.nu)
        ));
    }
    fs::write(dir.join("certificate.txt"), c)
}

fn run_campaign(a: CampaignArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let spec: StartSpec = match a.starts.parse() {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: --starts: {e}");
            return EXIT_INPUT;
        }
    };
    let mut problems = Vec::new();
    for p in &a.problem {
        let Some(pr) = load(p, err) else {
            return EXIT_INPUT;
        };
        problems.push(pr);
    }
    let mut schemes = Vec::new();
    for s in &a.scheme {
        let Some(k) = parse_scheme(s, err) else {
            return EXIT_INPUT;
        };
        schemes.push(k);
    }
    let delta = a
        .delta
        .unwrap_or(if problems.iter().all(|p| p.name() == "either_or_e2") {
            1.0
        } else {
            0.0
        });
    let seed = match &spec {
        StartSpec::Random { seed, .. } => seed.to_string(),
        _ => "none".to_string(),
    };
    let _ = writeln!(out, "# prng {PRNG_NAME} seed {seed}");
    let _ = writeln!(out, "# starts {spec} delta {delta} feas_tol {}", a.feas_tol);

    let mut fmin = BTreeMap::new();
    for p in &problems {
        if a.oracle {
            match branch_enumerate_global(
                p,
                &OracleOptions {
                    jobs: a.jobs,
                    ..Default::default()
                },
            ) {
                Ok(o) => {
                    let _ = writeln!(out, "# f_min {} = {} (oracle)", p.name(), o.f);
                    fmin.insert(p.name().to_string(), o.f);
                }
                Err(e) => {
                    let _ = writeln!(out, "# f_min {} unavailable from oracle: {e}", p.name());
                }
            }
        } else if let Some(v) = p
            .known_solutions
            .iter()
            .map(|s| s.objective)
            .min_by(f64::total_cmp)
        {
            let _ = writeln!(out, "# f_min {} = {v} (known solutions)", p.name());
            fmin.insert(p.name().to_string(), v);
        } else {
            let _ = writeln!(out, "# f_min {} = best feasible run", p.name());
        }
    }

    let mut runs = Vec::new();
    let mut all_completed = true;
    for p in &problems {
        let starts = match generate_starts(&spec, p) {
            Ok(s) => s,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return EXIT_INPUT;
            }
        };
        for scheme in &schemes {
            let opts = a.driver.options(scheme.clone());
            if let Err(e) = opts.validate() {
                let _ = writeln!(err, "error: {e}");
                return EXIT_INPUT;
            }
            for (id, res) in solve_multistart(p, &starts, &opts, a.jobs)
                .into_iter()
                .enumerate()
            {
                let rec = match res {
                    Ok(tr) => {
                        all_completed &= tr.completed();
                        let _ = writeln!(
                            out,
                            "run {} {} {id} stop={} kind={} f={} feas={:e} x={}",
                            scheme.label(),
                            p.name(),
                            tr.stop.label(),
                            kind_label(&tr),
                            tr.objective,
                            tr.feasibility(),
                            fmt_vec(&tr.x)
                        );
                        RunRecord {
                            solver: scheme.label().to_string(),
                            problem: p.name().to_string(),
                            start_id: id,
                            status: format!("{}/{}", tr.stop.label(), kind_label(&tr)),
                            f: tr.objective,
                            feasibility: tr.feasibility(),
                            time_ms: a.timing.then_some(tr.elapsed.as_secs_f64() * 1e3),
                            evals: tr.evals.evaluations,
                        }
                    }
                    Err(e) => {
                        all_completed = false;
                        let _ = writeln!(out, "run {} {} {id} error={e}", scheme.label(), p.name());
                        RunRecord {
                            solver: scheme.label().to_string(),
                            problem: p.name().to_string(),
                            start_id: id,
                            status: "error".into(),
                            f: f64::NAN,
                            feasibility: f64::INFINITY,
                            time_ms: None,
                            evals: 0,
                        }
                    }
                };
                runs.push(rec);
            }
        }
    }

    let table = match performance_profile(&runs, &fmin, delta, a.feas_tol) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INCOMPLETE;
        }
    };
    let written = fs::create_dir_all(&a.out)
        .map_err(|e| e.to_string())
        .and_then(|_| fs::File::create(a.out.join("results.csv")).map_err(|e| e.to_string()))
        .and_then(|f| table.write_results_csv(&runs, f).map_err(|e| e.to_string()))
        .and_then(|_| fs::File::create(a.out.join("profile.csv")).map_err(|e| e.to_string()))
        .and_then(|f| table.write_profile_csv(f).map_err(|e| e.to_string()));
    if let Err(e) = written {
        let _ = writeln!(err, "error: {}: {e}", a.out.display());
        return EXIT_INPUT;
    }
    for s in &table.solvers {
        let _ = writeln!(out, "rho({s}, 1) = {}", table.rho(s, 1.0).unwrap_or(0.0));
    }
    let _ = writeln!(out, "wrote {}", a.out.display());
    if all_completed {
        0
    } else {
        EXIT_INCOMPLETE
    }
}

fn run_oracle(a: OracleArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(problem) = load(&a.problem, err) else {
        return EXIT_INPUT;
    };
    let opts = OracleOptions {
        cap: a.cap,
        multistarts: a.multistarts,
        seed: a.seed,
        jobs: a.jobs,
        ..Default::default()
    };
    match branch_enumerate_global(&problem, &opts) {
        Ok(o) => {
            let _ = writeln!(out, "problem {}", problem.name());
            let _ = writeln!(out, "branches {}", o.branches_visited);
            let _ = writeln!(out, "branch {}", o.branch.id());
            let _ = writeln!(out, "f* {}", o.f);
            let _ = writeln!(out, "x* {}", fmt_vec(&o.x));
            0
        }
        Err(mpsc_relax::Error::EnumerationCap { count, cap }) => {
            let _ = writeln!(err, "error: {count} switching pairs exceed the cap {cap}");
            EXIT_INPUT
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INCOMPLETE
        }
    }
}

fn run_check(a: CheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(problem) = load(&a.problem, err) else {
        return EXIT_INPUT;
    };
    let x = match parse_point(&a.point) {
        Ok(x) if x.len() == problem.n() => x,
        Ok(x) => {
            let _ = writeln!(
                err,
                "error: point has {} entries, expected {}",
                x.len(),
                problem.n()
            );
            return EXIT_INPUT;
        }
        Err(e) => {
            let _ = writeln!(err, "error: --point: {e}");
            return EXIT_INPUT;
        }
    };
    let tols = CertTolerances {
        active: a.tol,
        residual: a.tol,
        enumeration_cap: DEFAULT_ENUMERATION_CAP,
    };
    match classify_with_cq(&problem, &x, tols) {
        Ok(c) => {
            let p = &c.partition;
            let _ = writeln!(out, "kind {}", c.kind.label());
            let _ = writeln!(out, "residual {:e}", c.residual);
            let _ = writeln!(
                out,
                "I_G {:?} I_H {:?} I_GH {:?} active_ineq {:?}",
                p.g_only, p.h_only, p.biactive, p.active_ineq
            );
            let m = &c.multipliers;
            let _ = writeln!(out, "mu {}", fmt_vec(&m.mu));
            let _ = writeln!(out, "nu {}", fmt_vec(&m.nu));
            if let Some(cq) = c.cq_flags {
                let _ = writeln!(
                    out,
                    "licq {} mfcq {} nnamcq {}",
                    cq.mpsc_licq, cq.mpsc_mfcq, cq.nnamcq
                );
            }
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INCOMPLETE
        }
    }
}
