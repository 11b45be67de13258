//! Solve, verify and sweep runs driven by a [`RunConfig`], and the reference
//! oracles. Every run writes its artifacts into an output directory.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::expr::{parse, Env, Expr};
use crate::geometry::{frame, GraphJet};
use crate::grid::{BoundaryData, Domain, Field, Grid};
use crate::oracle;
use crate::solver::{
    check_subsolution, initial_guess, linearize, mean_curvature_supersolution, residual, shifted_subsolution, solve_from,
    Problem, SolveState, SolverOptions, TraceEntry,
};
use crate::symfun::{maclaurin_chain, sigma, CurvatureVector};
use crate::verify::{
    c0_sandwich, comparison_check, curvature_summary, gradient_bound_report, identity_suite, interior_curvature_report,
    sample_gamma, solution_curvatures, CurvatureSummary, EstimateReport, LuReport,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

/// Written as `summary.json`. Everything but `timing` is a function of the
/// config alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub converged: bool,
    pub message: Option<String>,
    pub n: usize,
    pub k: usize,
    pub h: f64,
    pub unknowns: usize,
    pub t: f64,
    pub residual_norm: f64,
    pub newton_iterations: usize,
    pub min_cone_margin: f64,
    pub min_spacelike_margin: f64,
    pub initial_radius: f64,
    /// Against the configured exact solution.
    pub max_error: Option<f64>,
    pub warnings: Vec<String>,
    pub timing: Timing,
}

#[derive(Clone, Debug)]
pub struct SolveRun {
    pub summary: SolveSummary,
    pub problem: Problem,
    pub state: SolveState,
    pub trace: Vec<TraceEntry>,
}

fn exact_expr(cfg: &RunConfig) -> Result<Option<Expr>> {
    cfg.exact.as_deref().map(parse).transpose()
}

fn max_error(u: &Field, exact: &Expr) -> Result<f64> {
    let mut err: f64 = 0.0;
    for (nd, v) in u.grid.nodes.iter().zip(&u.values) {
        err = err.max((v - exact.eval(&Env::new(&nd.x, 0.0, &[]))?).abs());
    }
    Ok(err)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_trace(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in trace {
        serde_json::to_writer(&mut f, t)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// Solve at one spacing without writing anything. Non-convergence is
/// reported in the summary, other errors are returned.
pub fn solve_at(cfg: &RunConfig, h: f64) -> Result<SolveRun> {
    let start = Instant::now();
    let problem = cfg.problem(h)?;
    let exact = exact_expr(cfg)?;
    let guess = initial_guess(&problem)?;
    let mut trace = Vec::new();
    let (state, message) = match solve_from(&problem, &guess.field, &mut trace) {
        Ok(state) => (state, None),
        Err(Error::NonConvergence { reason, state }) => (*state, Some(format!("did not converge: {reason}"))),
        Err(Error::ConeExit { reason, state }) => (*state, Some(format!("left the admissible cone: {reason}"))),
        Err(e) => return Err(e),
    };
    let max_error = exact.map(|e| max_error(&state.u, &e)).transpose()?;
    let summary = SolveSummary {
        converged: message.is_none(),
        message,
        n: problem.n(),
        k: problem.k,
        h,
        unknowns: problem.grid.unknowns(),
        t: state.t,
        residual_norm: state.residual_norm,
        newton_iterations: state.newton_iters,
        min_cone_margin: state.min_cone_margin,
        min_spacelike_margin: state.min_spacelike_margin,
        initial_radius: guess.radius,
        max_error,
        warnings: problem.warnings.clone(),
        timing: Timing { wall_seconds: start.elapsed().as_secs_f64() },
    };
    Ok(SolveRun { summary, problem, state, trace })
}

/// Writes `solution.csv`, `trace.jsonl` and `summary.json` into `out`.
pub fn run_solve(cfg: &RunConfig, out: &Path) -> Result<SolveRun> {
    let h = cfg.single_spacing()?;
    let run = solve_at(cfg, h)?;
    std::fs::create_dir_all(out)?;
    run.state.u.write_csv(&out.join("solution.csv"))?;
    write_trace(&out.join("trace.jsonl"), &run.trace)?;
    write_json(&out.join("summary.json"), &run.summary)?;
    Ok(run)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub name: String,
    pub reason: String,
}

/// Written as `reports.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutput {
    pub reports: Vec<EstimateReport>,
    pub skipped: Vec<Skipped>,
    pub curvature: Option<CurvatureSummary>,
    pub lu_probe: Option<LuReport>,
}

impl VerifyOutput {
    /// Every report passed or is marked as not meeting its hypotheses.
    pub fn acceptable(&self) -> bool {
        self.reports.iter().all(EstimateReport::acceptable)
    }
}

/// Reports on a solution field of the configured problem.
pub fn verify_field(cfg: &RunConfig, problem: &Problem, u: &Field) -> Result<VerifyOutput> {
    let v = &cfg.verify;
    let tol = cfg.tolerance();
    let mut out = VerifyOutput { reports: Vec::new(), skipped: Vec::new(), curvature: None, lu_probe: None };
    if v.gradient {
        out.reports.push(gradient_bound_report(problem, u)?);
    }
    if v.c0 || v.comparison {
        let sup = match mean_curvature_supersolution(problem) {
            Ok(s) => Some(s.state.u),
            Err(Error::Precondition(reason)) => {
                out.skipped.push(Skipped { name: "supersolution".into(), reason });
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(sup) = sup {
            if v.comparison {
                out.reports.push(comparison_check(problem, u, &sup, tol)?);
            }
            if v.c0 {
                let sub = shifted_subsolution(problem, &initial_guess(problem)?.field)?;
                let check = check_subsolution(problem, &sub)?;
                let mut rep = c0_sandwich(u, &sub, &sup, tol)?;
                rep.parameters.insert("subsolution_margin".into(), check.margin);
                if !check.is_subsolution {
                    rep.status = crate::verify::Status::HypothesesNotMet;
                    rep.notes.push(format!("constructed lower barrier is not a subsolution (margin {:.3e})", check.margin));
                }
                out.reports.push(rep);
            }
        }
    }
    if v.identity {
        let mut samples = solution_curvatures(u)?;
        if v.synthetic_samples > 0 {
            let seed = cfg.seed.ok_or_else(|| Error::Config("synthetic samples need a seed".into()))?;
            samples.extend(sample_gamma(problem.n(), problem.k, v.synthetic_samples, seed, v.proposal)?);
        }
        out.reports.push(identity_suite(&samples, problem.k)?);
    }
    if v.curvature {
        out.curvature = Some(curvature_summary(u, &problem.phi, cfg.inset()?, v.beta)?);
    }
    if let Some(p) = cfg.lu_probe() {
        out.lu_probe = Some(p.run()?);
    }
    Ok(out)
}

/// Identity suite on random `Gamma_k` samples, plus the Lu probe if configured.
pub fn verify_synthetic(cfg: &RunConfig) -> Result<VerifyOutput> {
    let v = &cfg.verify;
    let mut out = VerifyOutput { reports: Vec::new(), skipped: Vec::new(), curvature: None, lu_probe: None };
    if v.identity && v.synthetic_samples > 0 {
        let seed = cfg.seed.ok_or_else(|| Error::Config("synthetic samples need a seed".into()))?;
        let samples = sample_gamma(cfg.n, cfg.k, v.synthetic_samples, seed, v.proposal)?;
        out.reports.push(identity_suite(&samples, cfg.k)?);
    }
    if let Some(p) = cfg.lu_probe() {
        out.lu_probe = Some(p.run()?);
    }
    Ok(out)
}

/// Read `solution` onto the configured grid, verify it and write `reports.json`.
/// A config with every solution-based report switched off runs the identity
/// suite on synthetic samples alone and reads no solution.
pub fn run_verify(cfg: &RunConfig, solution: &Path, out: &Path) -> Result<VerifyOutput> {
    let result = if cfg.verify.needs_solution() {
        let problem = cfg.problem(cfg.single_spacing()?)?;
        let u = Field::read_csv(problem.grid.clone(), solution)
            .map_err(|e| Error::Config(format!("cannot use solution {}: {e}", solution.display())))?;
        verify_field(cfg, &problem, &u)?
    } else {
        verify_synthetic(cfg)?
    };
    std::fs::create_dir_all(out)?;
    write_json(&out.join("reports.json"), &result)?;
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub h: f64,
    pub converged: bool,
    pub residual_norm: f64,
    pub max_error: Option<f64>,
    pub kappa_interior: Option<f64>,
    pub kappa_boundary: Option<f64>,
    pub pogorelov: Option<f64>,
    pub gradient_margin: Option<f64>,
}

/// Written as `sweep.json`, with the rows also in `sweep.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// `error(h_i) / error(h_{i+1})`.
    pub error_ratios: Vec<f64>,
    /// Curvature stability between consecutive rows.
    pub stability: Vec<EstimateReport>,
    pub failure: Option<String>,
}

impl SweepTable {
    pub fn complete(&self) -> bool {
        self.failure.is_none() && self.rows.iter().all(|r| r.converged)
    }

    pub fn acceptable(&self) -> bool {
        self.stability.iter().all(EstimateReport::acceptable)
            && self.rows.iter().all(|r| r.gradient_margin.is_none_or(|m| m >= 0.0))
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let mut s = String::from("h,converged,residual_norm,max_error,kappa_interior,kappa_boundary,pogorelov,gradient_margin\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:?},{},{:?},{},{},{},{},{}",
                r.h,
                r.converged,
                r.residual_norm,
                cell(r.max_error),
                cell(r.kappa_interior),
                cell(r.kappa_boundary),
                cell(r.pogorelov),
                cell(r.gradient_margin)
            );
        }
        s
    }
}

struct Member {
    row: SweepRow,
    curvature: Option<CurvatureSummary>,
}

fn sweep_member(cfg: &RunConfig, h: f64) -> Result<Member> {
    let run = solve_at(cfg, h)?;
    let mut row = SweepRow {
        h,
        converged: run.summary.converged,
        residual_norm: run.summary.residual_norm,
        max_error: run.summary.max_error,
        kappa_interior: None,
        kappa_boundary: None,
        pogorelov: None,
        gradient_margin: None,
    };
    if !row.converged {
        return Ok(Member { row, curvature: None });
    }
    let u = &run.state.u;
    let c = curvature_summary(u, &run.problem.phi, cfg.inset()?, cfg.verify.beta)?;
    row.kappa_interior = Some(c.kappa_interior);
    row.kappa_boundary = Some(c.kappa_boundary);
    row.pogorelov = c.pogorelov;
    if cfg.verify.gradient {
        row.gradient_margin = Some(gradient_bound_report(&run.problem, u)?.margin);
    }
    Ok(Member { row, curvature: Some(c) })
}

/// Solve at every configured spacing (finest last) and tabulate. Members run
/// in parallel threads.
pub fn sweep(cfg: &RunConfig) -> Result<SweepTable> {
    let mut hs = cfg.spacings();
    if hs.len() < 2 {
        return Err(Error::Config(format!("a sweep needs at least two grid spacings, got {}", hs.len())));
    }
    hs.sort_by(|a, b| b.partial_cmp(a).expect("finite spacing"));
    let results: Vec<Result<Member>> = std::thread::scope(|s| {
        let handles: Vec<_> = hs.iter().map(|&h| s.spawn(move || sweep_member(cfg, h))).collect();
        handles.into_iter().map(|t| t.join().unwrap_or_else(|_| Err(Error::Numeric("sweep member panicked".into())))).collect()
    });
    let mut table = SweepTable { rows: Vec::new(), error_ratios: Vec::new(), stability: Vec::new(), failure: None };
    let mut curv = Vec::new();
    for (h, r) in hs.iter().zip(results) {
        match r {
            Ok(m) => {
                table.rows.push(m.row);
                curv.push(m.curvature);
            }
            Err(e) => {
                table.failure = Some(format!("h = {h}: {e}"));
                break;
            }
        }
    }
    for w in table.rows.windows(2) {
        if let (Some(a), Some(b)) = (w[0].max_error, w[1].max_error) {
            table.error_ratios.push(a / b);
        }
    }
    for w in curv.windows(2) {
        if let (Some(a), Some(b)) = (&w[0], &w[1]) {
            table.stability.push(interior_curvature_report(a, b));
        }
    }
    Ok(table)
}

pub fn run_sweep(cfg: &RunConfig, out: &Path) -> Result<SweepTable> {
    let table = sweep(cfg)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("sweep.json"), &table)?;
    std::fs::write(out.join("sweep.csv"), table.to_csv())?;
    Ok(table)
}

pub const ORACLES: [&str; 5] = ["subset-sigma", "umbilic-frame", "fd-jacobian", "maclaurin", "radial-ode"];

/// Principal curvatures from `g^{-1} h` with `g = I - Du Du^T`,
/// `h = D^2u / w`, symmetrised through the Cholesky factor of `g`.
fn shape_operator_eigenvalues(du: &[f64], d2u: &DMatrix<f64>) -> Vec<f64> {
    let n = du.len();
    let p = nalgebra::DVector::from_column_slice(du);
    let w = (1.0 - p.norm_squared()).sqrt();
    let g = DMatrix::identity(n, n) - &p * p.transpose();
    let l = g.cholesky().expect("spacelike metric").l();
    let li = l.try_inverse().expect("invertible factor");
    let s = &li * (d2u / w) * li.transpose();
    oracle::jacobi_eigenvalues(&((&s + s.transpose()) * 0.5))
}

/// Run a named reference oracle and return its printout.
pub fn run_oracle(name: &str) -> Result<String> {
    let mut s = String::new();
    match name {
        "subset-sigma" => {
            for (k, v) in [(2, vec![1.0, 1.0, 1.0]), (2, vec![1.0, 2.0, 3.0]), (3, vec![2.0, 3.0, 5.0, 7.0])] {
                let e = oracle::subset_sigma(k, &v);
                let r = sigma(k, &CurvatureVector::new(v.clone())?)?;
                let _ = writeln!(s, "sigma_{k}({v:?}) = {e} by subset enumeration; recurrence gives {r}");
            }
        }
        "umbilic-frame" => {
            for (radius, x) in [(1.0, vec![0.6, 0.0]), (0.5, vec![0.3, -0.2]), (2.0, vec![0.5, 0.5, 0.5])] {
                let (_, du, d2u) = oracle::hyperboloid_jet(radius, &x);
                let kappa = shape_operator_eigenvalues(&du, &d2u);
                let prod = frame(&GraphJet::new(0.0, du, d2u)?)?.kappa;
                let _ = writeln!(
                    s,
                    "R = {radius}, x = {x:?}: kappa = {kappa:?} (expected 1/R = {}); frame gives {:?}",
                    1.0 / radius,
                    prod.as_slice()
                );
            }
        }
        "maclaurin" => {
            let v = [1.0, 2.0, 3.0];
            let e = oracle::maclaurin_reference(3, &v);
            let r = maclaurin_chain(3, &CurvatureVector::new(v.to_vec())?)?;
            let _ = writeln!(s, "kappa = {v:?}: (H_1, H_2^(1/2), H_3^(1/3)) = {e:?}; library gives {r:?}");
        }
        "radial-ode" => {
            // constant mean curvature n / R is the hyperboloid of radius R
            let (n, radius, rb) = (2, 1.0, 0.7);
            let prof = oracle::RadialProfile::integrate(n, n as f64 / radius, rb, (radius * radius + rb * rb).sqrt(), 4000);
            for r in [0.0, 0.35, 0.7] {
                let exact = (radius * radius + r * r).sqrt();
                let _ = writeln!(s, "H = 2, r = {r}: u = {:.12} (hyperboloid {exact:.12})", prof.value(r));
            }
        }
        "fd-jacobian" => {
            let phi = BoundaryData::Expr(parse("sqrt(1 + x1^2 + x2^2)")?);
            let grid = Grid::build(Domain::ball(2, 0.7)?, 0.7 / 8.0, &phi)?;
            let psi = parse("1 + 0.1*u + 0.05*p1^2 + 0.02*x2")?;
            let p = Problem::from_expr(grid.clone(), 2, psi, phi, SolverOptions::default())?;
            let u = Field::sample(grid.clone(), |x| (0.81 + x[0] * x[0] + x[1] * x[1]).sqrt() + 0.01 * x[0] * x[1])?;
            let op = linearize(&p, &u)?;
            let eps = 1e-6;
            for seed in 0..3u64 {
                let dir = oracle::gaussian_vector(grid.unknowns(), seed);
                let shifted = |sgn: f64| -> Result<Vec<f64>> {
                    let mut w = u.clone();
                    w.values.iter_mut().zip(&dir).for_each(|(a, d)| *a += sgn * eps * d);
                    Ok(residual(&p, &w)?.values)
                };
                let (plus, minus) = (shifted(1.0)?, shifted(-1.0)?);
                let fd: Vec<f64> = plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
                let an = op.matvec(&dir);
                let scale = fd.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                let diff = fd.iter().zip(&an).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                let _ = writeln!(s, "direction {seed}: max |J d - FD| / max |FD| = {:.3e} (eps = {eps})", diff / scale);
            }
        }
        other => {
            return Err(Error::Config(format!("unknown oracle '{other}'; expected one of {}", ORACLES.join(", "))));
        }
    }
    Ok(s)
}
