use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::operator::{evaluate, linearize_at, node_sigmas, LinearSolver};
use super::{Problem, SolveState, TraceEntry};
use crate::error::{Error, Result};
use crate::expr::{min_u_derivative, BinaryOp, Env, Expr};
use crate::geometry::SPACELIKE_MARGIN;
use crate::grid::Field;
use crate::symfun::binomial;

/// Admissible starting field `c_0 + sqrt(R^2 + |x - x_0|^2)`: a hyperboloid,
/// so every principal curvature is `1/R`. Its centre is displaced against the
/// slope `a` of the least-squares affine fit of `phi`, `x_0 = c - R a / sqrt(1 - |a|^2)`,
/// so the gradient at the domain centre is `a`; `c_0` matches the mean of `phi`
/// over the boundary crossings.
#[derive(Clone, Debug)]
pub struct InitialGuess {
    /// Boundary values are `u_0` itself at the crossings.
    pub field: Field,
    pub radius: f64,
    /// Centre `x_0` of the hyperboloid.
    pub center: Vec<f64>,
    /// Slope of the affine fit.
    pub slope: Vec<f64>,
    pub offset: f64,
    /// `min sigma_k[u_0] / psi` over the nodes; at least 2.
    pub ratio: f64,
}

impl InitialGuess {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(x, c)| (x - c) * (x - c)).sum();
        self.offset + (self.radius * self.radius + r2).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub state: SolveState,
    pub trace: Vec<TraceEntry>,
    pub guess: InitialGuess,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsolutionReport {
    pub is_subsolution: bool,
    /// `min (sigma_k[v] - psi(x, v, Dv))` over the nodes.
    pub margin: f64,
    /// `max (v - phi)` over the boundary crossings.
    pub boundary_excess: f64,
    pub witness: Vec<i64>,
}

fn affine_fit(problem: &Problem) -> Result<(Vec<f64>, f64)> {
    if let Some((slope, offset)) = problem.phi.as_affine() {
        return Ok((slope.to_vec(), offset));
    }
    let n = problem.n();
    let cuts = &problem.grid.cuts;
    let x = DMatrix::from_fn(cuts.len(), n + 1, |r, c| if c == 0 { 1.0 } else { cuts[r].x[c - 1] });
    let y = DVector::from_column_slice(&problem.boundary);
    let coef = x
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Initialization(format!("affine fit of the boundary data failed: {e}")))?;
    Ok(((1..=n).map(|i| coef[i]).collect(), coef[0]))
}

/// Search `R` downward from `4 diam` until the discrete `sigma_k[u_0]` is at
/// least `2 psi` at every node and `u_0` is admissible.
pub fn initial_guess(problem: &Problem) -> Result<InitialGuess> {
    let grid = &problem.grid;
    let domain = &grid.domain;
    let center = domain.center.clone();
    let (slope, _) = affine_fit(problem)?;
    let diam = domain.diameter();
    let k = problem.k;
    let norm = slope.iter().map(|a| a * a).sum::<f64>().sqrt();
    if !(norm < 1.0) {
        return Err(Error::Initialization(format!("affine fit of the boundary data has slope |a| = {norm} >= 1")));
    }
    let tilt = 1.0 / (1.0 - norm * norm).sqrt();
    let mean_phi = problem.boundary.iter().sum::<f64>() / problem.boundary.len() as f64;
    let mut radius = 4.0 * diam;
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    let mut last_failure = String::from("no candidate tried");
    while radius >= 1e-3 * diam {
        let x0: Vec<f64> = center.iter().zip(&slope).map(|(c, a)| c - radius * a * tilt).collect();
        let mut guess = InitialGuess { field: dummy_field(problem), radius, center: x0, slope: slope.clone(), offset: 0.0, ratio: 0.0 };
        let mean = grid.cuts.iter().map(|c| guess.eval(&c.x)).sum::<f64>() / grid.cuts.len() as f64;
        guess.offset = mean_phi - mean;
        match try_guess(problem, guess, k) {
            Ok(g) => return Ok(g),
            Err((ratio, why)) => {
                if ratio > best.0 {
                    best = (ratio, radius);
                }
                last_failure = why;
            }
        }
        radius *= 0.95;
    }
    Err(Error::Initialization(format!(
        "no admissible radius in [{:.3e}, {:.3e}]; best min sigma_k/psi = {:.3e} at R = {:.3e}; last failure: {last_failure}",
        1e-3 * diam,
        4.0 * diam,
        best.0,
        best.1
    )))
}

fn dummy_field(problem: &Problem) -> Field {
    Field { grid: problem.grid.clone(), values: Vec::new(), boundary: Vec::new() }
}

fn try_guess(problem: &Problem, mut g: InitialGuess, k: usize) -> std::result::Result<InitialGuess, (f64, String)> {
    let grid = &problem.grid;
    let values: Vec<f64> = grid.nodes.iter().map(|nd| g.eval(&nd.x)).collect();
    let boundary: Vec<f64> = grid.cuts.iter().map(|c| g.eval(&c.x)).collect();
    let mut ratio = f64::INFINITY;
    for i in 0..grid.unknowns() {
        let jet = grid.jet(&values, &boundary, i).map_err(|e| (f64::NEG_INFINITY, e.to_string()))?;
        let (_, _, a) = crate::geometry::curvature_matrix(&jet.du, &jet.d2u);
        let mut margin = f64::INFINITY;
        let mut sk = 0.0;
        for j in 1..=k {
            sk = crate::symfun::sigma_of_matrix_unchecked(j, &a);
            margin = margin.min(sk);
        }
        if !(margin > 0.0) {
            return Err((f64::NEG_INFINITY, format!("node {:?} outside the cone", grid.nodes[i].index)));
        }
        let du: Vec<f64> = jet.du.iter().copied().collect();
        let psi = problem
            .psi
            .eval(&Env::new(&grid.nodes[i].x, values[i], &du))
            .map_err(|e| (f64::NEG_INFINITY, e.to_string()))?;
        ratio = ratio.min(sk / psi);
        if sk < 2.0 * psi {
            return Err((ratio, format!("sigma_k = {sk:.4e} < 2 psi = {:.4e} at node {:?}", 2.0 * psi, grid.nodes[i].index)));
        }
    }
    let field = Field::new(grid.clone(), values).and_then(|f| f.with_boundary(boundary)).map_err(|e| (ratio, e.to_string()))?;
    g.field = field;
    g.ratio = ratio;
    Ok(g)
}

/// One neighbour-averaging pass over the axis neighbours.
fn smooth(grid: &crate::grid::Grid, s: &[f64]) -> Vec<f64> {
    let n = grid.n();
    (0..grid.unknowns())
        .map(|i| {
            let m = &grid.nodes[i].index;
            let (mut sum, mut count) = (0.0, 0usize);
            for a in 0..n {
                for sign in [-1i64, 1] {
                    let mut mm = m.clone();
                    mm[a] += sign;
                    if let Some(j) = grid.node_at(&mm) {
                        sum += s[j];
                        count += 1;
                    }
                }
            }
            if count == 0 {
                s[i]
            } else {
                0.5 * s[i] + 0.5 * sum / count as f64
            }
        })
        .collect()
}

fn snapshot(problem: &Problem, values: &[f64], boundary: &[f64], t: f64, eval: &super::Evaluation, iters: usize) -> Result<SolveState> {
    let u = Field::new(problem.grid.clone(), values.to_vec())?.with_boundary(boundary.to_vec())?;
    Ok(SolveState {
        u,
        t,
        residual_norm: eval.norm(),
        newton_iters: iters,
        min_cone_margin: eval.min_cone_margin,
        min_spacelike_margin: eval.min_spacelike_margin,
    })
}

fn infeasible(e: &Error) -> bool {
    matches!(e, Error::Admissibility { .. } | Error::Spacelike { .. })
}

/// Continuation from `guess` (an admissible field with its own boundary
/// values): `psi_t = (1 - t) S_0 + t psi`, boundary values blended from the
/// guess to `phi` over the same path. Each step first moves the nodal values
/// by the same fraction of `phi - guess`, which keeps the blended boundary
/// data from putting a kink into the cut-cell stencils.
pub fn solve_from(problem: &Problem, guess: &Field, trace: &mut Vec<TraceEntry>) -> Result<SolveState> {
    let grid = &problem.grid;
    let opts = &problem.options;
    let s0: Vec<f64> = node_sigmas(grid, &guess.values, &guess.boundary, problem.k)?
        .into_iter()
        .map(|(s, _)| *s.last().expect("k >= 1"))
        .collect();
    let base = smooth(grid, &s0);
    let mut values = guess.values.clone();
    let drift: Vec<f64> = grid
        .nodes
        .iter()
        .zip(&guess.values)
        .map(|(nd, g)| problem.phi.eval(&nd.x).map(|p| p - g))
        .collect::<Result<_>>()?;
    let blends = guess.boundary.iter().zip(&problem.boundary).any(|(a, b)| a != b);
    let mut linear = LinearSolver::new(opts.linear_tol);
    let m = opts.homotopy_steps;
    let mut iters = 0usize;
    let start = evaluate(problem, &values, &guess.boundary, 0.0, Some(&base))?;
    let mut last = snapshot(problem, &values, &guess.boundary, 0.0, &start, 0)?;
    for step in 1..=m {
        let t = step as f64 / m as f64;
        let boundary: Vec<f64> = if step == m {
            problem.boundary.clone()
        } else {
            guess.boundary.iter().zip(&problem.boundary).map(|(a, b)| (1.0 - t) * a + t * b).collect()
        };
        let tol = if step == m { opts.tol_residual } else { opts.intermediate_tol.max(opts.tol_residual) };
        let predicted = if blends {
            let dt = 1.0 / m as f64;
            let moved: Vec<f64> = values.iter().zip(&drift).map(|(v, d)| v + dt * d).collect();
            match evaluate(problem, &moved, &boundary, t, Some(&base)) {
                Ok(e) => Some((moved, e)),
                Err(e) if infeasible(&e) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let first = match predicted {
            Some((moved, e)) => {
                values = moved;
                Ok(e)
            }
            None => evaluate(problem, &values, &boundary, t, Some(&base)),
        };
        let mut eval = match first {
            Ok(e) => e,
            Err(e) if infeasible(&e) => {
                return Err(Error::ConeExit { reason: format!("boundary update at t = {t}: {e}"), state: Box::new(last) })
            }
            Err(e) => return Err(e),
        };
        let mut norm = eval.norm();
        let mut it = 0usize;
        while norm > tol {
            if it == opts.max_newton {
                let state = snapshot(problem, &values, &boundary, t, &eval, iters)?;
                return Err(Error::NonConvergence {
                    reason: format!("{} Newton iterations at t = {t} left residual {norm:.3e}", opts.max_newton),
                    state: Box::new(state),
                });
            }
            let jac = linearize_at(problem, &values, &boundary, t)?;
            let rhs: Vec<f64> = eval.residual.iter().map(|r| -r).collect();
            let delta = linear.solve(&jac, &rhs)?;
            let mut lambda = 1.0;
            let mut accepted = None;
            let mut feasible_seen = false;
            let mut backtracks = 0;
            for bt in 0..=opts.max_backtracks {
                backtracks = bt;
                let cand: Vec<f64> = values.iter().zip(&delta).map(|(v, d)| v + lambda * d).collect();
                match evaluate(problem, &cand, &boundary, t, Some(&base)) {
                    Ok(e) => {
                        feasible_seen = true;
                        if e.norm() <= (1.0 - 1e-4 * lambda) * norm {
                            accepted = Some((cand, e));
                            break;
                        }
                    }
                    Err(e) if infeasible(&e) => {}
                    Err(e) => return Err(e),
                }
                lambda *= opts.backtrack_factor;
            }
            let state = snapshot(problem, &values, &boundary, t, &eval, iters)?;
            let Some((cand, e)) = accepted else {
                let reason = format!("line search exhausted after {} backtracks at t = {t}, residual {norm:.3e}", opts.max_backtracks);
                return Err(if feasible_seen {
                    Error::NonConvergence { reason, state: Box::new(state) }
                } else {
                    Error::ConeExit { reason, state: Box::new(state) }
                });
            };
            values = cand;
            eval = e;
            norm = eval.norm();
            it += 1;
            iters += 1;
            trace.push(TraceEntry {
                homotopy_step: step,
                t,
                iteration: it,
                residual_norm: norm,
                min_cone_margin: eval.min_cone_margin,
                min_spacelike_margin: eval.min_spacelike_margin,
                step_length: lambda,
                backtracks,
            });
        }
        last = snapshot(problem, &values, &boundary, t, &eval, iters)?;
        if last.min_spacelike_margin < SPACELIKE_MARGIN {
            return Err(Error::ConeExit { reason: "spacelike margin lost".into(), state: Box::new(last) });
        }
    }
    Ok(last)
}

/// Initial guess plus continuation.
pub fn solve(problem: &Problem) -> Result<Solution> {
    let guess = initial_guess(problem)?;
    let mut trace = Vec::new();
    let state = solve_from(problem, &guess.field, &mut trace)?;
    Ok(Solution { state, trace, guess })
}

pub fn check_subsolution(problem: &Problem, v: &Field) -> Result<SubsolutionReport> {
    let e = evaluate(problem, &v.values, &v.boundary, 1.0, None)?;
    let (mut margin, mut at) = (f64::INFINITY, 0);
    for (i, r) in e.residual.iter().enumerate() {
        if *r < margin {
            margin = *r;
            at = i;
        }
    }
    let boundary_excess = v.boundary.iter().zip(&problem.boundary).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
    let scale = problem.boundary.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    Ok(SubsolutionReport {
        is_subsolution: margin >= 0.0 && boundary_excess <= 1e-12 * scale,
        margin,
        boundary_excess,
        witness: problem.grid.nodes[at].index.clone(),
    })
}

/// `v` lowered by a constant until it lies below `phi` at every boundary
/// crossing. A constant shift leaves the curvature unchanged, so with
/// `psi_u >= 0` a subsolution stays one.
pub fn shifted_subsolution(problem: &Problem, v: &Field) -> Result<Field> {
    let shift = v.boundary.iter().zip(&problem.boundary).map(|(a, b)| a - b).fold(0.0_f64, f64::max);
    let values = v.values.iter().map(|x| x - shift).collect();
    let boundary = v.boundary.iter().map(|x| x - shift).collect();
    Field::new(v.grid.clone(), values)?.with_boundary(boundary)
}

/// `n (psi / C(n, k))^{1/k}`.
pub fn supersolution_rhs(problem: &Problem) -> Expr {
    let n = problem.n();
    let k = problem.k;
    let scaled = Expr::binary(BinaryOp::Div, problem.psi.clone(), Expr::Const(binomial(n, k)));
    let root = if k == 1 { scaled } else { Expr::binary(BinaryOp::Pow, scaled, Expr::Const(1.0 / k as f64)) };
    Expr::binary(BinaryOp::Mul, Expr::Const(n as f64), root)
}

/// Solve the `k = 1` problem with right-hand side [`supersolution_rhs`].
pub fn mean_curvature_supersolution(problem: &Problem) -> Result<Solution> {
    if problem.psi.depends_on_p() {
        return Err(Error::Precondition("the mean-curvature supersolution needs psi independent of Du".into()));
    }
    let min_du = min_u_derivative(&problem.psi, &problem.sample_region(0.0))?;
    if min_du < 0.0 {
        return Err(Error::Precondition(format!("psi must be nondecreasing in u; sampled min psi_u = {min_du:.3e}")));
    }
    let sub = problem.with_equation(1, supersolution_rhs(problem))?;
    solve(&sub)
}
