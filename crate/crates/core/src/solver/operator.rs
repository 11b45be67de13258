use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector};

use super::Problem;
use crate::error::{Error, Result};
use crate::expr::Env;
use crate::geometry::curvature_matrix;
use crate::grid::{Field, Grid, Sample};
use crate::symfun::{newton_tensor_unchecked, sigma_of_matrix_unchecked};

/// Residual of the discrete equation and the margins of the iterate.
#[derive(Clone, Debug)]
pub(crate) struct Evaluation {
    pub residual: Vec<f64>,
    pub target: Vec<f64>,
    pub min_cone_margin: f64,
    pub min_spacelike_margin: f64,
    weighted_max: f64,
}

impl Evaluation {
    /// `max_i w_i |r_i| / max |target|` with the grid's row weights `w_i`.
    pub fn norm(&self) -> f64 {
        let s = self.target.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        self.weighted_max / s.max(f64::MIN_POSITIVE)
    }
}

/// `sigma_1 .. sigma_k` of the curvature matrix at every node.
pub(crate) fn node_sigmas(grid: &Grid, values: &[f64], boundary: &[f64], k: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    (0..grid.unknowns())
        .map(|i| {
            let jet = grid.jet(values, boundary, i)?;
            let (_, _, a) = curvature_matrix(&jet.du, &jet.d2u);
            let sig = (1..=k).map(|j| sigma_of_matrix_unchecked(j, &a)).collect();
            Ok((sig, 1.0 - jet.gradient_norm()))
        })
        .collect()
}

/// Evaluate `sigma_k - psi_t` with `psi_t = (1 - t) base + t psi`. Fails on the
/// first node that is not spacelike or not in the cone.
pub(crate) fn evaluate(
    problem: &Problem,
    values: &[f64],
    boundary: &[f64],
    t: f64,
    base: Option<&[f64]>,
) -> Result<Evaluation> {
    let grid = &problem.grid;
    let k = problem.k;
    let mut out = Evaluation {
        residual: Vec::with_capacity(values.len()),
        target: Vec::with_capacity(values.len()),
        min_cone_margin: f64::INFINITY,
        min_spacelike_margin: f64::INFINITY,
        weighted_max: 0.0,
    };
    for i in 0..grid.unknowns() {
        let jet = grid.jet(values, boundary, i)?;
        let (_, _, a) = curvature_matrix(&jet.du, &jet.d2u);
        let mut margin = f64::INFINITY;
        let mut sk = 0.0;
        for j in 1..=k {
            sk = sigma_of_matrix_unchecked(j, &a);
            margin = margin.min(sk);
        }
        if !(margin > 0.0) {
            return Err(Error::Admissibility {
                node: grid.nodes[i].index.clone(),
                message: format!("curvature leaves the cone (min sigma_j = {margin:.3e})"),
            });
        }
        let du: Vec<f64> = jet.du.iter().copied().collect();
        let psi = problem.psi.eval(&Env::new(&grid.nodes[i].x, values[i], &du))?;
        let target = match base {
            Some(b) => (1.0 - t) * b[i] + t * psi,
            None => psi,
        };
        out.min_cone_margin = out.min_cone_margin.min(margin);
        out.min_spacelike_margin = out.min_spacelike_margin.min(1.0 - jet.gradient_norm());
        out.weighted_max = out.weighted_max.max(grid.row_weight(i) * (sk - target).abs());
        out.residual.push(sk - target);
        out.target.push(target);
    }
    Ok(out)
}

/// `sigma_k[u] - psi(x, u, Du)` at every node.
pub fn residual(problem: &Problem, u: &Field) -> Result<Field> {
    let e = evaluate(problem, &u.values, &u.boundary, 1.0, None)?;
    Field::new(u.grid.clone(), e.residual)
}

/// Sparse Jacobian of the discrete residual, stored by rows.
#[derive(Clone, Debug)]
pub struct LinearOperator {
    rows: Vec<Vec<(usize, f64)>>,
}

impl LinearOperator {
    pub fn size(&self) -> usize {
        self.rows.len()
    }

    /// Sorted `(column, value)` pairs.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.rows[i].iter().find(|(c, _)| *c == i).map(|(_, v)| *v).unwrap_or(0.0)
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|(c, a)| a * v[*c]).sum()).collect()
    }

    fn to_sparse(&self) -> Result<SparseColMat<usize, f64>> {
        let n = self.size();
        let mut trip = Vec::with_capacity(self.rows.iter().map(|r| r.len()).sum());
        for (i, r) in self.rows.iter().enumerate() {
            for &(c, v) in r {
                trip.push(Triplet::new(i, c, v));
            }
        }
        SparseColMat::try_new_from_triplets(n, n, &trip)
            .map_err(|e| Error::Numeric(format!("sparse assembly failed: {e:?}")))
    }
}

/// Derivative of `sigma_k` of the curvature matrix with respect to `Du` and
/// `D^2u` at one jet.
pub(crate) fn sigma_derivatives(k: usize, p: &DVector<f64>, d: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = p.len();
    let (w, gamma, a) = curvature_matrix(p, d);
    let t = newton_tensor_unchecked(k - 1, &a).matrix;
    let by_d = &gamma * &t * &gamma / w;
    let gdg = &gamma * d * &gamma;
    let tr = (&t * &gdg).trace();
    let m = &t * &gamma * d;
    let mp = &m * p;
    let mtp = m.transpose() * p;
    let pmp = p.dot(&mp);
    let c = 1.0 / (w + w * w);
    let mut by_p = vec![0.0; n];
    for q in 0..n {
        let dinv_w = p[q] / (w * w * w);
        let dc = (p[q] / w) * (1.0 + 2.0 * w) / ((w + w * w) * (w + w * w));
        by_p[q] = dinv_w * tr + (2.0 / w) * (c * (mtp[q] + mp[q]) + dc * pmp);
    }
    (by_p, by_d)
}

pub(crate) fn linearize_at(problem: &Problem, values: &[f64], boundary: &[f64], t: f64) -> Result<LinearOperator> {
    let grid = &problem.grid;
    let n = grid.n();
    let mut rows = Vec::with_capacity(grid.unknowns());
    for i in 0..grid.unknowns() {
        let jet = grid.jet(values, boundary, i)?;
        let (by_p, by_d) = sigma_derivatives(problem.k, &jet.du, &jet.d2u);
        let du: Vec<f64> = jet.du.iter().copied().collect();
        let part = problem.psi.eval_with_partials(&Env::new(&grid.nodes[i].x, values[i], &du))?;
        let st = grid.stencil(i);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(16);
        let mut add = |col: usize, v: f64| match row.iter_mut().find(|(c, _)| *c == col) {
            Some(e) => e.1 += v,
            None => row.push((col, v)),
        };
        for a in 0..n {
            for b in 0..n {
                for &(s, wt) in &st.d2u[a * n + b] {
                    if let Sample::Node(j) = s {
                        add(j, by_d[(a, b)] * wt);
                    }
                }
            }
            let g = by_p[a] - t * part.dp[a];
            for &(s, wt) in &st.du[a] {
                if let Sample::Node(j) = s {
                    add(j, g * wt);
                }
            }
        }
        add(i, -t * part.du);
        row.sort_by_key(|e| e.0);
        rows.push(row);
    }
    Ok(LinearOperator { rows })
}

/// Jacobian of [`residual`] at `u`.
pub fn linearize(problem: &Problem, u: &Field) -> Result<LinearOperator> {
    evaluate(problem, &u.values, &u.boundary, 1.0, None)?;
    linearize_at(problem, &u.values, &u.boundary, 1.0)
}

/// Sparse LU with the symbolic factorization kept across Newton steps; the
/// stencil pattern never changes.
pub(crate) struct LinearSolver {
    symbolic: Option<SymbolicLu<usize>>,
    tol: f64,
}

impl LinearSolver {
    pub fn new(tol: f64) -> Self {
        faer::set_global_parallelism(faer::Par::Seq);
        Self { symbolic: None, tol }
    }

    pub fn solve(&mut self, op: &LinearOperator, rhs: &[f64]) -> Result<Vec<f64>> {
        let a = op.to_sparse()?;
        if self.symbolic.is_none() {
            let sym = SymbolicLu::try_new(a.symbolic())
                .map_err(|e| Error::Numeric(format!("symbolic factorization failed: {e:?}")))?;
            self.symbolic = Some(sym);
        }
        let sym = self.symbolic.clone().expect("symbolic factorization present");
        let lu = Lu::try_new_with_symbolic(sym, a.as_ref())
            .map_err(|e| Error::Numeric(format!("sparse LU failed: {e:?}")))?;
        let n = rhs.len();
        let b = faer::Col::<f64>::from_fn(n, |i| rhs[i]);
        let bnorm = rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut x = lu.solve(&b);
        let mut rel = f64::INFINITY;
        for _ in 0..4 {
            let xs: Vec<f64> = (0..n).map(|i| x[i]).collect();
            let ax = op.matvec(&xs);
            let r: Vec<f64> = (0..n).map(|i| rhs[i] - ax[i]).collect();
            rel = r.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / bnorm.max(f64::MIN_POSITIVE);
            if rel <= self.tol || bnorm == 0.0 {
                break;
            }
            let dx = lu.solve(&faer::Col::<f64>::from_fn(n, |i| r[i]));
            x += &dx;
        }
        let out: Vec<f64> = (0..n).map(|i| x[i]).collect();
        if out.iter().any(|v| !v.is_finite()) || rel > self.tol.sqrt() {
            return Err(Error::Numeric(format!("linear solve reached relative residual {rel:.3e}")));
        }
        Ok(out)
    }
}
