//! Damped Newton with homotopy continuation for the discrete Dirichlet
//! problem `sigma_k[u] = psi(x, u, Du)` in the domain, `u = phi` on its boundary.
//!
//! Unknowns are the nodal values at interior and boundary-layer nodes. Values
//! at the boundary crossings are data, so the discrete system is square.

mod newton;
mod operator;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use newton::{
    check_subsolution, initial_guess, mean_curvature_supersolution, shifted_subsolution, solve, solve_from, supersolution_rhs,
    InitialGuess, Solution, SubsolutionReport,
};
pub use operator::{linearize, residual, LinearOperator};
pub(crate) use operator::Evaluation;

use crate::error::{Error, Result};
use crate::expr::{sample_bounds, Bounds, Expr, PsiSpec, SampleRegion};
use crate::grid::{BoundaryData, Field, Grid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// On `max |r| / max |psi|` at the nodes.
    pub tol_residual: f64,
    /// Per homotopy step.
    pub max_newton: usize,
    pub homotopy_steps: usize,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Relative residual required of each linear solve.
    pub linear_tol: f64,
    /// Tolerance of the intermediate homotopy steps.
    pub intermediate_tol: f64,
    /// Halton samples used to bound `psi`.
    pub psi_samples: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_residual: 1e-10,
            max_newton: 50,
            homotopy_steps: 10,
            backtrack_factor: 0.5,
            max_backtracks: 30,
            linear_tol: 1e-12,
            intermediate_tol: 1e-6,
            psi_samples: 4096,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = self.tol_residual > 0.0
            && self.max_newton > 0
            && self.homotopy_steps > 0
            && self.linear_tol > 0.0
            && self.intermediate_tol > 0.0
            && self.psi_samples > 0;
        if !positive {
            return Err(Error::Config(format!("solver options must be positive: {self:?}")));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::Config(format!("backtrack factor {} must lie in (0, 1)", self.backtrack_factor)));
        }
        Ok(())
    }
}

/// Snapshot of an accepted iterate.
#[derive(Clone, Debug)]
pub struct SolveState {
    pub u: Field,
    pub t: f64,
    pub residual_norm: f64,
    pub newton_iters: usize,
    /// Smallest `sigma_j`, `j <= k`, over the nodes.
    pub min_cone_margin: f64,
    /// Smallest `1 - |Du|` over the nodes.
    pub min_spacelike_margin: f64,
}

/// One line of the convergence trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub homotopy_step: usize,
    pub t: f64,
    pub iteration: usize,
    pub residual_norm: f64,
    pub min_cone_margin: f64,
    pub min_spacelike_margin: f64,
    pub step_length: f64,
    pub backtracks: usize,
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub grid: Arc<Grid>,
    pub k: usize,
    pub psi: Expr,
    pub phi: BoundaryData,
    /// `phi` at the grid's boundary crossings.
    pub boundary: Vec<f64>,
    pub options: SolverOptions,
    /// Sampled over the bounding box, the admissible `u` range and `|p| < 1`.
    pub psi_bounds: Bounds,
    pub warnings: Vec<String>,
}

impl Problem {
    pub fn new(grid: Arc<Grid>, k: usize, psi: &PsiSpec, phi: BoundaryData, options: SolverOptions) -> Result<Self> {
        let n = grid.n();
        if k < 1 || k > n {
            return Err(Error::Domain(format!("order k = {k} must lie in [1, {n}]")));
        }
        let expr = psi.to_expr(n, k)?;
        Self::from_expr(grid, k, expr, phi, options)
    }

    pub fn from_expr(grid: Arc<Grid>, k: usize, psi: Expr, phi: BoundaryData, options: SolverOptions) -> Result<Self> {
        options.validate()?;
        let n = grid.n();
        if k < 1 || k > n {
            return Err(Error::Domain(format!("order k = {k} must lie in [1, {n}]")));
        }
        psi.check_dimension(n)?;
        match &phi {
            BoundaryData::Affine { slope, .. } => {
                if slope.len() != n {
                    return Err(Error::Config(format!("affine slope has {} entries, dimension is {n}", slope.len())));
                }
                let norm = slope.iter().map(|a| a * a).sum::<f64>().sqrt();
                if !(norm < 1.0) {
                    return Err(Error::Domain(format!("boundary data not spacelike: affine slope |a| = {norm}")));
                }
            }
            BoundaryData::Expr(e) => {
                e.check_dimension(n)?;
                if e.depends_on_u() || e.depends_on_p() {
                    return Err(Error::Config("boundary data may depend on x only".into()));
                }
                let mut sup: f64 = 0.0;
                for x in grid.cuts.iter().map(|c| &c.x).chain(grid.nodes.iter().map(|nd| &nd.x)) {
                    let g = phi.gradient(x)?;
                    sup = sup.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
                }
                if !(sup < 1.0) {
                    return Err(Error::Domain(format!("boundary data not spacelike: sampled sup |D phi| = {sup}")));
                }
            }
        }
        let boundary = grid.sample_boundary(&phi)?;
        let mut warnings = Vec::new();
        if psi.contains_abs() {
            warnings.push("psi contains abs(); it is not smooth".to_string());
        }
        let region = region_for(&grid, &boundary, 0.99, options.psi_samples);
        let psi_bounds = sample_bounds(&psi, &region)?;
        Ok(Self { grid, k, psi, phi, boundary, options, psi_bounds, warnings })
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    /// Same grid and boundary data, another equation.
    pub fn with_equation(&self, k: usize, psi: Expr) -> Result<Self> {
        Self::from_expr(self.grid.clone(), k, psi, self.phi.clone(), self.options.clone())
    }

    pub fn sample_region(&self, p_radius: f64) -> SampleRegion {
        region_for(&self.grid, &self.boundary, p_radius, self.options.psi_samples)
    }
}

/// Admissible graphs have `sigma_1 > 0`, so they lie below `max phi`; being
/// spacelike they lie above `min phi - diam`.
fn region_for(grid: &Grid, boundary: &[f64], p_radius: f64, samples: usize) -> SampleRegion {
    let d = &grid.domain;
    let ext = d.half_extents();
    let lo = boundary.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = boundary.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    SampleRegion {
        box_lo: d.center.iter().zip(&ext).map(|(c, e)| c - e).collect(),
        box_hi: d.center.iter().zip(&ext).map(|(c, e)| c + e).collect(),
        u_range: (lo - d.diameter(), hi),
        p_radius,
        samples,
    }
}
