//! Pointwise geometry of a spacelike graph `x_{n+1} = u(x)` in `R^{n,1}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::symfun::{self, ConeReport, CurvatureVector};

/// Default distance below 1 that `|Du|` must keep.
pub const SPACELIKE_MARGIN: f64 = 1e-8;

/// Second-order data of `u` at one point.
#[derive(Clone, Debug)]
pub struct GraphJet {
    pub u: f64,
    pub du: DVector<f64>,
    pub d2u: DMatrix<f64>,
    pub x: Option<DVector<f64>>,
}

impl GraphJet {
    pub fn new(u: f64, du: Vec<f64>, d2u: DMatrix<f64>) -> Result<Self> {
        Self::with_margin(u, du, d2u, SPACELIKE_MARGIN)
    }

    pub fn with_margin(u: f64, du: Vec<f64>, d2u: DMatrix<f64>, margin: f64) -> Result<Self> {
        let n = du.len();
        if n == 0 || d2u.nrows() != n || d2u.ncols() != n {
            return Err(Error::Domain(format!(
                "jet dimensions disagree: |du| = {n}, d2u is {}x{}",
                d2u.nrows(),
                d2u.ncols()
            )));
        }
        let scale = d2u.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in (i + 1)..n {
                if (d2u[(i, j)] - d2u[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Domain(format!("Hessian not symmetric at ({i}, {j})")));
                }
            }
        }
        let du = DVector::from_vec(du);
        let norm = du.norm();
        if !(norm < 1.0 - margin) {
            return Err(Error::Spacelike { gradient_norm: norm, node: None });
        }
        Ok(Self { u, du, d2u, x: None })
    }

    pub fn at(mut self, x: Vec<f64>) -> Self {
        self.x = Some(DVector::from_vec(x));
        self
    }

    pub fn n(&self) -> usize {
        self.du.len()
    }

    pub fn gradient_norm(&self) -> f64 {
        self.du.norm()
    }
}

/// Derived Minkowski quantities of a jet.
#[derive(Clone, Debug)]
pub struct MinkowskiFrame {
    /// `sqrt(1 - |Du|^2)`
    pub w: f64,
    /// `1 / w`
    pub tilt: f64,
    /// `(Du, 1) / w`
    pub nu: DVector<f64>,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// `gamma^{ik} = delta_ik + u_i u_k / (w (1 + w))`
    pub gamma: DMatrix<f64>,
    /// `(1/w) gamma D^2u gamma`
    pub a: DMatrix<f64>,
    /// Eigenvalues of `a`, descending.
    pub kappa: CurvatureVector,
}

impl MinkowskiFrame {
    /// `sqrt(g^{ij} u_i u_j)`.
    pub fn gradient_norm_induced(&self, jet: &GraphJet) -> f64 {
        (jet.du.transpose() * &self.g_inv * &jet.du)[(0, 0)].sqrt()
    }

    /// `<nu, nu>` in the Minkowski metric.
    pub fn normal_norm(&self) -> f64 {
        let n = self.nu.len() - 1;
        let space: f64 = self.nu.rows(0, n).norm_squared();
        space - self.nu[n] * self.nu[n]
    }
}

pub(crate) fn gamma_matrix(du: &DVector<f64>, w: f64) -> DMatrix<f64> {
    let n = du.len();
    let c = 1.0 / (w * (1.0 + w));
    DMatrix::identity(n, n) + du * du.transpose() * c
}

/// `(1/w) gamma D^2u gamma`, symmetrized.
pub(crate) fn curvature_matrix(du: &DVector<f64>, d2u: &DMatrix<f64>) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let w = (1.0 - du.norm_squared()).sqrt();
    let gamma = gamma_matrix(du, w);
    let a = &gamma * d2u * &gamma / w;
    let a = (&a + a.transpose()) * 0.5;
    (w, gamma, a)
}

pub(crate) fn sorted_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("curvature matrix has non-finite entries".into()));
    }
    let eig = nalgebra::SymmetricEigen::try_new(a.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    Ok(values)
}

pub fn frame(jet: &GraphJet) -> Result<MinkowskiFrame> {
    let n = jet.n();
    let du = &jet.du;
    let (w, gamma, a) = curvature_matrix(du, &jet.d2u);
    let tilt = 1.0 / w;
    let mut nu = DVector::zeros(n + 1);
    for i in 0..n {
        nu[i] = du[i] * tilt;
    }
    nu[n] = tilt;
    let g = DMatrix::identity(n, n) - du * du.transpose();
    let g_inv = DMatrix::identity(n, n) + du * du.transpose() / (w * w);
    let h = &jet.d2u / w;
    let kappa = CurvatureVector::new(sorted_eigenvalues(&a)?)?;
    Ok(MinkowskiFrame { w, tilt, nu, g, g_inv, h, gamma, a, kappa })
}

/// `(1/w) (I + Du Du^T / w^2) D^2u`; similar to the symmetric form but not symmetric.
pub fn curvature_matrix_alt(jet: &GraphJet) -> DMatrix<f64> {
    let n = jet.n();
    let w2 = 1.0 - jet.du.norm_squared();
    let w = w2.sqrt();
    (DMatrix::identity(n, n) + &jet.du * jet.du.transpose() / w2) * &jet.d2u / w
}

/// Eigenvalues of the non-symmetric form via a real Schur decomposition, descending.
pub fn curvature_alt_eigenvalues(jet: &GraphJet) -> Result<Vec<f64>> {
    let m = curvature_matrix_alt(jet);
    let complex = m.complex_eigenvalues();
    let scale = complex.iter().fold(1.0_f64, |s, z| s.max(z.norm()));
    if complex.iter().any(|z| z.im.abs() > 1e-8 * scale) {
        return Err(Error::Numeric("alternative curvature matrix has complex eigenvalues".into()));
    }
    let mut values: Vec<f64> = complex.iter().map(|z| z.re).collect();
    values.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    Ok(values)
}

pub fn admissible(jet: &GraphJet, k: usize) -> Result<ConeReport> {
    let fr = frame(jet)?;
    symfun::in_gamma(k, &fr.kappa)
}

/// `K = max(0, -min_i kappa_i)` over all supplied vectors.
pub fn semiconvexity_constant(kappas: &[CurvatureVector]) -> Result<f64> {
    if kappas.is_empty() {
        return Err(Error::Domain("semi-convexity constant of an empty list".into()));
    }
    let min = kappas.iter().map(|k| k.min()).fold(f64::INFINITY, f64::min);
    Ok((-min).max(0.0))
}
