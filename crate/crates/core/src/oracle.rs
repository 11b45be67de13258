//! Brute-force reference computations.
//!
//! Every routine here takes a route independent of the production code it is
//! used to check: subset enumeration instead of the recurrence, cyclic Jacobi
//! rotations instead of the library eigensolver, closed-form derivatives of
//! the hyperboloid, finite differences, and a shooting integration of the
//! radial mean-curvature ODE.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::symfun::for_each_subset;

/// `sigma_k` by summing products over all `k`-subsets.
pub fn subset_sigma(k: usize, values: &[f64]) -> f64 {
    let mut total = 0.0;
    for_each_subset(values.len(), k, |s| total += s.iter().map(|&i| values[i]).product::<f64>());
    total
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted descending.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let mrp = m[(r, p)];
                    let mrq = m[(r, q)];
                    m[(r, p)] = c * mrp - s * mrq;
                    m[(r, q)] = s * mrp + c * mrq;
                }
                for r in 0..n {
                    let mpr = m[(p, r)];
                    let mqr = m[(q, r)];
                    m[(p, r)] = c * mpr - s * mqr;
                    m[(q, r)] = s * mpr + c * mqr;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eig
}

pub fn gaussian_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
    let g = gaussian_vector(n * n, seed.wrapping_add(0x9e37_79b9));
    let m = DMatrix::from_vec(n, n, g);
    (&m + m.transpose()) * 0.5
}

/// Central-difference gradient of a matrix function, symmetrized over `(i, j)`.
pub fn fd_matrix_gradient(f: impl Fn(&DMatrix<f64>) -> f64, a: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut plus = a.clone();
            let mut minus = a.clone();
            plus[(i, j)] += eps;
            minus[(i, j)] -= eps;
            if i != j {
                plus[(j, i)] += eps;
                minus[(j, i)] -= eps;
            }
            let d = (f(&plus) - f(&minus)) / (2.0 * eps);
            if i == j {
                g[(i, i)] = d;
            } else {
                // perturbing both (i,j) and (j,i) measures twice the symmetric entry
                g[(i, j)] = d / 2.0;
                g[(j, i)] = d / 2.0;
            }
        }
    }
    g
}

/// Closed-form jet `(u, Du, D^2u)` of the hyperboloid `u = sqrt(R^2 + |x|^2)`.
pub fn hyperboloid_jet(radius: f64, x: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
    let n = x.len();
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let rho = (radius * radius + r2).sqrt();
    let du = x.iter().map(|v| v / rho).collect();
    let d2u = DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta / rho - x[i] * x[j] / rho.powi(3)
    });
    (rho, du, d2u)
}

/// `(H_1, H_2^{1/2}, ...)` straight from subset sums and binomials by enumeration.
pub fn maclaurin_reference(k: usize, values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (1..=k)
        .map(|j| {
            let mut count = 0usize;
            for_each_subset(n, j, |_| count += 1);
            (subset_sigma(j, values) / count as f64).powf(1.0 / j as f64)
        })
        .collect()
}

/// Radially symmetric spacelike graph with mean curvature `sigma_1 = h_const`
/// over a ball of radius `r_b`, boundary value `u(r_b) = boundary`. Found by
/// RK4 integration of `(r^{n-1} v)' = r^{n-1} H`, `v = u'/sqrt(1-u'^2)`.
pub struct RadialProfile {
    r: Vec<f64>,
    u: Vec<f64>,
    du: Vec<f64>,
}

impl RadialProfile {
    pub fn integrate(n: usize, h_const: f64, r_b: f64, boundary: f64, steps: usize) -> Self {
        let dim = n as f64;
        let dr = r_b / steps as f64;
        // state (u, v); v' = H - (n-1) v / r, u' = v / sqrt(1 + v^2)
        let rhs = |r: f64, v: f64| -> (f64, f64) {
            let dv = if r == 0.0 { h_const / dim } else { h_const - (dim - 1.0) * v / r };
            (v / (1.0 + v * v).sqrt(), dv)
        };
        let mut r = 0.0;
        let mut u = 0.0;
        let mut v = 0.0;
        let mut rs = vec![0.0];
        let mut us = vec![0.0];
        let mut dus = vec![0.0];
        for _ in 0..steps {
            let (k1u, k1v) = rhs(r, v);
            let (k2u, k2v) = rhs(r + dr / 2.0, v + dr / 2.0 * k1v);
            let (k3u, k3v) = rhs(r + dr / 2.0, v + dr / 2.0 * k2v);
            let (k4u, k4v) = rhs(r + dr, v + dr * k3v);
            u += dr / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
            v += dr / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            r += dr;
            rs.push(r);
            us.push(u);
            dus.push(v / (1.0 + v * v).sqrt());
        }
        let shift = boundary - u;
        for x in &mut us {
            *x += shift;
        }
        Self { r: rs, u: us, du: dus }
    }

    /// Cubic Hermite interpolation of the profile at radius `r`.
    pub fn value(&self, r: f64) -> f64 {
        let last = self.r.len() - 1;
        let dr = self.r[1] - self.r[0];
        let pos = (r / dr).clamp(0.0, last as f64);
        let i = (pos.floor() as usize).min(last - 1);
        let t = pos - i as f64;
        let (h00, h10, h01, h11) = (
            2.0 * t.powi(3) - 3.0 * t * t + 1.0,
            t.powi(3) - 2.0 * t * t + t,
            -2.0 * t.powi(3) + 3.0 * t * t,
            t.powi(3) - t * t,
        );
        h00 * self.u[i] + h10 * dr * self.du[i] + h01 * self.u[i + 1] + h11 * dr * self.du[i + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_on_diagonal() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0, 2.0]));
        assert_eq!(jacobi_eigenvalues(&d), vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn radial_profile_matches_hyperboloid() {
        // constant mean curvature H in n dims is the hyperboloid of radius n/H
        let n = 2;
        let h = 2.0;
        let prof = RadialProfile::integrate(n, h, 0.7, (1.0f64 + 0.49).sqrt(), 4000);
        for &r in &[0.0, 0.2, 0.5, 0.7] {
            let exact = (1.0 + r * r as f64).sqrt();
            assert!((prof.value(r) - exact).abs() < 1e-9, "r={r}");
        }
    }
}
