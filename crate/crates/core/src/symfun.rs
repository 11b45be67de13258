//! Elementary symmetric polynomials, their derivatives, and the Gårding cones.
//!
//! All evaluations use the column recurrence
//! `e_j <- e_j + kappa_i * e_{j-1}` (O(nk)). Brute-force subset enumeration
//! lives in [`crate::oracle`] and is used only to check these routines.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of `R^n`, usually the principal curvatures of a hypersurface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureVector(Vec<f64>);

impl CurvatureVector {
    pub fn new(kappa: Vec<f64>) -> Result<Self> {
        if kappa.is_empty() {
            return Err(Error::Domain("curvature vector must be non-empty".into()));
        }
        if let Some(i) = kappa.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("entry {i} of curvature vector is not finite")));
        }
        Ok(Self(kappa))
    }

    pub fn from_slice(kappa: &[f64]) -> Result<Self> {
        Self::new(kappa.to_vec())
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Copy sorted descending; ties keep their original order.
    pub fn sorted_descending(&self) -> CurvatureVector {
        let mut v = self.0.clone();
        // `sort_by` is stable, so equal entries keep index order.
        v.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
        CurvatureVector(v)
    }
}

impl std::ops::Index<usize> for CurvatureVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Result of testing membership in `Gamma_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    pub k: usize,
    /// `sigma_1 .. sigma_k`.
    pub sigmas: Vec<f64>,
    pub in_cone: bool,
}

impl ConeReport {
    /// Smallest of `sigma_1 .. sigma_k`; positive iff in the cone.
    pub fn margin(&self) -> f64 {
        self.sigmas.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `T_m(A)`, the gradient of `sigma_{m+1}` of a symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonTensor {
    pub order: usize,
    pub matrix: DMatrix<f64>,
}

/// `sigma_0 .. sigma_kmax` of `values` in one pass. Entries above `n` are zero.
pub fn sigma_all(kmax: usize, values: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; kmax + 1];
    e[0] = 1.0;
    for (i, &v) in values.iter().enumerate() {
        let top = kmax.min(i + 1);
        for j in (1..=top).rev() {
            e[j] += v * e[j - 1];
        }
    }
    e
}

/// Total version of `sigma`: `sigma_0 = 1`, `sigma_m = 0` for `m > n`.
pub(crate) fn sigma_raw(k: usize, values: &[f64]) -> f64 {
    if k > values.len() {
        return 0.0;
    }
    sigma_all(k, values)[k]
}

/// `sigma_m` of `values` with the entries at `skip` removed.
fn sigma_deleted(m: usize, values: &[f64], skip: &[usize]) -> f64 {
    let mut e = vec![0.0; m + 1];
    e[0] = 1.0;
    let mut seen = 0;
    for (i, &v) in values.iter().enumerate() {
        if skip.contains(&i) {
            continue;
        }
        seen += 1;
        let top = m.min(seen);
        for j in (1..=top).rev() {
            e[j] += v * e[j - 1];
        }
    }
    e[m]
}

fn check_k(k: usize, lo: usize, n: usize) -> Result<()> {
    if k < lo || k > n {
        Err(Error::Domain(format!("order k = {k} outside [{lo}, {n}]")))
    } else {
        Ok(())
    }
}

/// `sigma_k(kappa)`.
pub fn sigma(k: usize, kappa: &CurvatureVector) -> Result<f64> {
    check_k(k, 0, kappa.n())?;
    Ok(sigma_raw(k, kappa.as_slice()))
}

/// Component `i` is `sigma_{k-1}(kappa | i)`.
pub fn sigma_grad(k: usize, kappa: &CurvatureVector) -> Result<Vec<f64>> {
    check_k(k, 1, kappa.n())?;
    let v = kappa.as_slice();
    Ok((0..v.len()).map(|i| sigma_deleted(k - 1, v, &[i])).collect())
}

/// Entry `(i, j)` is `sigma_{k-2}(kappa | ij)` off the diagonal, zero on it.
pub fn sigma_hess(k: usize, kappa: &CurvatureVector) -> Result<DMatrix<f64>> {
    check_k(k, 2, kappa.n())?;
    let v = kappa.as_slice();
    let n = v.len();
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = sigma_deleted(k - 2, v, &[i, j]);
            hess[(i, j)] = s;
            hess[(j, i)] = s;
        }
    }
    Ok(hess)
}

pub fn in_gamma(k: usize, kappa: &CurvatureVector) -> Result<ConeReport> {
    check_k(k, 1, kappa.n())?;
    let all = sigma_all(k, kappa.as_slice());
    let sigmas = all[1..].to_vec();
    let in_cone = sigmas.iter().all(|&s| s > 0.0);
    Ok(ConeReport { k, sigmas, in_cone })
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// `(H_1, H_2^{1/2}, ..., H_k^{1/k})` with `H_j = sigma_j / C(n, j)`.
pub fn maclaurin_chain(k: usize, kappa: &CurvatureVector) -> Result<Vec<f64>> {
    let report = in_gamma(k, kappa)?;
    if !report.in_cone {
        return Err(Error::ConeViolation(format!(
            "kappa not in Gamma_{k}: sigmas = {:?}",
            report.sigmas
        )));
    }
    let n = kappa.n();
    Ok(report
        .sigmas
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let order = j + 1;
            (s / binomial(n, order)).powf(1.0 / order as f64)
        })
        .collect())
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Domain(format!("matrix is {}x{}, not square", a.nrows(), a.ncols())));
    }
    let scale = a.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Domain(format!("matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Visit every `k`-subset of `0..n` in lexicographic order.
pub(crate) fn for_each_subset(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut pos = k;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            if idx[pos] < n - k + pos {
                idx[pos] += 1;
                for q in (pos + 1)..k {
                    idx[q] = idx[q - 1] + 1;
                }
                break;
            }
        }
    }
}

fn minor_det(a: &DMatrix<f64>, rows: &[usize]) -> f64 {
    match rows {
        [] => 1.0,
        [i] => a[(*i, *i)],
        [i, j] => a[(*i, *i)] * a[(*j, *j)] - a[(*i, *j)] * a[(*j, *i)],
        [i, j, l] => {
            let m = |r: usize, c: usize| a[(r, c)];
            m(*i, *i) * (m(*j, *j) * m(*l, *l) - m(*j, *l) * m(*l, *j))
                - m(*i, *j) * (m(*j, *i) * m(*l, *l) - m(*j, *l) * m(*l, *i))
                + m(*i, *l) * (m(*j, *i) * m(*l, *j) - m(*j, *j) * m(*l, *i))
        }
        _ => {
            let sub = DMatrix::from_fn(rows.len(), rows.len(), |r, c| a[(rows[r], rows[c])]);
            sub.determinant()
        }
    }
}

/// `sigma_k` of the eigenvalues of `a`, as the sum of its `k x k` principal minors.
pub fn sigma_of_matrix(k: usize, a: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(a)?;
    check_k(k, 1, a.nrows())?;
    Ok(sigma_of_matrix_unchecked(k, a))
}

pub(crate) fn sigma_of_matrix_unchecked(k: usize, a: &DMatrix<f64>) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    for_each_subset(a.nrows(), k, |rows| total += minor_det(a, rows));
    total
}

/// `T_0 = I`, `T_m = sigma_m(A) I - A T_{m-1}`.
pub fn newton_tensor(m: usize, a: &DMatrix<f64>) -> Result<NewtonTensor> {
    check_symmetric(a)?;
    let n = a.nrows();
    if m >= n {
        return Err(Error::Domain(format!("Newton tensor order {m} outside [0, {}]", n - 1)));
    }
    Ok(newton_tensor_unchecked(m, a))
}

pub(crate) fn newton_tensor_unchecked(m: usize, a: &DMatrix<f64>) -> NewtonTensor {
    let n = a.nrows();
    let mut t = DMatrix::identity(n, n);
    for j in 1..=m {
        let s = sigma_of_matrix_unchecked(j, a);
        t = DMatrix::identity(n, n) * s - a * &t;
    }
    let matrix = (&t + t.transpose()) * 0.5;
    NewtonTensor { order: m, matrix }
}

/// `-sum_{pq} sigma_k^{pp,qq} xi_p xi_q / sigma_k + (sum_i sigma_k^{ii} xi_i)^2 / sigma_k^2`.
pub fn lu_quadratic(k: usize, kappa: &CurvatureVector, xi: &[f64]) -> Result<f64> {
    let n = kappa.n();
    if xi.len() != n {
        return Err(Error::Domain(format!("xi has length {}, expected {n}", xi.len())));
    }
    check_k(k, 1, n)?;
    let s = sigma_raw(k, kappa.as_slice());
    if s <= 0.0 {
        return Err(Error::ConeViolation(format!("sigma_{k} = {s} is not positive")));
    }
    let hess_term = if k >= 2 {
        let hess = sigma_hess(k, kappa)?;
        let mut acc = 0.0;
        for p in 0..n {
            for q in 0..n {
                acc += hess[(p, q)] * xi[p] * xi[q];
            }
        }
        acc
    } else {
        0.0
    };
    let grad = sigma_grad(k, kappa)?;
    let lin: f64 = grad.iter().zip(xi).map(|(g, x)| g * x).sum();
    Ok(-hess_term / s + lin * lin / (s * s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cv(v: &[f64]) -> CurvatureVector {
        CurvatureVector::from_slice(v).unwrap()
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma(2, &cv(&[1.0, 1.0, 1.0])).unwrap(), 3.0);
        assert_eq!(sigma(2, &cv(&[1.0, 2.0, 3.0])).unwrap(), 11.0);
        // frozen from oracle::subset_sigma
        assert_eq!(oracle::subset_sigma(3, &[2.0, 3.0, 5.0, 7.0]), 247.0);
        assert_eq!(sigma(3, &cv(&[2.0, 3.0, 5.0, 7.0])).unwrap(), 247.0);
        assert_eq!(sigma(0, &cv(&[4.0, 5.0])).unwrap(), 1.0);
        assert!(matches!(sigma(3, &cv(&[1.0, 2.0])), Err(Error::Domain(_))));
    }

    #[test]
    fn sigma_raw_is_zero_above_n() {
        assert_eq!(sigma_raw(4, &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(CurvatureVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(CurvatureVector::new(vec![]).is_err());
    }

    #[test]
    fn gradient_examples() {
        let k = cv(&[1.0, 2.0, 3.0]);
        assert_eq!(sigma_grad(2, &k).unwrap(), vec![5.0, 4.0, 3.0]);
        assert_eq!(sigma_grad(1, &k).unwrap(), vec![1.0, 1.0, 1.0]);
        let euler: f64 = sigma_grad(2, &k).unwrap().iter().zip(k.as_slice()).map(|(g, x)| g * x).sum();
        assert_eq!(euler, 22.0);
        assert!(sigma_grad(0, &k).is_err());
    }

    #[test]
    fn hessian_examples() {
        let k = cv(&[1.0, 2.0, 3.0]);
        let h2 = sigma_hess(2, &k).unwrap();
        for i in 0..3 {
            assert_eq!(h2[(i, i)], 0.0);
            for j in 0..3 {
                if i != j {
                    assert_eq!(h2[(i, j)], 1.0);
                }
            }
        }
        let h3 = sigma_hess(3, &k).unwrap();
        assert_eq!(h3[(0, 1)], 3.0);
        assert_eq!(h3[(0, 2)], 2.0);
        assert!(sigma_hess(1, &k).is_err());
    }

    #[test]
    fn cone_examples() {
        let k = cv(&[3.0, 2.0, -1.0]);
        let r2 = in_gamma(2, &k).unwrap();
        assert!(r2.in_cone);
        assert_eq!(r2.sigmas, vec![4.0, 1.0]);
        let r3 = in_gamma(3, &k).unwrap();
        assert!(!r3.in_cone);
        assert_eq!(r3.sigmas[2], -6.0);
        assert!(in_gamma(3, &cv(&[0.1, 0.2, 0.3])).unwrap().in_cone);
        // strict: zero is outside
        assert!(!in_gamma(1, &cv(&[0.0, 0.0])).unwrap().in_cone);
    }

    #[test]
    fn maclaurin_examples() {
        let chain = maclaurin_chain(3, &cv(&[1.0, 2.0, 3.0])).unwrap();
        // H_1 = 2, H_2 = 11/3, H_3 = 6
        assert_eq!(chain[0], 2.0);
        assert_relative_eq!(chain[1], (11.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(chain[2], 6.0f64.cbrt(), epsilon = 1e-15);
        assert!((chain[1] - 1.91485).abs() < 1e-5);
        assert!((chain[2] - 1.81712).abs() < 1e-5);
        let c = maclaurin_chain(4, &cv(&[0.7; 4])).unwrap();
        for v in c {
            assert_relative_eq!(v, 0.7, epsilon = 1e-14);
        }
        assert!(matches!(maclaurin_chain(3, &cv(&[3.0, 2.0, -1.0])), Err(Error::ConeViolation(_))));
    }

    #[test]
    fn subsets_enumerated_in_order() {
        let mut seen = Vec::new();
        for_each_subset(4, 2, |s| seen.push(s.to_vec()));
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], vec![0, 1]);
        assert_eq!(seen[5], vec![2, 3]);
        let mut count = 0;
        for_each_subset(3, 0, |_| count += 1);
        assert_eq!(count, 1);
    }

    #[test]
    fn matrix_examples() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(sigma_of_matrix(2, &d).unwrap(), 11.0);
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, -1.0, 0.5, 1.0, 0.3, -1.0, 0.3, 4.0]);
        assert_relative_eq!(sigma_of_matrix(3, &a).unwrap(), a.determinant(), epsilon = 1e-12);
        let ns = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(sigma_of_matrix(1, &ns), Err(Error::Domain(_))));
    }

    #[test]
    fn newton_tensor_examples() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let t1 = newton_tensor(1, &d).unwrap();
        assert_eq!(t1.matrix, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 4.0, 3.0])));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, -2.0]);
        assert_eq!(newton_tensor(0, &a).unwrap().matrix, DMatrix::identity(2, 2));
        assert!(newton_tensor(2, &a).is_err());
    }

    #[test]
    fn newton_tensor_matches_finite_differences() {
        let a = oracle::random_symmetric(4, 17);
        let t = newton_tensor(2, &a).unwrap().matrix;
        let fd = oracle::fd_matrix_gradient(|m| sigma_of_matrix(3, m).unwrap(), &a, 1e-5);
        for i in 0..4 {
            for j in 0..4 {
                assert!((t[(i, j)] - fd[(i, j)]).abs() < 1e-6, "({i},{j}): {} vs {}", t[(i, j)], fd[(i, j)]);
            }
        }
    }

    #[test]
    fn matrix_sigma_matches_eigenvalues() {
        for seed in 0..20 {
            let n = 2 + (seed as usize % 5);
            let a = oracle::random_symmetric(n, seed);
            let eig = oracle::jacobi_eigenvalues(&a);
            for k in 1..=n {
                let via_eig = sigma_raw(k, &eig);
                let via_minors = sigma_of_matrix(k, &a).unwrap();
                assert!(
                    (via_eig - via_minors).abs() <= 1e-10 * via_eig.abs().max(1.0),
                    "n={n} k={k}: {via_eig} vs {via_minors}"
                );
            }
        }
    }

    #[test]
    fn lu_quadratic_examples() {
        let k = cv(&[1.0, 1.0, 1.0]);
        assert_eq!(lu_quadratic(2, &k, &[0.0; 3]).unwrap(), 0.0);
        assert_relative_eq!(lu_quadratic(2, &k, &[1.0, 0.0, 0.0]).unwrap(), 4.0 / 9.0, epsilon = 1e-15);
        let k1 = cv(&[2.0, 1.0, 0.5]);
        let xi = [0.3, -1.0, 2.0];
        let expected = (0.3f64 - 1.0 + 2.0).powi(2) / 3.5f64.powi(2);
        assert_relative_eq!(lu_quadratic(1, &k1, &xi).unwrap(), expected, epsilon = 1e-15);
        assert!(matches!(lu_quadratic(3, &cv(&[3.0, 2.0, -1.0]), &xi), Err(Error::ConeViolation(_))));
    }

    #[test]
    fn hessian_symmetric_on_random_inputs() {
        for seed in 0..100u64 {
            let v = oracle::gaussian_vector(5, seed);
            let h = sigma_hess(3, &cv(&v)).unwrap();
            assert_eq!(h, h.transpose());
        }
    }

    proptest! {
        #[test]
        fn recurrence_matches_enumeration(v in proptest::collection::vec(-3.0f64..3.0, 1..7), k in 0usize..7) {
            let kappa = cv(&v);
            prop_assume!(k <= v.len());
            let fast = sigma(k, &kappa).unwrap();
            let slow = oracle::subset_sigma(k, &v);
            prop_assert!((fast - slow).abs() <= 1e-12 * (1.0 + slow.abs()) * 10.0);
        }

        #[test]
        fn expansion_identity(v in proptest::collection::vec(-3.0f64..3.0, 2..7), k in 1usize..7, i in 0usize..7) {
            prop_assume!(k <= v.len() && i < v.len());
            let kappa = cv(&v);
            let grad = sigma_grad(k, &kappa).unwrap();
            let rest = sigma_deleted(k, &v, &[i]);
            let s = sigma(k, &kappa).unwrap();
            prop_assert!((s - (v[i] * grad[i] + rest)).abs() <= 1e-11 * (1.0 + s.abs()));
        }

        #[test]
        fn sorting_keeps_input(v in proptest::collection::vec(-3.0f64..3.0, 1..7)) {
            let kappa = cv(&v);
            let sorted = kappa.sorted_descending();
            prop_assert_eq!(kappa.as_slice(), &v[..]);
            prop_assert!(sorted.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
