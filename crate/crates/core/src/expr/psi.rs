use serde::{Deserialize, Serialize};

use super::{parse, BinaryOp, Env, Expr, Var};
use crate::error::{Error, Result};
use crate::symfun::binomial;

/// Right-hand side `psi(x, u, p)`: a catalog entry or a free expression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiSpec {
    Constant(f64),
    /// `C(n, k) / R^k`, the value taken on the hyperboloid of radius `R`.
    Radial { radius: f64 },
    /// `c0 + c1 * form(u)`, `form` nondecreasing in `u`.
    UMonotone { c0: f64, c1: f64, form: String },
    GradientDependent(String),
    Expr(String),
}

impl PsiSpec {
    pub fn to_expr(&self, n: usize, k: usize) -> Result<Expr> {
        let e = match self {
            PsiSpec::Constant(c) => Expr::Const(*c),
            PsiSpec::Radial { radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::Domain(format!("radial psi needs R > 0, got {radius}")));
                }
                Expr::binary(
                    BinaryOp::Div,
                    Expr::Const(binomial(n, k)),
                    Expr::binary(BinaryOp::Pow, Expr::Const(*radius), Expr::Const(k as f64)),
                )
            }
            PsiSpec::UMonotone { c0, c1, form } => {
                let f = parse(form)?;
                if f.depends_on_x() || f.depends_on_p() {
                    return Err(Error::Domain(format!("u-monotone form '{form}' may depend on u only")));
                }
                if *c1 < 0.0 {
                    return Err(Error::Domain(format!("u-monotone coefficient c1 = {c1} must be >= 0")));
                }
                Expr::binary(BinaryOp::Add, Expr::Const(*c0), Expr::binary(BinaryOp::Mul, Expr::Const(*c1), f))
            }
            PsiSpec::GradientDependent(s) | PsiSpec::Expr(s) => parse(s)?,
        };
        e.check_dimension(n)?;
        Ok(e)
    }
}

/// Region sampled for `inf psi` and `sup |D psi|`.
#[derive(Clone, Debug)]
pub struct SampleRegion {
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub u_range: (f64, f64),
    /// Radius of the ball the gradient slot is drawn from.
    pub p_radius: f64,
    pub samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub inf_psi: f64,
    pub sup_abs_grad: f64,
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

/// Deterministic Halton sampling plus every corner of the box and both ends
/// of the `u` range (with `p = 0`).
pub fn sample_bounds(psi: &Expr, region: &SampleRegion) -> Result<Bounds> {
    let n = region.box_lo.len();
    let uses_p = psi.depends_on_p();
    let mut inf_psi = f64::INFINITY;
    let mut sup_grad: f64 = 0.0;
    let zeros = vec![0.0; n];
    let mut visit = |x: &[f64], u: f64, p: &[f64]| -> Result<()> {
        let part = psi.eval_with_partials(&Env::new(x, u, p))?;
        inf_psi = inf_psi.min(part.value);
        sup_grad = sup_grad.max(part.gradient_norm());
        Ok(())
    };
    for corner in 0..(1usize << n) {
        let x: Vec<f64> = (0..n)
            .map(|i| if corner >> i & 1 == 1 { region.box_hi[i] } else { region.box_lo[i] })
            .collect();
        visit(&x, region.u_range.0, &zeros)?;
        visit(&x, region.u_range.1, &zeros)?;
    }
    let mut x = vec![0.0; n];
    let mut p = vec![0.0; n];
    for s in 1..=region.samples as u64 {
        for i in 0..n {
            let t = radical_inverse(s, PRIMES[i]);
            x[i] = region.box_lo[i] + t * (region.box_hi[i] - region.box_lo[i]);
        }
        let tu = radical_inverse(s, PRIMES[n]);
        let u = region.u_range.0 + tu * (region.u_range.1 - region.u_range.0);
        if uses_p {
            // cube to ball by radial rescaling
            let mut norm2 = 0.0;
            for i in 0..n {
                p[i] = 2.0 * radical_inverse(s, PRIMES[n + 1 + i]) - 1.0;
                norm2 += p[i] * p[i];
            }
            let norm = norm2.sqrt();
            let target = region.p_radius * radical_inverse(s, PRIMES[7]).powf(1.0 / n as f64);
            let scale = if norm > 0.0 { target / norm } else { 0.0 };
            p.iter_mut().for_each(|v| *v *= scale);
        }
        visit(&x, u, &p)?;
    }
    if !(inf_psi > 0.0) {
        return Err(Error::Positivity { inf_psi });
    }
    Ok(Bounds { inf_psi, sup_abs_grad: sup_grad })
}

/// Sampled check that `psi` is nondecreasing in `u`.
pub(crate) fn min_u_derivative(psi: &Expr, region: &SampleRegion) -> Result<f64> {
    if !psi.depends_on(|v| v == Var::U) {
        return Ok(0.0);
    }
    let n = region.box_lo.len();
    let mut min_du: f64 = f64::INFINITY;
    let mut x = vec![0.0; n];
    let p = vec![0.0; n];
    for s in 1..=region.samples as u64 {
        for i in 0..n {
            x[i] = region.box_lo[i] + radical_inverse(s, PRIMES[i]) * (region.box_hi[i] - region.box_lo[i]);
        }
        let u = region.u_range.0 + radical_inverse(s, PRIMES[n]) * (region.u_range.1 - region.u_range.0);
        min_du = min_du.min(psi.eval_with_partials(&Env::new(&x, u, &p))?.du);
    }
    Ok(min_du)
}
