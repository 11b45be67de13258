use super::{BinaryOp, Expr, UnaryOp, Var};
use crate::error::{Error, Result};

/// Point at which an expression is evaluated.
#[derive(Clone, Copy, Debug)]
pub struct Env<'a> {
    pub x: &'a [f64],
    pub u: f64,
    pub p: &'a [f64],
}

impl<'a> Env<'a> {
    pub fn new(x: &'a [f64], u: f64, p: &'a [f64]) -> Self {
        Self { x, u, p }
    }

    fn get(&self, v: Var, path: &[usize]) -> Result<f64> {
        let out = match v {
            Var::X(i) => self.x.get(i),
            Var::U => Some(&self.u),
            Var::P(i) => self.p.get(i),
        };
        out.copied().ok_or_else(|| Error::Evaluation {
            path: format_path(path),
            message: format!("variable {v} not bound in environment of dimension {}", self.x.len()),
        })
    }
}

/// Value and first partial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Partials {
    pub value: f64,
    pub du: f64,
    pub dp: Vec<f64>,
    pub dx: Vec<f64>,
}

impl Partials {
    /// Euclidean norm of the full gradient `(dx, du, dp)`.
    pub fn gradient_norm(&self) -> f64 {
        (self.du * self.du + self.dp.iter().map(|v| v * v).sum::<f64>() + self.dx.iter().map(|v| v * v).sum::<f64>())
            .sqrt()
    }
}

#[derive(Clone, Copy, Debug)]
struct Dual {
    v: f64,
    d: f64,
}

fn format_path(path: &[usize]) -> String {
    let mut s = String::from("root");
    for p in path {
        s.push('/');
        s.push_str(&p.to_string());
    }
    s
}

fn fail<T>(path: &[usize], message: impl Into<String>) -> Result<T> {
    Err(Error::Evaluation { path: format_path(path), message: message.into() })
}

fn eval_dual(e: &Expr, env: &Env, seed: Option<Var>, path: &mut Vec<usize>) -> Result<Dual> {
    let out = match e {
        Expr::Const(c) => Dual { v: *c, d: 0.0 },
        Expr::Var(v) => Dual { v: env.get(*v, path)?, d: if Some(*v) == seed { 1.0 } else { 0.0 } },
        Expr::Unary(op, a) => {
            path.push(0);
            let a = eval_dual(a, env, seed, path)?;
            path.pop();
            match op {
                UnaryOp::Neg => Dual { v: -a.v, d: -a.d },
                UnaryOp::Sqrt => {
                    if a.v < 0.0 {
                        return fail(path, format!("sqrt of negative value {}", a.v));
                    }
                    let s = a.v.sqrt();
                    if s == 0.0 && a.d != 0.0 {
                        return fail(path, "sqrt is not differentiable at 0");
                    }
                    Dual { v: s, d: if a.d == 0.0 { 0.0 } else { a.d / (2.0 * s) } }
                }
                UnaryOp::Exp => {
                    let v = a.v.exp();
                    Dual { v, d: v * a.d }
                }
                UnaryOp::Log => {
                    if a.v <= 0.0 {
                        return fail(path, format!("log of non-positive value {}", a.v));
                    }
                    Dual { v: a.v.ln(), d: a.d / a.v }
                }
                UnaryOp::Sin => Dual { v: a.v.sin(), d: a.v.cos() * a.d },
                UnaryOp::Cos => Dual { v: a.v.cos(), d: -a.v.sin() * a.d },
                UnaryOp::Abs => Dual { v: a.v.abs(), d: a.v.signum() * a.d },
            }
        }
        Expr::Binary(op, a, b) => {
            path.push(0);
            let a = eval_dual(a, env, seed, path)?;
            path.pop();
            path.push(1);
            let b = eval_dual(b, env, seed, path)?;
            path.pop();
            match op {
                BinaryOp::Add => Dual { v: a.v + b.v, d: a.d + b.d },
                BinaryOp::Sub => Dual { v: a.v - b.v, d: a.d - b.d },
                BinaryOp::Mul => Dual { v: a.v * b.v, d: a.d * b.v + a.v * b.d },
                BinaryOp::Div => {
                    if b.v == 0.0 {
                        return fail(path, "division by zero");
                    }
                    Dual { v: a.v / b.v, d: (a.d * b.v - a.v * b.d) / (b.v * b.v) }
                }
                BinaryOp::Pow => pow(a, b, path)?,
            }
        }
    };
    if !out.v.is_finite() || !out.d.is_finite() {
        return fail(path, format!("non-finite result {} (derivative {})", out.v, out.d));
    }
    Ok(out)
}

fn pow(a: Dual, b: Dual, path: &[usize]) -> Result<Dual> {
    if b.d == 0.0 {
        if a.v < 0.0 && b.v.fract() != 0.0 {
            return fail(path, format!("negative base {} with non-integer exponent {}", a.v, b.v));
        }
        if a.v == 0.0 && b.v < 0.0 {
            return fail(path, "zero raised to a negative power");
        }
        let v = a.v.powf(b.v);
        let d = if a.d == 0.0 { 0.0 } else { b.v * a.v.powf(b.v - 1.0) * a.d };
        Ok(Dual { v, d })
    } else {
        if a.v <= 0.0 {
            return fail(path, format!("variable exponent needs a positive base, got {}", a.v));
        }
        let v = a.v.powf(b.v);
        Ok(Dual { v, d: v * (b.d * a.v.ln() + b.v * a.d / a.v) })
    }
}

pub(super) fn value(e: &Expr, env: &Env) -> Result<f64> {
    Ok(eval_dual(e, env, None, &mut Vec::new())?.v)
}

/// One forward pass per variable the expression actually references.
pub(super) fn with_partials(e: &Expr, env: &Env) -> Result<Partials> {
    let mut path = Vec::new();
    let value = eval_dual(e, env, None, &mut path)?.v;
    let mut seeded = |v: Var| -> Result<f64> {
        if e.depends_on(|w| w == v) {
            Ok(eval_dual(e, env, Some(v), &mut path)?.d)
        } else {
            Ok(0.0)
        }
    };
    let du = seeded(Var::U)?;
    let dp = (0..env.p.len()).map(|i| seeded(Var::P(i))).collect::<Result<Vec<_>>>()?;
    let dx = (0..env.x.len()).map(|i| seeded(Var::X(i))).collect::<Result<Vec<_>>>()?;
    Ok(Partials { value, du, dp, dx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn monomial() {
        let e = parse("u*u").unwrap();
        let p = e.eval_with_partials(&Env::new(&[0.0, 0.0], 3.0, &[0.0, 0.0])).unwrap();
        assert_eq!(p.value, 9.0);
        assert_eq!(p.du, 6.0);
        assert_eq!(p.dx, vec![0.0, 0.0]);
    }

    #[test]
    fn quotient_rule() {
        let e = parse("3/(1+x1^2)").unwrap();
        let p = e.eval_with_partials(&Env::new(&[1.0, 0.0], 0.0, &[0.0, 0.0])).unwrap();
        assert_eq!(p.value, 1.5);
        assert_eq!(p.dx[0], -1.5);
        assert_eq!(p.dx[1], 0.0);
    }

    #[test]
    fn gradient_dependent() {
        let e = parse("sqrt(1 - p1^2 - p2^2)").unwrap();
        let p = e.eval_with_partials(&Env::new(&[0.0, 0.0], 0.0, &[0.6, 0.0])).unwrap();
        assert!((p.value - 0.8).abs() < 1e-15);
        assert!((p.dp[0] + 0.6 / 0.8).abs() < 1e-15);
    }

    #[test]
    fn domain_errors_have_paths() {
        let e = parse("1 + log(x1)").unwrap();
        match e.eval(&Env::new(&[-1.0], 0.0, &[0.0])) {
            Err(Error::Evaluation { path, message }) => {
                assert_eq!(path, "root/1");
                assert!(message.contains("log"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse("1/(x1-1)").unwrap().eval(&Env::new(&[1.0], 0.0, &[0.0])).is_err());
        assert!(parse("sqrt(x1)").unwrap().eval(&Env::new(&[-0.5], 0.0, &[0.0])).is_err());
        assert!(parse("x1^0.5").unwrap().eval(&Env::new(&[-0.5], 0.0, &[0.0])).is_err());
        assert_eq!(parse("x1^2").unwrap().eval(&Env::new(&[-0.5], 0.0, &[0.0])).unwrap(), 0.25);
        assert!(parse("x2").unwrap().eval(&Env::new(&[1.0], 0.0, &[0.0])).is_err());
    }

    #[test]
    fn variable_exponent() {
        let e = parse("x1^u").unwrap();
        let p = e.eval_with_partials(&Env::new(&[2.0], 3.0, &[0.0])).unwrap();
        assert_eq!(p.value, 8.0);
        assert!((p.dx[0] - 12.0).abs() < 1e-12);
        assert!((p.du - 8.0 * 2f64.ln()).abs() < 1e-12);
    }
}
