//! Expression language for `psi(x, u, p)` and boundary data `phi(x)`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          right associative
//! atom   := number | var | func '(' expr ')' | '(' expr ')'
//! var    := x1 | x2 | x3 | u | p1 | p2 | p3
//! func   := sqrt | exp | log | sin | cos | abs
//! ```
//!
//! `-x^2` is `-(x^2)`. There are no comparisons or conditionals.

mod eval;
mod parse;
mod psi;

use std::fmt;

pub use eval::{Env, Partials};
pub use parse::parse;
pub use psi::{sample_bounds, Bounds, PsiSpec, SampleRegion};
pub(crate) use psi::min_u_derivative;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    /// `x1..x3`, zero based.
    X(usize),
    U,
    /// `p1..p3`, zero based.
    P(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
    Abs,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sqrt" => UnaryOp::Sqrt,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "abs" => UnaryOp::Abs,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Self {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Unary(_, a) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    pub fn depends_on(&self, pred: impl Fn(Var) -> bool) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if let Expr::Var(v) = e {
                found |= pred(*v);
            }
        });
        found
    }

    pub fn depends_on_u(&self) -> bool {
        self.depends_on(|v| v == Var::U)
    }

    pub fn depends_on_p(&self) -> bool {
        self.depends_on(|v| matches!(v, Var::P(_)))
    }

    pub fn depends_on_x(&self) -> bool {
        self.depends_on(|v| matches!(v, Var::X(_)))
    }

    /// `abs` is allowed but makes the function non-smooth.
    pub fn contains_abs(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Unary(UnaryOp::Abs, _)));
        found
    }

    /// Reject variables with index `>= n`.
    pub fn check_dimension(&self, n: usize) -> crate::Result<()> {
        let mut bad = None;
        self.visit(&mut |e| {
            if let Expr::Var(Var::X(i) | Var::P(i)) = e {
                if *i >= n && bad.is_none() {
                    bad = Some(e.clone());
                }
            }
        });
        match bad {
            Some(Expr::Var(v)) => Err(crate::Error::Arity(format!("variable {v} exceeds dimension {n}"))),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, env: &Env) -> crate::Result<f64> {
        eval::value(self, env)
    }

    pub fn eval_with_partials(&self, env: &Env) -> crate::Result<Partials> {
        eval::with_partials(self, env)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::U => write!(f, "u"),
            Var::P(i) => write!(f, "p{}", i + 1),
        }
    }
}

/// Fully parenthesized; reparsing gives back the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    // the parser never produces negative literals
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}
