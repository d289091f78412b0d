//! Scalar expressions over `x`, `t` and the unknowns `u1..un`.
//!
//! Coefficients, sources and initial data of a problem are written in a small
//! infix language (see [`parse`]). Expressions can be evaluated pointwise,
//! differentiated symbolically with [`Expr::diff`], and compiled to a flat
//! postfix [`Program`] for the solver's inner loops.

mod compile;
mod diff;
mod parse;

use std::fmt;

use thiserror::Error;

pub use compile::Program;
pub use parse::{parse, ParseError, ParseErrorKind};

/// Largest accepted unknown index (`u99`).
pub const MAX_UNKNOWNS: usize = 99;

/// A free variable. `U(k)` is zero-based: `U(0)` prints as `u1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    T,
    U(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X => f.write_str("x"),
            Var::T => f.write_str("t"),
            Var::U(k) => write!(f, "u{}", k + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Abs,
    /// Sign function with `sign(0) = 0`; the derivative of `abs`.
    Sign,
    /// `k`-th derivative of the compactly supported mollifier
    /// `exp(-1/(1-s^2))` on `|s| < 1`, zero elsewhere.
    Bump(u8),
}

impl UnaryOp {
    pub fn name(self) -> String {
        match self {
            UnaryOp::Neg => "-".into(),
            UnaryOp::Sin => "sin".into(),
            UnaryOp::Cos => "cos".into(),
            UnaryOp::Exp => "exp".into(),
            UnaryOp::Log => "log".into(),
            UnaryOp::Sqrt => "sqrt".into(),
            UnaryOp::Tanh => "tanh".into(),
            UnaryOp::Abs => "abs".into(),
            UnaryOp::Sign => "sign".into(),
            UnaryOp::Bump(0) => "bump".into(),
            UnaryOp::Bump(k) => format!("bump_d{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => " + ",
            BinOp::Sub => " - ",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("logarithm of non-positive value {0}")]
    LogNonPositive(f64),
    #[error("square root of negative value {0}")]
    SqrtNegative(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("zero raised to negative power {0}")]
    ZeroToNegativePower(f64),
    #[error("negative base {base} raised to non-integer power {exponent}")]
    PowDomain { base: f64, exponent: f64 },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: String },
    #[error("variable {var} is not bound (only {bound} unknowns supplied)")]
    UnboundVariable { var: Var, bound: usize },
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn var(v: Var) -> Self {
        Expr::Var(v)
    }

    pub fn unary(op: UnaryOp, arg: Expr) -> Self {
        Expr::Unary(op, Box::new(arg))
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// Evaluates the expression at `(x, t, u)`.
    pub fn eval(&self, x: f64, t: f64, u: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(v) => load_var(*v, x, t, u),
            Expr::Unary(op, a) => apply_unary(*op, a.eval(x, t, u)?),
            Expr::Binary(op, l, r) => apply_binary(*op, l.eval(x, t, u)?, r.eval(x, t, u)?),
        }
    }

    /// True if `v` occurs anywhere in the tree.
    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Unary(_, a) => a.depends_on(v),
            Expr::Binary(_, l, r) => l.depends_on(v) || r.depends_on(v),
        }
    }

    /// True if any unknown `u_k` occurs in the tree.
    pub fn depends_on_unknowns(&self) -> bool {
        let mut found = false;
        self.visit_vars(&mut |v| found |= matches!(v, Var::U(_)));
        found
    }

    /// Largest zero-based unknown index referenced, if any.
    pub fn max_unknown(&self) -> Option<usize> {
        let mut max = None;
        self.visit_vars(&mut |v| {
            if let Var::U(k) = v {
                max = Some(max.map_or(k, |m: usize| m.max(k)));
            }
        });
        max
    }

    fn visit_vars(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Unary(_, a) => a.visit_vars(f),
            Expr::Binary(_, l, r) => {
                l.visit_vars(f);
                r.visit_vars(f);
            }
        }
    }

    pub fn compile(&self) -> Program {
        Program::new(self)
    }
}

#[inline]
pub(crate) fn load_var(v: Var, x: f64, t: f64, u: &[f64]) -> Result<f64, EvalError> {
    match v {
        Var::X => Ok(x),
        Var::T => Ok(t),
        Var::U(k) => u.get(k).copied().ok_or(EvalError::UnboundVariable { var: v, bound: u.len() }),
    }
}

#[inline]
fn finite(value: f64, op: impl FnOnce() -> String) -> Result<f64, EvalError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EvalError::NonFinite { op: op() })
    }
}

#[inline]
pub(crate) fn apply_unary(op: UnaryOp, a: f64) -> Result<f64, EvalError> {
    match op {
        UnaryOp::Log if a <= 0.0 => return Err(EvalError::LogNonPositive(a)),
        UnaryOp::Sqrt if a < 0.0 => return Err(EvalError::SqrtNegative(a)),
        _ => {}
    }
    finite(raw_unary(op, a), || op.name())
}

/// The unary primitive without domain checks. Every domain violation
/// produces a non-finite value.
#[inline]
pub(crate) fn raw_unary(op: UnaryOp, a: f64) -> f64 {
    match op {
        UnaryOp::Neg => -a,
        UnaryOp::Sin => a.sin(),
        UnaryOp::Cos => a.cos(),
        UnaryOp::Exp => a.exp(),
        UnaryOp::Log => a.ln(),
        UnaryOp::Sqrt => a.sqrt(),
        UnaryOp::Tanh => a.tanh(),
        UnaryOp::Abs => a.abs(),
        UnaryOp::Sign => {
            if a > 0.0 {
                1.0
            } else if a < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryOp::Bump(k) => mollifier_derivative(k, a),
    }
}

#[inline]
pub(crate) fn apply_binary(op: BinOp, l: f64, r: f64) -> Result<f64, EvalError> {
    match op {
        BinOp::Div if r == 0.0 => return Err(EvalError::DivisionByZero),
        BinOp::Pow if l == 0.0 && r < 0.0 => return Err(EvalError::ZeroToNegativePower(r)),
        BinOp::Pow if l < 0.0 && r.fract() != 0.0 => return Err(EvalError::PowDomain { base: l, exponent: r }),
        _ => {}
    }
    finite(raw_binary(op, l, r), || format!("'{}'", op.symbol().trim()))
}

/// The binary primitive without domain checks; see [`raw_unary`].
#[inline]
pub(crate) fn raw_binary(op: BinOp, l: f64, r: f64) -> f64 {
    match op {
        BinOp::Add => l + r,
        BinOp::Sub => l - r,
        BinOp::Mul => l * r,
        BinOp::Div => l / r,
        BinOp::Pow => l.powf(r),
    }
}

/// `d^k/ds^k exp(-1/(1-s^2))` for `|s| < 1`, zero outside.
///
/// With `q = 1 - s^2` the k-th derivative is `exp(-1/q) P_k(s) / q^(2k)` where
/// `P_0 = 1` and `P_{k+1} = -2s P_k + q^2 P_k' + 4ks q P_k`.
fn mollifier_derivative(order: u8, s: f64) -> f64 {
    if s.abs() >= 1.0 {
        return 0.0;
    }
    let q = 1.0 - s * s;
    let base = (-1.0 / q).exp();
    if base == 0.0 {
        return 0.0;
    }
    if order == 0 {
        return base;
    }
    // Polynomial coefficients in s, lowest degree first.
    let mut p: Vec<f64> = vec![1.0];
    let q_poly = [1.0, 0.0, -1.0];
    for k in 0..order as usize {
        let dp: Vec<f64> = p.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect();
        let q2 = poly_mul(&q_poly, &q_poly);
        let mut next = poly_mul(&[0.0, -2.0], &p);
        poly_add_assign(&mut next, &poly_mul(&q2, &dp));
        let sq = poly_mul(&[0.0, 4.0 * k as f64], &q_poly);
        poly_add_assign(&mut next, &poly_mul(&sq, &p));
        p = next;
    }
    let poly = p.iter().rev().fold(0.0, |acc, c| acc * s + c);
    base * poly / q.powi(2 * order as i32)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add_assign(acc: &mut Vec<f64>, other: &[f64]) {
    if acc.len() < other.len() {
        acc.resize(other.len(), 0.0);
    }
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// Prints an expression that parses back to the same tree. Binary operands
/// and negations in operand position are always parenthesised.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "({c})")
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Unary(UnaryOp::Neg, a) => match a.as_ref() {
                Expr::Const(c) if *c >= 0.0 => write!(f, "-{c}"),
                Expr::Var(_) => write!(f, "-{a}"),
                _ => write!(f, "-({a})"),
            },
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, l, r) => {
                write_operand(f, l)?;
                f.write_str(op.symbol())?;
                write_operand(f, r)
            }
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Binary(..) | Expr::Unary(UnaryOp::Neg, _) => write!(f, "({e})"),
        _ => write!(f, "{e}"),
    }
}
