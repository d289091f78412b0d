use std::fmt;
use std::sync::Arc;

use super::{apply_binary, apply_unary, load_var, raw_binary, raw_unary, BinOp, EvalError, Expr, UnaryOp, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Const(f64),
    Load(Var),
    Unary(UnaryOp),
    Binary(BinOp),
}

/// An [`Expr`] compiled for repeated evaluation.
///
/// The fast path is a tree of closures that skips the per-operation checks
/// and marks any non-finite intermediate by returning NaN; only then is the
/// checked postfix form run to report the error. Values are bit-identical to
/// [`Expr::eval`]: both apply the same primitives in the same order.
#[derive(Clone)]
pub struct Program {
    code: Vec<Instr>,
    constant: Option<f64>,
    depth: usize,
    fast: Arc<Fast>,
}

type Fast = dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync;

impl fmt::Debug for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Program").field("code", &self.code).finish()
    }
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.code == other.code
    }
}

impl Program {
    pub fn new(e: &Expr) -> Self {
        let mut code = Vec::new();
        emit(e, &mut code);
        let constant = match code.as_slice() {
            [Instr::Const(c)] => Some(*c),
            _ => None,
        };
        let mut depth = 0usize;
        let mut max_depth = 0;
        for instr in &code {
            match instr {
                Instr::Const(_) | Instr::Load(_) => depth += 1,
                Instr::Unary(_) => {}
                Instr::Binary(_) => depth -= 1,
            }
            max_depth = max_depth.max(depth);
        }
        Program { code, constant, depth: max_depth, fast: Arc::from(build(e)) }
    }

    /// The value, if the program is a single literal.
    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }

    #[inline]
    pub fn eval(&self, x: f64, t: f64, u: &[f64]) -> Result<f64, EvalError> {
        if let Some(c) = self.constant {
            return Ok(c);
        }
        let v = (self.fast)(x, t, u);
        if v.is_finite() {
            Ok(v)
        } else {
            run(&self.code, &mut vec![0.0; self.depth], x, t, u)
        }
    }
}

#[inline(always)]
fn guard(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

/// [`raw_unary`] that also propagates NaN through `sign`.
#[inline(always)]
fn fast_unary(op: UnaryOp, a: f64) -> f64 {
    if a.is_nan() {
        return a;
    }
    guard(raw_unary(op, a))
}

/// [`raw_binary`] that also propagates NaN through `pow`.
#[inline(always)]
fn fast_binary(op: BinOp, l: f64, r: f64) -> f64 {
    if op == BinOp::Pow && (l.is_nan() || r.is_nan()) {
        return f64::NAN;
    }
    guard(raw_binary(op, l, r))
}

macro_rules! binary_closures {
    ($op:expr, $l:expr, $r:expr, $($variant:ident => $prim:expr),*) => {
        match ($op, $l, $r) {
            $(
                (BinOp::$variant, Operand::Const(a), Operand::Any(r)) => {
                    Box::new(move |x, t, u| guard($prim(a, r(x, t, u))))
                }
                (BinOp::$variant, Operand::Any(l), Operand::Const(b)) => {
                    Box::new(move |x, t, u| guard($prim(l(x, t, u), b)))
                }
                (BinOp::$variant, Operand::Any(l), Operand::Any(r)) => {
                    Box::new(move |x, t, u| guard($prim(l(x, t, u), r(x, t, u))))
                }
            )*
            (op, Operand::Const(a), Operand::Const(b)) => {
                let v = fast_binary(op, a, b);
                Box::new(move |_, _, _| v)
            }
            (op, l, r) => {
                let (l, r) = (l.into_fast(), r.into_fast());
                Box::new(move |x, t, u| fast_binary(op, l(x, t, u), r(x, t, u)))
            }
        }
    };
}

enum Operand {
    Const(f64),
    Any(Box<Fast>),
}

impl Operand {
    fn of(e: &Expr) -> Self {
        match e {
            Expr::Const(c) => Operand::Const(*c),
            e => Operand::Any(build(e)),
        }
    }

    fn into_fast(self) -> Box<Fast> {
        match self {
            Operand::Const(c) => Box::new(move |_, _, _| c),
            Operand::Any(f) => f,
        }
    }
}

fn build(e: &Expr) -> Box<Fast> {
    match e {
        Expr::Const(c) => {
            let c = *c;
            Box::new(move |_, _, _| c)
        }
        Expr::Var(Var::X) => Box::new(|x, _, _| x),
        Expr::Var(Var::T) => Box::new(|_, t, _| t),
        Expr::Var(Var::U(k)) => {
            let k = *k;
            Box::new(move |_, _, u| u.get(k).copied().unwrap_or(f64::NAN))
        }
        Expr::Unary(UnaryOp::Neg, a) => {
            let a = build(a);
            Box::new(move |x, t, u| guard(-a(x, t, u)))
        }
        Expr::Unary(op, a) => {
            let (op, a) = (*op, build(a));
            Box::new(move |x, t, u| fast_unary(op, a(x, t, u)))
        }
        Expr::Binary(op, l, r) => binary_closures!(
            *op, Operand::of(l), Operand::of(r),
            Add => |a: f64, b: f64| a + b,
            Sub => |a: f64, b: f64| a - b,
            Mul => |a: f64, b: f64| a * b,
            Div => |a: f64, b: f64| a / b
        ),
    }
}

/// Checked evaluation of the postfix form.
#[inline]
fn run(code: &[Instr], stack: &mut [f64], x: f64, t: f64, u: &[f64]) -> Result<f64, EvalError> {
    let mut top = 0;
    for instr in code {
        match *instr {
            Instr::Const(c) => {
                stack[top] = c;
                top += 1;
            }
            Instr::Load(v) => {
                stack[top] = load_var(v, x, t, u)?;
                top += 1;
            }
            Instr::Unary(op) => stack[top - 1] = apply_unary(op, stack[top - 1])?,
            Instr::Binary(op) => {
                top -= 1;
                stack[top - 1] = apply_binary(op, stack[top - 1], stack[top])?;
            }
        }
    }
    Ok(stack[0])
}

fn emit(e: &Expr, code: &mut Vec<Instr>) {
    match e {
        Expr::Const(c) => code.push(Instr::Const(*c)),
        Expr::Var(v) => code.push(Instr::Load(*v)),
        Expr::Unary(op, a) => {
            emit(a, code);
            code.push(Instr::Unary(*op));
        }
        Expr::Binary(op, l, r) => {
            emit(l, code);
            emit(r, code);
            code.push(Instr::Binary(*op));
        }
    }
}
