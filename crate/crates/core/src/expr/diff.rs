//! Symbolic partial derivatives.
//!
//! Results are only lightly simplified (zeros and ones are folded); they are
//! meant to be evaluated, not read.

use super::{BinOp, Expr, UnaryOp, Var};

fn is_const(e: &Expr, value: f64) -> bool {
    matches!(e, Expr::Const(c) if *c == value)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if is_const(&a, 0.0) => b,
        _ if is_const(&b, 0.0) => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        _ => Expr::binary(BinOp::Add, a, b),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if is_const(&b, 0.0) => a,
        _ if is_const(&a, 0.0) => neg(b),
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        _ => Expr::binary(BinOp::Sub, a, b),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if is_const(&a, 0.0) || is_const(&b, 0.0) => Expr::Const(0.0),
        _ if is_const(&a, 1.0) => b,
        _ if is_const(&b, 1.0) => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        _ => Expr::binary(BinOp::Mul, a, b),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    if is_const(&a, 0.0) {
        return Expr::Const(0.0);
    }
    if is_const(&b, 1.0) {
        return a;
    }
    Expr::binary(BinOp::Div, a, b)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Unary(UnaryOp::Neg, inner) => *inner,
        other => Expr::unary(UnaryOp::Neg, other),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    if is_const(&b, 1.0) {
        return a;
    }
    if is_const(&b, 0.0) {
        return Expr::Const(1.0);
    }
    Expr::binary(BinOp::Pow, a, b)
}

fn func(op: UnaryOp, a: Expr) -> Expr {
    Expr::unary(op, a)
}

impl Expr {
    /// Partial derivative with respect to `var`.
    ///
    /// `abs` differentiates to `sign`, so the derivative of `abs` at zero is 0.
    pub fn diff(&self, var: Var) -> Expr {
        if !self.depends_on(var) {
            return Expr::Const(0.0);
        }
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(v) => Expr::Const(if *v == var { 1.0 } else { 0.0 }),
            Expr::Unary(op, a) => {
                let da = a.diff(var);
                let a = (**a).clone();
                let outer = match op {
                    UnaryOp::Neg => return neg(da),
                    UnaryOp::Sin => func(UnaryOp::Cos, a),
                    UnaryOp::Cos => neg(func(UnaryOp::Sin, a)),
                    UnaryOp::Exp => func(UnaryOp::Exp, a),
                    UnaryOp::Log => return div(da, a),
                    UnaryOp::Sqrt => return div(da, mul(Expr::Const(2.0), func(UnaryOp::Sqrt, a))),
                    UnaryOp::Tanh => sub(Expr::Const(1.0), pow(func(UnaryOp::Tanh, a), Expr::Const(2.0))),
                    UnaryOp::Abs => func(UnaryOp::Sign, a),
                    UnaryOp::Sign => return Expr::Const(0.0),
                    UnaryOp::Bump(k) => func(UnaryOp::Bump(k + 1), a),
                };
                mul(outer, da)
            }
            Expr::Binary(op, l, r) => {
                let dl = l.diff(var);
                let dr = r.diff(var);
                let (l, r) = ((**l).clone(), (**r).clone());
                match op {
                    BinOp::Add => add(dl, dr),
                    BinOp::Sub => sub(dl, dr),
                    BinOp::Mul => add(mul(dl, r), mul(l, dr)),
                    BinOp::Div => div(sub(mul(dl, r.clone()), mul(l, dr)), pow(r, Expr::Const(2.0))),
                    BinOp::Pow => diff_pow(l, r, dl, dr, var),
                }
            }
        }
    }
}

fn diff_pow(base: Expr, exponent: Expr, dbase: Expr, dexp: Expr, var: Var) -> Expr {
    if !exponent.depends_on(var) {
        // d(f^c) = c f^(c-1) f'
        let reduced = match &exponent {
            Expr::Const(c) => Expr::Const(c - 1.0),
            _ => sub(exponent.clone(), Expr::Const(1.0)),
        };
        return mul(mul(exponent, pow(base, reduced)), dbase);
    }
    let whole = pow(base.clone(), exponent.clone());
    if !base.depends_on(var) {
        // d(c^g) = c^g ln(c) g'
        return mul(mul(whole, func(UnaryOp::Log, base)), dexp);
    }
    // d(f^g) = f^g (g' ln f + g f'/f)
    let inner = add(mul(dexp, func(UnaryOp::Log, base.clone())), div(mul(exponent, dbase), base));
    mul(whole, inner)
}
