//! Problem instances `u_t + diag(λ(x,t,u)) u_x = h(x,t,u)`, `u(x,0) = ū(x)`.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{parse, EvalError, Expr, ParseError, Program, Var};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("system must have at least one equation")]
    Empty,
    #[error("expected {expected} {what} expressions, got {got}")]
    Arity { what: &'static str, expected: usize, got: usize },
    #[error("interval [{a}, {b}] is invalid: need finite a < b")]
    Interval { a: f64, b: f64 },
    #[error("{what}[{index}] references u{var} but the system has {n} unknowns")]
    UnknownOutOfRange { what: &'static str, index: usize, var: usize, n: usize },
    #[error("{what}[{index}]: {source}")]
    Parse {
        what: &'static str,
        index: usize,
        #[source]
        source: ParseError,
    },
}

/// A diagonal quasilinear system on `[a, b]`.
///
/// All expressions and the partial derivatives the solver needs are compiled
/// once at construction.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    n: usize,
    a: f64,
    b: f64,
    lambda: Vec<Expr>,
    h: Vec<Expr>,
    u0: Vec<Expr>,
    compiled: Compiled,
}

#[derive(Debug, Clone)]
struct Compiled {
    lambda: Vec<Program>,
    h: Vec<Program>,
    u0: Vec<Program>,
    u0_prime: Vec<Program>,
    lambda_x: Vec<Program>,
    lambda_t: Vec<Program>,
    h_x: Vec<Program>,
    h_t: Vec<Program>,
    /// `lambda_u[i][k] = ∂λ_i/∂u_k`
    lambda_u: Vec<Vec<Program>>,
    h_u: Vec<Vec<Program>>,
    lambda_uses_u: Vec<bool>,
    h_uses_u: Vec<bool>,
}

impl Compiled {
    fn new(n: usize, lambda: &[Expr], h: &[Expr], u0: &[Expr]) -> Self {
        let comp = |es: &[Expr]| es.iter().map(Expr::compile).collect::<Vec<_>>();
        let partial = |es: &[Expr], v: Var| es.iter().map(|e| e.diff(v).compile()).collect::<Vec<_>>();
        let gradient = |es: &[Expr]| {
            es.iter().map(|e| (0..n).map(|k| e.diff(Var::U(k)).compile()).collect()).collect::<Vec<Vec<_>>>()
        };
        Compiled {
            lambda: comp(lambda),
            h: comp(h),
            u0: comp(u0),
            u0_prime: partial(u0, Var::X),
            lambda_x: partial(lambda, Var::X),
            lambda_t: partial(lambda, Var::T),
            h_x: partial(h, Var::X),
            h_t: partial(h, Var::T),
            lambda_u: gradient(lambda),
            h_u: gradient(h),
            lambda_uses_u: lambda.iter().map(Expr::depends_on_unknowns).collect(),
            h_uses_u: h.iter().map(Expr::depends_on_unknowns).collect(),
        }
    }
}

impl ProblemSpec {
    pub fn new(a: f64, b: f64, lambda: Vec<Expr>, h: Vec<Expr>, u0: Vec<Expr>) -> Result<Self, ProblemError> {
        let n = lambda.len();
        if n == 0 {
            return Err(ProblemError::Empty);
        }
        for (what, got) in [("h", h.len()), ("u0", u0.len())] {
            if got != n {
                return Err(ProblemError::Arity { what, expected: n, got });
            }
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(ProblemError::Interval { a, b });
        }
        for (what, es) in [("lambda", &lambda), ("h", &h), ("u0", &u0)] {
            for (index, e) in es.iter().enumerate() {
                if let Some(k) = e.max_unknown().filter(|&k| k >= n) {
                    return Err(ProblemError::UnknownOutOfRange { what, index, var: k + 1, n });
                }
            }
        }
        let compiled = Compiled::new(n, &lambda, &h, &u0);
        Ok(ProblemSpec { n, a, b, lambda, h, u0, compiled })
    }

    /// Builds a problem from expression source text.
    pub fn parse<S: AsRef<str>>(a: f64, b: f64, lambda: &[S], h: &[S], u0: &[S]) -> Result<Self, ProblemError> {
        let n = lambda.len();
        let parse_all = |what: &'static str, src: &[S]| -> Result<Vec<Expr>, ProblemError> {
            src.iter()
                .enumerate()
                .map(|(index, s)| parse(s.as_ref(), n).map_err(|source| ProblemError::Parse { what, index, source }))
                .collect()
        };
        Self::new(a, b, parse_all("lambda", lambda)?, parse_all("h", h)?, parse_all("u0", u0)?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn lambda_exprs(&self) -> &[Expr] {
        &self.lambda
    }

    pub fn h_exprs(&self) -> &[Expr] {
        &self.h
    }

    pub fn u0_exprs(&self) -> &[Expr] {
        &self.u0
    }

    /// Same system with different initial data.
    pub fn with_initial_data(&self, u0: Vec<Expr>) -> Result<Self, ProblemError> {
        Self::new(self.a, self.b, self.lambda.clone(), self.h.clone(), u0)
    }

    #[inline]
    pub fn lambda(&self, i: usize, x: f64, t: f64, u: &[f64]) -> Result<f64, EvalError> {
        self.compiled.lambda[i].eval(x, t, u)
    }

    #[inline]
    pub fn h(&self, i: usize, x: f64, t: f64, u: &[f64]) -> Result<f64, EvalError> {
        self.compiled.h[i].eval(x, t, u)
    }

    #[inline]
    pub fn u0(&self, i: usize, x: f64) -> Result<f64, EvalError> {
        self.compiled.u0[i].eval(x, 0.0, &[])
    }

    #[inline]
    pub fn u0_prime(&self, i: usize, x: f64) -> Result<f64, EvalError> {
        self.compiled.u0_prime[i].eval(x, 0.0, &[])
    }

    pub fn lambda_x(&self, i: usize, x: f64, t: f64, u: &[f64]) -> Result<f64, EvalError> {
        self.compiled.lambda_x[i].eval(x, t, u)
    }

    pub fn lambda_t(&self, i: usize, x: f64, t: f64, u: &[f64]) -> Result<f64, EvalError> {
        self.compiled.lambda_t[i].eval(x, t, u)
    }

    pub fn lambda_u(&self, i: usize, k: usize, x: f64, t: f64, u: &[f64]) -> Result<f64, EvalError> {
        self.compiled.lambda_u[i][k].eval(x, t, u)
    }

    pub fn h_x(&self, i: usize, x: f64, t: f64, u: &[f64]) -> Result<f64, EvalError> {
        self.compiled.h_x[i].eval(x, t, u)
    }

    pub fn h_t(&self, i: usize, x: f64, t: f64, u: &[f64]) -> Result<f64, EvalError> {
        self.compiled.h_t[i].eval(x, t, u)
    }

    pub fn h_u(&self, i: usize, k: usize, x: f64, t: f64, u: &[f64]) -> Result<f64, EvalError> {
        self.compiled.h_u[i][k].eval(x, t, u)
    }

    /// Whether `λ_i` depends on any unknown.
    pub fn lambda_uses_u(&self, i: usize) -> bool {
        self.compiled.lambda_uses_u[i]
    }

    pub fn h_uses_u(&self, i: usize) -> bool {
        self.compiled.h_uses_u[i]
    }
}

/// `[a, b] × [0, t_max] × {|u| ≤ radius}`, the set over which coefficient
/// bounds are taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibleBox {
    pub a: f64,
    pub b: f64,
    pub t_max: f64,
    pub radius: f64,
}

impl AdmissibleBox {
    /// The box with `t ∈ [0, 1]` and `|u| ≤ c0 + 1`.
    pub fn new(spec: &ProblemSpec, c0: f64) -> Self {
        AdmissibleBox { a: spec.a, b: spec.b, t_max: 1.0, radius: c0 + 1.0 }
    }

    /// Deterministic sample set: a `(m+1) × (m+1)` tensor grid in `(x, t)`
    /// crossed with the ball centre, `±radius·e_k`, and `radius·(1,…,1)/√n`.
    ///
    /// Doubling `intervals` yields a superset of the previous sample set.
    pub fn samples(&self, n: usize, intervals: usize) -> BoxSamples {
        let m = intervals.max(1);
        let mut directions = vec![vec![0.0; n]];
        for k in 0..n {
            for sign in [1.0, -1.0] {
                let mut d = vec![0.0; n];
                d[k] = sign * self.radius;
                directions.push(d);
            }
        }
        let diag = self.radius / (n as f64).sqrt();
        directions.push(vec![diag; n]);
        BoxSamples { bx: *self, m, directions, index: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplePoint {
    pub x: f64,
    pub t: f64,
    pub u: Vec<f64>,
}

impl fmt::Display for SamplePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(x={}, t={}, u={:?})", self.x, self.t, self.u)
    }
}

pub struct BoxSamples {
    bx: AdmissibleBox,
    m: usize,
    directions: Vec<Vec<f64>>,
    index: usize,
}

/// Uniform grid point `lo + i (hi - lo) / m`, hitting both endpoints exactly.
pub(crate) fn grid_point(lo: f64, hi: f64, i: usize, m: usize) -> f64 {
    if i == m {
        hi
    } else {
        lo + (hi - lo) * (i as f64 / m as f64)
    }
}

impl Iterator for BoxSamples {
    type Item = SamplePoint;

    fn next(&mut self) -> Option<SamplePoint> {
        let per_x = self.m + 1;
        let nd = self.directions.len();
        let total = per_x * per_x * nd;
        if self.index >= total {
            return None;
        }
        let d = self.index % nd;
        let j = (self.index / nd) % per_x;
        let i = self.index / (nd * per_x);
        self.index += 1;
        Some(SamplePoint {
            x: grid_point(self.bx.a, self.bx.b, i, self.m),
            t: grid_point(0.0, self.bx.t_max, j, self.m),
            u: self.directions[d].clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: Option<String>,
    pub point: Option<SamplePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(f, "{}: {}", c.name, if c.passed { "pass" } else { "FAIL" })?;
            if let Some(d) = &c.detail {
                write!(f, " ({d})")?;
            }
            if let Some(p) = &c.point {
                write!(f, " at {p}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub const DEFAULT_HYPERBOLICITY_TOL: f64 = 1e-8;

/// Checks the structural assumptions on a problem over sampled points of `bx`.
pub fn validate(spec: &ProblemSpec, bx: &AdmissibleBox, samples: usize, hyperbolicity_tol: f64) -> ValidationReport {
    let mut checks = Vec::new();

    let offending = spec.u0.iter().position(|e| e.depends_on(Var::T) || e.depends_on_unknowns());
    checks.push(ValidationCheck {
        name: "initial_data_depends_only_on_x",
        passed: offending.is_none(),
        detail: offending.map(|i| format!("u0[{i}] = {} references t or u", spec.u0[i])),
        point: None,
    });

    let mut finite = ValidationCheck { name: "finite_evaluation", passed: true, detail: None, point: None };
    let mut distinct = ValidationCheck { name: "strict_hyperbolicity", passed: true, detail: None, point: None };
    let n = spec.n;
    let mut lambdas = vec![0.0; n];

    'points: for p in bx.samples(n, samples) {
        if finite.passed {
            if let Err(e) = eval_everything(spec, &p, &mut lambdas) {
                finite.passed = false;
                finite.detail = Some(e.to_string());
                finite.point = Some(p.clone());
                // distinctness cannot be judged where λ fails to evaluate
                continue 'points;
            }
        } else {
            let ok = (0..n).all(|i| match spec.lambda(i, p.x, p.t, &p.u) {
                Ok(v) => {
                    lambdas[i] = v;
                    true
                }
                Err(_) => false,
            });
            if !ok {
                continue;
            }
        }
        if distinct.passed {
            for i in 0..n {
                for j in (i + 1)..n {
                    let gap = (lambdas[i] - lambdas[j]).abs();
                    if gap < hyperbolicity_tol {
                        distinct.passed = false;
                        distinct.detail = Some(format!("|λ{} - λ{}| = {gap:e} < {hyperbolicity_tol:e}", i + 1, j + 1));
                        distinct.point = Some(p.clone());
                    }
                }
            }
        }
        if !finite.passed && !distinct.passed {
            break;
        }
    }
    checks.push(finite);
    checks.push(distinct);
    ValidationReport { checks }
}

fn eval_everything(spec: &ProblemSpec, p: &SamplePoint, lambdas: &mut [f64]) -> Result<(), EvalError> {
    let (x, t, u) = (p.x, p.t, p.u.as_slice());
    for (i, l) in lambdas.iter_mut().enumerate() {
        *l = spec.lambda(i, x, t, u)?;
        spec.h(i, x, t, u)?;
        spec.lambda_x(i, x, t, u)?;
        spec.lambda_t(i, x, t, u)?;
        spec.h_x(i, x, t, u)?;
        spec.h_t(i, x, t, u)?;
        for k in 0..spec.n {
            spec.lambda_u(i, k, x, t, u)?;
            spec.h_u(i, k, x, t, u)?;
        }
        if t == 0.0 {
            spec.u0(i, x)?;
            spec.u0_prime(i, x)?;
        }
    }
    Ok(())
}
