//! Bounds on the data, the slope barrier `Ȳ`, the existence time `T`, and the
//! trapezoidal domain of determinacy.
//!
//! Suprema over `[a, b]` and over the [`AdmissibleBox`] are estimated by
//! sampling; a safety factor inflates each sampled bound (except `C0`, whose
//! admissible ball already carries a margin of one).

use serde::Serialize;
use thiserror::Error;

use crate::expr::EvalError;
use crate::problem::{grid_point, AdmissibleBox, ProblemSpec, SamplePoint};

#[derive(Debug, Error)]
pub enum DeterminacyError {
    #[error("evaluating {what} at {point}: {source}")]
    Eval {
        what: &'static str,
        point: SamplePoint,
        #[source]
        source: EvalError,
    },
    #[error("barrier blow-up: t = {t} is not below the blow-up time {blowup}")]
    BarrierBlowUp { t: f64, blowup: f64 },
    #[error("trapezoid has an empty top edge: b - a = {width} <= 2 Λ T = {}", 2.0 * .lambda * .t_final)]
    EmptyTopEdge { width: f64, lambda: f64, t_final: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    /// Intervals of the x-sampling used for `C0` and `C1` (points = intervals + 1).
    pub x_intervals: usize,
    /// Intervals per axis of the `(x, t)` grid over the admissible box.
    pub box_intervals: usize,
    pub safety_factor: f64,
    /// Relative distance kept between `T` and the barrier blow-up time.
    pub blowup_margin: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions { x_intervals: 10_000, box_intervals: 50, safety_factor: 1.05, blowup_margin: 0.01 }
    }
}

fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn x_point(x: f64) -> SamplePoint {
    SamplePoint { x, t: 0.0, u: Vec::new() }
}

/// Sampled `max_x |ū(x)|` (Euclidean norm over components).
pub fn estimate_c0(spec: &ProblemSpec, x_intervals: usize) -> Result<f64, DeterminacyError> {
    let mut best: f64 = 0.0;
    for j in 0..=x_intervals {
        let x = grid_point(spec.a(), spec.b(), j, x_intervals);
        let mut sq = 0.0;
        for i in 0..spec.n() {
            let v = spec.u0(i, x).map_err(|source| DeterminacyError::Eval { what: "u0", point: x_point(x), source })?;
            sq += v * v;
        }
        best = best.max(sq.sqrt());
    }
    Ok(best)
}

/// Sampled `max |λ_i|` over the admissible box with radius `c0 + 1`.
pub fn estimate_lambda(spec: &ProblemSpec, c0: f64, box_intervals: usize) -> Result<f64, DeterminacyError> {
    let bx = AdmissibleBox::new(spec, c0);
    let mut best: f64 = 0.0;
    for p in bx.samples(spec.n(), box_intervals) {
        for i in 0..spec.n() {
            let l = spec.lambda(i, p.x, p.t, &p.u).map_err(|source| DeterminacyError::Eval {
                what: "lambda",
                point: p.clone(),
                source,
            })?;
            best = best.max(l.abs());
        }
    }
    Ok(best)
}

/// Sampled max over `[a, b]` of `|ū'|` and `|h(x,0,ū) - A(x,0,ū) ū'|`.
pub fn estimate_c1(spec: &ProblemSpec, x_intervals: usize) -> Result<f64, DeterminacyError> {
    let n = spec.n();
    let mut u = vec![0.0; n];
    let mut du = vec![0.0; n];
    let mut best: f64 = 0.0;
    for j in 0..=x_intervals {
        let x = grid_point(spec.a(), spec.b(), j, x_intervals);
        let err = |what| move |source| DeterminacyError::Eval { what, point: x_point(x), source };
        for i in 0..n {
            u[i] = spec.u0(i, x).map_err(err("u0"))?;
            du[i] = spec.u0_prime(i, x).map_err(err("u0'"))?;
        }
        let mut residual = vec![0.0; n];
        for i in 0..n {
            let h = spec.h(i, x, 0.0, &u).map_err(err("h"))?;
            let l = spec.lambda(i, x, 0.0, &u).map_err(err("lambda"))?;
            residual[i] = h - l * du[i];
        }
        best = best.max(norm(du.iter().copied())).max(norm(residual));
    }
    Ok(best)
}

/// Sampled max over the admissible box of `|h_x|`, `|h_t|`, `|h_u| + |A_x|`,
/// `|h_u| + |A_t|` and `|A_u|`.
///
/// Vectors use the Euclidean norm, `h_u` the Frobenius norm, `A_x` and `A_t`
/// the largest diagonal entry, and `A_u` the largest gradient norm of a `λ_i`.
pub fn estimate_c2(spec: &ProblemSpec, c0: f64, box_intervals: usize) -> Result<f64, DeterminacyError> {
    let n = spec.n();
    let bx = AdmissibleBox::new(spec, c0);
    let mut best: f64 = 0.0;
    for p in bx.samples(n, box_intervals) {
        let (x, t, u) = (p.x, p.t, p.u.as_slice());
        let pr = &p;
        let err = |what| move |source| DeterminacyError::Eval { what, point: pr.clone(), source };
        let mut hx = 0.0;
        let mut ht = 0.0;
        let mut hu = 0.0;
        let mut ax: f64 = 0.0;
        let mut at: f64 = 0.0;
        let mut au: f64 = 0.0;
        for i in 0..n {
            hx += spec.h_x(i, x, t, u).map_err(err("h_x"))?.powi(2);
            ht += spec.h_t(i, x, t, u).map_err(err("h_t"))?.powi(2);
            ax = ax.max(spec.lambda_x(i, x, t, u).map_err(err("lambda_x"))?.abs());
            at = at.max(spec.lambda_t(i, x, t, u).map_err(err("lambda_t"))?.abs());
            let mut grad = 0.0;
            for k in 0..n {
                hu += spec.h_u(i, k, x, t, u).map_err(err("h_u"))?.powi(2);
                grad += spec.lambda_u(i, k, x, t, u).map_err(err("lambda_u"))?.powi(2);
            }
            au = au.max(grad.sqrt());
        }
        let hu = hu.sqrt();
        best = best.max(hx.sqrt()).max(ht.sqrt()).max(hu + ax).max(hu + at).max(au);
    }
    Ok(best)
}

/// Sampled max over the admissible box of the u-gradient norms of every `λ_i`
/// and `h_i`; a Lipschitz constant in `u` on the convex ball.
pub fn estimate_c3(spec: &ProblemSpec, c0: f64, box_intervals: usize) -> Result<f64, DeterminacyError> {
    let n = spec.n();
    let bx = AdmissibleBox::new(spec, c0);
    let mut best: f64 = 0.0;
    for p in bx.samples(n, box_intervals) {
        let (x, t, u) = (p.x, p.t, p.u.as_slice());
        let pr = &p;
        let err = |what| move |source| DeterminacyError::Eval { what, point: pr.clone(), source };
        for i in 0..n {
            let mut gl = 0.0;
            let mut gh = 0.0;
            for k in 0..n {
                gl += spec.lambda_u(i, k, x, t, u).map_err(err("lambda_u"))?.powi(2);
                gh += spec.h_u(i, k, x, t, u).map_err(err("h_u"))?.powi(2);
            }
            best = best.max(gl.sqrt()).max(gh.sqrt());
        }
    }
    Ok(best)
}

/// `1 / (n C2 (1 + n C1))`, infinite when `C2 = 0`.
pub fn blowup_time(n: usize, c1: f64, c2: f64) -> f64 {
    let n = n as f64;
    if c2 == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (n * c2 * (1.0 + n * c1))
    }
}

/// The barrier `Ȳ(t)`, solution of `Y' = C2 (1 + nY)^2`, `Y(0) = C1`.
///
/// Written as `(C1 + C2 t (1+nC1)) / (1 - n C2 t (1+nC1))`, which is the
/// textbook pole form with the `1/n` and `-1` folded in; it reduces to the
/// constant `C1` when `C2 = 0`.
pub fn ybar(t: f64, n: usize, c1: f64, c2: f64) -> Result<f64, DeterminacyError> {
    let blowup = blowup_time(n, c1, c2);
    if t >= blowup {
        return Err(DeterminacyError::BarrierBlowUp { t, blowup });
    }
    let nf = n as f64;
    let growth = c2 * t * (1.0 + nf * c1);
    Ok((c1 + growth) / (1.0 - nf * growth))
}

/// `∫_0^T n Ȳ(t) dt` in closed form.
pub fn ybar_integral(t_final: f64, n: usize, c1: f64, c2: f64) -> Result<f64, DeterminacyError> {
    let blowup = blowup_time(n, c1, c2);
    if t_final >= blowup {
        return Err(DeterminacyError::BarrierBlowUp { t: t_final, blowup });
    }
    let nf = n as f64;
    if c2 == 0.0 {
        return Ok(nf * c1 * t_final);
    }
    // z = n C2 T (1 + n C1); integral = -ln(1 - z) / (n C2) - T
    let z = nf * c2 * t_final * (1.0 + nf * c1);
    if z < 1e-3 {
        // -ln(1-z)/z - 1 = z/2 + z^2/3 + ..., avoids cancellation against T
        let tail: f64 = (1..=8).rev().fold(0.0, |acc, k| (acc + 1.0 / (k as f64 + 1.0)) * z);
        return Ok(nf * c1 * t_final + t_final * (1.0 + nf * c1) * tail);
    }
    Ok(-(-z).ln_1p() / (nf * c2) - t_final)
}

/// Largest `T ≤ 1`, `T ≤ (1 - margin) · blowup`, with `∫_0^T nȲ ≤ 1`.
pub fn choose_t(n: usize, c1: f64, c2: f64, blowup_margin: f64) -> f64 {
    let nf = n as f64;
    if c2 == 0.0 {
        return if c1 == 0.0 { 1.0 } else { (1.0 / (nf * c1)).min(1.0) };
    }
    let integral = |t: f64| ybar_integral(t, n, c1, c2).unwrap_or(f64::INFINITY);
    let hi_cap = (1.0 - blowup_margin) * blowup_time(n, c1, c2);
    let mut hi = hi_cap.min(1.0);
    if integral(hi) <= 1.0 {
        return hi;
    }
    let mut lo = 0.0;
    // Run to machine resolution: the 1e-10 bracket alone does not pin the
    // integral to within 1e-8 when nȲ(T) is large.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if integral(mid) <= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `{(x, t) : 0 ≤ t ≤ T, a + Λt ≤ x ≤ b - Λt}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Trapezoid {
    pub a: f64,
    pub b: f64,
    #[serde(rename = "Lambda")]
    pub lambda: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
}

const DOMAIN_TOL: f64 = 1e-12;

impl Trapezoid {
    pub fn new(a: f64, b: f64, lambda: f64, t_final: f64) -> Result<Self, DeterminacyError> {
        let width = b - a;
        if width <= 2.0 * lambda * t_final {
            return Err(DeterminacyError::EmptyTopEdge { width, lambda, t_final });
        }
        Ok(Trapezoid { a, b, lambda, t_final })
    }

    pub fn left(&self, t: f64) -> f64 {
        self.a + self.lambda * t
    }

    pub fn right(&self, t: f64) -> f64 {
        self.b - self.lambda * t
    }

    /// Closed membership with a `1e-12` boundary tolerance.
    pub fn in_domain(&self, x: f64, t: f64) -> bool {
        t >= -DOMAIN_TOL
            && t <= self.t_final + DOMAIN_TOL
            && x >= self.left(t) - DOMAIN_TOL
            && x <= self.right(t) + DOMAIN_TOL
    }
}

pub fn in_domain(x: f64, t: f64, trap: &Trapezoid) -> bool {
    trap.in_domain(x, t)
}

/// All constants of the existence argument for one problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeterminacyConstants {
    pub n: usize,
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "Lambda")]
    pub lambda: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C3")]
    pub c3: f64,
    #[serde(rename = "C4")]
    pub c4: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(serialize_with = "serialize_finite_or_null")]
    pub blowup_time: f64,
    pub safety_factor: f64,
}

fn serialize_finite_or_null<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

impl DeterminacyConstants {
    pub fn estimate(spec: &ProblemSpec, opts: &EstimateOptions) -> Result<Self, DeterminacyError> {
        let sf = opts.safety_factor;
        let c0 = estimate_c0(spec, opts.x_intervals)?;
        let lambda = sf * estimate_lambda(spec, c0, opts.box_intervals)?;
        let c1 = sf * estimate_c1(spec, opts.x_intervals)?;
        let c2 = sf * estimate_c2(spec, c0, opts.box_intervals)?;
        let c3 = sf * estimate_c3(spec, c0, opts.box_intervals)?;
        Self::from_bounds(spec.n(), c0, lambda, c1, c2, c3, opts)
    }

    /// Derives `T`, the blow-up time and `C4` from already inflated bounds.
    pub fn from_bounds(
        n: usize,
        c0: f64,
        lambda: f64,
        c1: f64,
        c2: f64,
        c3: f64,
        opts: &EstimateOptions,
    ) -> Result<Self, DeterminacyError> {
        let t_final = choose_t(n, c1, c2, opts.blowup_margin);
        let c4 = opts.safety_factor * n as f64 * ybar(t_final, n, c1, c2)?;
        Ok(DeterminacyConstants {
            n,
            c0,
            lambda,
            c1,
            c2,
            c3,
            c4,
            t_final,
            blowup_time: blowup_time(n, c1, c2),
            safety_factor: opts.safety_factor,
        })
    }

    /// Constants valid for two problems at once: bounds are maxed, `T` is re-derived.
    pub fn envelope(&self, other: &Self, opts: &EstimateOptions) -> Result<Self, DeterminacyError> {
        Self::from_bounds(
            self.n.max(other.n),
            self.c0.max(other.c0),
            self.lambda.max(other.lambda),
            self.c1.max(other.c1),
            self.c2.max(other.c2),
            self.c3.max(other.c3),
            opts,
        )
    }

    pub fn ybar(&self, t: f64) -> Result<f64, DeterminacyError> {
        ybar(t, self.n, self.c1, self.c2)
    }

    /// The slope bound `n Ȳ(t)`.
    pub fn slope_bound(&self, t: f64) -> Result<f64, DeterminacyError> {
        Ok(self.n as f64 * self.ybar(t)?)
    }

    /// `|u| ≤ C0 + 1`
    pub fn amplitude_bound(&self) -> f64 {
        self.c0 + 1.0
    }

    /// Contraction constant `n C3 (1 + C4)`.
    pub fn beta(&self) -> f64 {
        self.n as f64 * self.c3 * (1.0 + self.c4)
    }

    pub fn trapezoid(&self, spec: &ProblemSpec) -> Result<Trapezoid, DeterminacyError> {
        Trapezoid::new(spec.a(), spec.b(), self.lambda, self.t_final)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spec(a: f64, b: f64, lambda: &[&str], h: &[&str], u0: &[&str]) -> ProblemSpec {
        ProblemSpec::parse(a, b, lambda, h, u0).unwrap()
    }

    #[test]
    fn c0_examples() {
        // dense-sampling oracle at 1e6 points gives sup|sin| = 1 to ~1e-12
        let oracle = (0..=1_000_000).map(|j| (2.0 * PI * j as f64 / 1e6).sin().abs()).fold(0.0, f64::max);
        let s = spec(0.0, 2.0 * PI, &["1"], &["0"], &["sin(x)"]);
        let c0 = estimate_c0(&s, 10_000).unwrap();
        assert!((c0 - oracle).abs() < 1e-6 && (c0 - 1.0).abs() < 1e-6, "{c0}");
        assert_eq!(estimate_c0(&spec(0.0, 1.0, &["1"], &["0"], &["0"]), 10_000).unwrap(), 0.0);
        assert_eq!(estimate_c0(&spec(-2.0, 1.0, &["1"], &["0"], &["x"]), 10_000).unwrap(), 2.0);
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(estimate_lambda(&spec(0.0, 1.0, &["1"], &["0"], &["0"]), 1.0, 50).unwrap(), 1.0);
        assert_eq!(estimate_lambda(&spec(0.0, 1.0, &["u1"], &["0"], &["0"]), 1.0, 50).unwrap(), 2.0);
        let coupled = spec(0.0, 1.0, &["1 + 0.1*u2", "-1 + 0.1*u1"], &["0", "0"], &["0", "0"]);
        assert!((estimate_lambda(&coupled, 1.0, 50).unwrap() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn c1_examples() {
        let s = spec(0.0, 2.0 * PI, &["1"], &["0"], &["sin(x)"]);
        assert!((estimate_c1(&s, 10_000).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(estimate_c1(&spec(0.0, 1.0, &["1"], &["0"], &["3"]), 10_000).unwrap(), 0.0);
        assert_eq!(estimate_c1(&spec(0.0, 1.0, &["1"], &["0"], &["x"]), 10_000).unwrap(), 1.0);
    }

    #[test]
    fn c2_examples() {
        assert_eq!(estimate_c2(&spec(0.0, 1.0, &["1"], &["0"], &["0"]), 1.0, 50).unwrap(), 0.0);
        assert_eq!(estimate_c2(&spec(0.0, 1.0, &["u1"], &["0"], &["0"]), 0.0, 50).unwrap(), 1.0);
        // |h_x| = |cos x u1| <= 2 at x = 0, |u| = 2
        let s = spec(0.0, 2.0 * PI, &["1"], &["sin(x)*u1"], &["0"]);
        assert!((estimate_c2(&s, 1.0, 50).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn c3_examples() {
        assert_eq!(estimate_c3(&spec(0.0, 1.0, &["1"], &["0"], &["0"]), 1.0, 50).unwrap(), 0.0);
        assert_eq!(estimate_c3(&spec(0.0, 1.0, &["u1"], &["0"], &["0"]), 1.0, 50).unwrap(), 1.0);
        // gradient (u2, u1) has norm |u| = 2 on the ball surface
        let s = spec(0.0, 1.0, &["1", "-1"], &["u1*u2", "0"], &["0", "0"]);
        assert!((estimate_c3(&s, 1.0, 50).unwrap() - 2.0).abs() < 1e-12);
    }

    /// Classical RK4 on `Y' = C2 (1 + nY)^2`.
    fn rk4_barrier(t_end: f64, n: usize, c1: f64, c2: f64, step: f64) -> f64 {
        let f = |y: f64| c2 * (1.0 + n as f64 * y).powi(2);
        let steps = (t_end / step).ceil() as usize;
        let h = t_end / steps as f64;
        let mut y = c1;
        for _ in 0..steps {
            let k1 = f(y);
            let k2 = f(y + 0.5 * h * k1);
            let k3 = f(y + 0.5 * h * k2);
            let k4 = f(y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        y
    }

    #[test]
    fn ybar_examples() {
        assert_eq!(ybar(0.0, 3, 0.7, 2.0).unwrap(), 0.7);
        assert_eq!(ybar(0.4, 1, 0.0, 0.0).unwrap(), 0.0);
        let v = ybar(0.1, 2, 0.5, 1.0).unwrap();
        assert!((v - 7.0 / 6.0).abs() < 1e-14);
        assert!((rk4_barrier(0.1, 2, 0.5, 1.0, 1e-5) - 7.0 / 6.0).abs() < 1e-10);
        assert!(matches!(ybar(0.5, 1, 0.0, 2.0), Err(DeterminacyError::BarrierBlowUp { .. })));
    }

    /// Adaptive Simpson quadrature, used as an independent check on the closed form.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    #[test]
    fn ybar_integral_examples() {
        assert_eq!(ybar_integral(0.0, 2, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(ybar_integral(0.5, 1, 2.0, 0.0).unwrap(), 1.0);
        let v = ybar_integral(0.5, 1, 0.0, 1.0).unwrap();
        assert!((v - (2f64.ln() - 0.5)).abs() < 1e-14);
        let quad = adaptive_simpson(&|t| ybar(t, 1, 0.0, 1.0).unwrap(), 0.0, 0.5, 1e-12);
        assert!((v - quad).abs() < 1e-10, "{v} vs {quad}");
    }

    #[test]
    fn ybar_integral_small_z_branch_is_continuous() {
        for &(n, c1, c2) in &[(1, 0.3, 1e-4), (2, 0.0, 1e-6), (3, 1.0, 1e-3)] {
            let z_cut = 1e-3 / (n as f64 * c2 * (1.0 + n as f64 * c1));
            let (lo, hi) = (z_cut * (1.0 - 1e-9), z_cut * (1.0 + 1e-9));
            let below = ybar_integral(lo, n, c1, c2).unwrap();
            let above = ybar_integral(hi, n, c1, c2).unwrap();
            let slope = n as f64 * ybar(z_cut, n, c1, c2).unwrap();
            let jump = above - below - slope * (hi - lo);
            assert!(jump.abs() <= 1e-12 * (1.0 + above.abs()), "{below} {above}");
            let quad = adaptive_simpson(&|t| n as f64 * ybar(t, n, c1, c2).unwrap(), 0.0, z_cut * 0.5, 1e-14);
            let closed = ybar_integral(z_cut * 0.5, n, c1, c2).unwrap();
            assert!((quad - closed).abs() <= 1e-12 * (1.0 + closed), "{quad} {closed}");
        }
    }

    #[test]
    fn choose_t_examples() {
        assert_eq!(choose_t(1, 2.0, 0.0, 0.01), 0.5);
        assert_eq!(choose_t(1, 0.5, 0.0, 0.01), 1.0);
        assert_eq!(choose_t(1, 0.0, 0.0, 0.01), 1.0);
        // bisection oracle on ln(1/(1-T)) - T = 1
        let (mut lo, mut hi) = (0.0f64, 0.99f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if (1.0 / (1.0 - mid)).ln() - mid <= 1.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let t = choose_t(1, 0.0, 1.0, 0.01);
        assert!((t - lo).abs() < 1e-10, "{t} vs {lo}");
        assert!((0.8413..=0.8415).contains(&t));
        let i = ybar_integral(t, 1, 0.0, 1.0).unwrap();
        assert!((1.0 - 1e-8..=1.0).contains(&i), "{i}");
    }

    #[test]
    fn choose_t_respects_blowup_margin() {
        // barrier blows up at 1/(C2 (1 + C1)) = 0.01, well before the integral reaches 1
        let t = choose_t(1, 0.0, 100.0, 0.01);
        assert!(t <= 0.99 * blowup_time(1, 0.0, 100.0) + 1e-15);
        assert!(ybar_integral(t, 1, 0.0, 100.0).unwrap() <= 1.0);
    }

    #[test]
    fn trapezoid_membership() {
        let trap = Trapezoid::new(0.0, 2.0, 1.0, 0.5).unwrap();
        assert!(trap.in_domain(0.0, 0.0));
        assert!(!trap.in_domain(0.0, 0.5));
        assert!(trap.in_domain(1.0, 0.5));
        assert!(trap.in_domain(0.5, 0.5));
        assert!(!trap.in_domain(1.0, 0.6));
        assert!(!trap.in_domain(1.0, -0.1));
        assert!(matches!(Trapezoid::new(0.0, 1.0, 1.0, 0.5), Err(DeterminacyError::EmptyTopEdge { .. })));
    }

    #[test]
    fn constants_for_advection() {
        let s = spec(0.0, 2.0 * PI, &["1"], &["0"], &["sin(x)"]);
        let opts = EstimateOptions { safety_factor: 1.0, ..Default::default() };
        let k = DeterminacyConstants::estimate(&s, &opts).unwrap();
        assert!((k.c0 - 1.0).abs() < 1e-6);
        assert_eq!(k.lambda, 1.0);
        assert_eq!(k.c2, 0.0);
        assert_eq!(k.c3, 0.0);
        assert!(k.blowup_time.is_infinite());
        // C1 = sup|cos| sampled on a grid containing 0 and 2π is exactly 1
        assert_eq!(k.c1, 1.0);
        assert_eq!(k.t_final, 1.0);
        assert_eq!(k.beta(), 0.0);
    }
}
