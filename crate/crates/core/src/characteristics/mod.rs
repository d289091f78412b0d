//! Backward characteristics through a frozen iterate and the quantities
//! integrated along them.
//!
//! For component `i` and an anchor `(x, t)` the characteristic solves
//! `dX/dτ = λ_i(X, τ, u_prev(X, τ))`, `X(t) = x`, backwards to `τ = 0` with
//! classical RK4 at a fixed step. The next iterate at the anchor is
//! `ū_i(X(0)) + ∫_0^t h_i(X, τ, u_prev) dτ`, the quadrature reusing the RK4
//! nodes (composite trapezoid).

mod field;

use smallvec::{smallvec, SmallVec};
use thiserror::Error;

pub(crate) use field::TimeCut;
pub use field::{GridParams, IterateField, Slice, TrapezoidGrid};

use crate::expr::EvalError;
use crate::problem::ProblemSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("point (x={x}, t={t}) lies outside the trapezoid")]
    OutsideDomain { x: f64, t: f64 },
    #[error("characteristic {component} left the trapezoid at (x={x}, t={t}); the speed bound is too small")]
    Escaped { component: usize, x: f64, t: f64 },
    #[error("evaluating {what} at (x={x}, t={t}): {source}")]
    Eval {
        what: &'static str,
        x: f64,
        t: f64,
        #[source]
        source: EvalError,
    },
}

pub(crate) type Scratch = SmallVec<[f64; 8]>;

/// Most anchors [`walk_many`] advances together.
pub(crate) const LANES: usize = 8;

/// A backward characteristic with its samples ordered from the anchor time
/// down to `τ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicTrace {
    pub component: usize,
    pub anchor: (f64, f64),
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    /// `dX/dτ` at each sample.
    pub speeds: Vec<f64>,
    /// `u_prev(X(τ_m), τ_m)`, `n` values per sample.
    pub carried: Vec<f64>,
    n: usize,
}

impl CharacteristicTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn carried_at(&self, m: usize) -> &[f64] {
        &self.carried[m * self.n..(m + 1) * self.n]
    }

    pub fn foot(&self) -> f64 {
        *self.positions.last().expect("trace has at least the anchor")
    }
}

fn eval_err(what: &'static str, x: f64, t: f64) -> impl FnOnce(EvalError) -> TraceError {
    move |source| TraceError::Eval { what, x, t, source }
}

struct Tracer<'a> {
    i: usize,
    prev: &'a IterateField,
    spec: &'a ProblemSpec,
    speed_uses_u: bool,
}

impl Tracer<'_> {
    /// Confines `x` and returns `(x, λ_i)`, refreshing `u` when the speed
    /// depends on it or `want_u` is set.
    #[inline]
    fn speed(&self, x: f64, cut: &TimeCut, u: &mut [f64], want_u: bool) -> Result<(f64, f64), TraceError> {
        let tau = cut.t;
        let x = cut.confine(x).ok_or(TraceError::Escaped { component: self.i, x, t: tau })?;
        if self.speed_uses_u || want_u {
            self.prev.interp_cut(cut, x, u);
        }
        let l = self.spec.lambda(self.i, x, tau, u).map_err(eval_err("lambda", x, tau))?;
        Ok((x, l))
    }
}

/// Walks the characteristic through `(x, t)` backwards, calling
/// `visit(τ, X, dX/dτ, u)` at every RK4 node, anchor first. `u` holds the
/// interpolated previous iterate when `record_u` is set.
pub(crate) fn walk(
    i: usize,
    x: f64,
    t: f64,
    prev: &IterateField,
    spec: &ProblemSpec,
    record_u: bool,
    mut visit: impl FnMut(f64, f64, f64, &[f64]) -> Result<(), TraceError>,
) -> Result<(), TraceError> {
    walk_many(i, &[x], t, prev, spec, record_u, |_, tau, pos, speed, u| visit(tau, pos, speed, u))
}

/// [`walk`] for several anchors on the same time level, advanced in
/// lockstep so the independent traces overlap in the pipeline. Each lane
/// performs exactly the operations of a single walk. `visit` receives the
/// lane index first; per lane the calls arrive in order of decreasing `τ`.
/// On error the lane that failed first in lockstep order is reported, which
/// need not be the lowest-numbered lane that would fail.
pub(crate) fn walk_many(
    i: usize,
    xs: &[f64],
    t: f64,
    prev: &IterateField,
    spec: &ProblemSpec,
    record_u: bool,
    mut visit: impl FnMut(usize, f64, f64, f64, &[f64]) -> Result<(), TraceError>,
) -> Result<(), TraceError> {
    let grid = prev.grid();
    if let Some(&x) = xs.iter().find(|&&x| !grid.contains(x, t)) {
        return Err(TraceError::OutsideDomain { x, t });
    }
    let tracer = Tracer { i, prev, spec, speed_uses_u: spec.lambda_uses_u(i) };
    let n = prev.n();
    let lanes = xs.len();
    assert!(lanes <= LANES, "at most {LANES} anchors per walk");
    let mut us = vec![0.0; lanes * n];
    let (mut pos, mut k1, mut k2, mut k3) = ([0.0; LANES], [0.0; LANES], [0.0; LANES], [0.0; LANES]);
    let t = t.max(0.0);
    let steps = if t == 0.0 { 0 } else { ((t / grid.dtau()) - 1e-9).ceil().max(1.0) as usize };
    let h = if steps == 0 { 0.0 } else { t / steps as f64 };

    let top = grid.cut(t);
    for l in 0..lanes {
        let u = &mut us[l * n..(l + 1) * n];
        (pos[l], k1[l]) = tracer.speed(xs[l], &top, u, record_u)?;
        visit(l, t, pos[l], k1[l], u)?;
    }
    let mut tau = t;
    for m in 0..steps {
        let next = if m + 1 == steps { 0.0 } else { t - (m + 1) as f64 * h };
        let step = tau - next;
        let mid = grid.cut(tau - 0.5 * step);
        let end = grid.cut(next);
        for l in 0..lanes {
            let u = &mut us[l * n..(l + 1) * n];
            k2[l] = tracer.speed(pos[l] - 0.5 * step * k1[l], &mid, u, false)?.1;
        }
        for l in 0..lanes {
            let u = &mut us[l * n..(l + 1) * n];
            k3[l] = tracer.speed(pos[l] - 0.5 * step * k2[l], &mid, u, false)?.1;
        }
        for l in 0..lanes {
            let u = &mut us[l * n..(l + 1) * n];
            let k4 = tracer.speed(pos[l] - step * k3[l], &end, u, false)?.1;
            let moved = pos[l] - step / 6.0 * (k1[l] + 2.0 * k2[l] + 2.0 * k3[l] + k4);
            (pos[l], k1[l]) = tracer.speed(moved, &end, u, record_u)?;
            visit(l, next, pos[l], k1[l], u)?;
        }
        tau = next;
    }
    Ok(())
}

/// Traces characteristic `i` through `(x, t)` back to `τ = 0`.
pub fn trace(
    i: usize,
    x: f64,
    t: f64,
    prev: &IterateField,
    spec: &ProblemSpec,
) -> Result<CharacteristicTrace, TraceError> {
    let n = prev.n();
    let mut tr = CharacteristicTrace {
        component: i,
        anchor: (x, t),
        times: Vec::new(),
        positions: Vec::new(),
        speeds: Vec::new(),
        carried: Vec::new(),
        n,
    };
    walk(i, x, t, prev, spec, true, |tau, pos, speed, u| {
        tr.times.push(tau);
        tr.positions.push(pos);
        tr.speeds.push(speed);
        tr.carried.extend_from_slice(u);
        Ok(())
    })?;
    Ok(tr)
}

/// Running composite-trapezoid sum of `h_i` along a trace, in visiting order.
pub(crate) struct SourceQuadrature {
    last: Option<(f64, f64)>,
    sum: f64,
}

impl SourceQuadrature {
    pub(crate) fn new() -> Self {
        SourceQuadrature { last: None, sum: 0.0 }
    }

    #[inline]
    pub(crate) fn push(&mut self, tau: f64, h: f64) {
        if let Some((tau0, h0)) = self.last {
            self.sum += 0.5 * (tau0 - tau) * (h0 + h);
        }
        self.last = Some((tau, h));
    }

    pub(crate) fn sum(&self) -> f64 {
        self.sum
    }
}

/// `ū_i(X(0)) + ∫_0^t h_i(X(τ), τ, u_prev) dτ` along a completed trace.
pub fn integrate_source(i: usize, tr: &CharacteristicTrace, spec: &ProblemSpec) -> Result<f64, TraceError> {
    let mut quad = SourceQuadrature::new();
    for m in 0..tr.len() {
        let (tau, x) = (tr.times[m], tr.positions[m]);
        let h = spec.h(i, x, tau, tr.carried_at(m)).map_err(eval_err("h", x, tau))?;
        quad.push(tau, h);
    }
    let foot = tr.foot();
    Ok(spec.u0(i, foot).map_err(eval_err("u0", foot, 0.0))? + quad.sum())
}

/// Integrates the slope equation
/// `d𝔳/dτ = h_{i,x} + h_{i,u}·u_x − (λ_{i,x} + λ_{i,u}·u_x) 𝔳`
/// forward along the trace from `𝔳(0) = v0`, with `u` and `u_x` taken from
/// the previous iterate and its x-derivative. Returns `𝔳` at the anchor.
///
/// Positions between trace nodes come from cubic Hermite interpolation of
/// the recorded positions and speeds.
pub fn integrate_variational(
    i: usize,
    tr: &CharacteristicTrace,
    prev: &IterateField,
    prev_dx: &IterateField,
    v0: f64,
    spec: &ProblemSpec,
) -> Result<f64, TraceError> {
    let n = prev.n();
    let grid = prev.grid();
    debug_assert_eq!(**grid, **prev_dx.grid());
    let mut u: Scratch = smallvec![0.0; n];
    let mut ux: Scratch = smallvec![0.0; n];
    // v' = p - q v
    let mut coeffs = |x: f64, tau: f64| -> Result<(f64, f64), TraceError> {
        let x = grid.confine(x, tau).ok_or(TraceError::Escaped { component: i, x, t: tau })?;
        prev.interp_confined(x, tau, &mut u);
        prev_dx.interp_confined(x, tau, &mut ux);
        let mut p = spec.h_x(i, x, tau, &u).map_err(eval_err("h_x", x, tau))?;
        let mut q = spec.lambda_x(i, x, tau, &u).map_err(eval_err("lambda_x", x, tau))?;
        for k in 0..n {
            p += spec.h_u(i, k, x, tau, &u).map_err(eval_err("h_u", x, tau))? * ux[k];
            q += spec.lambda_u(i, k, x, tau, &u).map_err(eval_err("lambda_u", x, tau))? * ux[k];
        }
        Ok((p, q))
    };

    let last = tr.len() - 1;
    let mut v = v0;
    let (mut pa, mut qa) = coeffs(tr.positions[last], tr.times[last])?;
    for m in (0..last).rev() {
        // segment from sample m+1 (earlier time) to sample m
        let (ta, tb) = (tr.times[m + 1], tr.times[m]);
        let (xa, xb) = (tr.positions[m + 1], tr.positions[m]);
        let h = tb - ta;
        let x_mid = 0.5 * (xa + xb) + h / 8.0 * (tr.speeds[m + 1] - tr.speeds[m]);
        let (pm, qm) = coeffs(x_mid, ta + 0.5 * h)?;
        let (pb, qb) = coeffs(xb, tb)?;
        let k1 = pa - qa * v;
        let k2 = pm - qm * (v + 0.5 * h * k1);
        let k3 = pm - qm * (v + 0.5 * h * k2);
        let k4 = pb - qb * (v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        (pa, qa) = (pb, qb);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::determinacy::Trapezoid;

    fn field(g: &Arc<TrapezoidGrid>, n: usize, f: impl Fn(f64, f64) -> Vec<f64>) -> IterateField {
        IterateField::from_fn::<()>(g.clone(), n, |x, t, out| {
            out.copy_from_slice(&f(x, t));
            Ok(())
        })
        .unwrap()
    }

    fn grid(a: f64, b: f64, lambda: f64, t_final: f64, dx: f64, levels: usize) -> Arc<TrapezoidGrid> {
        let trap = Trapezoid::new(a, b, lambda, t_final).unwrap();
        Arc::new(TrapezoidGrid::new(trap, GridParams { dx, dt_levels: levels, substeps: 4 }))
    }

    #[test]
    fn unit_speed_transport() {
        let spec = ProblemSpec::parse(0.0, 4.0, &["1"], &["0"], &["sin(x)"]).unwrap();
        let g = grid(0.0, 4.0, 1.0, 1.0, 0.05, 20);
        let prev = field(&g, 1, |x, _| vec![x.sin()]);
        let tr = trace(0, 2.0, 0.8, &prev, &spec).unwrap();
        assert_eq!(tr.positions[0], 2.0);
        assert_eq!(*tr.times.last().unwrap(), 0.0);
        for (tau, x) in tr.times.iter().zip(&tr.positions) {
            assert!((x - (2.0 - (0.8 - tau))).abs() < 1e-13);
        }
        let v = integrate_source(0, &tr, &spec).unwrap();
        assert!((v - (2.0f64 - 0.8).sin()).abs() < 1e-13);
    }

    #[test]
    fn zero_speed_is_vertical() {
        let spec = ProblemSpec::parse(0.0, 1.0, &["0"], &["1"], &["0"]).unwrap();
        let g = grid(0.0, 1.0, 0.0, 1.0, 0.05, 10);
        let prev = field(&g, 1, |_, _| vec![0.0]);
        let tr = trace(0, 0.3, 0.7, &prev, &spec).unwrap();
        assert!(tr.positions.iter().all(|&x| x == 0.3));
        // h = 1: the source integral is t
        assert!((integrate_source(0, &tr, &spec).unwrap() - 0.7).abs() < 1e-14);
    }

    /// dX/dτ = X/(1+τ) through u = x/(1+t): X(τ) = x (1+τ)/(1+t).
    #[test]
    fn burgers_trace_matches_separable_solution() {
        let spec = ProblemSpec::parse(-1.0, 1.0, &["u1"], &["0"], &["x"]).unwrap();
        let g = grid(-1.0, 1.0, 2.0, 0.3, 1e-3, 300);
        let prev = field(&g, 1, |x, t| vec![x / (1.0 + t)]);
        let (x, t) = (0.2, 0.3);
        let tr = trace(0, x, t, &prev, &spec).unwrap();
        for (tau, pos) in tr.times.iter().zip(&tr.positions) {
            let exact = x * (1.0 + tau) / (1.0 + t);
            assert!((pos - exact).abs() < 1e-8, "τ={tau}: {pos} vs {exact}");
        }
        let u = integrate_source(0, &tr, &spec).unwrap();
        assert!((u - x / (1.0 + t)).abs() < 1e-8);
    }

    #[test]
    fn exponential_source_is_stationary() {
        let spec = ProblemSpec::parse(0.0, 1.0, &["1"], &["u1"], &["exp(x)"]).unwrap();
        let g = grid(0.0, 1.0, 1.0, 0.2, 1e-3, 200);
        let prev = field(&g, 1, |x, _| vec![x.exp()]);
        let tr = trace(0, 0.5, 0.2, &prev, &spec).unwrap();
        let v = integrate_source(0, &tr, &spec).unwrap();
        assert!((v - 0.5f64.exp()).abs() < 1e-6, "{v}");
    }

    #[test]
    fn cone_confinement() {
        let spec = ProblemSpec::parse(0.0, 3.0, &["0.9*sin(3*x + t)*u1"], &["0"], &["1"]).unwrap();
        let g = grid(0.0, 3.0, 1.0, 1.0, 0.01, 50);
        let prev = field(&g, 1, |x, t| vec![(x - t).cos()]);
        for &(x, t) in &[(1.5, 1.0), (1.0, 0.5), (0.6, 0.5), (2.9, 0.1)] {
            let tr = trace(0, x, t, &prev, &spec).unwrap();
            for (tau, pos) in tr.times.iter().zip(&tr.positions) {
                assert!((pos - x).abs() <= 1.0 * (t - tau) + 1e-9);
            }
            assert!((0.0..=3.0).contains(&tr.foot()));
        }
    }

    #[test]
    fn escaping_characteristic_is_an_error() {
        // true speed 2 exceeds the trapezoid slope 1
        let spec = ProblemSpec::parse(0.0, 3.0, &["2"], &["0"], &["0"]).unwrap();
        let g = grid(0.0, 3.0, 1.0, 1.0, 0.01, 50);
        let prev = field(&g, 1, |_, _| vec![0.0]);
        let err = trace(0, 1.2, 0.9, &prev, &spec).unwrap_err();
        assert!(matches!(err, TraceError::Escaped { .. }));
        assert!(matches!(trace(0, 0.1, 0.9, &prev, &spec), Err(TraceError::OutsideDomain { .. })));
    }

    #[test]
    fn rk4_foot_error_is_fourth_order() {
        // prev = x is reproduced exactly by the interpolant, so only the ODE
        // error remains: dX/dτ = X, X(0) = x e^{-t}.
        let spec = ProblemSpec::parse(-1.0, 1.0, &["u1"], &["0"], &["x"]).unwrap();
        let (x, t) = (0.25, 0.4);
        let mut errs = Vec::new();
        for levels in [2usize, 4, 8] {
            let g = Arc::new(TrapezoidGrid::new(
                Trapezoid::new(-1.0, 1.0, 1.0, t).unwrap(),
                GridParams { dx: 0.01, dt_levels: levels, substeps: 1 },
            ));
            let prev = field(&g, 1, |x, _| vec![x]);
            let tr = trace(0, x, t, &prev, &spec).unwrap();
            assert_eq!(tr.len(), levels + 1);
            errs.push((tr.foot() - x * (-t).exp()).abs());
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((12.0..=20.0).contains(&ratio), "ratios {errs:?}");
        }
    }

    #[test]
    fn variational_examples() {
        // λ = 1, h = 0, ū = sin: 𝔳 = cos(x - t)
        let spec = ProblemSpec::parse(0.0, 4.0, &["1"], &["0"], &["sin(x)"]).unwrap();
        let g = grid(0.0, 4.0, 1.0, 1.0, 0.01, 100);
        let prev = field(&g, 1, |x, t| vec![(x - t).sin()]);
        let dx = prev.x_derivative();
        let tr = trace(0, 2.0, 0.7, &prev, &spec).unwrap();
        let v0 = spec.u0_prime(0, tr.foot()).unwrap();
        let v = integrate_variational(0, &tr, &prev, &dx, v0, &spec).unwrap();
        assert!((v - 1.3f64.cos()).abs() < 1e-13);

        // Burgers on the exact rarefaction: 𝔳 = 1/(1+t)
        let spec = ProblemSpec::parse(-1.0, 1.0, &["u1"], &["0"], &["x"]).unwrap();
        let g = grid(-1.0, 1.0, 2.1, 0.35, 2.0 / 800.0, 200);
        let prev = field(&g, 1, |x, t| vec![x / (1.0 + t)]);
        let dx = prev.x_derivative();
        for &(x, t) in &[(0.0, 0.35), (0.2, 0.2), (-0.5, 0.1)] {
            let tr = trace(0, x, t, &prev, &spec).unwrap();
            let v = integrate_variational(0, &tr, &prev, &dx, 1.0, &spec).unwrap();
            assert!((v - 1.0 / (1.0 + t)).abs() < 1e-6, "({x},{t}): {v}");
        }

        // λ = 0, h = x, ū = 0: 𝔳 = t
        let spec = ProblemSpec::parse(0.0, 1.0, &["0"], &["x"], &["0"]).unwrap();
        let g = grid(0.0, 1.0, 0.0, 1.0, 0.01, 10);
        let prev = field(&g, 1, |x, t| vec![x * t]);
        let dx = prev.x_derivative();
        let tr = trace(0, 0.4, 0.6, &prev, &spec).unwrap();
        assert!((integrate_variational(0, &tr, &prev, &dx, 0.0, &spec).unwrap() - 0.6).abs() < 1e-14);
    }

    #[test]
    fn variational_matches_finite_difference_of_source() {
        // exp_source: exact field u = e^x, u_x = e^x
        let spec = ProblemSpec::parse(0.0, 1.0, &["1"], &["u1"], &["exp(x)"]).unwrap();
        let dxg = 1.0 / 800.0;
        let g = grid(0.0, 1.0, 1.05, 0.2, dxg, 200);
        let prev = field(&g, 1, |x, _| vec![x.exp()]);
        let dx = prev.x_derivative();
        let tol = (10.0 * dxg * dxg).max(1e-4);
        for &(x, t) in &[(0.5, 0.2), (0.3, 0.1), (0.7, 0.15)] {
            let tr = trace(0, x, t, &prev, &spec).unwrap();
            let v = integrate_variational(0, &tr, &prev, &dx, spec.u0_prime(0, tr.foot()).unwrap(), &spec).unwrap();
            let e = 1e-3;
            let up = integrate_source(0, &trace(0, x + e, t, &prev, &spec).unwrap(), &spec).unwrap();
            let dn = integrate_source(0, &trace(0, x - e, t, &prev, &spec).unwrap(), &spec).unwrap();
            let fd = (up - dn) / (2.0 * e);
            assert!((v - fd).abs() <= tol, "({x},{t}): {v} vs {fd}");
        }
    }
}
