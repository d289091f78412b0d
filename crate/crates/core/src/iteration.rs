//! Picard iteration: freeze the coefficients at the previous iterate, solve
//! along backward characteristics, repeat until successive iterates agree.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use smallvec::SmallVec;
use thiserror::Error;

use crate::characteristics::{walk_many, GridParams, IterateField, SourceQuadrature, TraceError, TrapezoidGrid, LANES};
use crate::determinacy::{DeterminacyConstants, DeterminacyError};
use crate::expr::EvalError;
use crate::problem::ProblemSpec;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Determinacy(#[from] DeterminacyError),
    #[error("component {component} at node (x={x}, t={t}): {source}")]
    Node {
        component: usize,
        x: f64,
        t: f64,
        #[source]
        source: TraceError,
    },
    #[error("evaluating {what} at (x={x}, t={t}): {source}")]
    Eval {
        what: &'static str,
        x: f64,
        t: f64,
        #[source]
        source: EvalError,
    },
    #[error("iterate {iteration} contains non-finite values")]
    NonFinite { iteration: usize },
    #[error("no convergence after {} iterations (last difference {:e})", .0.report.iterations_used, .0.report.Z.last().copied().unwrap_or(f64::NAN))]
    NotConverged(Box<Solution>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Stop once the max-norm difference of successive iterates is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Multiplier on the first difference when comparing later differences
    /// with the factorial bound.
    pub contraction_slack: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, max_iter: 50, contraction_slack: 2.0 }
    }
}

/// Per-iteration diagnostics. `Z[m]` and `lemma_bound[m]` belong to iterate
/// `ν = m + 1`; `lip_violation[m]` and `amp_violation[m]` to iterate `ν = m`.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub Z: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub Zbar: f64,
    pub lemma_bound: Vec<f64>,
    pub lip_violation: Vec<f64>,
    pub amp_violation: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl ConvergenceReport {
    /// `Z_{ν+1} / Z_ν` for consecutive recorded differences, starting at `ν = 1`.
    pub fn ratios(&self) -> Vec<f64> {
        self.Z.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub field: IterateField,
    pub dx_field: IterateField,
    pub dt_field: IterateField,
    pub constants: DeterminacyConstants,
    pub report: ConvergenceReport,
}

/// `u⁽⁰⁾(x, t) = ū(x)` on every level.
pub fn initial_field(spec: &ProblemSpec, grid: Arc<TrapezoidGrid>) -> Result<IterateField, SolveError> {
    IterateField::from_fn(grid, spec.n(), |x, t, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = spec.u0(i, x).map_err(|source| SolveError::Eval { what: "u0", x, t, source })?;
        }
        Ok(())
    })
}

/// New values of component `i` at the anchors `xs` on level time `t`.
fn node_values(
    i: usize,
    xs: &[f64],
    t: f64,
    prev: &IterateField,
    spec: &ProblemSpec,
    out: &mut [f64],
) -> Result<(), TraceError> {
    let mut quads: SmallVec<[SourceQuadrature; LANES]> = xs.iter().map(|_| SourceQuadrature::new()).collect();
    let mut feet: SmallVec<[f64; LANES]> = SmallVec::from_slice(xs);
    walk_many(i, xs, t, prev, spec, spec.h_uses_u(i), |l, tau, pos, _, u| {
        let h = spec.h(i, pos, tau, u).map_err(|source| TraceError::Eval { what: "h", x: pos, t: tau, source })?;
        quads[l].push(tau, h);
        feet[l] = pos;
        Ok(())
    })?;
    for ((o, q), &foot) in out.iter_mut().zip(&quads).zip(&feet) {
        let u0 = spec.u0(i, foot).map_err(|source| TraceError::Eval { what: "u0", x: foot, t: 0.0, source })?;
        *o = u0 + q.sum();
    }
    Ok(())
}

fn level_values(k: usize, prev: &IterateField, spec: &ProblemSpec) -> Result<Vec<f64>, SolveError> {
    let slice = &prev.grid().slices()[k];
    let n = prev.n();
    let xs: Vec<f64> = (0..slice.nodes()).map(|j| slice.x(j)).collect();
    let mut out = vec![0.0; xs.len() * n];
    if k == 0 {
        for (j, &x) in xs.iter().enumerate() {
            for i in 0..n {
                out[j * n + i] = spec.u0(i, x).map_err(|source| SolveError::Eval { what: "u0", x, t: 0.0, source })?;
            }
        }
        return Ok(out);
    }
    let mut vals = [0.0; LANES];
    for (c, chunk) in xs.chunks(LANES).enumerate() {
        for i in 0..n {
            let vals = &mut vals[..chunk.len()];
            if node_values(i, chunk, slice.t, prev, spec, vals).is_err() {
                // redo one node at a time so the reported node is the first failing one
                for (l, &x) in chunk.iter().enumerate() {
                    node_values(i, &[x], slice.t, prev, spec, &mut vals[l..l + 1])
                        .map_err(|source| SolveError::Node { component: i, x, t: slice.t, source })?;
                }
            }
            for (l, v) in vals.iter().enumerate() {
                out[(c * LANES + l) * n + i] = *v;
            }
        }
    }
    Ok(out)
}

/// One Picard step. Level 0 is `ū`; every other node is the source integral
/// along its backward characteristics through `prev`. Each node is computed
/// independently of the others, so the result does not depend on the
/// parallel schedule.
pub fn picard_step(prev: &IterateField, spec: &ProblemSpec) -> Result<IterateField, SolveError> {
    let grid = prev.grid().clone();
    let levels: Vec<Vec<f64>> = (0..grid.slices().len())
        .into_par_iter()
        .map(|k| level_values(k, prev, spec))
        .collect::<Result<_, SolveError>>()?;
    let next = IterateField::from_levels(grid, prev.n(), levels, prev.iteration + 1);
    if !next.is_finite() {
        return Err(SolveError::NonFinite { iteration: next.iteration });
    }
    Ok(next)
}

/// `(βτ)^ν e^{ατ} Z̄ / ν!`, evaluated in log space.
pub fn lemma_bound(alpha: f64, beta: f64, zbar: f64, nu: u32, tau: f64) -> f64 {
    if nu == 0 {
        return zbar * (alpha * tau).exp();
    }
    if zbar == 0.0 || beta * tau == 0.0 {
        return 0.0;
    }
    let ln_fact: f64 = (2..=nu).map(|k| f64::from(k).ln()).sum();
    (f64::from(nu) * (beta * tau).ln() + alpha * tau - ln_fact + zbar.ln()).exp()
}

/// Applies `Z_ν(τ) = β ∫_0^τ e^{α(τ-η)} Z_{ν-1}(η) dη` to `Z_0 = Z̄ e^{ατ}`
/// with the cumulative trapezoid rule on `taus` (ascending, starting at 0).
/// Row `ν` of the result holds `Z_ν` on `taus`.
pub fn lemma_oracle(alpha: f64, beta: f64, zbar: f64, nu_max: usize, taus: &[f64]) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(nu_max + 1);
    rows.push(taus.iter().map(|&t| zbar * (alpha * t).exp()).collect::<Vec<_>>());
    for _ in 0..nu_max {
        let prev = rows.last().unwrap();
        let mut row = Vec::with_capacity(taus.len());
        let mut acc = 0.0;
        for m in 0..taus.len() {
            if m > 0 {
                let (t0, t1) = (taus[m - 1], taus[m]);
                acc += 0.5 * (t1 - t0) * ((-alpha * t0).exp() * prev[m - 1] + (-alpha * t1).exp() * prev[m]);
            }
            row.push(beta * (alpha * taus[m]).exp() * acc);
        }
        rows.push(row);
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelBounds {
    pub t: f64,
    pub max_u: f64,
    pub max_ux: f64,
    pub max_ut: f64,
    pub amp_bound: f64,
    pub slope_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub levels: Vec<LevelBounds>,
}

impl BoundReport {
    /// Largest relative excess over the amplitude bound; negative when the bound holds.
    pub fn amp_excess(&self) -> f64 {
        self.levels.iter().map(|l| l.max_u / l.amp_bound - 1.0).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest relative excess of `|u_x|` or `|u_t|` over `nȲ(t)`.
    pub fn slope_excess(&self) -> f64 {
        self.levels.iter().map(|l| l.max_ux.max(l.max_ut) / l.slope_bound - 1.0).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn holds_within(&self, slack: f64) -> bool {
        self.amp_excess() <= slack && self.slope_excess() <= slack
    }

    pub fn amp_margin(&self) -> f64 {
        self.levels.iter().map(|l| l.amp_bound - l.max_u).fold(f64::INFINITY, f64::min)
    }

    pub fn slope_margin(&self) -> f64 {
        self.levels.iter().map(|l| l.slope_bound - l.max_ux.max(l.max_ut)).fold(f64::INFINITY, f64::min)
    }
}

fn level_max(field: &IterateField, k: usize) -> f64 {
    field.level(k).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Per-level maxima of `|u|`, `|u_x|` and `|u_t|` against `C₀ + 1` and `nȲ(t)`.
pub fn check_bounds(
    field: &IterateField,
    dx_field: &IterateField,
    dt_field: &IterateField,
    constants: &DeterminacyConstants,
) -> Result<BoundReport, DeterminacyError> {
    let amp_bound = constants.amplitude_bound();
    let levels = field
        .grid()
        .slices()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            Ok(LevelBounds {
                t: s.t,
                max_u: level_max(field, k),
                max_ux: level_max(dx_field, k),
                max_ut: level_max(dt_field, k),
                amp_bound,
                slope_bound: constants.slope_bound(s.t)?,
            })
        })
        .collect::<Result<_, DeterminacyError>>()?;
    Ok(BoundReport { levels })
}

/// `u_t = h − λ u_x` at every node.
pub fn time_derivative(
    field: &IterateField,
    dx_field: &IterateField,
    spec: &ProblemSpec,
) -> Result<IterateField, SolveError> {
    let n = field.n();
    let levels = field
        .nodes()
        .map(|(_, _, x, t, u)| (x, t, u))
        .zip(dx_field.nodes().map(|(.., ux)| ux))
        .map(|((x, t, u), ux)| {
            (0..n)
                .map(|i| {
                    let err = |what| move |source| SolveError::Eval { what, x, t, source };
                    let h = spec.h(i, x, t, u).map_err(err("h"))?;
                    let l = spec.lambda(i, x, t, u).map_err(err("lambda"))?;
                    Ok(h - l * ux[i])
                })
                .collect::<Result<Vec<f64>, SolveError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    // regroup node-major values into levels
    let mut out = Vec::with_capacity(field.grid().slices().len());
    let mut it = levels.into_iter();
    for s in field.grid().slices() {
        let mut level = Vec::with_capacity(s.nodes() * n);
        for _ in 0..s.nodes() {
            level.extend(it.next().expect("one entry per node"));
        }
        out.push(level);
    }
    Ok(IterateField::from_levels(field.grid().clone(), n, out, field.iteration))
}

fn lip_violation(dx_field: &IterateField, constants: &DeterminacyConstants) -> Result<f64, DeterminacyError> {
    let mut worst = f64::NEG_INFINITY;
    for (k, s) in dx_field.grid().slices().iter().enumerate() {
        worst = worst.max(level_max(dx_field, k) - constants.slope_bound(s.t)?);
    }
    Ok(worst)
}

fn amp_violation(field: &IterateField, constants: &DeterminacyConstants) -> f64 {
    let levels = field.grid().slices().len();
    (0..levels).map(|k| level_max(field, k)).fold(0.0, f64::max) - constants.amplitude_bound()
}

/// Runs the Picard scheme on the trapezoid of `constants` until successive
/// iterates differ by at most `opts.tol` in the max norm.
pub fn solve(
    spec: &ProblemSpec,
    constants: &DeterminacyConstants,
    params: GridParams,
    opts: &SolveOptions,
) -> Result<Solution, SolveError> {
    let trap = constants.trapezoid(spec)?;
    let grid = Arc::new(TrapezoidGrid::new(trap, params));
    let beta = constants.beta();
    let t_final = constants.t_final;

    let mut u = initial_field(spec, grid)?;
    let mut report = ConvergenceReport {
        Z: Vec::new(),
        alpha: 0.0,
        beta,
        Zbar: 0.0,
        lemma_bound: Vec::new(),
        lip_violation: vec![lip_violation(&u.x_derivative(), constants)?],
        amp_violation: vec![amp_violation(&u, constants)],
        iterations_used: 0,
        converged: false,
        warnings: Vec::new(),
    };

    for nu in 1..=opts.max_iter {
        let next = picard_step(&u, spec)?;
        let z = next.max_abs_diff(&u);
        u = next;
        let dx = u.x_derivative();
        if nu == 1 {
            report.Zbar = z;
        }
        report.Z.push(z);
        report.lemma_bound.push(lemma_bound(0.0, beta, report.Zbar, (nu - 1) as u32, t_final));
        report.lip_violation.push(lip_violation(&dx, constants)?);
        report.amp_violation.push(amp_violation(&u, constants));
        report.iterations_used = nu;

        if nu >= 2 && z > opts.tol {
            let allowed = lemma_bound(0.0, beta, opts.contraction_slack * report.Zbar, (nu - 1) as u32, t_final);
            if z > allowed {
                let severity = if z <= 1.1 * allowed { "marginally " } else { "" };
                report.warnings.push(format!(
                    "iteration {nu}: difference {z:e} {severity}exceeds the factorial bound {allowed:e}"
                ));
            }
        }
        if z <= opts.tol {
            report.converged = true;
            break;
        }
    }

    let series: f64 = report.Z.iter().sum();
    let series_bound = opts.contraction_slack * report.Zbar * (beta * t_final).exp();
    if report.converged && series > series_bound {
        report.warnings.push(format!(
            "sum of differences {series:e} exceeds e^(beta T) times the first difference ({series_bound:e})"
        ));
    }
    if let Some(&v) = report.lip_violation.last() {
        if v > 0.05 * constants.slope_bound(0.0)? {
            report.warnings.push(format!("slope exceeds the barrier by {v:e}"));
        }
    }
    if let Some(&v) = report.amp_violation.last() {
        if v > 0.05 * constants.amplitude_bound() {
            report.warnings.push(format!("amplitude exceeds C0 + 1 by {v:e}"));
        }
    }

    let dx_field = u.x_derivative();
    let dt_field = time_derivative(&u, &dx_field, spec)?;
    let solution = Solution { field: u, dx_field, dt_field, constants: *constants, report };
    if solution.report.converged {
        Ok(solution)
    } else {
        Err(SolveError::NotConverged(Box::new(solution)))
    }
}
