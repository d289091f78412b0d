//! Problems with closed-form solutions, the domain-of-dependence experiment
//! and grid-convergence studies.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::characteristics::{integrate_variational, trace, GridParams, IterateField, TraceError};
use crate::determinacy::{DeterminacyConstants, DeterminacyError, EstimateOptions};
use crate::expr::{parse, BinOp, EvalError, Expr, UnaryOp, Var};
use crate::iteration::{solve, Solution, SolveError, SolveOptions};
use crate::problem::{ProblemError, ProblemSpec};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("unknown case '{0}' (known: {known})", known = CASE_NAMES.join(", "))]
    UnknownCase(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Determinacy(#[from] DeterminacyError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("probe (x={x}, t={t}) is outside the trapezoid")]
    ProbeOutside { x: f64, t: f64 },
    #[error("no room for a bump of half-width {width} outside the cone {cone:?} within [{a}, {b}]")]
    NoRoom { width: f64, cone: (f64, f64), a: f64, b: f64 },
}

pub const CASE_NAMES: [&str; 4] = ["advection", "exp_source", "burgers_rarefaction", "decoupled_pair"];

/// A registered problem and its solution as expressions in `x` and `t`.
#[derive(Debug, Clone)]
pub struct ExactCase {
    pub name: &'static str,
    pub spec: ProblemSpec,
    pub solution: Vec<Expr>,
}

pub fn exact_case(name: &str) -> Result<ExactCase, VerifyError> {
    let (name, a, b, lambda, h, u0, exact): (_, _, _, &[&str], &[&str], &[&str], &[&str]) = match name {
        "advection" => ("advection", 0.0, 2.0 * PI, &["1"], &["0"], &["sin(x)"], &["sin(x - t)"]),
        "exp_source" => ("exp_source", 0.0, 1.0, &["1"], &["u1"], &["exp(x)"], &["exp(x)"]),
        "burgers_rarefaction" => ("burgers_rarefaction", -1.0, 1.0, &["u1"], &["0"], &["x"], &["x/(1 + t)"]),
        "decoupled_pair" => (
            "decoupled_pair",
            0.0,
            2.0 * PI,
            &["1", "-1"],
            &["0", "0"],
            &["sin(x)", "cos(x)"],
            &["sin(x - t)", "cos(x + t)"],
        ),
        other => return Err(VerifyError::UnknownCase(other.to_string())),
    };
    let spec = ProblemSpec::parse(a, b, lambda, h, u0)?;
    let solution = exact
        .iter()
        .enumerate()
        .map(|(index, s)| parse(s, 0).map_err(|source| ProblemError::Parse { what: "exact", index, source }))
        .collect::<Result<_, _>>()?;
    Ok(ExactCase { name, spec, solution })
}

impl ExactCase {
    pub fn exact_at(&self, x: f64, t: f64) -> Result<Vec<f64>, EvalError> {
        self.solution.iter().map(|e| e.eval(x, t, &[])).collect()
    }

    /// Largest `|u_t + λ(x,t,u) u_x − h(x,t,u)|` over the components at
    /// `(x, t)`, with the derivatives of the closed form taken symbolically.
    pub fn pde_residual(&self, x: f64, t: f64) -> Result<f64, EvalError> {
        let u = self.exact_at(x, t)?;
        let mut worst = 0.0f64;
        for (i, e) in self.solution.iter().enumerate() {
            let ut = e.diff(Var::T).eval(x, t, &[])?;
            let ux = e.diff(Var::X).eval(x, t, &[])?;
            let r = ut + self.spec.lambda(i, x, t, &u)? * ux - self.spec.h(i, x, t, &u)?;
            worst = worst.max(r.abs());
        }
        Ok(worst)
    }

    pub fn constants(&self, opts: &EstimateOptions) -> Result<DeterminacyConstants, DeterminacyError> {
        DeterminacyConstants::estimate(&self.spec, opts)
    }

    /// Largest deviation from the closed form over the nodes of `field`.
    pub fn nodal_error(&self, field: &IterateField) -> Result<f64, EvalError> {
        let mut worst = 0.0f64;
        for (.., x, t, v) in field.nodes() {
            for (vi, ei) in v.iter().zip(self.exact_at(x, t)?) {
                worst = worst.max((vi - ei).abs());
            }
        }
        Ok(worst)
    }

    /// Largest deviation from the closed form at [`probe_points`] of the
    /// field's trapezoid, using the field's interpolant.
    pub fn probe_error(&self, field: &IterateField) -> Result<f64, VerifyError> {
        let mut worst = 0.0f64;
        let mut v = vec![0.0; field.n()];
        for (x, t) in probe_points(field) {
            field.interp_into(x, t, &mut v)?;
            for (vi, ei) in v.iter().zip(self.exact_at(x, t)?) {
                worst = worst.max((vi - ei).abs());
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualCheck {
    pub samples: usize,
    pub max_residual: f64,
}

/// Evaluates the PDE residual of the closed form at `samples` random points
/// of the trapezoid.
pub fn residual_check(
    case: &ExactCase,
    constants: &DeterminacyConstants,
    samples: usize,
    seed: u64,
) -> Result<ResidualCheck, VerifyError> {
    let trap = constants.trapezoid(&case.spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_residual = 0.0f64;
    for _ in 0..samples {
        let t = rng.gen_range(0.0..=trap.t_final);
        let x = rng.gen_range(trap.left(t)..=trap.right(t));
        max_residual = max_residual.max(case.pde_residual(x, t)?);
    }
    Ok(ResidualCheck { samples, max_residual })
}

/// A fixed scattered set of points covering the trapezoid, away from grid
/// nodes: low-discrepancy fractions across each slice and in time.
pub fn probe_points(field: &IterateField) -> impl Iterator<Item = (f64, f64)> + '_ {
    let trap = field.grid().trap;
    (0..101).flat_map(move |j| {
        let t = trap.t_final * (j as f64 * 0.414_213_56 + 0.05).fract();
        (0..1009).map(move |i| {
            let s = (i as f64 * 0.618_033_988_7 + 0.1234).fract();
            (trap.left(t) + s * (trap.right(t) - trap.left(t)), t)
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BumpPlacement {
    /// Entirely outside the inflated backward cone of the probe.
    Outside,
    /// Centred on the foot of the probe's characteristic.
    Inside,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeTest {
    pub probe: (f64, f64),
    pub amplitude: f64,
    /// Half-width of the bump support.
    pub width: f64,
    pub placement: BumpPlacement,
    /// Grid stencils added to each side of the analytic cone.
    pub stencils: f64,
    pub seed: u64,
    pub params: GridParams,
    pub solve: SolveOptions,
    pub estimate: EstimateOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeOutcome {
    pub probe: (f64, f64),
    pub placement: BumpPlacement,
    pub bump_center: f64,
    pub bump_width: f64,
    pub amplitude: f64,
    /// The inflated cone at `t = 0`.
    pub cone: (f64, f64),
    pub margin: f64,
    pub change: f64,
}

/// `amplitude · bump((x − center)/width)`, supported on `|x − center| < width`.
pub fn bump_expr(amplitude: f64, center: f64, width: f64) -> Expr {
    let s = Expr::Binary(
        BinOp::Div,
        Box::new(Expr::Binary(BinOp::Sub, Box::new(Expr::Var(Var::X)), Box::new(Expr::Const(center)))),
        Box::new(Expr::Const(width)),
    );
    Expr::Binary(BinOp::Mul, Box::new(Expr::Const(amplitude)), Box::new(Expr::Unary(UnaryOp::Bump(0), Box::new(s))))
}

/// Solves with `ū` and with `ū` plus a smooth bump placed outside (or inside)
/// the backward cone of the probe, and reports how much the solution at the
/// probe moved. Both solves share one set of constants and hence one grid.
pub fn dependence_cone_test(spec: &ProblemSpec, test: &ConeTest) -> Result<ConeOutcome, VerifyError> {
    let (xp, tp) = test.probe;
    let (a, b) = (spec.a(), spec.b());
    let base_constants = DeterminacyConstants::estimate(spec, &test.estimate)?;

    let place =
        |lambda: f64, t_final: f64, foot: f64, rng: &mut ChaCha8Rng| -> Result<(f64, (f64, f64), f64), VerifyError> {
            let dx = test.params.dx;
            let dt = t_final / test.params.dt_levels.max(1) as f64;
            let dtau = dt / test.params.substeps.max(1) as f64;
            let margin = (test.stencils * (dx + lambda * dt)).max(3.0 * dx + lambda * dtau);
            let cone = (xp - lambda * tp - margin, xp + lambda * tp + margin);
            let w = test.width;
            let center = match test.placement {
                BumpPlacement::Inside => foot,
                BumpPlacement::Outside => {
                    let left = (a + w, cone.0 - w);
                    let right = (cone.1 + w, b - w);
                    let room = |(lo, hi): (f64, f64)| (hi - lo).max(0.0);
                    let total = room(left) + room(right);
                    if total <= 0.0 {
                        return Err(VerifyError::NoRoom { width: w, cone, a, b });
                    }
                    let r = rng.gen_range(0.0..total);
                    if r < room(left) {
                        left.0 + r
                    } else {
                        right.0 + (r - room(left))
                    }
                }
            };
            Ok((center, cone, margin))
        };

    let opts = &test.estimate;
    let base_trap = base_constants.trapezoid(spec)?;
    if !base_trap.in_domain(xp, tp) {
        return Err(VerifyError::ProbeOutside { x: xp, t: tp });
    }
    let foot = match test.placement {
        BumpPlacement::Inside => {
            let base = solve_any(spec, &base_constants, test)?;
            trace(0, xp, tp, &base.field, spec)?.foot()
        }
        BumpPlacement::Outside => xp,
    };

    // The bump can raise the bounds; place it against the cone of the
    // combined constants, which is at least as wide as the base cone.
    let mut rng = ChaCha8Rng::seed_from_u64(test.seed);
    let (mut center, _, _) = place(base_constants.lambda, base_constants.t_final, foot, &mut rng)?;
    let mut constants = base_constants;
    for _ in 0..4 {
        let perturbed = perturb(spec, test.amplitude, center, test.width)?;
        constants = base_constants.envelope(&DeterminacyConstants::estimate(&perturbed, opts)?, opts)?;
        let mut rng = ChaCha8Rng::seed_from_u64(test.seed);
        let (c, _, _) = place(constants.lambda, constants.t_final, foot, &mut rng)?;
        if c == center {
            break;
        }
        center = c;
    }
    let (_, cone, margin) =
        place(constants.lambda, constants.t_final, foot, &mut ChaCha8Rng::seed_from_u64(test.seed))?;
    if !constants.trapezoid(spec)?.in_domain(xp, tp) {
        return Err(VerifyError::ProbeOutside { x: xp, t: tp });
    }

    let perturbed = perturb(spec, test.amplitude, center, test.width)?;
    let base = solve_any(spec, &constants, test)?;
    let moved = solve_any(&perturbed, &constants, test)?;
    let u = base.field.interp(xp, tp)?;
    let v = moved.field.interp(xp, tp)?;
    let change = u.iter().zip(&v).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    Ok(ConeOutcome {
        probe: test.probe,
        placement: test.placement,
        bump_center: center,
        bump_width: test.width,
        amplitude: test.amplitude,
        cone,
        margin,
        change,
    })
}

fn perturb(spec: &ProblemSpec, amplitude: f64, center: f64, width: f64) -> Result<ProblemSpec, ProblemError> {
    let u0 = spec
        .u0_exprs()
        .iter()
        .map(|e| Expr::Binary(BinOp::Add, Box::new(e.clone()), Box::new(bump_expr(amplitude, center, width))))
        .collect();
    spec.with_initial_data(u0)
}

/// A converged solution, or the last iterate when the iteration stalls at
/// its floor; the cone test compares fields, not convergence.
fn solve_any(spec: &ProblemSpec, constants: &DeterminacyConstants, test: &ConeTest) -> Result<Solution, SolveError> {
    match solve(spec, constants, test.params, &test.solve) {
        Err(SolveError::NotConverged(sol)) => Ok(*sol),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariationalCheck {
    pub samples: usize,
    pub max_diff: f64,
    pub tolerance: f64,
}

impl VariationalCheck {
    pub fn passed(&self) -> bool {
        self.max_diff <= self.tolerance
    }
}

/// Integrates the variational equation along characteristics of the solved
/// field and compares it with the field's finite-difference `u_x`, at every
/// `stride`-th node of every `stride`-th level.
pub fn variational_check(spec: &ProblemSpec, sol: &Solution, stride: usize) -> Result<VariationalCheck, VerifyError> {
    let stride = stride.max(1);
    let dx = sol.field.grid().params.dx;
    let mut check = VariationalCheck { samples: 0, max_diff: 0.0, tolerance: (10.0 * dx * dx).max(1e-4) };
    for (k, j, x, t, ux) in sol.dx_field.nodes() {
        if k % stride != 0 || j % stride != 0 {
            continue;
        }
        for (i, &fd) in ux.iter().enumerate() {
            let tr = trace(i, x, t, &sol.field, spec)?;
            let v0 = spec.u0_prime(i, tr.foot())?;
            let v = integrate_variational(i, &tr, &sol.field, &sol.dx_field, v0, spec)?;
            check.max_diff = check.max_diff.max((v - fd).abs());
            check.samples += 1;
        }
    }
    Ok(check)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderStudy {
    pub case: String,
    pub dx: Vec<f64>,
    pub dt_levels: Vec<usize>,
    /// Error at the scattered probe points, per grid.
    pub errors: Vec<f64>,
    /// Error at the grid nodes, per grid.
    pub nodal_errors: Vec<f64>,
    /// `log2` of consecutive error ratios.
    pub orders: Vec<f64>,
}

/// Solves `case` on `base` and `refinements` successively halved grids
/// (`Δx` and `Δt` together) on one trapezoid, and returns the observed
/// orders together with the finest solution.
pub fn convergence_order_test(
    case: &ExactCase,
    base: GridParams,
    refinements: u32,
    estimate: &EstimateOptions,
    opts: &SolveOptions,
) -> Result<(OrderStudy, Solution), VerifyError> {
    let constants = case.constants(estimate)?;
    let mut study = OrderStudy {
        case: case.name.to_string(),
        dx: Vec::new(),
        dt_levels: Vec::new(),
        errors: Vec::new(),
        nodal_errors: Vec::new(),
        orders: Vec::new(),
    };
    let mut finest = None;
    for r in 0..=refinements {
        let params = base.refined(r);
        let sol = solve(&case.spec, &constants, params, opts)?;
        study.dx.push(params.dx);
        study.dt_levels.push(params.dt_levels);
        study.errors.push(case.probe_error(&sol.field)?);
        study.nodal_errors.push(case.nodal_error(&sol.field)?);
        finest = Some(sol);
    }
    study.orders = study.errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok((study, finest.expect("at least one grid")))
}
