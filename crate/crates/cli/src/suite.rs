//! The registry verification suite behind `qlhyp verify`.

use std::time::Instant;

use anyhow::Result;
use qlhyp_core::iteration::check_bounds;
use qlhyp_core::verify::{
    convergence_order_test, dependence_cone_test, exact_case, residual_check, variational_check, BumpPlacement,
    ConeOutcome, ConeTest, ExactCase, OrderStudy, ResidualCheck, VariationalCheck,
};
use qlhyp_core::{ConvergenceReport, EstimateOptions, GridParams, SolveOptions};
use serde::Serialize;

/// One pass/fail comparison. `margin` is the distance to the nearest
/// threshold, positive when the check passes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub margin: f64,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, upper: f64) -> Self {
        Self::within(name, value, None, Some(upper))
    }

    pub fn at_least(name: impl Into<String>, value: f64, lower: f64) -> Self {
        Self::within(name, value, Some(lower), None)
    }

    pub fn within(name: impl Into<String>, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let margin = f64::min(lower.map_or(f64::INFINITY, |l| value - l), upper.map_or(f64::INFINITY, |u| u - value));
        Check { name: name.into(), passed: margin >= 0.0, value, lower, upper, margin }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    /// Number of halvings in the order study.
    pub refinements: u32,
    /// The finest order-study grid is the default grid coarsened `2^coarsen` times.
    pub coarsen: u32,
    /// Cone tests run on the default grid coarsened `2^cone_coarsen` times.
    pub cone_coarsen: u32,
    pub cone_seeds: u64,
    pub residual_samples: usize,
    pub variational_stride: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            refinements: 3,
            coarsen: 0,
            cone_coarsen: 2,
            cone_seeds: 3,
            residual_samples: 1000,
            variational_stride: 10,
        }
    }
}

impl SuiteOptions {
    pub fn quick() -> Self {
        SuiteOptions { refinements: 2, coarsen: 2, cone_coarsen: 3, cone_seeds: 1, ..Self::default() }
    }

    fn coarse(&self, case: &ExactCase, halvings: u32) -> GridParams {
        let d = GridParams::default_for(&case.spec);
        let f = 2usize.pow(halvings);
        GridParams { dx: d.dx * f as f64, dt_levels: (d.dt_levels / f).max(1), substeps: d.substeps }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub case: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub residual: ResidualCheck,
    pub order: OrderStudy,
    pub amp_excess: f64,
    pub slope_excess: f64,
    pub variational: VariationalCheck,
    pub cones: Vec<ConeOutcome>,
    pub report: ConvergenceReport,
    pub seconds: f64,
}

const MAX_ERROR: f64 = 1e-4;
const ORDER_WINDOW: (f64, f64) = (1.8, 2.2);
const BOUND_SLACK: f64 = 0.05;
const CONE_OUTSIDE: f64 = 1e-8;
const CONE_INSIDE: f64 = 1e-4;
const CONE_SEPARATION: f64 = 1e4;

/// Probe, bump half-width, for the cases with a domain-of-dependence test.
fn cone_setup(name: &str) -> Option<((f64, f64), f64)> {
    match name {
        "advection" => Some(((std::f64::consts::PI, 0.3), 0.5)),
        "burgers_rarefaction" => Some(((0.15, 0.1), 0.1)),
        _ => None,
    }
}

pub fn run_case(name: &str, opts: &SuiteOptions) -> Result<CaseResult> {
    let start = Instant::now();
    let case = exact_case(name)?;
    let estimate = EstimateOptions::default();
    let solve = SolveOptions::default();
    let constants = case.constants(&estimate)?;
    let mut checks = Vec::new();

    let residual = residual_check(&case, &constants, opts.residual_samples, 0x5eed)?;
    checks.push(Check::at_most("pde_residual", residual.max_residual, 1e-10));

    let base = opts.coarse(&case, opts.coarsen + opts.refinements);
    let (order, finest) = convergence_order_test(&case, base, opts.refinements, &estimate, &solve)?;
    let finest_error = *order.errors.last().expect("at least one grid");
    let error_bound = MAX_ERROR * 4f64.powi(opts.coarsen as i32);
    checks.push(Check::at_most("max_error", finest_error, error_bound));
    checks.push(Check::at_most("refinement_reduces_error", finest_error, order.errors[0]));
    for (k, p) in order.orders.iter().enumerate() {
        checks.push(Check::within(format!("order_{k}"), *p, Some(ORDER_WINDOW.0), Some(ORDER_WINDOW.1)));
    }

    let bounds = check_bounds(&finest.field, &finest.dx_field, &finest.dt_field, &finest.constants)?;
    checks.push(Check::at_most("amplitude_excess", bounds.amp_excess(), BOUND_SLACK));
    checks.push(Check::at_most("slope_excess", bounds.slope_excess(), BOUND_SLACK));
    let c = &finest.constants;
    let report = &finest.report;
    let worst = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most("lip_violation", worst(&report.lip_violation), BOUND_SLACK * c.n as f64 * c.c1));
    checks.push(Check::at_most("amp_violation", worst(&report.amp_violation), BOUND_SLACK * c.amplitude_bound()));

    let variational = variational_check(&case.spec, &finest, opts.variational_stride)?;
    checks.push(Check::at_most("variational_vs_fd", variational.max_diff, variational.tolerance));

    let mut cones = Vec::new();
    if let Some((probe, width)) = cone_setup(name) {
        let mut test = ConeTest {
            probe,
            amplitude: 0.1,
            width,
            placement: BumpPlacement::Outside,
            stencils: 6.0,
            seed: 0,
            params: opts.coarse(&case, opts.cone_coarsen),
            solve,
            estimate,
        };
        let mut outside = 0.0f64;
        for seed in 1..=opts.cone_seeds {
            test.seed = seed;
            let out = dependence_cone_test(&case.spec, &test)?;
            outside = outside.max(out.change);
            cones.push(out);
        }
        test.placement = BumpPlacement::Inside;
        let inside = dependence_cone_test(&case.spec, &test)?;
        checks.push(Check::at_most("cone_outside_change", outside, CONE_OUTSIDE));
        checks.push(Check::at_least("cone_inside_change", inside.change, CONE_INSIDE));
        checks.push(Check::at_least("cone_separation", inside.change, CONE_SEPARATION * outside));
        cones.push(inside);
    }

    Ok(CaseResult {
        case: name.to_string(),
        passed: checks.iter().all(|c| c.passed),
        checks,
        residual,
        order,
        amp_excess: bounds.amp_excess(),
        slope_excess: bounds.slope_excess(),
        variational,
        cones,
        report: finest.report,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_margins() {
        let c = Check::at_most("x", 0.5, 1.0);
        assert!(c.passed && c.margin == 0.5);
        let c = Check::at_least("x", 0.5, 1.0);
        assert!(!c.passed && c.margin == -0.5);
        let c = Check::within("x", 2.1, Some(1.8), Some(2.2));
        assert!(c.passed && (c.margin - 0.1).abs() < 1e-12);
    }

    #[test]
    fn quick_advection_suite_passes() {
        let r = run_case("advection", &SuiteOptions::quick()).unwrap();
        assert!(r.passed, "{:#?}", r.checks);
        assert_eq!(r.order.errors.len(), 3);
        assert_eq!(r.cones.len(), 2);
    }
}
