//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use qlhyp_cli::suite::{run_case, CaseResult, SuiteOptions};
use qlhyp_core::characteristics::{integrate_variational, trace, TrapezoidGrid};
use qlhyp_core::determinacy::{blowup_time, choose_t, ybar, ybar_integral};
use qlhyp_core::iteration::{lemma_bound, lemma_oracle};
use qlhyp_core::verify::{exact_case, CASE_NAMES};
use qlhyp_core::{parse, EstimateOptions, GridParams, IterateField, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn main() {
    let mut failed = Vec::new();
    let mut report = |id: u32, name: &str, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = run();
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {id:>2} {name} ({:.1} s): {}", start.elapsed().as_secs_f64(), o.detail);
        if !o.passed {
            failed.push(id);
        }
    };

    report(2, "barrier", &mut barrier);
    report(3, "existence time", &mut existence_time);
    report(4, "lemma", &mut lemma);
    report(9, "symbolic differentiation", &mut differentiation);

    let start = Instant::now();
    let cases: Vec<CaseResult> = CASE_NAMES
        .iter()
        .map(|name| run_case(name, &SuiteOptions::default()).unwrap_or_else(|e| panic!("{name}: {e:#}")))
        .collect();
    println!("     registry suite finished in {:.1} s", start.elapsed().as_secs_f64());
    report(1, "exact solutions", &mut || exact_solutions(&cases));
    report(6, "bound monitoring", &mut || bound_monitoring(&cases));
    report(7, "domain of determinacy", &mut || determinacy(&cases));
    report(8, "variational", &mut || variational(&cases));

    let work = tempfile::tempdir().expect("temporary directory");
    let coupled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/coupled.toml");
    let first = work.path().join("first");
    let second = work.path().join("second");
    let start = Instant::now();
    let codes = [solve(&coupled, &first), solve(&coupled, &second)];
    println!("     coupled solves finished in {:.1} s with exit codes {codes:?}", start.elapsed().as_secs_f64());
    report(5, "contraction", &mut || contraction(&first, codes[0]));
    report(10, "determinism", &mut || determinism(&first, &second, codes));

    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

fn solve(config: &Path, out: &Path) -> i32 {
    qlhyp_cli::run([
        "qlhyp".into(),
        "solve".into(),
        config.as_os_str().to_owned(),
        "--out".into(),
        out.as_os_str().to_owned(),
    ])
}

fn rk4_barrier(n: usize, c1: f64, c2: f64, t_end: f64, outputs: usize, sub: usize) -> Vec<(f64, f64)> {
    let f = |y: f64| c2 * (1.0 + n as f64 * y).powi(2);
    let h = t_end / (outputs * sub) as f64;
    let mut y = c1;
    let mut out = Vec::with_capacity(outputs);
    for k in 1..=outputs {
        for _ in 0..sub {
            let k1 = f(y);
            let k2 = f(y + 0.5 * h * k1);
            let k3 = f(y + 0.5 * h * k2);
            let k4 = f(y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out.push((t_end * k as f64 / outputs as f64, y));
    }
    out
}

fn barrier() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(1..=4);
        let c1 = rng.gen_range(0.0..2.0);
        let c2 = rng.gen_range(0.01..2.0);
        let t_end = 0.9 * blowup_time(n, c1, c2).min(1.0);
        for (t, y) in rk4_barrier(n, c1, c2, t_end, 100, 400) {
            let closed = ybar(t, n, c1, c2).unwrap();
            worst = worst.max((closed - y).abs() / y.abs());
        }
    }
    outcome(worst <= 1e-8, format!("max relative error {worst:.2e} over 20 draws x 100 points (limit 1e-8)"))
}

fn existence_time() -> Outcome {
    let margin = EstimateOptions::default().blowup_margin;
    let t1 = choose_t(1, 0.0, 1.0, margin);
    let i1 = ybar_integral(t1, 1, 0.0, 1.0).unwrap();
    let t2 = choose_t(1, 2.0, 0.0, margin);
    let t3 = choose_t(1, 0.5, 0.0, margin);
    let ok = (0.8413..=0.8415).contains(&t1) && (1.0 - 1e-8..=1.0).contains(&i1) && t2 == 0.5 && t3 == 1.0;
    outcome(ok, format!("T = {t1:.6} (integral 1 - {:.1e}), {t2}, {t3}", 1.0 - i1))
}

fn lemma() -> Outcome {
    let taus: Vec<f64> = (0..=10_000).map(|j| j as f64 / 10_000.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (alpha, beta, zbar) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
        for (nu, row) in lemma_oracle(alpha, beta, zbar, 10, &taus).iter().enumerate() {
            let closed: Vec<f64> = taus.iter().map(|&t| lemma_bound(alpha, beta, zbar, nu as u32, t)).collect();
            let scale = closed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let diff = row.iter().zip(&closed).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if scale > 0.0 {
                worst = worst.max(diff / scale);
            }
        }
    }
    let mut factorial_err = 0.0f64;
    for (nu, row) in lemma_oracle(0.0, 1.0, 1.0, 10, &taus).iter().enumerate() {
        let fact: f64 = (1..=nu).map(|k| k as f64).product();
        for (t, v) in taus.iter().zip(row) {
            factorial_err = factorial_err.max((v - t.powi(nu as i32) / fact).abs());
        }
    }
    outcome(
        worst <= 1e-5 && factorial_err <= 1e-6,
        format!("relative difference {worst:.2e} (limit 1e-5); tau^nu/nu! error {factorial_err:.2e} (limit 1e-6)"),
    )
}

/// Random smooth expression in `x, t, u1, u2`, finite for arguments in `[-1, 1]`.
fn random_expr(rng: &mut ChaCha8Rng, depth: u32) -> String {
    if depth == 0 || rng.gen_bool(0.25) {
        return match rng.gen_range(0..5) {
            0 => format!("({:.4})", rng.gen_range(-2.0..2.0)),
            1 => "x".into(),
            2 => "t".into(),
            3 => "u1".into(),
            _ => "u2".into(),
        };
    }
    let mut sub = || random_expr(rng, depth - 1);
    let (a, b) = (sub(), sub());
    match rng.gen_range(0..10) {
        0 => format!("({a} + {b})"),
        1 => format!("({a} - {b})"),
        2 => format!("({a})*({b})"),
        3 => format!("({a})/(1.5 + ({b})^2)"),
        4 => format!("sin({a})"),
        5 => format!("cos({a})*{b}"),
        6 => format!("exp(0.3*({a}))"),
        7 => format!("log(3 + tanh({a}))"),
        8 => format!("sqrt(2 + sin({a}))"),
        _ => format!("(1.5 + cos({a}))^({b})"),
    }
}

fn differentiation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vars = [Var::X, Var::T, Var::U(0), Var::U(1)];
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut misses = 0;
    for _ in 0..200 {
        let src = random_expr(&mut rng, 4);
        let e = parse(&src, 2).unwrap_or_else(|err| panic!("{src}: {err}"));
        let v = vars[rng.gen_range(0..4)];
        let p: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let at = |s: f64| {
            let mut q = p;
            let slot = match v {
                Var::X => 0,
                Var::T => 1,
                Var::U(k) => 2 + k,
            };
            q[slot] += s;
            e.eval(q[0], q[1], &q[2..]).unwrap()
        };
        let d = e.diff(v).eval(p[0], p[1], &p[2..]).unwrap();
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let rel = (d - fd).abs() / (1.0 + d.abs());
        worst = worst.max(rel);
        if rel > 1e-5 {
            misses += 1;
        }
    }
    outcome(misses == 0, format!("{misses} of 200 outside tolerance; worst scaled difference {worst:.2e} (limit 1e-5)"))
}

fn exact_solutions(cases: &[CaseResult]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for c in cases {
        let err = *c.order.errors.last().unwrap();
        let in_window = c.order.orders.iter().all(|p| (1.8..=2.2).contains(p));
        ok &= err <= 1e-4 && in_window && c.order.orders.len() == 3;
        let orders: Vec<String> = c.order.orders.iter().map(|p| format!("{p:.3}")).collect();
        parts.push(format!("{} err {err:.1e} orders [{}]", c.case, orders.join(", ")));
    }
    outcome(ok, parts.join("; "))
}

fn bound_monitoring(cases: &[CaseResult]) -> Outcome {
    let names = ["amplitude_excess", "slope_excess", "lip_violation", "amp_violation"];
    let mut ok = true;
    let mut parts = Vec::new();
    for c in cases {
        let checks: Vec<_> = c.checks.iter().filter(|k| names.contains(&k.name.as_str())).collect();
        ok &= checks.len() == names.len() && checks.iter().all(|k| k.passed);
        parts.push(format!("{} amp {:+.3} slope {:+.3}", c.case, c.amp_excess, c.slope_excess));
    }
    outcome(ok, format!("relative excess over bounds (limit +0.05): {}", parts.join("; ")))
}

fn determinacy(cases: &[CaseResult]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["advection", "burgers_rarefaction"] {
        let c = cases.iter().find(|c| c.case == name).unwrap();
        let outside = c.cones.iter().filter(|o| o.placement == qlhyp_core::verify::BumpPlacement::Outside);
        let worst_out = outside.clone().map(|o| o.change).fold(0.0f64, f64::max);
        let inside = c.cones.iter().find(|o| o.placement == qlhyp_core::verify::BumpPlacement::Inside).unwrap().change;
        ok &= outside.count() > 0 && worst_out <= 1e-8 && inside >= 1e-4 && inside >= 1e4 * worst_out;
        parts.push(format!("{name} outside {worst_out:.1e} inside {inside:.1e}"));
    }
    outcome(ok, parts.join("; "))
}

fn variational(cases: &[CaseResult]) -> Outcome {
    // Burgers rarefaction: along the exact field u = x/(1+t) the variation is 1/(1+t).
    let case = exact_case("burgers_rarefaction").unwrap();
    let constants = case.constants(&EstimateOptions::default()).unwrap();
    let trap = constants.trapezoid(&case.spec).unwrap();
    let grid = Arc::new(TrapezoidGrid::new(trap, GridParams::default_for(&case.spec)));
    let field = IterateField::from_fn(grid, 1, |x, t, out| {
        out[0] = x / (1.0 + t);
        Ok::<_, ()>(())
    })
    .unwrap();
    let dx = field.x_derivative();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut exact_err = 0.0f64;
    for _ in 0..200 {
        let t = rng.gen_range(0.0..=trap.t_final);
        let x = rng.gen_range(trap.left(t)..=trap.right(t));
        let tr = trace(0, x, t, &field, &case.spec).unwrap();
        let v = integrate_variational(0, &tr, &field, &dx, 1.0, &case.spec).unwrap();
        exact_err = exact_err.max((v - 1.0 / (1.0 + t)).abs());
    }
    let mut ok = exact_err <= 1e-6;
    let mut parts = vec![format!("burgers exact field error {exact_err:.1e} (limit 1e-6)")];
    for c in cases {
        ok &= c.variational.passed() && c.variational.samples > 0;
        parts.push(format!("{} vs FD {:.1e} (limit {:.1e})", c.case, c.variational.max_diff, c.variational.tolerance));
    }
    outcome(ok, parts.join("; "))
}

fn read_report(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("report.json")).expect("report.json");
    serde_json::from_str(&text).expect("valid JSON")
}

fn contraction(dir: &Path, code: i32) -> Outcome {
    if code != 0 {
        return outcome(false, format!("solve exited with {code}"));
    }
    let r = read_report(dir);
    let num = |k: &str| r[k].as_f64().unwrap_or_else(|| panic!("report key {k}"));
    let z: Vec<f64> = r["Z"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let (n, c3, c4, t) = (num("n"), num("C3"), num("C4"), num("T"));
    let beta = n * c3 * (1.0 + c4);
    let tol = 1e-10;
    let mut ok = z.len() >= 3;
    let mut worst_ratio = 0.0f64;
    // z[m] is Z_{m+1}
    for m in 1..z.len().saturating_sub(1) {
        if z[m] <= tol {
            break;
        }
        let ratio = z[m + 1] / z[m];
        worst_ratio = worst_ratio.max(ratio);
        ok &= ratio <= beta * t;
    }
    let mut worst_lemma = 0.0f64;
    for (m, &zv) in z.iter().enumerate() {
        let bound = lemma_bound(0.0, beta, 2.0 * z[0], m as u32, t);
        worst_lemma = worst_lemma.max(zv / bound);
        ok &= zv <= bound;
    }
    outcome(
        ok,
        format!(
            "{} iterations; max ratio {worst_ratio:.3e} vs beta*T = {:.3}; max Z/bound {worst_lemma:.3e}",
            z.len(),
            beta * t
        ),
    )
}

fn determinism(first: &Path, second: &Path, codes: [i32; 2]) -> Outcome {
    let a = std::fs::read(first.join("solution.csv")).expect("first solution.csv");
    let b = std::fs::read(second.join("solution.csv")).expect("second solution.csv");
    outcome(a == b && codes == [0, 0], format!("{} bytes, identical: {}", a.len(), a == b))
}
