//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::f64::consts::TAU;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rotor_core::integrator::Dynamics;
use rotor_core::rotation::{check_monotonicity, default_eps_origin, l_alpha, l_alpha_quadrature};
use rotor_core::topology::{build_capture_set, multiplicity_search, AnnulusHint};
use rotor_core::{
    degree_fixed_point, find_periodic, find_periodic_in, flow, parse_expression, poincare_map, reverse_field, rotation,
    winding_number, FlowOutcome, IntegratorOptions, PhasePoint, PlanarField, PolyCurve, Region, RotationOutcome,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn opts() -> IntegratorOptions {
    IntegratorOptions::default()
}

fn tight() -> IntegratorOptions {
    IntegratorOptions {
        rel_tol: 1e-10,
        abs_tol: 1e-12,
        ..IntegratorOptions::default()
    }
}

fn finite_rho(field: &PlanarField, t0: f64, t1: f64, z: PhasePoint, o: &IntegratorOptions) -> Result<(f64, PhasePoint), String> {
    match rotation(field, t0, t1, z, o, default_eps_origin(z)).map_err(|e| e.to_string())? {
        RotationOutcome::Finite { rho, terminal } => Ok((rho, terminal)),
        other => Err(format!("non-finite rotation from {z:?}: {other:?}")),
    }
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    for alpha in [1.5, 4.0, 10.0, 100.0] {
        let exact = TAU / f64::sqrt(alpha);
        let quad = l_alpha_quadrature(alpha, 4096).map_err(|e| e.to_string())?;
        let closed = l_alpha(alpha).map_err(|e| e.to_string())?;
        let err = (quad - exact).abs().max((closed - exact).abs());
        ensure(err < 1e-10, || format!("alpha = {alpha}: error {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("max error {worst:.2e}"))
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for omega in [1.0, 1.5, 2.0, 3.0] {
        let field = PlanarField::linear(omega);
        for radius in [0.1, 1.0, 10.0] {
            for k in 0..12 {
                let phi = TAU * (k as f64 + 0.37) / 12.0;
                let z = PhasePoint::new(radius * phi.cos(), radius * phi.sin());
                let (rho, _) = finite_rho(&field, 0.0, TAU, z, &tight())?;
                let err = (rho - omega).abs();
                ensure(err < 1e-8, || format!("omega = {omega}, z = {z:?}: rho = {rho}"))?;
                worst = worst.max(err);
                count += 1;
            }
        }
    }
    Ok(format!("{count} samples, max |rho - omega| = {worst:.2e}"))
}

/// Period of `x'' + x³ = 0` at unit amplitude: `4 ∫₀¹ dx / √((1 - x⁴)/2)`.
/// With `x = 1 - s²` the integrand becomes `2√2 / √((2 - s²)(1 + (1 - s²)²))`,
/// which is smooth on `[0, 1]`, and composite Simpson applies.
fn cubic_unit_period() -> f64 {
    let g = |s: f64| {
        let u = 1.0 - s * s;
        2.0 * std::f64::consts::SQRT_2 / ((2.0 - s * s) * (1.0 + u * u)).sqrt()
    };
    let n = 2000;
    let h = 1.0 / n as f64;
    let mut sum = g(0.0) + g(1.0);
    for i in 1..n {
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
    }
    4.0 * sum * h / 3.0
}

fn criterion_3() -> Outcome {
    let t1 = cubic_unit_period();
    let field = PlanarField::superlinear_poly(1.0, 0.0);
    let mut rows = Vec::new();
    let mut ok = true;
    for amp in [2.0, 5.0, 10.0] {
        let expected = TAU * amp / t1;
        let (rho, _) = finite_rho(&field, 0.0, TAU, PhasePoint::new(amp, 0.0), &tight())?;
        let rel = (rho - expected).abs() / expected;
        ok &= rel < 0.01;
        rows.push(format!("A = {amp}: rho {rho:.6} vs {expected:.6} ({:.2}%)", 100.0 * rel));
    }
    let detail = format!("T1 = {t1:.6}; {}", rows.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_4() -> Outcome {
    let field = PlanarField::linear(1.5);
    for radius in [0.5, 1.0, 2.0] {
        let curve = PolyCurve::circle(PhasePoint::ORIGIN, radius, 64).map_err(|e| e.to_string())?;
        let report = degree_fixed_point(&field, &curve, &opts()).map_err(|e| e.to_string())?;
        ensure(report.degree == 1 && report.boundary_int_free, || {
            format!("radius {radius}: degree {} int_free {}", report.degree, report.boundary_int_free)
        })?;
    }
    let translation = vec![PhasePoint::new(3.0, 0.0); 64];
    let w = winding_number(&translation).map_err(|e| e.to_string())?;
    ensure(w == 0, || format!("translation winding {w}"))?;
    Ok("degree 1 on radii 0.5, 1, 2; translation winding 0".into())
}

/// Small root of `3A³/4 - A = ε`, the one-harmonic balance of
/// `x'' + x³ = ε cos t` with `x = A cos t`.
fn harmonic_balance_amplitude(eps: f64) -> f64 {
    let mut a = -eps;
    for _ in 0..50 {
        let g = 0.75 * a * a * a - a - eps;
        let dg = 2.25 * a * a - 1.0;
        a -= g / dg;
    }
    a
}

fn criterion_5() -> Outcome {
    let field = PlanarField::duffing(0.05);
    let o = tight();
    let cs = build_capture_set(&field, 1, Region::square(3.0), 48, 48, &o).map_err(|e| e.to_string())?;
    ensure((cs.level - cs.level.floor() - 0.5).abs() < 1e-12, || format!("level {}", cs.level))?;
    let curve = &cs.inner_component;
    let degree = degree_fixed_point(&field, curve, &o).map_err(|e| e.to_string())?;
    ensure(degree.degree == 1 && degree.boundary_int_free, || format!("degree report {degree:?}"))?;
    let orbit = find_periodic_in(&field, curve, &o).map_err(|e| e.to_string())?;
    ensure(orbit.residual < 1e-9, || format!("residual {:e}", orbit.residual))?;
    let check = match poincare_map(&field, orbit.z_star, &o.tightened(10.0)).map_err(|e| e.to_string())? {
        FlowOutcome::Point(p) => p.distance(&orbit.z_star),
        FlowOutcome::Escaped { .. } => f64::INFINITY,
    };
    ensure(check < 1e-8, || format!("tight residual {check:e}"))?;
    let seed = PhasePoint::new(harmonic_balance_amplitude(0.05), 0.0);
    let hb = find_periodic(&field, seed, &o).map_err(|e| e.to_string())?;
    let gap = hb.z_star.distance(&orbit.z_star);
    ensure(gap < 1e-6, || format!("harmonic balance orbit {:?} vs {:?}", hb.z_star, orbit.z_star))?;
    Ok(format!(
        "level {}, z* = ({:.9}, {:.9}), residual {:.1e}, tight {:.1e}, harmonic-balance gap {:.1e}",
        cs.level, orbit.z_star.x, orbit.z_star.y, orbit.residual, check, gap
    ))
}

fn criterion_6() -> Outcome {
    let field = PlanarField::duffing(0.05);
    let reversed = reverse_field(&field);
    let o = tight();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut used = 0;
    let mut worst: f64 = 0.0;
    while used < 20 {
        let t = rng.random_range(0.1..TAU);
        let z = PhasePoint::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let Ok((rho, zt)) = finite_rho(&field, 0.0, t, z, &o) else {
            continue;
        };
        let (rho_hat, _) = finite_rho(&reversed, TAU - t, TAU, PhasePoint::new(-zt.x, zt.y), &o)?;
        let diff = (rho - rho_hat).abs();
        ensure(diff < 1e-6, || format!("t = {t}, z = {z:?}: {rho} vs {rho_hat}"))?;
        worst = worst.max(diff);
        used += 1;
    }
    Ok(format!("20 samples, max difference {worst:.2e}"))
}

fn criterion_7() -> Outcome {
    let duffing = PlanarField::duffing(0.05);
    let f = parse_expression("x^3 + 0.05*cos(t)*x").map_err(|e| e.to_string())?;
    let param = PlanarField::forced_general("parametric", TAU, f, None).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut summary = Vec::new();
    for field in [&duffing, &param] {
        let samples: Vec<(f64, PhasePoint)> = (0..100)
            .map(|_| {
                let t = rng.random_range(0.0..TAU);
                (t, PhasePoint::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
            })
            .collect();
        let report = check_monotonicity(field, &samples, 16, &opts(), 1e-6).map_err(|e| e.to_string())?;
        ensure(report.violations.is_empty(), || {
            format!("{}: {} violations, first {:?}", field.label(), report.violations.len(), report.violations[0])
        })?;
        summary.push(format!("{}: {} checked, {} skipped", field.label(), report.checked, report.skipped));
    }
    Ok(summary.join("; "))
}

fn criterion_8() -> Outcome {
    let f = parse_expression("x^3 + 0.05*cos(t)*x").map_err(|e| e.to_string())?;
    let field = PlanarField::forced_general("parametric", TAU, f, None).map_err(|e| e.to_string())?;
    let base = find_periodic(&field, PhasePoint::ORIGIN, &tight()).map_err(|e| e.to_string())?;
    let report = multiplicity_search(&field, &base, &[1, 2, 3], &AnnulusHint::default(), &tight()).map_err(|e| e.to_string())?;
    ensure(report.not_found.is_empty(), || format!("not found: {:?}", report.not_found))?;
    for k in [1, 2, 3] {
        ensure(report.found.iter().any(|h| h.k == k), || format!("no orbit for k = {k}"))?;
    }
    for h in &report.found {
        ensure((h.orbit.rho - h.k as f64).abs() < 0.05, || format!("k = {}: rho {}", h.k, h.orbit.rho))?;
        ensure(h.orbit.residual < 1e-8, || format!("k = {}: residual {:e}", h.k, h.orbit.residual))?;
    }
    for (i, a) in report.found.iter().enumerate() {
        for b in &report.found[i + 1..] {
            ensure(a.orbit.z_star.distance(&b.orbit.z_star) > 1e-6, || {
                format!("duplicate orbits at {:?}", a.orbit.z_star)
            })?;
        }
    }
    Ok(format!("{} orbits over k = 1, 2, 3", report.found.len()))
}

/// `x' = x²`, `y' = 0`; the solution from `(1, 0)` is `1 / (1 - t)`.
struct QuadraticBlowUp;

impl Dynamics<2> for QuadraticBlowUp {
    fn rhs(&self, _t: f64, z: &[f64; 2]) -> rotor_core::Result<[f64; 2]> {
        Ok([z[0] * z[0], 0.0])
    }
}

fn criterion_9() -> Outcome {
    let t_escape = match flow(&QuadraticBlowUp, 0.0, 2.0, PhasePoint::new(1.0, 0.0), &opts()).map_err(|e| e.to_string())? {
        FlowOutcome::Escaped { t_escape, .. } => t_escape,
        FlowOutcome::Point(p) => return Err(format!("no escape, reached {p:?}")),
    };
    ensure((0.99..=1.0).contains(&t_escape), || format!("t_escape {t_escape}"))?;

    let quintic = PlanarField::superlinear_poly(0.0, 1.0);
    let z = PhasePoint::new(100.0, 0.0);
    let mut cutoffs = Vec::new();
    for radius in [1e3, 1e4, 1e5] {
        let o = opts().with_escape_radius(radius);
        match rotation(&quintic, 0.0, TAU, z, &o, default_eps_origin(z)).map_err(|e| e.to_string())? {
            RotationOutcome::PlusInfinity { rho_at_cutoff, .. } => cutoffs.push(rho_at_cutoff),
            other => return Err(format!("R = {radius}: {other:?}")),
        }
    }
    ensure(cutoffs.windows(2).all(|w| w[1] > w[0]), || format!("cutoff rotations {cutoffs:?}"))?;
    Ok(format!("t_escape = {t_escape:.6}, cutoff rotations {cutoffs:.4?}"))
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn criterion_10() -> Outcome {
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/duffing.toml");
    let base = std::env::temp_dir().join(format!("rotor-acceptance-{}", std::process::id()));
    let mut outputs = Vec::new();
    for threads in ["1", "8"] {
        let out = base.join(format!("threads-{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_rotor"))
            .current_dir(workspace_root())
            .args(["find", scenario.to_str().expect("utf-8 path"), "--threads", threads, "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            format!("rotor find --threads {threads} failed: {}", String::from_utf8_lossy(&status.stderr))
        })?;
        outputs.push(std::fs::read(out.join("orbits.json")).map_err(|e| e.to_string())?);
    }
    let _ = std::fs::remove_dir_all(&base);
    ensure(outputs[0] == outputs[1], || "orbits.json differs between 1 and 8 threads".into())?;
    Ok(format!("orbits.json identical ({} bytes)", outputs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "L_alpha quadrature", criterion_1),
        (2, "linear rotation", criterion_2),
        (3, "cubic rotation scaling", criterion_3),
        (4, "degree certificate", criterion_4),
        (5, "duffing pipeline", criterion_5),
        (6, "reversal identity", criterion_6),
        (7, "half-turn monotonicity", criterion_7),
        (8, "multiplicity", criterion_8),
        (9, "blow-up flagging", criterion_9),
        (10, "thread determinism", criterion_10),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS [{name}] ({secs:.1} s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL [{name}] ({secs:.1} s) {detail}");
            }
        }
    }
    if failed == 0 {
        println!("acceptance: 10/10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of 10 criteria failed");
        ExitCode::FAILURE
    }
}
