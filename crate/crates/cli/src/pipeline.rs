//! Pipeline stages and their artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rotor_core::diagnostics::{
    check_a5_sufficient, check_continuability, check_p_bound, check_super_est, check_superlinearity, HypothesisReport,
    Verdict,
};
use rotor_core::export;
use rotor_core::rotation::{default_eps_origin, rotation_grid, RotationGrid};
use rotor_core::topology::{build_capture_set_from_grid, default_n_bar, multiplicity_search, PeriodicOrbit};
use rotor_core::{
    degree_fixed_point, find_periodic, find_periodic_in, poincare_map, reverse_field, rotation, FlowOutcome, PhasePoint,
    PolyCurve, RotationOutcome,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Grid,
    Find,
    Multiplicity,
    Check,
    ReverseCheck,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Grid, Stage::Find, Stage::Multiplicity, Stage::Check, Stage::ReverseCheck];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Grid => "grid",
            Stage::Find => "find",
            Stage::Multiplicity => "multiplicity",
            Stage::Check => "check",
            Stage::ReverseCheck => "reverse_check",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Radius of the circle on which the default `n̄` is measured.
const N_BAR_RADIUS: f64 = 0.5;
/// Tolerance of the reversal identity.
const REVERSAL_TOL: f64 = 1e-6;

#[derive(Default)]
struct State {
    grid: Option<RotationGrid>,
    curve: Option<PolyCurve>,
    orbits: Vec<PeriodicOrbit>,
    orbit_entries: Vec<Value>,
    not_found: Vec<Value>,
    hypotheses: Vec<HypothesisReport>,
    reverse_check: Option<Value>,
    notes: Vec<String>,
}

struct Ctx<'a> {
    scn: &'a Scenario,
    out: &'a Path,
    log: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn write_json(&self, name: &str, value: &Value) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }
}

/// Runs `stages` in order, writing artifacts into `out`. Returns one report
/// per stage; a failed stage does not stop later ones.
pub fn run_stages(scn: &Scenario, stages: &[Stage], out: &Path, log: &mut dyn Write) -> Result<Vec<StageReport>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut ctx = Ctx { scn, out, log };
    let mut state = State::default();
    let mut reports = Vec::new();
    for &stage in stages {
        let result = match stage {
            Stage::Grid => stage_grid(&mut ctx, &mut state),
            Stage::Find => stage_find(&mut ctx, &mut state),
            Stage::Multiplicity => stage_multiplicity(&mut ctx, &mut state),
            Stage::Check => stage_check(&mut ctx, &mut state),
            Stage::ReverseCheck => stage_reverse_check(&mut ctx, &mut state),
        };
        let error = result.err().map(|e| format!("{e:#}"));
        if let Some(e) = &error {
            writeln!(ctx.log, "stage {} failed: {e}", stage.name())?;
        }
        reports.push(StageReport {
            stage,
            ok: error.is_none(),
            error,
        });
    }

    if stages.iter().any(|s| matches!(s, Stage::Find | Stage::Multiplicity)) {
        ctx.write_json("orbits.json", &export::orbits_json(&state.orbit_entries, &state.not_found))?;
    }
    if !state.orbits.is_empty() {
        state.notes.push(
            "a T-periodic solution was found; it is itself a shift function whose solution is continuable over the period"
                .into(),
        );
    }
    let report = json!({
        "schema": export::REPORT_SCHEMA,
        "scenario": scn.label,
        "field": scn.field.label(),
        "period": scn.field.period(),
        "seed": scn.seed,
        "stages": reports,
        "hypotheses": state.hypotheses,
        "reverse_check": state.reverse_check,
        "notes": state.notes,
    });
    ctx.write_json("report.json", &report)?;
    Ok(reports)
}

fn ensure_grid<'s>(ctx: &mut Ctx, state: &'s mut State) -> Result<&'s RotationGrid> {
    if state.grid.is_none() {
        let s = ctx.scn;
        let grid = rotation_grid(&s.field, s.region, s.nx, s.ny, &s.opts).context("rotation grid")?;
        ctx.write("rotation_grid.csv", &export::grid_csv(&grid))?;
        ctx.write(
            "rotation_heatmap.svg",
            &export::render_svg(&grid, None, &[], &format!("{}: rotation over one period", s.label)),
        )?;
        state.grid = Some(grid);
    }
    Ok(state.grid.as_ref().expect("grid was just computed"))
}

fn stage_grid(ctx: &mut Ctx, state: &mut State) -> Result<()> {
    let grid = ensure_grid(ctx, state)?;
    let finite: Vec<f64> = grid.values.iter().filter_map(|v| v.finite()).collect();
    let escaped = grid.values.iter().filter(|v| matches!(v, RotationOutcome::PlusInfinity { .. })).count();
    let hits = grid.values.iter().filter(|v| matches!(v, RotationOutcome::UndefinedOriginHit { .. })).count();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    writeln!(
        ctx.log,
        "grid {}x{}: rho in [{lo:.6}, {hi:.6}], {escaped} escaped, {hits} origin hits",
        grid.nx, grid.ny
    )?;
    Ok(())
}

fn stage_find(ctx: &mut Ctx, state: &mut State) -> Result<()> {
    let s = ctx.scn;
    ensure_grid(ctx, state)?;
    let grid = state.grid.as_ref().expect("grid exists");
    let n_bar = match s.n_bar {
        Some(n) => n,
        None => default_n_bar(&s.field, N_BAR_RADIUS, 64, &s.opts)?,
    };

    let (curve, capture_doc) = match build_capture_set_from_grid(&s.field, n_bar, grid, &s.opts, &Default::default()) {
        Ok(cs) => {
            let mut doc = export::capture_set_json(&cs);
            doc["source"] = json!("level_set");
            writeln!(
                ctx.log,
                "capture set: level {} with {} vertices",
                cs.level,
                cs.inner_component.vertices().len()
            )?;
            (cs.inner_component, doc)
        }
        Err(e) => {
            let r = s.region;
            let radius = 0.5 * [-r.xmin, r.xmax, -r.ymin, r.ymax].into_iter().fold(f64::INFINITY, f64::min);
            let curve = PolyCurve::circle(PhasePoint::ORIGIN, radius, 64)?;
            writeln!(ctx.log, "capture set unavailable ({e}); using the circle of radius {radius}")?;
            state.notes.push(format!("capture set: {e}; degree taken on a circle of radius {radius}"));
            let doc = json!({
                "schema": export::CAPTURE_SET_SCHEMA,
                "source": "circle_fallback",
                "error": e.to_string(),
                "level": n_bar as f64 + 0.5,
                "n_bar": n_bar,
                "curve": export::curve_json(&curve),
                "grid": { "region": s.region, "nx": s.nx, "ny": s.ny },
            });
            (curve, doc)
        }
    };
    ctx.write_json("capture_set.json", &capture_doc)?;

    let degree = degree_fixed_point(&s.field, &curve, &s.opts).context("degree")?;
    ctx.write_json("degree.json", &export::degree_json(&degree))?;
    writeln!(
        ctx.log,
        "degree {} (boundary rotation in [{:.6}, {:.6}], integer-free: {})",
        degree.degree, degree.min_rotation_on_boundary, degree.max_rotation_on_boundary, degree.boundary_int_free
    )?;
    state.curve = Some(curve.clone());

    let newton = s
        .newton_seed
        .and_then(|seed| find_periodic(&s.field, seed, &s.opts).ok())
        .filter(|o| curve.contains(o.z_star));
    let (orbit, method) = match newton {
        Some(o) => (o, "newton"),
        None => (find_periodic_in(&s.field, &curve, &s.opts).context("fixed point search")?, "bisection"),
    };
    let tight = s.opts.tightened(10.0);
    let check = match poincare_map(&s.field, orbit.z_star, &tight)? {
        FlowOutcome::Point(p) => p.distance(&orbit.z_star),
        FlowOutcome::Escaped { .. } => f64::INFINITY,
    };
    let mut entry = export::orbit_json(&orbit, method, None);
    entry["residual_tight"] = json!(check);
    writeln!(ctx.log, "{:>14} {:>14} {:>12} {:>10} {:>10}", "x*", "y*", "residual", "rho", "method")?;
    writeln!(
        ctx.log,
        "{:>14.9} {:>14.9} {:>12.3e} {:>10.6} {:>10}",
        orbit.z_star.x, orbit.z_star.y, orbit.residual, orbit.rho, method
    )?;
    state.orbit_entries.push(entry);
    state.orbits.push(orbit);
    render_portrait(ctx, state)
}

fn render_portrait(ctx: &mut Ctx, state: &mut State) -> Result<()> {
    ensure_grid(ctx, state)?;
    let grid = state.grid.as_ref().expect("grid exists");
    let orbits: Vec<&PeriodicOrbit> = state.orbits.iter().collect();
    let svg = export::render_svg(grid, state.curve.as_ref(), &orbits, &format!("{}: phase portrait", ctx.scn.label));
    ctx.write("portrait.svg", &svg)?;
    Ok(())
}

fn stage_multiplicity(ctx: &mut Ctx, state: &mut State) -> Result<()> {
    let s = ctx.scn;
    if s.k_list.is_empty() {
        anyhow::bail!("no [search] k_list given");
    }
    let base = find_periodic(&s.field, s.base_seed, &s.opts).context("base orbit")?;
    let report = multiplicity_search(&s.field, &base, &s.k_list, &s.annulus, &s.opts)?;
    writeln!(ctx.log, "{:>4} {:>14} {:>14} {:>12} {:>10}", "k", "x*", "y*", "residual", "rho")?;
    for h in &report.found {
        writeln!(
            ctx.log,
            "{:>4} {:>14.9} {:>14.9} {:>12.3e} {:>10.6}",
            h.k, h.orbit.z_star.x, h.orbit.z_star.y, h.orbit.residual, h.orbit.rho
        )?;
    }
    for n in &report.not_found {
        writeln!(ctx.log, "{:>4} not found within radius {}: {}", n.k, n.radius_reached, n.reason)?;
    }
    let (found, missing) = export::multiplicity_entries(&report);
    let mut base_entry = export::orbit_json(&base, "base", None);
    base_entry["role"] = json!("base");
    state.orbit_entries.push(base_entry);
    state.orbit_entries.extend(found);
    state.not_found.extend(missing);
    state.orbits.extend(report.found.into_iter().map(|h| h.orbit));
    render_portrait(ctx, state)
}

fn verdict_cell(r: &HypothesisReport) -> String {
    match &r.verdict {
        Verdict::ConsistentOnSamples => "ConsistentOnSamples".into(),
        Verdict::ViolatedAt(w) => format!("ViolatedAt(t={:.4}, x={:.4}, y={:.4})", w.t, w.x, w.y),
    }
}

fn stage_check(ctx: &mut Ctx, state: &mut State) -> Result<()> {
    let s = ctx.scn;
    let c = &s.check;
    let f = &s.field;
    let mut reports = vec![check_superlinearity(f, &c.x_magnitudes, 64, c.threshold)];
    let gamma_p = c.gamma_p.clone();
    reports.push(check_p_bound(f, move |t| gamma_p.eval(t, 0.0, 0.0), c.c_p, c.samples, s.region, s.seed));
    reports.push(check_continuability(f, None, c.t_grid, &s.opts)?);
    if let Some(a) = &s.shift {
        reports.push(check_continuability(f, Some(a), c.t_grid, &s.opts)?);
    }
    reports.push(check_a5_sufficient(f, c.alpha_a5, c.samples, s.seed)?);
    if let Some(g) = &c.gamma_alpha {
        let g = g.clone();
        let r = s.region;
        let xr = r.xmin.abs().max(r.xmax.abs());
        let yr = r.ymin.abs().max(r.ymax.abs());
        reports.push(check_super_est(f, c.alpha_super, move |t| g.eval(t, 0.0, 0.0), c.samples, xr, yr, s.seed)?);
    }
    writeln!(ctx.log, "{:<14} {:<48} {:>8}", "hypothesis", "verdict", "samples")?;
    for r in &reports {
        writeln!(ctx.log, "{:<14} {:<48} {:>8}", format!("{:?}", r.hypothesis), verdict_cell(r), r.samples)?;
        if let Some(note) = &r.footnote {
            writeln!(ctx.log, "  note: {note}")?;
        }
    }
    state.hypotheses.extend(reports);
    Ok(())
}

fn stage_reverse_check(ctx: &mut Ctx, state: &mut State) -> Result<()> {
    let s = ctx.scn;
    let period = s.field.period();
    let reversed = reverse_field(&s.field);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let r = s.region;
    let samples: Vec<(f64, PhasePoint)> = (0..s.check.reverse_samples)
        .map(|_| {
            let t = rng.random_range(0.05 * period..period);
            let z = PhasePoint::new(rng.random_range(r.xmin..r.xmax), rng.random_range(r.ymin..r.ymax));
            (t, z)
        })
        .collect();
    let diffs = samples
        .par_iter()
        .map(|&(t, z)| -> Result<Option<f64>> {
            let fwd = rotation(&s.field, 0.0, t, z, &s.opts, default_eps_origin(z));
            let Ok(RotationOutcome::Finite { rho, terminal }) = fwd else {
                return Ok(None);
            };
            let start = PhasePoint::new(-terminal.x, terminal.y);
            let back = rotation(&reversed, period - t, period, start, &s.opts, default_eps_origin(start))?;
            Ok(back.finite().map(|b| (b - rho).abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    let used: Vec<f64> = diffs.into_iter().flatten().collect();
    let max = used.iter().copied().fold(0.0, f64::max);
    writeln!(
        ctx.log,
        "reversal identity on {} of {} samples: max |rho - rho_reversed| = {max:.3e}",
        used.len(),
        samples.len()
    )?;
    state.reverse_check = Some(json!({
        "samples": samples.len(),
        "finite": used.len(),
        "max_difference": max,
        "tolerance": REVERSAL_TOL,
    }));
    if max >= REVERSAL_TOL {
        anyhow::bail!("reversal identity violated: difference {max:e}");
    }
    Ok(())
}
