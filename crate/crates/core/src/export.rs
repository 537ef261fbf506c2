//! CSV, JSON and SVG renderings of grids, curves and orbits.
//!
//! JSON documents carry a `schema` key naming a file under `schemas/`.

use std::fmt::Write as _;

use serde_json::{json, Value};

use crate::field_model::PhasePoint;
use crate::rotation::{RotationGrid, RotationOutcome};
use crate::topology::{CaptureSet, DegreeReport, MultiplicityReport, PeriodicOrbit, PolyCurve};

pub const CAPTURE_SET_SCHEMA: &str = "rotor.capture_set.v1";
pub const DEGREE_SCHEMA: &str = "rotor.degree.v1";
pub const ORBITS_SCHEMA: &str = "rotor.orbits.v1";
pub const REPORT_SCHEMA: &str = "rotor.report.v1";

/// Number of trajectory samples stored per orbit.
pub const ORBIT_SAMPLES: usize = 64;

/// `x,y,status,rho`, one row per cell in row-major order. `rho` is the
/// cutoff value for escapes and empty for origin hits.
pub fn grid_csv(grid: &RotationGrid) -> String {
    let mut out = String::from("x,y,status,rho\n");
    for (i, j, z) in grid.points() {
        let v = grid.at(i, j);
        let rho = match v {
            RotationOutcome::Finite { rho, .. } => rho.to_string(),
            RotationOutcome::PlusInfinity { rho_at_cutoff, .. } => rho_at_cutoff.to_string(),
            RotationOutcome::UndefinedOriginHit { .. } => String::new(),
        };
        writeln!(out, "{},{},{},{}", z.x, z.y, v.status(), rho).unwrap();
    }
    out
}

fn point_json(p: PhasePoint) -> Value {
    json!([p.x, p.y])
}

pub fn curve_json(curve: &PolyCurve) -> Value {
    json!({
        "orientation": curve.orientation(),
        "vertices": curve.vertices().iter().map(|p| point_json(*p)).collect::<Vec<_>>(),
    })
}

pub fn capture_set_json(cs: &CaptureSet) -> Value {
    json!({
        "schema": CAPTURE_SET_SCHEMA,
        "level": cs.level,
        "n_bar": cs.n_bar,
        "level_tol": cs.level_tol,
        "curve": curve_json(&cs.inner_component),
        "vertex_rho": cs.vertex_rho,
        "grid": { "region": cs.region, "nx": cs.nx, "ny": cs.ny },
    })
}

pub fn degree_json(report: &DegreeReport) -> Value {
    json!({
        "schema": DEGREE_SCHEMA,
        "degree": report.degree,
        "min_rotation_on_boundary": report.min_rotation_on_boundary,
        "max_rotation_on_boundary": report.max_rotation_on_boundary,
        "integer_margin": report.integer_margin,
        "boundary_int_free": report.boundary_int_free,
        "samples_used": report.samples_used,
    })
}

/// One orbit with `ORBIT_SAMPLES + 1` evenly spaced `[t, x, y]` samples.
pub fn orbit_json(orbit: &PeriodicOrbit, method: &str, k: Option<u32>) -> Value {
    let samples: Vec<Value> = orbit
        .trajectory
        .resample(ORBIT_SAMPLES)
        .into_iter()
        .map(|(t, z)| json!([t, z[0], z[1]]))
        .collect();
    let mut v = json!({
        "field": orbit.field_label,
        "method": method,
        "z_star": point_json(orbit.z_star),
        "residual": orbit.residual,
        "rho": orbit.rho,
        "jacobian_singular": orbit.jacobian_singular,
        "trajectory": samples,
    });
    if let Some(k) = k {
        v["k"] = json!(k);
    }
    v
}

pub fn orbits_json(orbits: &[Value], not_found: &[Value]) -> Value {
    json!({
        "schema": ORBITS_SCHEMA,
        "orbits": orbits,
        "not_found": not_found,
    })
}

pub fn multiplicity_entries(report: &MultiplicityReport) -> (Vec<Value>, Vec<Value>) {
    let found = report
        .found
        .iter()
        .map(|h| {
            let mut v = orbit_json(&h.orbit, "multiplicity", Some(h.k));
            v["rho_about_base"] = json!(h.rho_about_base);
            v
        })
        .collect();
    let missing = report.not_found.iter().map(|n| json!(n)).collect();
    (found, missing)
}

/// Affine map from the phase plane to SVG pixels with `y` drawn upwards.
struct Canvas {
    xmin: f64,
    ymax: f64,
    scale_x: f64,
    scale_y: f64,
    margin: f64,
}

const PLOT: f64 = 560.0;
const MARGIN: f64 = 50.0;

impl Canvas {
    fn new(grid: &RotationGrid) -> Self {
        let r = grid.region;
        Self {
            xmin: r.xmin,
            ymax: r.ymax,
            scale_x: PLOT / (r.xmax - r.xmin),
            scale_y: PLOT / (r.ymax - r.ymin),
            margin: MARGIN,
        }
    }

    fn px(&self, p: PhasePoint) -> (f64, f64) {
        (
            self.margin + (p.x - self.xmin) * self.scale_x,
            self.margin + (self.ymax - p.y) * self.scale_y,
        )
    }
}

/// Piecewise-linear blue-to-yellow ramp for `u` in `[0, 1]`.
fn ramp(u: f64) -> (u8, u8, u8) {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let u = if u.is_finite() { u.clamp(0.0, 1.0) } else { 0.0 };
    let s = u * (STOPS.len() - 1) as f64;
    let i = (s.floor() as usize).min(STOPS.len() - 2);
    let f = s - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn finite_range(grid: &RotationGrid) -> (f64, f64) {
    let vals = grid.values.iter().filter_map(|v| v.finite());
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn polyline(canvas: &Canvas, pts: impl Iterator<Item = PhasePoint>, closed: bool, style: &str) -> String {
    let coords: Vec<String> = pts
        .map(|p| {
            let (x, y) = canvas.px(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let tag = if closed { "polygon" } else { "polyline" };
    format!("<{tag} points=\"{}\" {style}/>\n", coords.join(" "))
}

/// Half-integer level segments by per-cell linear interpolation.
fn contour_segments(grid: &RotationGrid, level: f64) -> Vec<(PhasePoint, PhasePoint)> {
    let val = |i: usize, j: usize| grid.at(i, j).level_value();
    let mut segs = Vec::new();
    for j in 0..grid.ny - 1 {
        for i in 0..grid.nx - 1 {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let mut hits = Vec::new();
            for k in 0..4 {
                let (a, b) = (corners[k], corners[(k + 1) % 4]);
                let (va, vb) = (val(a.0, a.1), val(b.0, b.1));
                if (va < level) != (vb < level) {
                    let frac = if va.is_finite() && vb.is_finite() { (level - va) / (vb - va) } else { 0.5 };
                    let (pa, pb) = (grid.point(a.0, a.1), grid.point(b.0, b.1));
                    hits.push(pa + (pb - pa) * frac.clamp(0.0, 1.0));
                }
            }
            if hits.len() >= 2 {
                segs.push((hits[0], hits[1]));
            }
            if hits.len() == 4 {
                segs.push((hits[2], hits[3]));
            }
        }
    }
    segs
}

/// Heatmap of the rotation grid with half-integer contours, optionally
/// overlaid with a capture curve and orbit paths.
pub fn render_svg(grid: &RotationGrid, capture: Option<&PolyCurve>, orbits: &[&PeriodicOrbit], title: &str) -> String {
    let canvas = Canvas::new(grid);
    let (lo, hi) = finite_range(grid);
    let span = (hi - lo).max(1e-12);
    let size = PLOT + 2.0 * MARGIN;
    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">",
        w = size + 80.0,
        h = size
    )
    .unwrap();
    writeln!(svg, "<title>{}</title>", escape(title)).unwrap();
    writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();

    let cw = PLOT / grid.nx as f64;
    let ch = PLOT / grid.ny as f64;
    for (i, j, _) in grid.points() {
        let fill = match grid.at(i, j) {
            RotationOutcome::Finite { rho, .. } => {
                let (r, g, b) = ramp((rho - lo) / span);
                format!("rgb({r},{g},{b})")
            }
            RotationOutcome::PlusInfinity { .. } => "rgb(255,255,255)".to_string(),
            RotationOutcome::UndefinedOriginHit { .. } => "rgb(0,0,0)".to_string(),
        };
        let x = MARGIN + i as f64 * cw;
        let y = MARGIN + (grid.ny - 1 - j) as f64 * ch;
        writeln!(
            svg,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>",
            cw + 0.3,
            ch + 0.3
        )
        .unwrap();
    }

    let mut level = (lo - 0.5).ceil() + 0.5;
    while level <= hi {
        for (a, b) in contour_segments(grid, level) {
            let ((x1, y1), (x2, y2)) = (canvas.px(a), canvas.px(b));
            writeln!(
                svg,
                "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"white\" stroke-width=\"0.8\"/>"
            )
            .unwrap();
        }
        level += 1.0;
    }

    if let Some(curve) = capture {
        svg.push_str(&polyline(
            &canvas,
            curve.vertices().iter().copied(),
            true,
            "fill=\"none\" stroke=\"red\" stroke-width=\"2\"",
        ));
    }
    for orbit in orbits {
        let pts = orbit
            .trajectory
            .resample(400)
            .into_iter()
            .map(|(_, z)| PhasePoint::new(z[0], z[1]))
            .filter(|p| grid.region.contains(*p));
        svg.push_str(&polyline(&canvas, pts, false, "fill=\"none\" stroke=\"magenta\" stroke-width=\"1.5\""));
        let (x, y) = canvas.px(orbit.z_star);
        writeln!(svg, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"magenta\"/>").unwrap();
    }

    let (ox, oy) = canvas.px(PhasePoint::ORIGIN);
    let r = grid.region;
    if r.contains(PhasePoint::ORIGIN) {
        writeln!(
            svg,
            "<line x1=\"{MARGIN}\" y1=\"{oy:.2}\" x2=\"{:.2}\" y2=\"{oy:.2}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>",
            MARGIN + PLOT
        )
        .unwrap();
        writeln!(
            svg,
            "<line x1=\"{ox:.2}\" y1=\"{MARGIN}\" x2=\"{ox:.2}\" y2=\"{:.2}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>",
            MARGIN + PLOT
        )
        .unwrap();
    }
    writeln!(
        svg,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{PLOT}\" height=\"{PLOT}\" fill=\"none\" stroke=\"black\"/>"
    )
    .unwrap();
    let label = |svg: &mut String, x: f64, y: f64, anchor: &str, text: String| {
        writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"{anchor}\">{}</text>",
            escape(&text)
        )
        .unwrap();
    };
    label(&mut svg, MARGIN, MARGIN + PLOT + 18.0, "start", format!("{}", r.xmin));
    label(&mut svg, MARGIN + PLOT, MARGIN + PLOT + 18.0, "end", format!("{}", r.xmax));
    label(&mut svg, MARGIN - 6.0, MARGIN + PLOT, "end", format!("{}", r.ymin));
    label(&mut svg, MARGIN - 6.0, MARGIN + 10.0, "end", format!("{}", r.ymax));
    label(&mut svg, MARGIN + PLOT / 2.0, MARGIN + PLOT + 36.0, "middle", "x".into());
    label(&mut svg, MARGIN - 30.0, MARGIN + PLOT / 2.0, "middle", "y = x'".into());
    label(&mut svg, MARGIN + PLOT / 2.0, 20.0, "middle", title.to_string());
    label(
        &mut svg,
        MARGIN + PLOT / 2.0,
        38.0,
        "middle",
        format!("rotation in turns over one period, clockwise positive; contours at half-integers; range [{lo:.3}, {hi:.3}]"),
    );

    // Color bar.
    let bx = MARGIN + PLOT + 20.0;
    for k in 0..50 {
        let u = 1.0 - k as f64 / 49.0;
        let (r, g, b) = ramp(u);
        writeln!(
            svg,
            "<rect x=\"{bx:.2}\" y=\"{:.2}\" width=\"16\" height=\"{:.2}\" fill=\"rgb({r},{g},{b})\"/>",
            MARGIN + k as f64 * PLOT / 50.0,
            PLOT / 50.0 + 0.3
        )
        .unwrap();
    }
    label(&mut svg, bx + 8.0, MARGIN - 6.0, "middle", format!("{hi:.2}"));
    label(&mut svg, bx + 8.0, MARGIN + PLOT + 14.0, "middle", format!("{lo:.2}"));
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_model::PlanarField;
    use crate::integrator::IntegratorOptions;
    use crate::rotation::{rotation_grid, Region};

    #[test]
    fn csv_and_svg_shapes() {
        let grid = rotation_grid(&PlanarField::linear(1.5), Region::square(1.0), 3, 3, &IntegratorOptions::default()).unwrap();
        let csv = grid_csv(&grid);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,y,status,rho");
        assert_eq!(lines.len(), 10);
        assert!(lines[5].starts_with("0,0,origin_hit,"));
        assert!(lines[1].contains(",finite,1.5") || lines[1].contains(",finite,1.4999"));
        let svg = render_svg(&grid, None, &[], "linear <1.5>");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("clockwise positive"));
        assert!(svg.contains("linear &lt;1.5&gt;"));
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), (68, 1, 84));
        assert_eq!(ramp(1.0), (253, 231, 37));
        assert_eq!(ramp(f64::NAN), (68, 1, 84));
    }
}
