//! Capture sets, degree of the displacement map and periodic-orbit search.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{recenter_field, PhasePoint, PlanarField};
use crate::integrator::{flow_dense, poincare_map, FlowOutcome, IntegratorOptions, Trajectory};
use crate::rotation::{rotation_grid, rotation_over_period, Region, RotationGrid, RotationOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    Ccw,
    Cw,
}

/// Closed simple polygon; the closing edge is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyCurve {
    vertices: Vec<PhasePoint>,
    orientation: Orientation,
}

fn signed_area(v: &[PhasePoint]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
}

fn cross(o: PhasePoint, a: PhasePoint, b: PhasePoint) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(p: PhasePoint, a: PhasePoint, b: PhasePoint) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(a: PhasePoint, b: PhasePoint, c: PhasePoint, d: PhasePoint) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

/// Crossing-number test; points on the boundary count as outside.
fn point_in_polygon(v: &[PhasePoint], p: PhasePoint) -> bool {
    let n = v.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn bbox(v: &[PhasePoint]) -> (f64, f64, f64, f64) {
    v.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(x0, x1, y0, y1), p| (x0.min(p.x), x1.max(p.x), y0.min(p.y), y1.max(p.y)),
    )
}

fn diameter(v: &[PhasePoint]) -> f64 {
    let (x0, x1, y0, y1) = bbox(v);
    (x1 - x0).hypot(y1 - y0)
}

fn centroid(v: &[PhasePoint]) -> PhasePoint {
    let n = v.len() as f64;
    let (sx, sy) = v.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    PhasePoint::new(sx / n, sy / n)
}

impl PolyCurve {
    /// Validates at least 3 vertices, finiteness, non-zero area and simplicity.
    pub fn new(vertices: Vec<PhasePoint>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidCurve(format!("{} vertices, need at least 3", vertices.len())));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidCurve("non-finite vertex".into()));
        }
        let area = signed_area(&vertices);
        if area == 0.0 {
            return Err(Error::InvalidCurve("zero enclosed area".into()));
        }
        let curve = Self {
            orientation: if area > 0.0 { Orientation::Ccw } else { Orientation::Cw },
            vertices,
        };
        if let Some((i, j)) = curve.first_self_intersection() {
            return Err(Error::InvalidCurve(format!("edges {i} and {j} intersect")));
        }
        Ok(curve)
    }

    /// Regular `n`-gon inscribed in a circle, counter-clockwise.
    pub fn circle(center: PhasePoint, radius: f64, n: usize) -> Result<Self> {
        let verts = (0..n)
            .map(|k| {
                let a = TAU * k as f64 / n as f64;
                PhasePoint::new(center.x + radius * a.cos(), center.y + radius * a.sin())
            })
            .collect();
        Self::new(verts)
    }

    pub fn vertices(&self) -> &[PhasePoint] {
        &self.vertices
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn into_ccw(mut self) -> Self {
        if self.orientation == Orientation::Cw {
            self.vertices.reverse();
            self.orientation = Orientation::Ccw;
        }
        self
    }

    pub fn contains(&self, p: PhasePoint) -> bool {
        point_in_polygon(&self.vertices, p)
    }

    pub fn diameter(&self) -> f64 {
        diameter(&self.vertices)
    }

    /// First pair of non-adjacent edges that touch, by `O(n²)` sweep.
    fn first_self_intersection(&self) -> Option<(usize, usize)> {
        let v = &self.vertices;
        let n = v.len();
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            for j in i + 1..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_intersect(a, b, v[j], v[(j + 1) % n]) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Distance from the origin to the curve along the ray at angle `phi`
    /// (the farthest crossing), if the ray meets the curve.
    pub fn ray_distance(&self, phi: f64) -> Option<f64> {
        let d = PhasePoint::new(phi.cos(), phi.sin());
        let n = self.vertices.len();
        let mut best: Option<f64> = None;
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            let e = b - a;
            let denom = d.x * e.y - d.y * e.x;
            if denom == 0.0 {
                continue;
            }
            let s = (a.x * e.y - a.y * e.x) / denom;
            let u = (a.x * d.y - a.y * d.x) / denom;
            if s > 0.0 && (0.0..=1.0).contains(&u) {
                best = Some(best.map_or(s, |b: f64| b.max(s)));
            }
        }
        best
    }
}

const MAX_INCREMENT: f64 = PI * (1.0 - 1e-9);

/// Winding number of a closed sequence of planar vectors around zero.
pub fn winding_number(vectors: &[PhasePoint]) -> Result<i64> {
    if vectors.is_empty() {
        return Err(Error::InvalidArgument("winding of an empty loop".into()));
    }
    if let Some(index) = vectors.iter().position(|v| v.x == 0.0 && v.y == 0.0) {
        return Err(Error::ZeroVector { index });
    }
    let n = vectors.len();
    let mut total = 0.0;
    for i in 0..n {
        let (a, b) = (vectors[i], vectors[(i + 1) % n]);
        let increment = (a.x * b.y - a.y * b.x).atan2(a.x * b.x + a.y * b.y);
        if increment.abs() >= MAX_INCREMENT {
            return Err(Error::RefineNeeded { index: i, increment });
        }
        total += increment;
    }
    Ok((total / TAU).round() as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub degree: i64,
    pub min_rotation_on_boundary: f64,
    pub max_rotation_on_boundary: f64,
    /// Distance from the boundary rotation range to the nearest integer.
    pub integer_margin: f64,
    pub boundary_int_free: bool,
    pub samples_used: usize,
}

/// Smallest integer margin accepted as certifying an integer-free boundary.
pub const INT_FREE_MARGIN: f64 = 1e-6;

const MAX_BOUNDARY_SAMPLES: usize = 1 << 16;
const REFINE_ANGLE: f64 = PI / 4.0;

#[derive(Debug, Clone, Copy)]
struct Sample {
    z: PhasePoint,
    v: PhasePoint,
    rho: Option<f64>,
}

fn displacement(field: &PlanarField, z: PhasePoint, opts: &IntegratorOptions) -> Result<Sample> {
    match rotation_over_period(field, z, opts)? {
        RotationOutcome::Finite { rho, terminal } => Ok(Sample {
            z,
            v: terminal - z,
            rho: Some(rho),
        }),
        RotationOutcome::PlusInfinity { t_max_estimate, .. } => Err(Error::BoundaryEscape {
            x: z.x,
            y: z.y,
            t_escape: t_max_estimate,
        }),
        RotationOutcome::UndefinedOriginHit { .. } => match poincare_map(field, z, opts)? {
            FlowOutcome::Point(p) => Ok(Sample { z, v: p - z, rho: None }),
            FlowOutcome::Escaped { t_escape, .. } => Err(Error::BoundaryEscape {
                x: z.x,
                y: z.y,
                t_escape,
            }),
        },
    }
}

fn zero_tol(z: PhasePoint) -> f64 {
    1e-7 * (1.0 + z.norm())
}

enum Boundary {
    Samples(Vec<Sample>),
    /// A sample whose displacement vanishes to tolerance.
    Zero(PhasePoint),
}

fn angle_between(a: PhasePoint, b: PhasePoint) -> f64 {
    (a.x * b.y - a.y * b.x).atan2(a.x * b.x + a.y * b.y)
}

/// Samples `v(z) = φ(T, z) - z` along a closed polygon, bisecting edges until
/// consecutive vectors differ by at most `π/4`.
fn sample_boundary(field: &PlanarField, verts: &[PhasePoint], opts: &IntegratorOptions) -> Result<Boundary> {
    let n = verts.len();
    let max_len = diameter(verts) / 32.0;
    let mut points = Vec::new();
    for i in 0..n {
        let (a, b) = (verts[i], verts[(i + 1) % n]);
        let pieces = ((a.distance(&b) / max_len).ceil() as usize).clamp(1, 64);
        for k in 0..pieces {
            points.push(a + (b - a) * (k as f64 / pieces as f64));
        }
    }
    let mut samples = points
        .par_iter()
        .map(|&z| displacement(field, z, opts))
        .collect::<Result<Vec<_>>>()?;

    loop {
        if let Some(s) = samples.iter().find(|s| s.v.norm() < zero_tol(s.z)) {
            return Ok(Boundary::Zero(s.z));
        }
        let m = samples.len();
        let split: Vec<usize> = (0..m)
            .filter(|&i| {
                let (a, b) = (&samples[i], &samples[(i + 1) % m]);
                let close = a.z.distance(&b.z) <= 1e-12 * (1.0 + a.z.norm());
                angle_between(a.v, b.v).abs() > REFINE_ANGLE && !close
            })
            .collect();
        if split.is_empty() {
            return Ok(Boundary::Samples(samples));
        }
        if m + split.len() > MAX_BOUNDARY_SAMPLES {
            return Ok(Boundary::Samples(samples));
        }
        let mids = split
            .par_iter()
            .map(|&i| {
                let (a, b) = (samples[i].z, samples[(i + 1) % m].z);
                displacement(field, (a + b) * 0.5, opts)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut merged = Vec::with_capacity(m + mids.len());
        let mut next = split.iter().zip(mids).peekable();
        for (i, s) in samples.into_iter().enumerate() {
            merged.push(s);
            if next.peek().is_some_and(|(&k, _)| k == i) {
                merged.push(next.next().unwrap().1);
            }
        }
        samples = merged;
    }
}

fn integer_margin(lo: f64, hi: f64) -> f64 {
    if lo.floor() != hi.floor() || lo == lo.floor() {
        0.0
    } else {
        (lo - lo.floor()).min(hi.ceil() - hi)
    }
}

/// Degree of `φ(T, ·) - I` on the region bounded by `curve`, via winding.
pub fn degree_fixed_point(field: &PlanarField, curve: &PolyCurve, opts: &IntegratorOptions) -> Result<DegreeReport> {
    let sign = match curve.orientation() {
        Orientation::Ccw => 1,
        Orientation::Cw => -1,
    };
    let samples = match sample_boundary(field, curve.vertices(), opts)? {
        Boundary::Samples(s) => s,
        Boundary::Zero(z) => {
            let index = curve
                .vertices()
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.distance(&z).total_cmp(&b.1.distance(&z)))
                .map_or(0, |(i, _)| i);
            return Err(Error::ZeroVector { index });
        }
    };
    let vectors: Vec<PhasePoint> = samples.iter().map(|s| s.v).collect();
    let degree = sign * winding_number(&vectors)?;

    let rhos: Vec<f64> = samples.iter().filter_map(|s| s.rho).collect();
    let all_defined = rhos.len() == samples.len();
    let lo = rhos.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rhos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let margin = if all_defined { integer_margin(lo, hi) } else { 0.0 };
    let boundary_int_free = all_defined && margin >= INT_FREE_MARGIN;
    if boundary_int_free && degree != 1 {
        return Err(Error::InternalInconsistency { degree });
    }
    Ok(DegreeReport {
        degree,
        min_rotation_on_boundary: lo,
        max_rotation_on_boundary: hi,
        integer_margin: margin,
        boundary_int_free,
        samples_used: samples.len(),
    })
}

/// A fixed point of the period map with its path over one period.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub z_star: PhasePoint,
    /// `|φ(T, z*) - z*|`.
    pub residual: f64,
    pub rho: f64,
    pub trajectory: Trajectory,
    pub field_label: String,
    /// Set when Newton needed the pseudo-inverse of a singular Jacobian.
    pub jacobian_singular: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iters: usize,
    pub max_halvings: usize,
    /// Success when the residual is below `tol * (1 + |z|)`.
    pub tol: f64,
    /// Finite-difference step relative to `1 + |z|`.
    pub fd_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            max_halvings: 30,
            tol: 1e-9,
            fd_step: 1e-6,
        }
    }
}

fn residual_vec(field: &PlanarField, z: PhasePoint, opts: &IntegratorOptions) -> Result<Option<Vector2<f64>>> {
    Ok(match poincare_map(field, z, opts)? {
        FlowOutcome::Point(p) => Some(Vector2::new(p.x - z.x, p.y - z.y)),
        FlowOutcome::Escaped { .. } => None,
    })
}

/// Attaches the path and rotation to a converged fixed point. The reported
/// residual is the larger of the working-tolerance value and the one measured
/// at 10x tighter tolerance, so it is never below the integration error.
fn finish_orbit(
    field: &PlanarField,
    z: PhasePoint,
    residual: f64,
    jacobian_singular: bool,
    iterations: usize,
    opts: &IntegratorOptions,
) -> Result<PeriodicOrbit> {
    let tight = residual_vec(field, z, &opts.tightened(10.0))?.map_or(f64::INFINITY, |v| v.norm());
    let residual = residual.max(tight);
    let trajectory = flow_dense(field, 0.0, field.period(), z, opts)?;
    let rho = orbit_rotation(field, z, opts)?;
    Ok(PeriodicOrbit {
        z_star: z,
        residual,
        rho,
        trajectory,
        field_label: field.label().to_string(),
        jacobian_singular,
        iterations,
    })
}

/// Rotation of a periodic orbit. An orbit through (or at) the origin has no
/// rotation of its own; the value of a neighbouring start is used instead.
fn orbit_rotation(field: &PlanarField, z: PhasePoint, opts: &IntegratorOptions) -> Result<f64> {
    let mut probe = z;
    for k in 0..4 {
        match rotation_over_period(field, probe, opts)? {
            RotationOutcome::Finite { rho, .. } => return Ok(rho),
            RotationOutcome::PlusInfinity { rho_at_cutoff, .. } => return Ok(rho_at_cutoff),
            RotationOutcome::UndefinedOriginHit { .. } => {
                let d = 1e-6 * 10f64.powi(k) * (1.0 + z.norm());
                probe = z + PhasePoint::new(d, 0.5 * d);
            }
        }
    }
    Ok(f64::NAN)
}

/// Newton's method on `F(z) = φ(T, z) - z` with default settings.
pub fn find_periodic(field: &PlanarField, seed: PhasePoint, opts: &IntegratorOptions) -> Result<PeriodicOrbit> {
    find_periodic_with(field, seed, opts, &NewtonOptions::default())
}

pub fn find_periodic_with(
    field: &PlanarField,
    seed: PhasePoint,
    opts: &IntegratorOptions,
    newton: &NewtonOptions,
) -> Result<PeriodicOrbit> {
    if !seed.is_finite() {
        return Err(Error::InvalidArgument("non-finite seed".into()));
    }
    let mut z = seed;
    let mut f = residual_vec(field, z, opts)?.ok_or(Error::NoConvergence {
        iterations: 0,
        residual: f64::INFINITY,
    })?;
    let mut singular = false;
    for iter in 0..=newton.max_iters {
        let r = f.norm();
        if r < newton.tol * (1.0 + z.norm()) {
            return finish_orbit(field, z, r, singular, iter, opts);
        }
        if iter == newton.max_iters {
            break;
        }
        let h = newton.fd_step * (1.0 + z.norm());
        let mut jac = Matrix2::zeros();
        for (col, e) in [PhasePoint::new(h, 0.0), PhasePoint::new(0.0, h)].into_iter().enumerate() {
            let plus = residual_vec(field, z + e, opts)?;
            let minus = residual_vec(field, z - e, opts)?;
            let (Some(p), Some(m)) = (plus, minus) else {
                return Err(Error::NoConvergence { iterations: iter, residual: r });
            };
            jac.set_column(col, &((p - m) / (2.0 * h)));
        }
        let scale = jac.abs().max().max(1e-300);
        let step = match jac.try_inverse().filter(|_| jac.determinant().abs() > 1e-12 * scale * scale) {
            Some(inv) => -(inv * f),
            None => {
                singular = true;
                let svd = jac.svd(true, true);
                let pinv = svd
                    .pseudo_inverse(1e-8 * svd.singular_values.max())
                    .map_err(|_| Error::JacobianSingular { x: z.x, y: z.y })?;
                -(pinv * f)
            }
        };
        if !step.iter().all(|s| s.is_finite()) || step.norm() == 0.0 {
            return Err(Error::JacobianSingular { x: z.x, y: z.y });
        }
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=newton.max_halvings {
            let trial = z + PhasePoint::new(step[0], step[1]) * lambda;
            if let Some(ft) = residual_vec(field, trial, opts)? {
                if ft.norm() < r {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((zn, fnew)) => {
                z = zn;
                f = fnew;
            }
            None if singular => return Err(Error::JacobianSingular { x: z.x, y: z.y }),
            None => return Err(Error::NoConvergence { iterations: iter, residual: r }),
        }
    }
    Err(Error::NoConvergence {
        iterations: newton.max_iters,
        residual: f.norm(),
    })
}

/// Default diameter below which the bisection hands over to Newton.
pub const NEWTON_BASIN: f64 = 1e-2;
const MIN_PIECE: f64 = 1e-9;
const MAX_SPLIT_DEPTH: usize = 200;

/// Keeps the part of `poly` with `sign * (coord - c) <= 0`.
fn clip_half_plane(poly: &[PhasePoint], axis_x: bool, c: f64, sign: f64) -> Vec<PhasePoint> {
    let coord = |p: &PhasePoint| if axis_x { p.x } else { p.y };
    let inside = |p: &PhasePoint| sign * (coord(p) - c) <= 0.0;
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let (cur, nxt) = (poly[i], poly[(i + 1) % n]);
        let (ci, ni) = (inside(&cur), inside(&nxt));
        if ci {
            out.push(cur);
        }
        if ci != ni {
            let s = (c - coord(&cur)) / (coord(&nxt) - coord(&cur));
            let mut p = cur + (nxt - cur) * s;
            if axis_x {
                p.x = c;
            } else {
                p.y = c;
            }
            out.push(p);
        }
    }
    out.dedup_by(|a, b| a.distance(b) == 0.0);
    if out.len() > 1 && out[0].distance(out.last().unwrap()) == 0.0 {
        out.pop();
    }
    out
}

enum PieceWinding {
    Known(i64),
    Zero(PhasePoint),
    Unknown(Error),
}

fn piece_winding(field: &PlanarField, verts: &[PhasePoint], opts: &IntegratorOptions) -> Result<PieceWinding> {
    if verts.len() < 3 || signed_area(verts).abs() == 0.0 {
        return Ok(PieceWinding::Known(0));
    }
    let samples = match sample_boundary(field, verts, opts)? {
        Boundary::Samples(s) => s,
        Boundary::Zero(z) => return Ok(PieceWinding::Zero(z)),
    };
    let vectors: Vec<PhasePoint> = samples.iter().map(|s| s.v).collect();
    match winding_number(&vectors) {
        Ok(w) => Ok(PieceWinding::Known(w)),
        Err(e @ (Error::RefineNeeded { .. } | Error::ZeroVector { .. })) => Ok(PieceWinding::Unknown(e)),
        Err(e) => Err(e),
    }
}

/// Distance from the origin to a polygon, zero when the origin is inside.
fn origin_distance(v: &[PhasePoint]) -> f64 {
    if point_in_polygon(v, PhasePoint::ORIGIN) {
        return 0.0;
    }
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            let e = b - a;
            let len2 = e.x * e.x + e.y * e.y;
            let s = if len2 > 0.0 { (-(a.x * e.x + a.y * e.y) / len2).clamp(0.0, 1.0) } else { 0.0 };
            (a + e * s).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Fixed point inside a curve of non-zero degree, by bisecting the enclosed
/// region and keeping a piece of non-zero winding.
pub fn find_periodic_in(field: &PlanarField, curve: &PolyCurve, opts: &IntegratorOptions) -> Result<PeriodicOrbit> {
    find_periodic_in_with(field, curve, opts, NEWTON_BASIN)
}

pub fn find_periodic_in_with(
    field: &PlanarField,
    curve: &PolyCurve,
    opts: &IntegratorOptions,
    newton_basin: f64,
) -> Result<PeriodicOrbit> {
    let verts = curve.clone().into_ccw().vertices;
    match piece_winding(field, &verts, opts)? {
        PieceWinding::Known(0) => Err(Error::PreconditionViolated(
            "the curve has degree 0; no fixed point is guaranteed inside".into(),
        )),
        PieceWinding::Known(_) => bisect(field, verts, opts, newton_basin, 0),
        PieceWinding::Zero(z) => find_periodic(field, z, opts),
        PieceWinding::Unknown(e) => Err(e),
    }
}

fn bisect(
    field: &PlanarField,
    verts: Vec<PhasePoint>,
    opts: &IntegratorOptions,
    basin: f64,
    depth: usize,
) -> Result<PeriodicOrbit> {
    let diam = diameter(&verts);
    if diam < basin {
        if let Ok(orbit) = find_periodic(field, centroid(&verts), opts) {
            return Ok(orbit);
        }
    }
    if diam < MIN_PIECE || depth >= MAX_SPLIT_DEPTH {
        return Err(Error::SplitFailure {
            depth,
            detail: format!("piece of diameter {diam:e} without a Newton solution"),
        });
    }
    let (x0, x1, y0, y1) = bbox(&verts);
    let long_x = x1 - x0 >= y1 - y0;
    let chord = |axis_x: bool, frac: f64| if axis_x { x0 + frac * (x1 - x0) } else { y0 + frac * (y1 - y0) };

    // Candidate chords in a fixed order. The first one whose piece nearest
    // the origin has non-zero winding is taken, so the search homes in on
    // fixed points close to the origin; otherwise the middle chord is used.
    let mut fallback = None;
    let mut chosen = None;
    for (axis_x, frac) in [
        (long_x, 0.5),
        (long_x, 0.25),
        (long_x, 0.75),
        (!long_x, 0.5),
        (!long_x, 0.25),
        (!long_x, 0.75),
    ] {
        let c = chord(axis_x, frac);
        let mut pieces: Vec<Vec<PhasePoint>> =
            [-1.0, 1.0].iter().map(|&s| clip_half_plane(&verts, axis_x, c, s)).collect();
        pieces.sort_by(|a, b| origin_distance(a).total_cmp(&origin_distance(b)));
        let windings = pieces
            .par_iter()
            .map(|p| piece_winding(field, p, opts))
            .collect::<Result<Vec<_>>>()?;
        let near_ok = !matches!(windings[0], PieceWinding::Known(0) | PieceWinding::Unknown(_));
        let candidate = (pieces, windings);
        if near_ok {
            chosen = Some(candidate);
            break;
        }
        if fallback.is_none() {
            fallback = Some(candidate);
        }
    }
    let (pieces, windings) = chosen.or(fallback).expect("at least one chord is tried");

    let mut unknown = Vec::new();
    let mut last_err = None;
    for (piece, w) in pieces.into_iter().zip(windings) {
        match w {
            PieceWinding::Zero(z) => match find_periodic(field, z, opts) {
                Ok(o) => return Ok(o),
                Err(e) => last_err = Some(e),
            },
            PieceWinding::Known(0) => {}
            PieceWinding::Known(_) => match bisect(field, piece, opts, basin, depth + 1) {
                Ok(o) => return Ok(o),
                Err(e) => last_err = Some(e),
            },
            PieceWinding::Unknown(e) => unknown.push(e),
        }
    }
    if unknown.len() == 2 {
        return Err(Error::SplitFailure {
            depth,
            detail: format!("both pieces are unresolved: {}", unknown[0]),
        });
    }
    Err(last_err.unwrap_or_else(|| Error::SplitFailure {
        depth,
        detail: "no piece carries non-zero winding".into(),
    }))
}

/// Cells whose trajectory enters the origin disk during `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSetMask {
    pub region: Region,
    pub nx: usize,
    pub ny: usize,
    pub mask: Vec<bool>,
    /// Row-major indices of cells whose run escaped instead.
    pub escaped: Vec<usize>,
}

impl NullSetMask {
    fn from_grid(grid: &RotationGrid) -> Self {
        Self {
            region: grid.region,
            nx: grid.nx,
            ny: grid.ny,
            mask: grid
                .values
                .iter()
                .map(|v| matches!(v, RotationOutcome::UndefinedOriginHit { .. }))
                .collect(),
            escaped: grid
                .values
                .iter()
                .enumerate()
                .filter(|(_, v)| matches!(v, RotationOutcome::PlusInfinity { .. }))
                .map(|(i, _)| i)
                .collect(),
        }
    }

    /// Marks every cell within `radius` cells (Chebyshev distance) of a marked one.
    pub fn dilate(&self, radius: usize) -> Vec<bool> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                if !self.mask[j * nx + i] {
                    continue;
                }
                for jj in j.saturating_sub(radius)..=(j + radius).min(ny - 1) {
                    for ii in i.saturating_sub(radius)..=(i + radius).min(nx - 1) {
                        out[jj * nx + ii] = true;
                    }
                }
            }
        }
        out
    }
}

pub fn approximate_null_set(
    field: &PlanarField,
    region: Region,
    nx: usize,
    ny: usize,
    eps_origin: f64,
    opts: &IntegratorOptions,
) -> Result<NullSetMask> {
    region.validate()?;
    if !region.contains(PhasePoint::ORIGIN) {
        return Err(Error::InvalidArgument("the region must contain the origin".into()));
    }
    let period = field.period();
    let values = (0..nx * ny)
        .into_par_iter()
        .map(|k| {
            let z = region.cell_center(nx, ny, k % nx, k / nx);
            match crate::rotation::rotation(field, 0.0, period, z, opts, eps_origin) {
                Err(Error::OriginStart { .. }) => Ok(RotationOutcome::UndefinedOriginHit { t_hit: 0.0 }),
                other => other,
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NullSetMask::from_grid(&RotationGrid { region, nx, ny, values }))
}

/// Closed approximation of the boundary of the capture set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureSet {
    pub level: f64,
    pub n_bar: u32,
    pub level_tol: f64,
    pub inner_component: PolyCurve,
    /// Rotation at each vertex of `inner_component`.
    pub vertex_rho: Vec<f64>,
    pub region: Region,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureOptions {
    pub level_tol: f64,
    /// Dilation of the origin-hit mask, in cells.
    pub null_dilation: usize,
    /// Grid values within this distance of the level count as ambiguous.
    pub flat_tol: f64,
}

impl Default for CaptureOptions {
    fn default() -> Self {
        Self {
            level_tol: 1e-3,
            null_dilation: 2,
            flat_tol: 1e-6,
        }
    }
}

/// `n̄ = ⌊max ρ⌋ + 1` over `samples` points on the circle `|z| = radius`,
/// so that the rotation there stays strictly below `n̄`.
pub fn default_n_bar(field: &PlanarField, radius: f64, samples: usize, opts: &IntegratorOptions) -> Result<u32> {
    let rhos = (0..samples.max(3))
        .into_par_iter()
        .map(|k| {
            let a = TAU * k as f64 / samples.max(3) as f64;
            rotation_over_period(field, PhasePoint::new(radius * a.cos(), radius * a.sin()), opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let max = rhos.iter().map(|r| r.level_value()).filter(|v| v.is_finite()).fold(0.0, f64::max);
    Ok(max.floor().max(0.0) as u32 + 1)
}

/// Edge of the cell-center lattice: `(i, j, horizontal)`.
type EdgeId = (usize, usize, bool);

pub fn build_capture_set(
    field: &PlanarField,
    n_bar: u32,
    region: Region,
    nx: usize,
    ny: usize,
    opts: &IntegratorOptions,
) -> Result<CaptureSet> {
    let grid = rotation_grid(field, region, nx, ny, opts)?;
    build_capture_set_from_grid(field, n_bar, &grid, opts, &CaptureOptions::default())
}

pub fn build_capture_set_from_grid(
    field: &PlanarField,
    n_bar: u32,
    grid: &RotationGrid,
    opts: &IntegratorOptions,
    copts: &CaptureOptions,
) -> Result<CaptureSet> {
    let (nx, ny) = (grid.nx, grid.ny);
    let level = n_bar as f64 + 0.5;
    let null = NullSetMask::from_grid(grid).dilate(copts.null_dilation);
    let s: Vec<f64> = grid
        .values
        .iter()
        .zip(&null)
        .map(|(v, &masked)| if masked { f64::NEG_INFINITY } else { v.level_value() - level })
        .collect();
    let val = |i: usize, j: usize| s[j * nx + i];
    let inside = |i: usize, j: usize| val(i, j) < 0.0;

    // Saddle cells: decide with the rotation at the cell center.
    let saddles: Vec<(usize, usize)> = (0..ny - 1)
        .flat_map(|j| (0..nx - 1).map(move |i| (i, j)))
        .filter(|&(i, j)| {
            let (a, b, c, d) = (inside(i, j), inside(i + 1, j), inside(i + 1, j + 1), inside(i, j + 1));
            a == c && b == d && a != b
        })
        .collect();
    let saddle_inside: HashMap<(usize, usize), bool> = saddles
        .par_iter()
        .map(|&(i, j)| {
            let center = (grid.point(i, j) + grid.point(i + 1, j + 1)) * 0.5;
            rotation_over_period(field, center, opts).map(|o| ((i, j), o.level_value() < level))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    // Segments between edge crossings, per cell.
    let mut segments: Vec<(EdgeId, EdgeId)> = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let bottom = (i, j, true);
            let right = (i + 1, j, false);
            let top = (i, j + 1, true);
            let left = (i, j, false);
            let code = (inside(i, j) as u8)
                | (inside(i + 1, j) as u8) << 1
                | (inside(i + 1, j + 1) as u8) << 2
                | (inside(i, j + 1) as u8) << 3;
            match code {
                0 | 15 => {}
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 | 10 => {
                    // Corners a, c share a state; b, d the other.
                    let center_inside = saddle_inside[&(i, j)];
                    let ac_inside = code == 5;
                    if center_inside == ac_inside {
                        // a and c are joined through the center: cut off b and d.
                        segments.push((bottom, right));
                        segments.push((top, left));
                    } else {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    if segments.is_empty() {
        return Err(Error::LevelNotEnclosing);
    }

    let mut by_edge: HashMap<EdgeId, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(k);
        by_edge.entry(*b).or_default().push(k);
    }
    let edge_point = |e: &EdgeId| -> PhasePoint {
        let (i, j, horiz) = *e;
        let (i2, j2) = if horiz { (i + 1, j) } else { (i, j + 1) };
        let (p, q) = (grid.point(i, j), grid.point(i2, j2));
        let (sa, sb) = (val(i, j), val(i2, j2));
        let frac = if sa.is_finite() && sb.is_finite() { sa / (sa - sb) } else { 0.5 };
        p + (q - p) * frac.clamp(0.0, 1.0)
    };

    // Link segments into closed loops.
    let mut used = vec![false; segments.len()];
    let mut loops: Vec<Vec<EdgeId>> = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (first, mut cur) = segments[start];
        let mut chain = vec![first];
        let closed = loop {
            chain.push(cur);
            if cur == first {
                chain.pop();
                break true;
            }
            let next = by_edge[&cur].iter().copied().find(|&k| !used[k]);
            let Some(k) = next else { break false };
            used[k] = true;
            let (a, b) = segments[k];
            cur = if a == cur { b } else { a };
        };
        if closed && chain.len() >= 3 {
            loops.push(chain);
        }
    }

    let enclosing = loops
        .into_iter()
        .map(|edges| {
            let pts: Vec<PhasePoint> = edges.iter().map(edge_point).collect();
            (edges, pts)
        })
        .filter(|(_, pts)| point_in_polygon(pts, PhasePoint::ORIGIN))
        .min_by(|a, b| signed_area(&a.1).abs().total_cmp(&signed_area(&b.1).abs()));
    let Some((edges, _)) = enclosing else {
        return Err(Error::LevelNotEnclosing);
    };

    for &(i, j, horiz) in &edges {
        let (i2, j2) = if horiz { (i + 1, j) } else { (i, j + 1) };
        for v in [val(i, j), val(i2, j2)] {
            if v.abs() < copts.flat_tol {
                return Err(Error::AmbiguousTopology(format!(
                    "rotation equals the level {level} to within {:e} near the contour",
                    copts.flat_tol
                )));
            }
        }
    }

    let refined = edges
        .par_iter()
        .map(|&(i, j, horiz)| {
            let (i2, j2) = if horiz { (i + 1, j) } else { (i, j + 1) };
            let (p, q) = (grid.point(i, j), grid.point(i2, j2));
            let p_inside = val(i, j) < 0.0;
            refine_on_edge(field, p, q, p_inside, level, copts.level_tol, opts)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut verts: Vec<(PhasePoint, f64)> = Vec::with_capacity(refined.len());
    for v in refined {
        if verts.last().is_none_or(|l: &(PhasePoint, f64)| l.0.distance(&v.0) > 1e-12) {
            verts.push(v);
        }
    }
    if verts.len() > 1 && verts[0].0.distance(&verts[verts.len() - 1].0) <= 1e-12 {
        verts.pop();
    }
    let curve = PolyCurve::new(verts.iter().map(|v| v.0).collect())
        .map_err(|e| Error::AmbiguousTopology(format!("refined contour is not a simple curve: {e}")))?;
    let reversed = curve.orientation() == Orientation::Cw;
    let curve = curve.into_ccw();
    let mut vertex_rho: Vec<f64> = verts.iter().map(|v| v.1).collect();
    if reversed {
        vertex_rho.reverse();
    }
    if !curve.contains(PhasePoint::ORIGIN) {
        return Err(Error::LevelNotEnclosing);
    }
    Ok(CaptureSet {
        level,
        n_bar,
        level_tol: copts.level_tol,
        inner_component: curve,
        vertex_rho,
        region: grid.region,
        nx,
        ny,
    })
}

/// Bisection for `ρ = level` on the segment `[p, q]`, with `p` on the side
/// given by `p_inside` (below the level).
fn refine_on_edge(
    field: &PlanarField,
    p: PhasePoint,
    q: PhasePoint,
    p_inside: bool,
    level: f64,
    tol: f64,
    opts: &IntegratorOptions,
) -> Result<(PhasePoint, f64)> {
    let (mut lo, mut hi) = if p_inside { (p, q) } else { (q, p) };
    let mut best: Option<(PhasePoint, f64)> = None;
    for _ in 0..60 {
        let mid = (lo + hi) * 0.5;
        let value = rotation_over_period(field, mid, opts)?.level_value();
        if value.is_finite() && (value - level).abs() < tol {
            return Ok((mid, value));
        }
        if value.is_finite() && best.is_none_or(|b| (value - level).abs() < (b.1 - level).abs()) {
            best = Some((mid, value));
        }
        if value < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::AmbiguousTopology(format!(
        "no point with rotation {level} on the segment from ({}, {}) to ({}, {}); closest {:?}",
        p.x, p.y, q.x, q.y, best
    )))
}

/// Fixed points found at a prescribed rotation about a base orbit.
#[derive(Debug, Clone)]
pub struct MultiplicityHit {
    pub k: u32,
    pub orbit: PeriodicOrbit,
    /// Rotation of the orbit around the base orbit.
    pub rho_about_base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotFound {
    pub k: u32,
    /// Largest radius scanned around the base orbit.
    pub radius_reached: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct MultiplicityReport {
    pub found: Vec<MultiplicityHit>,
    pub not_found: Vec<NotFound>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnulusHint {
    /// Largest radius scanned around the base orbit.
    pub r_max: f64,
    pub rays: usize,
    pub radial_steps: usize,
    /// Accepted distance of the found rotation from `k`.
    pub rho_tol: f64,
}

impl Default for AnnulusHint {
    fn default() -> Self {
        Self {
            r_max: 6.0,
            rays: 24,
            radial_steps: 48,
            rho_tol: 0.05,
        }
    }
}

fn rho_or_inf(field: &PlanarField, z: PhasePoint, opts: &IntegratorOptions) -> Result<f64> {
    Ok(rotation_over_period(field, z, opts)?.level_value())
}

/// First crossing of `ρ = k` going outwards along the ray at angle `phi`.
fn shell_point(
    field: &PlanarField,
    phi: f64,
    k: f64,
    hint: &AnnulusHint,
    opts: &IntegratorOptions,
) -> Result<Option<PhasePoint>> {
    let dir = PhasePoint::new(phi.cos(), phi.sin());
    let dr = hint.r_max / hint.radial_steps as f64;
    let mut prev_r = None;
    for i in 1..=hint.radial_steps {
        let r = dr * i as f64;
        let rho = rho_or_inf(field, dir * r, opts)?;
        if rho.is_nan() || rho == f64::NEG_INFINITY {
            prev_r = None;
            continue;
        }
        if rho >= k {
            let Some(mut lo) = prev_r else {
                return Ok(None);
            };
            let mut hi = r;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let v = rho_or_inf(field, dir * mid, opts)?;
                if v < k {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-10 * (1.0 + hi) {
                    break;
                }
            }
            return Ok(Some(dir * (0.5 * (lo + hi))));
        }
        prev_r = Some(r);
    }
    Ok(None)
}

/// Radial component of the period-map displacement at a shell point.
fn radial_displacement(field: &PlanarField, z: PhasePoint, opts: &IntegratorOptions) -> Result<Option<f64>> {
    Ok(match poincare_map(field, z, opts)? {
        FlowOutcome::Point(p) => {
            let d = p - z;
            Some((d.x * z.x + d.y * z.y) / z.norm())
        }
        FlowOutcome::Escaped { .. } => None,
    })
}

/// Periodic solutions whose rotation around `base` is close to each `k`.
pub fn multiplicity_search(
    field: &PlanarField,
    base: &PeriodicOrbit,
    k_list: &[u32],
    hint: &AnnulusHint,
    opts: &IntegratorOptions,
) -> Result<MultiplicityReport> {
    let rel = recenter_field(field, base)?;
    let per_k = k_list
        .par_iter()
        .map(|&k| search_k(field, &rel, base, k, hint, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut report = MultiplicityReport {
        found: Vec::new(),
        not_found: Vec::new(),
    };
    for (k, hits) in k_list.iter().zip(per_k) {
        match hits {
            Ok(hits) => {
                for h in hits {
                    if report.found.iter().all(|o| o.orbit.z_star.distance(&h.orbit.z_star) >= 1e-6) {
                        report.found.push(h);
                    }
                }
            }
            Err(reason) => report.not_found.push(NotFound {
                k: *k,
                radius_reached: hint.r_max,
                reason,
            }),
        }
    }
    Ok(report)
}

fn search_k(
    field: &PlanarField,
    rel: &PlanarField,
    base: &PeriodicOrbit,
    k: u32,
    hint: &AnnulusHint,
    opts: &IntegratorOptions,
) -> Result<std::result::Result<Vec<MultiplicityHit>, String>> {
    let kf = k as f64;
    let rays = hint.rays.max(3);
    let mut shell = Vec::new();
    for j in 0..rays {
        let phi = TAU * j as f64 / rays as f64;
        if let Some(p) = shell_point(rel, phi, kf, hint, opts)? {
            if let Some(d) = radial_displacement(rel, p, opts)? {
                shell.push((p, d));
            }
        }
    }
    if shell.is_empty() {
        return Ok(Err(format!("no point with rotation {k} within radius {}", hint.r_max)));
    }

    // Seeds where the radial displacement changes sign along the shell, then
    // the smallest displacement as a fallback.
    let m = shell.len();
    let mut seeds: Vec<PhasePoint> = (0..m)
        .filter(|&i| shell[i].1.signum() != shell[(i + 1) % m].1.signum())
        .map(|i| {
            let ((a, da), (b, db)) = (shell[i], shell[(i + 1) % m]);
            let s = da / (da - db);
            a + (b - a) * s
        })
        .collect();
    let mut by_size: Vec<usize> = (0..m).collect();
    by_size.sort_by(|&a, &b| shell[a].1.abs().total_cmp(&shell[b].1.abs()));
    seeds.extend(by_size.iter().take(2).map(|&i| shell[i].0));

    let mut hits = Vec::new();
    let mut last_reason = String::from("no seed converged");
    for w in seeds {
        let z_seed = base.z_star + w;
        let orbit = match find_periodic(field, z_seed, opts) {
            Ok(o) => o,
            Err(e) => {
                last_reason = e.to_string();
                continue;
            }
        };
        let w_star = orbit.z_star - base.z_star;
        let rho_rel = match rotation_over_period(rel, w_star, opts)? {
            RotationOutcome::Finite { rho, .. } => rho,
            other => {
                last_reason = format!("rotation about the base orbit is {}", other.status());
                continue;
            }
        };
        if (rho_rel - kf).abs() >= hint.rho_tol {
            last_reason = format!("converged to rotation {rho_rel:.4}");
            continue;
        }
        if hits.iter().all(|h: &MultiplicityHit| h.orbit.z_star.distance(&orbit.z_star) >= 1e-6) {
            hits.push(MultiplicityHit {
                k,
                orbit,
                rho_about_base: rho_rel,
            });
        }
    }
    if hits.is_empty() {
        Ok(Err(last_reason))
    } else {
        Ok(Ok(hits))
    }
}
