//! Clockwise rotation of solutions around the origin.
//!
//! The angle is integrated as a third state component,
//! `θ' = [(f + p) x + y²] / (x² + y²)`, starting from zero, so the returned
//! value is a pure increment and no angle unwrapping is ever needed.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{check_superlinearity, Verdict};
use crate::error::{Error, Result};
use crate::field_model::{PhasePoint, PlanarField};
use crate::integrator::{
    DenseStep, DenseTrajectory, Dynamics, EscapeReason, IntegratorOptions, StepEvent, Stepper, Termination,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum RotationOutcome {
    Finite { rho: f64, terminal: PhasePoint },
    PlusInfinity { t_max_estimate: f64, rho_at_cutoff: f64 },
    UndefinedOriginHit { t_hit: f64 },
}

impl RotationOutcome {
    pub fn finite(&self) -> Option<f64> {
        match self {
            RotationOutcome::Finite { rho, .. } => Some(*rho),
            _ => None,
        }
    }

    /// Short tag used in CSV output.
    pub fn status(&self) -> &'static str {
        match self {
            RotationOutcome::Finite { .. } => "finite",
            RotationOutcome::PlusInfinity { .. } => "plus_infinity",
            RotationOutcome::UndefinedOriginHit { .. } => "origin_hit",
        }
    }

    /// Value for level-set comparisons: `+∞` for escapes, `-∞` for origin hits
    /// (those starts belong to the null set, which the capture set contains).
    pub fn level_value(&self) -> f64 {
        match self {
            RotationOutcome::Finite { rho, .. } => *rho,
            RotationOutcome::PlusInfinity { .. } => f64::INFINITY,
            RotationOutcome::UndefinedOriginHit { .. } => f64::NEG_INFINITY,
        }
    }
}

/// Default origin exclusion radius for a start point.
pub fn default_eps_origin(z0: PhasePoint) -> f64 {
    1e-8 * (1.0 + z0.norm())
}

/// `(x, y, θ)` with the clockwise angular velocity.
struct AngularSystem<'a> {
    field: &'a PlanarField,
}

impl Dynamics<3> for AngularSystem<'_> {
    #[inline]
    fn rhs(&self, t: f64, z: &[f64; 3]) -> Result<[f64; 3]> {
        let (x, y) = (z[0], z[1]);
        let (dx, dy) = self.field.eval_rhs(t, PhasePoint::new(x, y))?;
        let r2 = x * x + y * y;
        let dtheta = (-dy * x + y * y) / r2;
        if !dtheta.is_finite() {
            return Err(Error::NonFiniteEvaluation { t, x, y });
        }
        Ok([dx, dy, dtheta])
    }

    fn breakpoints_between(&self, t0: f64, t1: f64) -> Vec<f64> {
        self.field.breakpoints_between(t0, t1)
    }

    fn time_scale(&self) -> Option<f64> {
        Some(self.field.period())
    }
}

/// A rotation run with its dense `(x, y, θ - θ₀)` path.
#[derive(Debug, Clone)]
pub struct RotationTrace {
    /// Clockwise angle of the start point; the integrated angle starts at zero.
    pub theta0: f64,
    pub path: DenseTrajectory<3>,
    pub outcome: RotationOutcome,
}

impl RotationTrace {
    /// Rotation accumulated by time `s`, `+∞` past an escape, `None` where
    /// undefined (before `t0` or after an origin hit).
    pub fn rho_at(&self, s: f64) -> Option<f64> {
        if let Some(z) = self.path.eval(s) {
            return Some(z[2] / TAU);
        }
        match self.outcome {
            RotationOutcome::PlusInfinity { t_max_estimate, .. } if s > t_max_estimate => Some(f64::INFINITY),
            _ => None,
        }
    }
}

const PROBES: usize = 8;

/// Time of the closest approach to the origin within a step if it comes
/// within `eps`. The dense interpolant is probed on a uniform grid and each
/// interior local minimum is refined by golden-section search.
fn origin_hit_in_step(step: &DenseStep<3>, eps: f64) -> Option<f64> {
    let r_at = |s: f64| {
        let z = step.eval(step.t0 + s * step.h);
        z[0].hypot(z[1])
    };
    let r: Vec<f64> = (0..=PROBES).map(|k| r_at(k as f64 / PROBES as f64)).collect();
    for k in 1..=PROBES {
        if r[k] < eps {
            return Some(step.t0 + k as f64 / PROBES as f64 * step.h);
        }
    }
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    for k in 1..PROBES {
        if !(r[k] <= r[k - 1] && r[k] <= r[k + 1]) {
            continue;
        }
        let (mut a, mut b) = ((k - 1) as f64 / PROBES as f64, (k + 1) as f64 / PROBES as f64);
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let (mut rc, mut rd) = (r_at(c), r_at(d));
        for _ in 0..60 {
            if rc < eps {
                return Some(step.t0 + c * step.h);
            }
            if rd < eps {
                return Some(step.t0 + d * step.h);
            }
            if rc < rd {
                b = d;
                d = c;
                rd = rc;
                c = b - INV_PHI * (b - a);
                rc = r_at(c);
            } else {
                a = c;
                c = d;
                rc = rd;
                d = a + INV_PHI * (b - a);
                rd = r_at(d);
            }
            if b - a < 1e-15 {
                break;
            }
        }
    }
    None
}

fn run_rotation(
    field: &PlanarField,
    t0: f64,
    t1: f64,
    z0: PhasePoint,
    opts: &IntegratorOptions,
    eps_origin: f64,
    mut keep: impl FnMut(&DenseStep<3>),
) -> Result<(RotationOutcome, Termination<3>)> {
    if z0.norm() <= eps_origin {
        return Err(Error::OriginStart { eps_origin });
    }
    let sys = AngularSystem { field };
    let start = [z0.x, z0.y, 0.0];
    let mut stepper = Stepper::new(&sys, t0, start, t1, opts)?;
    loop {
        let event = match stepper.step() {
            Ok(ev) => ev,
            Err(Error::NonFiniteEvaluation { t, x, y }) if x.hypot(y) < 1e-4 * (1.0 + z0.norm()) => {
                let term = Termination::Escaped {
                    t,
                    state: stepper.state(),
                    reason: EscapeReason::StepCollapse,
                };
                return Ok((RotationOutcome::UndefinedOriginHit { t_hit: t }, term));
            }
            Err(e) => return Err(e),
        };
        match event {
            StepEvent::Accepted(step) => {
                keep(&step);
                if let Some(t_hit) = origin_hit_in_step(&step, eps_origin) {
                    let term = Termination::Escaped {
                        t: t_hit,
                        state: step.eval(t_hit),
                        reason: EscapeReason::StepCollapse,
                    };
                    return Ok((RotationOutcome::UndefinedOriginHit { t_hit }, term));
                }
            }
            StepEvent::Finished(state) => {
                let outcome = RotationOutcome::Finite {
                    rho: state[2] / TAU,
                    terminal: PhasePoint::new(state[0], state[1]),
                };
                return Ok((outcome, Termination::Reached { t: t1, state }));
            }
            StepEvent::Escaped { t, state, reason } => {
                let near_origin = state[0].hypot(state[1]) < 1e-4 * (1.0 + z0.norm());
                let outcome = if reason == EscapeReason::StepCollapse && near_origin {
                    RotationOutcome::UndefinedOriginHit { t_hit: t }
                } else {
                    RotationOutcome::PlusInfinity {
                        t_max_estimate: t,
                        rho_at_cutoff: state[2] / TAU,
                    }
                };
                return Ok((outcome, Termination::Escaped { t, state, reason }));
            }
        }
    }
}

/// `ρ(t1; t0, z0)` in turns.
pub fn rotation(
    field: &PlanarField,
    t0: f64,
    t1: f64,
    z0: PhasePoint,
    opts: &IntegratorOptions,
    eps_origin: f64,
) -> Result<RotationOutcome> {
    Ok(run_rotation(field, t0, t1, z0, opts, eps_origin, |_| {})?.0)
}

/// As [`rotation`], keeping the dense path for intermediate queries.
pub fn rotation_trace(
    field: &PlanarField,
    t0: f64,
    t1: f64,
    z0: PhasePoint,
    opts: &IntegratorOptions,
    eps_origin: f64,
) -> Result<RotationTrace> {
    let mut steps = Vec::new();
    let (outcome, termination) = run_rotation(field, t0, t1, z0, opts, eps_origin, |s| steps.push(*s))?;
    Ok(RotationTrace {
        theta0: z0.clockwise_angle(),
        path: DenseTrajectory {
            t_start: t0,
            initial: [z0.x, z0.y, 0.0],
            steps,
            termination,
        },
        outcome,
    })
}

/// `ρ(T; 0, z)` with the default origin exclusion radius.
pub fn rotation_over_period(field: &PlanarField, z: PhasePoint, opts: &IntegratorOptions) -> Result<RotationOutcome> {
    match rotation(field, 0.0, field.period(), z, opts, default_eps_origin(z)) {
        Err(Error::OriginStart { .. }) => Ok(RotationOutcome::UndefinedOriginHit { t_hit: 0.0 }),
        other => other,
    }
}

/// Axis-aligned rectangle in the phase plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Region {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let r = Self { xmin, xmax, ymin, ymax };
        r.validate()?;
        Ok(r)
    }

    pub fn square(half_width: f64) -> Self {
        Self {
            xmin: -half_width,
            xmax: half_width,
            ymin: -half_width,
            ymax: half_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.xmin, self.xmax, self.ymin, self.ymax].iter().all(|v| v.is_finite());
        if !finite || self.xmin >= self.xmax || self.ymin >= self.ymax {
            return Err(Error::InvalidArgument(format!("degenerate region {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, z: PhasePoint) -> bool {
        z.x > self.xmin && z.x < self.xmax && z.y > self.ymin && z.y < self.ymax
    }

    /// Center of cell `(i, j)` in an `nx × ny` subdivision.
    pub fn cell_center(&self, nx: usize, ny: usize, i: usize, j: usize) -> PhasePoint {
        let dx = (self.xmax - self.xmin) / nx as f64;
        let dy = (self.ymax - self.ymin) / ny as f64;
        PhasePoint::new(self.xmin + (i as f64 + 0.5) * dx, self.ymin + (j as f64 + 0.5) * dy)
    }
}

/// `ρ(T; 0, ·)` at cell centers, row-major with `y` increasing by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationGrid {
    pub region: Region,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<RotationOutcome>,
}

impl RotationGrid {
    pub fn at(&self, i: usize, j: usize) -> &RotationOutcome {
        &self.values[j * self.nx + i]
    }

    pub fn point(&self, i: usize, j: usize) -> PhasePoint {
        self.region.cell_center(self.nx, self.ny, i, j)
    }

    pub fn points(&self) -> impl Iterator<Item = (usize, usize, PhasePoint)> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| (i, j, self.point(i, j))))
    }
}

pub fn rotation_grid(
    field: &PlanarField,
    region: Region,
    nx: usize,
    ny: usize,
    opts: &IntegratorOptions,
) -> Result<RotationGrid> {
    region.validate()?;
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidArgument(format!("grid needs nx, ny >= 2, got {nx}x{ny}")));
    }
    let values = (0..nx * ny)
        .into_par_iter()
        .map(|k| rotation_over_period(field, region.cell_center(nx, ny, k % nx, k / nx), opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(RotationGrid { region, nx, ny, values })
}

/// `2π / √α`, the time to sweep one turn at angular speed `α cos²β + sin²β`.
pub fn l_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(Error::DomainError(format!("L_alpha needs alpha > 1, got {alpha}")));
    }
    Ok(TAU / alpha.sqrt())
}

/// Trapezoidal quadrature of `∫₀^{2π} dβ / (α cos²β + sin²β)`, for `α ≥ 1`.
///
/// The integrand is smooth and periodic, so the trapezoidal rule converges
/// geometrically.
pub fn l_alpha_quadrature(alpha: f64, n: usize) -> Result<f64> {
    if !(alpha >= 1.0) || n == 0 {
        return Err(Error::DomainError(format!("quadrature needs alpha >= 1, got {alpha}")));
    }
    let h = TAU / n as f64;
    let sum: f64 = (0..n)
        .map(|k| {
            let b = k as f64 * h;
            let (s, c) = b.sin_cos();
            1.0 / (alpha * c * c + s * s)
        })
        .sum();
    Ok(sum * h)
}

/// `(1/T) ∫₀ᵀ γ(t) dt` by the composite trapezoidal rule.
pub fn period_mean(gamma: impl Fn(f64) -> f64, period: f64, n: usize) -> f64 {
    let n = n.max(1);
    let h = period / n as f64;
    let inner: f64 = (1..n).map(|k| gamma(k as f64 * h)).sum();
    (0.5 * (gamma(0.0) + gamma(period)) + inner) * h / period
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterRadius {
    pub alpha: f64,
    pub r_tilde: f64,
}

const OUTER_MARGIN: f64 = 0.01;

/// Radius beyond which every trajectory that stays outside it over `[0, T]`
/// completes more than `n` turns. `mean_gamma(α)` returns the period mean of
/// a valid `γ_α`; validity is the caller's responsibility.
pub fn outer_radius(n: u32, period: f64, mean_gamma: impl Fn(f64) -> f64) -> Result<OuterRadius> {
    if n == 0 || !(period > 0.0) {
        return Err(Error::InvalidArgument("outer_radius needs n >= 1 and T > 0".into()));
    }
    let sqrt_alpha = 8.0 * PI * PI * n as f64 / period;
    let alpha = sqrt_alpha * sqrt_alpha * (1.0 + OUTER_MARGIN);
    let b = mean_gamma(alpha);
    if !(b >= 0.0) {
        return Err(Error::InvalidArgument(format!("mean of gamma_alpha must be >= 0, got {b}")));
    }
    Ok(OuterRadius {
        alpha,
        r_tilde: 2.0 * b * (1.0 + OUTER_MARGIN),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub sample: usize,
    pub t_early: f64,
    pub t_late: f64,
    pub rho_early: f64,
    pub rho_late: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// False when the field fails the sampled superlinearity check.
    pub in_class: bool,
    pub checked: usize,
    pub skipped: usize,
    pub violations: Vec<MonotonicityViolation>,
}

/// Checks `ρ(s) ≥ ρ(t) - 1/2 - tol` on a ladder of `ladder + 1` times from
/// each sample's start to `T`. Samples whose run hits the origin are skipped.
pub fn check_monotonicity(
    field: &PlanarField,
    samples: &[(f64, PhasePoint)],
    ladder: usize,
    opts: &IntegratorOptions,
    tol: f64,
) -> Result<MonotonicityReport> {
    let ladder = ladder.max(1);
    let period = field.period();
    let runs = samples
        .par_iter()
        .map(|&(t0, z0)| {
            let trace = match rotation_trace(field, t0, period, z0, opts, default_eps_origin(z0)) {
                Ok(tr) => tr,
                Err(Error::OriginStart { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            if matches!(trace.outcome, RotationOutcome::UndefinedOriginHit { .. }) {
                return Ok(None);
            }
            let times: Vec<f64> = (0..=ladder)
                .map(|k| if k == ladder { period } else { t0 + (period - t0) * k as f64 / ladder as f64 })
                .collect();
            let rhos: Vec<(f64, f64)> = times.iter().filter_map(|&s| trace.rho_at(s).map(|r| (s, r))).collect();
            Ok(Some(rhos))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = MonotonicityReport {
        in_class: matches!(
            check_superlinearity(field, &[10.0, 100.0, 1000.0], 16, 100.0).verdict,
            Verdict::ConsistentOnSamples
        ),
        checked: 0,
        skipped: 0,
        violations: Vec::new(),
    };
    for (idx, run) in runs.into_iter().enumerate() {
        let Some(rhos) = run else {
            report.skipped += 1;
            continue;
        };
        report.checked += 1;
        for (a, &(ta, ra)) in rhos.iter().enumerate() {
            for &(tb, rb) in &rhos[a + 1..] {
                if rb < ra - 0.5 - tol {
                    report.violations.push(MonotonicityViolation {
                        sample: idx,
                        t_early: ta,
                        t_late: tb,
                        rho_early: ra,
                        rho_late: rb,
                    });
                }
            }
        }
    }
    Ok(report)
}
