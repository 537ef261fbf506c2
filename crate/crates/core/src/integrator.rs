//! Adaptive Dormand–Prince 5(4) integration with dense output.
//!
//! A run ends either at the requested time or in an escape: the state left
//! the disc of radius `escape_radius`, or the step size collapsed below
//! `min_step` while the error controller kept rejecting. The escape time is
//! the left endpoint of the failing step. Neither trigger can tell a genuine
//! finite-time blow-up from fast but finite growth; both are only proxies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{PhasePoint, PlanarField};

/// Right-hand side of `z' = F(t, z)`. The first two components are the
/// phase-plane coordinates used for the escape test.
pub trait Dynamics<const N: usize>: Sync {
    fn rhs(&self, t: f64, z: &[f64; N]) -> Result<[f64; N]>;

    /// Discontinuity times strictly inside `(t0, t1)`, sorted.
    fn breakpoints_between(&self, _t0: f64, _t1: f64) -> Vec<f64> {
        Vec::new()
    }

    /// Natural time scale used for the default minimum step.
    fn time_scale(&self) -> Option<f64> {
        None
    }
}

impl Dynamics<2> for PlanarField {
    #[inline]
    fn rhs(&self, t: f64, z: &[f64; 2]) -> Result<[f64; 2]> {
        let (dx, dy) = self.eval_rhs(t, PhasePoint::new(z[0], z[1]))?;
        Ok([dx, dy])
    }

    fn breakpoints_between(&self, t0: f64, t1: f64) -> Vec<f64> {
        PlanarField::breakpoints_between(self, t0, t1)
    }

    fn time_scale(&self) -> Option<f64> {
        Some(self.period())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub escape_radius: f64,
    /// Absolute minimum step; `None` means `1e-12` times the field period.
    pub min_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            escape_radius: 1e6,
            min_step: None,
            max_steps: 2_000_000,
        }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.rel_tol) || !ok(self.abs_tol) || self.rel_tol > 1e-3 || self.abs_tol > 1e-3 {
            return Err(Error::InvalidArgument(format!(
                "tolerances must lie in (0, 1e-3], got rel_tol={} abs_tol={}",
                self.rel_tol, self.abs_tol
            )));
        }
        if !ok(self.escape_radius) {
            return Err(Error::InvalidArgument("escape_radius must be positive".into()));
        }
        if let Some(h) = self.min_step {
            if !ok(h) {
                return Err(Error::InvalidArgument("min_step must be positive".into()));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Both tolerances divided by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        Self {
            rel_tol: self.rel_tol / factor,
            abs_tol: self.abs_tol / factor,
            ..*self
        }
    }

    pub fn with_escape_radius(&self, escape_radius: f64) -> Self {
        Self {
            escape_radius,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EscapeReason {
    RadiusExceeded,
    StepCollapse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowOutcome {
    Point(PhasePoint),
    Escaped {
        t_escape: f64,
        last_z: PhasePoint,
        reason: EscapeReason,
    },
}

impl FlowOutcome {
    pub fn point(&self) -> Option<PhasePoint> {
        match self {
            FlowOutcome::Point(z) => Some(*z),
            FlowOutcome::Escaped { .. } => None,
        }
    }

    pub fn is_escaped(&self) -> bool {
        matches!(self, FlowOutcome::Escaped { .. })
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension of order 4 (Hairer's contd5).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MAX: f64 = 10.0;
const FAC_MIN: f64 = 0.2;

/// Interpolant over one accepted step `[t0, t0 + h]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    coeffs: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn start(&self) -> [f64; N] {
        self.coeffs[0]
    }

    pub fn end(&self) -> [f64; N] {
        let mut out = [0.0; N];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.coeffs[0][i] + self.coeffs[1][i];
        }
        out
    }

    pub fn eval(&self, t: f64) -> [f64; N] {
        let s = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let s1 = 1.0 - s;
        let c = &self.coeffs;
        let mut out = [0.0; N];
        for (i, o) in out.iter_mut().enumerate() {
            *o = c[0][i] + s * (c[1][i] + s1 * (c[2][i] + s * (c[3][i] + s1 * c[4][i])));
        }
        out
    }
}

/// Event reported by [`Stepper::step`].
#[derive(Debug, Clone, PartialEq)]
pub enum StepEvent<const N: usize> {
    Accepted(DenseStep<N>),
    Finished([f64; N]),
    Escaped {
        t: f64,
        state: [f64; N],
        reason: EscapeReason,
    },
}

#[inline]
fn plane_radius<const N: usize>(z: &[f64; N]) -> f64 {
    if N >= 2 {
        z[0].hypot(z[1])
    } else {
        z[0].abs()
    }
}

#[inline]
fn combine<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (a, k) in terms {
            acc += a * k[i];
        }
        *o += h * acc;
    }
    out
}

/// Single-run stepping state. Owns nothing shared; one per integration.
pub struct Stepper<'a, D: Dynamics<N>, const N: usize> {
    sys: &'a D,
    opts: IntegratorOptions,
    t: f64,
    y: [f64; N],
    k1: [f64; N],
    t_end: f64,
    h: f64,
    h_min: f64,
    fac_old: f64,
    last_rejected: bool,
    accepted: usize,
    attempts: usize,
    breakpoints: Vec<f64>,
    next_bp: usize,
    finished: bool,
}

impl<'a, D: Dynamics<N>, const N: usize> Stepper<'a, D, N> {
    pub fn new(sys: &'a D, t0: f64, y0: [f64; N], t_end: f64, opts: &IntegratorOptions) -> Result<Self> {
        opts.validate()?;
        if !(t0.is_finite() && t_end.is_finite()) || t_end < t0 {
            return Err(Error::InvalidArgument(format!(
                "integration interval [{t0}, {t_end}] is not ordered"
            )));
        }
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("initial state must be finite".into()));
        }
        let h_min = opts
            .min_step
            .unwrap_or_else(|| 1e-12 * sys.time_scale().unwrap_or((t_end - t0).max(f64::MIN_POSITIVE)));
        let k1 = if t_end > t0 { sys.rhs(t0, &y0)? } else { [0.0; N] };
        let mut st = Self {
            sys,
            opts: *opts,
            t: t0,
            y: y0,
            k1,
            t_end,
            h: 0.0,
            h_min,
            fac_old: 1e-4,
            last_rejected: false,
            accepted: 0,
            attempts: 0,
            breakpoints: sys.breakpoints_between(t0, t_end),
            next_bp: 0,
            finished: t_end == t0,
        };
        if !st.finished {
            st.h = st.initial_step();
        }
        Ok(st)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> [f64; N] {
        self.y
    }

    pub fn accepted_steps(&self) -> usize {
        self.accepted
    }

    fn scale(&self, y: &[f64; N], i: usize) -> f64 {
        self.opts.abs_tol + self.opts.rel_tol * y[i].abs()
    }

    fn initial_step(&self) -> f64 {
        let h_max = self.t_end - self.t;
        let (mut dnf, mut dny) = (0.0, 0.0);
        for i in 0..N {
            let sk = self.scale(&self.y, i);
            dnf += (self.k1[i] / sk).powi(2);
            dny += (self.y[i] / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
            1e-6
        } else {
            (dny / dnf).sqrt() * 0.01
        };
        h = h.min(h_max);
        let y1 = combine(&self.y, h, &[(1.0, &self.k1)]);
        let Ok(f1) = self.sys.rhs(self.t + h, &y1) else {
            return (h * 1e-3).max(self.h_min);
        };
        let mut der2 = 0.0;
        for i in 0..N {
            der2 += ((f1[i] - self.k1[i]) / self.scale(&self.y, i)).powi(2);
        }
        let der2 = der2.sqrt() / h;
        let der12 = der2.max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / der12).powf(0.2)
        };
        (100.0 * h).min(h1).min(h_max).max(self.h_min)
    }

    fn target(&self) -> (f64, bool) {
        match self.breakpoints.get(self.next_bp) {
            Some(&b) => (b, true),
            None => (self.t_end, false),
        }
    }

    /// Stage evaluation that turns overflow far outside the escape disc into a
    /// step rejection instead of an error.
    fn stage(&self, t: f64, y: &[f64; N]) -> Result<Option<[f64; N]>> {
        if y.iter().any(|v| !v.is_finite()) || plane_radius(y) > self.opts.escape_radius {
            return match self.sys.rhs(t, y) {
                Ok(k) if k.iter().all(|v| v.is_finite()) => Ok(Some(k)),
                _ => Ok(None),
            };
        }
        self.sys.rhs(t, y).map(Some)
    }

    pub fn step(&mut self) -> Result<StepEvent<N>> {
        if self.finished {
            return Ok(StepEvent::Finished(self.y));
        }
        loop {
            if self.attempts >= self.opts.max_steps {
                return Err(Error::StepBudgetExhausted(self.opts.max_steps));
            }
            self.attempts += 1;
            let (target, is_breakpoint) = self.target();
            let mut h = self.h.min(self.t_end - self.t);
            let landing = self.t + 1.01 * h >= target;
            if landing {
                h = target - self.t;
            }
            let t = self.t;
            let y = self.y;
            let k1 = self.k1;
            // Stages at the end of a step that lands on a breakpoint see the left limit.
            let t_full = if landing && is_breakpoint { target.next_down() } else { t + h };
            let attempt = (|| -> Result<Option<_>> {
                let Some(k2) = self.stage(t + C2 * h, &combine(&y, h, &[(A21, &k1)]))? else {
                    return Ok(None);
                };
                let Some(k3) = self.stage(t + C3 * h, &combine(&y, h, &[(A31, &k1), (A32, &k2)]))? else {
                    return Ok(None);
                };
                let Some(k4) =
                    self.stage(t + C4 * h, &combine(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?
                else {
                    return Ok(None);
                };
                let Some(k5) = self.stage(
                    t + C5 * h,
                    &combine(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
                )?
                else {
                    return Ok(None);
                };
                let Some(k6) = self.stage(
                    t_full,
                    &combine(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
                )?
                else {
                    return Ok(None);
                };
                let y_new = combine(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
                let Some(k7) = self.stage(t_full, &y_new)? else {
                    return Ok(None);
                };
                Ok(Some((k2, k3, k4, k5, k6, k7, y_new)))
            })()?;

            let mut err = f64::INFINITY;
            if let Some((_, k3, k4, k5, k6, k7, y_new)) = &attempt {
                let mut acc = 0.0;
                for i in 0..N {
                    let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                    let sk = self.opts.abs_tol + self.opts.rel_tol * y[i].abs().max(y_new[i].abs());
                    acc += (e / sk).powi(2);
                }
                err = (acc / N as f64).sqrt();
            }

            if err.is_finite() && err <= 1.0 {
                let (_, k3, k4, k5, k6, k7, y_new) = attempt.expect("accepted step has stages");
                let fac11 = err.powf(0.2 - BETA * 0.75);
                let mut fac = fac11 / self.fac_old.powf(BETA);
                fac = (1.0 / FAC_MAX).max((1.0 / FAC_MIN).min(fac / SAFETY));
                let mut h_new = h / fac;
                if self.last_rejected {
                    h_new = h_new.min(h);
                }
                self.fac_old = err.max(1e-4);
                self.last_rejected = false;

                if y_new.iter().any(|v| !v.is_finite()) || plane_radius(&y_new) > self.opts.escape_radius {
                    self.finished = true;
                    return Ok(StepEvent::Escaped {
                        t,
                        state: y,
                        reason: EscapeReason::RadiusExceeded,
                    });
                }

                let mut coeffs = [[0.0; N]; 5];
                for i in 0..N {
                    let ydiff = y_new[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    coeffs[0][i] = y[i];
                    coeffs[1][i] = ydiff;
                    coeffs[2][i] = bspl;
                    coeffs[3][i] = ydiff - h * k7[i] - bspl;
                    coeffs[4][i] =
                        h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
                let dense = DenseStep { t0: t, h, coeffs };

                self.t = if landing { target } else { t + h };
                self.y = y_new;
                self.k1 = k7;
                self.h = h_new;
                self.accepted += 1;
                if landing && is_breakpoint {
                    self.next_bp += 1;
                    // Right limit of a piecewise field.
                    self.k1 = self.sys.rhs(self.t, &self.y)?;
                }
                if landing && !is_breakpoint {
                    self.finished = true;
                }
                return Ok(StepEvent::Accepted(dense));
            }

            let h_new = if err.is_finite() {
                let fac11 = err.powf(0.2 - BETA * 0.75);
                h / (1.0 / FAC_MIN).min(fac11 / SAFETY)
            } else {
                h * 0.1
            };
            self.last_rejected = true;
            if h_new < self.h_min {
                self.finished = true;
                return Ok(StepEvent::Escaped {
                    t,
                    state: y,
                    reason: EscapeReason::StepCollapse,
                });
            }
            self.h = h_new;
        }
    }

    /// Runs to the end, feeding every accepted step to `on_step`.
    pub fn run(&mut self, mut on_step: impl FnMut(&DenseStep<N>)) -> Result<Termination<N>> {
        loop {
            match self.step()? {
                StepEvent::Accepted(s) => on_step(&s),
                StepEvent::Finished(y) => {
                    return Ok(Termination::Reached { t: self.t, state: y });
                }
                StepEvent::Escaped { t, state, reason } => {
                    return Ok(Termination::Escaped { t, state, reason });
                }
            }
        }
    }
}

/// How an integration ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination<const N: usize> {
    Reached { t: f64, state: [f64; N] },
    Escaped { t: f64, state: [f64; N], reason: EscapeReason },
}

impl Termination<2> {
    pub fn to_flow_outcome(self) -> FlowOutcome {
        match self {
            Termination::Reached { state, .. } => FlowOutcome::Point(state.into()),
            Termination::Escaped { t, state, reason } => FlowOutcome::Escaped {
                t_escape: t,
                last_z: state.into(),
                reason,
            },
        }
    }
}

/// Sampled path with a piecewise interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrajectory<const N: usize> {
    pub t_start: f64,
    pub initial: [f64; N],
    pub steps: Vec<DenseStep<N>>,
    pub termination: Termination<N>,
}

pub type Trajectory = DenseTrajectory<2>;

impl<const N: usize> DenseTrajectory<N> {
    /// Last time covered by the interpolant.
    pub fn t_covered(&self) -> f64 {
        self.steps.last().map(|s| s.t1()).unwrap_or(self.t_start)
    }

    /// State at `s`, or `None` outside the covered interval.
    pub fn eval(&self, s: f64) -> Option<[f64; N]> {
        if self.steps.is_empty() {
            return (s == self.t_start).then_some(self.initial);
        }
        if s < self.t_start || s > self.t_covered() {
            return None;
        }
        let idx = self.steps.partition_point(|st| st.t1() < s).min(self.steps.len() - 1);
        Some(self.steps[idx].eval(s))
    }

    /// Step endpoints `(t_i, z_i)`, strictly increasing in `t`.
    pub fn samples(&self) -> Vec<(f64, [f64; N])> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push((self.t_start, self.initial));
        for s in &self.steps {
            out.push((s.t1(), s.end()));
        }
        out
    }

    /// `n + 1` evenly spaced points over the covered interval.
    pub fn resample(&self, n: usize) -> Vec<(f64, [f64; N])> {
        let (a, b) = (self.t_start, self.t_covered());
        (0..=n)
            .filter_map(|i| {
                let s = if i == n { b } else { a + (b - a) * i as f64 / n as f64 };
                self.eval(s).map(|z| (s, z))
            })
            .collect()
    }
}

impl Trajectory {
    pub fn outcome(&self) -> FlowOutcome {
        self.termination.to_flow_outcome()
    }
}

/// Integrates a general system, optionally keeping the dense path.
pub fn integrate<D: Dynamics<N>, const N: usize>(
    sys: &D,
    t0: f64,
    t1: f64,
    z0: [f64; N],
    opts: &IntegratorOptions,
) -> Result<DenseTrajectory<N>> {
    let mut stepper = Stepper::new(sys, t0, z0, t1, opts)?;
    let mut steps = Vec::new();
    let termination = stepper.run(|s| steps.push(*s))?;
    Ok(DenseTrajectory {
        t_start: t0,
        initial: z0,
        steps,
        termination,
    })
}

/// `ζ(t1; t0, z0)`: the time-`t1` state or an escape.
pub fn flow<D: Dynamics<2>>(sys: &D, t0: f64, t1: f64, z0: PhasePoint, opts: &IntegratorOptions) -> Result<FlowOutcome> {
    let mut stepper = Stepper::new(sys, t0, z0.into(), t1, opts)?;
    Ok(stepper.run(|_| {})?.to_flow_outcome())
}

pub fn flow_dense<D: Dynamics<2>>(
    sys: &D,
    t0: f64,
    t1: f64,
    z0: PhasePoint,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    integrate(sys, t0, t1, z0.into(), opts)
}

/// Time-`T` map `φ(T, z0) = ζ(T; 0, z0)`.
pub fn poincare_map(field: &PlanarField, z0: PhasePoint, opts: &IntegratorOptions) -> Result<FlowOutcome> {
    flow(field, 0.0, field.period(), z0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    struct Quadratic;

    impl Dynamics<2> for Quadratic {
        fn rhs(&self, _t: f64, z: &[f64; 2]) -> Result<[f64; 2]> {
            Ok([z[0] * z[0], 0.0])
        }
    }

    #[test]
    fn harmonic_oscillator_full_period() {
        let lin = PlanarField::linear(1.0);
        let z = flow(&lin, 0.0, TAU, PhasePoint::new(1.0, 0.0), &Default::default())
            .unwrap()
            .point()
            .unwrap();
        assert!(z.distance(&PhasePoint::new(1.0, 0.0)) < 1e-9, "{z:?}");
    }

    #[test]
    fn quadratic_blow_up_escapes_near_one() {
        let out = flow(&Quadratic, 0.0, 2.0, PhasePoint::new(1.0, 0.0), &Default::default()).unwrap();
        match out {
            FlowOutcome::Escaped { t_escape, last_z, reason } => {
                assert_eq!(reason, EscapeReason::RadiusExceeded);
                assert!((t_escape - 1.0).abs() < 1e-3, "t_escape = {t_escape}");
                assert!(t_escape <= 1.0);
                assert!(last_z.is_finite());
            }
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn escape_time_grows_with_radius() {
        let mut last = 0.0;
        for r in [1e2, 1e4, 1e6, 1e8] {
            let opts = IntegratorOptions::default().with_escape_radius(r);
            let FlowOutcome::Escaped { t_escape, .. } =
                flow(&Quadratic, 0.0, 2.0, PhasePoint::new(1.0, 0.0), &opts).unwrap()
            else {
                panic!("no escape");
            };
            assert!(t_escape >= last - 1e-9);
            last = t_escape;
        }
    }

    #[test]
    fn dense_output_quarter_period() {
        let lin = PlanarField::linear(1.0);
        let traj = flow_dense(&lin, 0.0, TAU, PhasePoint::new(1.0, 0.0), &Default::default()).unwrap();
        let z = traj.eval(PI / 2.0).unwrap();
        assert!((z[0]).abs() < 1e-8 && (z[1] + 1.0).abs() < 1e-8, "{z:?}");
        let samples = traj.samples();
        assert!(samples.windows(2).all(|w| w[1].0 > w[0].0));
        assert!(traj.eval(-0.1).is_none());
        assert!(traj.eval(TAU + 0.1).is_none());
    }

    #[test]
    fn dense_and_plain_flow_agree_bitwise() {
        let duff = PlanarField::duffing(0.05);
        let z0 = PhasePoint::new(0.7, -0.3);
        let opts = IntegratorOptions::default();
        let a = flow(&duff, 0.0, TAU, z0, &opts).unwrap();
        let b = flow_dense(&duff, 0.0, TAU, z0, &opts).unwrap().outcome();
        assert_eq!(a, b);
    }

    #[test]
    fn breakpoints_are_landed_on() {
        let field = PlanarField::new("step", TAU, |t: f64, x: f64| if t.rem_euclid(TAU) < PI { x } else { 4.0 * x }, None)
            .unwrap()
            .with_breakpoints(vec![PI])
            .unwrap();
        let traj = flow_dense(&field, 0.0, TAU, PhasePoint::new(1.0, 0.0), &Default::default()).unwrap();
        assert!(traj.samples().iter().any(|(t, _)| *t == PI));
        // Closed form: cos on [0, π] gives (-1, 0); then frequency 2 for time π.
        let z = traj.outcome().point().unwrap();
        assert!(z.distance(&PhasePoint::new(-1.0, 0.0)) < 1e-8, "{z:?}");
    }

    #[test]
    fn zero_length_interval_is_identity() {
        let lin = PlanarField::linear(1.0);
        let z0 = PhasePoint::new(0.3, 0.2);
        assert_eq!(flow(&lin, 1.0, 1.0, z0, &Default::default()).unwrap(), FlowOutcome::Point(z0));
        assert!(flow(&lin, 1.0, 0.0, z0, &Default::default()).is_err());
    }

    #[test]
    fn options_are_validated() {
        let lin = PlanarField::linear(1.0);
        let bad = IntegratorOptions {
            rel_tol: 1e-2,
            ..Default::default()
        };
        assert!(flow(&lin, 0.0, 1.0, PhasePoint::new(1.0, 0.0), &bad).is_err());
        let budget = IntegratorOptions {
            max_steps: 5,
            ..Default::default()
        };
        assert!(matches!(
            flow(&lin, 0.0, 100.0, PhasePoint::new(1.0, 0.0), &budget),
            Err(Error::StepBudgetExhausted(5))
        ));
    }

    #[test]
    fn poincare_map_of_linear_fields() {
        let opts = IntegratorOptions::default();
        for z0 in [PhasePoint::new(1.0, 0.0), PhasePoint::new(-0.3, 2.0)] {
            let z = poincare_map(&PlanarField::linear(1.0), z0, &opts).unwrap().point().unwrap();
            assert!(z.distance(&z0) < 1e-9);
        }
        let z = poincare_map(&PlanarField::linear(1.5), PhasePoint::new(1.0, 0.0), &opts)
            .unwrap()
            .point()
            .unwrap();
        assert!(z.distance(&PhasePoint::new(-1.0, 0.0)) < 1e-9, "{z:?}");
    }

    #[test]
    fn non_finite_field_is_reported() {
        let bad = PlanarField::new("bad", TAU, |_, x: f64| 1.0 / (x - 0.5), None).unwrap();
        let r = flow(&bad, 0.0, 1.0, PhasePoint::new(0.5, 0.0), &Default::default());
        assert!(matches!(r, Err(Error::NonFiniteEvaluation { .. })));
    }
}
