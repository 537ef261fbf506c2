//! Planar fields `x' = y, y' = -f(t, x) - p(t, x, y)` with period `T` in `t`,
//! and the three transformations used by the existence argument: time
//! reversal, translation by a periodic function, and recentring about a
//! known periodic solution.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::topology::PeriodicOrbit;

pub type ForceFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type DampingFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: f64,
    pub y: f64,
}

impl PhasePoint {
    pub const ORIGIN: PhasePoint = PhasePoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Clockwise polar angle: `(x, y) = (r cos θ, -r sin θ)`.
    pub fn clockwise_angle(&self) -> f64 {
        (-self.y).atan2(self.x)
    }

    /// Inverse of the clockwise polar chart.
    pub fn from_clockwise_polar(theta: f64, r: f64) -> Self {
        Self::new(r * theta.cos(), -r * theta.sin())
    }
}

impl std::ops::Add for PhasePoint {
    type Output = PhasePoint;
    fn add(self, rhs: PhasePoint) -> PhasePoint {
        PhasePoint::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for PhasePoint {
    type Output = PhasePoint;
    fn sub(self, rhs: PhasePoint) -> PhasePoint {
        PhasePoint::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for PhasePoint {
    type Output = PhasePoint;
    fn mul(self, s: f64) -> PhasePoint {
        PhasePoint::new(self.x * s, self.y * s)
    }
}

impl From<[f64; 2]> for PhasePoint {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<PhasePoint> for [f64; 2] {
    fn from(z: PhasePoint) -> Self {
        [z.x, z.y]
    }
}

/// Time-periodic planar field of second-order type.
///
/// `p == None` means `p` is identically zero, which marks the field as
/// Hamiltonian without sampling.
#[derive(Clone)]
pub struct PlanarField {
    label: String,
    period: f64,
    f: ForceFn,
    p: Option<DampingFn>,
    breakpoints: Vec<f64>,
}

impl fmt::Debug for PlanarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlanarField")
            .field("label", &self.label)
            .field("period", &self.period)
            .field("hamiltonian", &self.p.is_none())
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

fn check_period(period: f64) -> Result<()> {
    if period.is_finite() && period > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("period must be positive and finite, got {period}")))
    }
}

impl PlanarField {
    pub fn new(
        label: impl Into<String>,
        period: f64,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        p: Option<DampingFn>,
    ) -> Result<Self> {
        check_period(period)?;
        Ok(Self {
            label: label.into(),
            period,
            f: Arc::new(f),
            p,
            breakpoints: Vec::new(),
        })
    }

    /// Declares times in `[0, T)` where `f` or `p` may jump; the integrator
    /// lands on every periodic copy of them.
    pub fn with_breakpoints(mut self, mut breakpoints: Vec<f64>) -> Result<Self> {
        for b in breakpoints.iter_mut() {
            if !b.is_finite() {
                return Err(Error::InvalidArgument("breakpoints must be finite".into()));
            }
            *b = b.rem_euclid(self.period);
        }
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        self.breakpoints = breakpoints;
        Ok(self)
    }

    /// `x'' + ω² x = 0`, period 2π.
    pub fn linear(omega: f64) -> Self {
        let w2 = omega * omega;
        Self::new(format!("linear({omega})"), TAU, move |_, x| w2 * x, None)
            .expect("2π is a valid period")
    }

    /// `x'' + x³ = ε cos t`, i.e. `f = x³`, `p = -ε cos t`.
    pub fn duffing(eps: f64) -> Self {
        let p: DampingFn = Arc::new(move |t: f64, _, _| -eps * t.cos());
        Self::new(format!("duffing({eps})"), TAU, |_, x| x * x * x, Some(p))
            .expect("2π is a valid period")
    }

    /// `x'' + c3 x³ + c5 x⁵ = 0`, period 2π.
    pub fn superlinear_poly(c3: f64, c5: f64) -> Self {
        Self::new(
            format!("superlinear_poly({c3},{c5})"),
            TAU,
            move |_, x| {
                let x2 = x * x;
                x * x2 * (c3 + c5 * x2)
            },
            None,
        )
        .expect("2π is a valid period")
    }

    /// Expression-backed field. `f` may use `t` and `x`; `p` may use `t`, `x`, `y`.
    pub fn forced_general(label: impl Into<String>, period: f64, f: Expr, p: Option<Expr>) -> Result<Self> {
        if f.uses(Var::Y) {
            return Err(Error::InvalidArgument("f must not depend on y".into()));
        }
        let p: Option<DampingFn> = p.map(|p| Arc::new(move |t, x, y| p.eval(t, x, y)) as DampingFn);
        Self::new(label, period, move |t, x| f.eval(t, x, 0.0), p)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    #[inline]
    pub fn f(&self, t: f64, x: f64) -> f64 {
        (self.f)(t, x)
    }

    #[inline]
    pub fn p(&self, t: f64, x: f64, y: f64) -> f64 {
        match &self.p {
            Some(p) => p(t, x, y),
            None => 0.0,
        }
    }

    /// `G(t, x, y) = -f(t, x) - p(t, x, y)`.
    #[inline]
    pub fn g(&self, t: f64, x: f64, y: f64) -> f64 {
        -self.f(t, x) - self.p(t, x, y)
    }

    /// True when `p` is structurally zero.
    pub fn has_zero_p(&self) -> bool {
        self.p.is_none()
    }

    pub fn eval_rhs(&self, t: f64, z: PhasePoint) -> Result<(f64, f64)> {
        let dy = self.g(t, z.x, z.y);
        if !dy.is_finite() {
            return Err(Error::NonFiniteEvaluation { t, x: z.x, y: z.y });
        }
        Ok((z.y, dy))
    }

    /// Sampled check that `p` vanishes; returns the first non-zero sample.
    pub fn check_hamiltonian(&self) -> Result<()> {
        if self.p.is_none() {
            return Ok(());
        }
        let grid = [-10.0, -3.0, -1.0, -0.3, 0.0, 0.3, 1.0, 3.0, 10.0];
        for i in 0..16 {
            let t = self.period * i as f64 / 16.0;
            for &x in &grid {
                for &y in &grid {
                    let value = self.p(t, x, y);
                    if value != 0.0 {
                        return Err(Error::NotHamiltonian { t, x, y, value });
                    }
                }
            }
        }
        Ok(())
    }

    /// Breakpoint times (all periodic copies) strictly inside `(t0, t1)`.
    pub fn breakpoints_between(&self, t0: f64, t1: f64) -> Vec<f64> {
        if self.breakpoints.is_empty() || t1 <= t0 {
            return Vec::new();
        }
        let k0 = (t0 / self.period).floor() as i64 - 1;
        let k1 = (t1 / self.period).ceil() as i64 + 1;
        let mut out = Vec::new();
        for k in k0..=k1 {
            for &b in &self.breakpoints {
                let s = k as f64 * self.period + b;
                if s > t0 && s < t1 {
                    out.push(s);
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out
    }
}

/// Reversed field: `f̂(t, x) = -f(T - t, -x)`, `p̂(t, x, y) = -p(T - t, -x, y)`.
///
/// If `(x(t), y(t))` solves the original system then `(-x(T - s), y(T - s))`
/// solves the reversed one.
pub fn reverse_field(field: &PlanarField) -> PlanarField {
    let period = field.period;
    let f = field.f.clone();
    let p = field.p.clone().map(|p| Arc::new(move |t: f64, x: f64, y: f64| -p(period - t, -x, y)) as DampingFn);
    let mut breakpoints: Vec<f64> = field.breakpoints.iter().map(|b| (period - b).rem_euclid(period)).collect();
    breakpoints.sort_by(f64::total_cmp);
    PlanarField {
        label: format!("reverse({})", field.label),
        period,
        f: Arc::new(move |t, x| -f(period - t, -x)),
        p,
        breakpoints,
    }
}

/// A `T`-periodic function with its first two derivatives.
#[derive(Clone)]
pub struct PeriodicFunction {
    period: f64,
    value: ScalarFn,
    derivative: ScalarFn,
    second_derivative: ScalarFn,
}

impl fmt::Debug for PeriodicFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicFunction").field("period", &self.period).finish()
    }
}

impl PeriodicFunction {
    pub fn new(
        period: f64,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        second_derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        check_period(period)?;
        Ok(Self {
            period,
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            second_derivative: Arc::new(second_derivative),
        })
    }

    pub fn zero(period: f64) -> Result<Self> {
        Self::new(period, |_| 0.0, |_| 0.0, |_| 0.0)
    }

    /// `c cos(2πt/T) + s sin(2πt/T)`.
    pub fn harmonic(period: f64, c: f64, s: f64) -> Result<Self> {
        check_period(period)?;
        let w = TAU / period;
        Self::new(
            period,
            move |t| c * (w * t).cos() + s * (w * t).sin(),
            move |t| w * (-c * (w * t).sin() + s * (w * t).cos()),
            move |t| -w * w * (c * (w * t).cos() + s * (w * t).sin()),
        )
    }

    /// Interpolating periodic cubic spline through `samples[i] = a(i T / n)`.
    ///
    /// The spline is C², so its derivative is absolutely continuous and its
    /// second derivative is piecewise linear.
    pub fn periodic_spline(period: f64, samples: &[f64]) -> Result<Self> {
        check_period(period)?;
        let n = samples.len();
        if n < 3 {
            return Err(Error::InvalidArgument("a periodic spline needs at least 3 samples".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("spline samples must be finite".into()));
        }
        let h = period / n as f64;
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for i in 0..n {
            let prev = (i + n - 1) % n;
            let next = (i + 1) % n;
            a[(i, prev)] += 1.0;
            a[(i, i)] += 4.0;
            a[(i, next)] += 1.0;
            rhs[i] = 6.0 / (h * h) * (samples[next] - 2.0 * samples[i] + samples[prev]);
        }
        let m = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidArgument("spline system is singular".into()))?;
        let spline = Arc::new(Spline {
            period,
            h,
            y: samples.to_vec(),
            m: m.iter().copied().collect(),
        });
        let (s0, s1, s2) = (spline.clone(), spline.clone(), spline);
        Self::new(period, move |t| s0.eval(t).0, move |t| s1.eval(t).1, move |t| s2.eval(t).2)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.value)(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        (self.derivative)(t)
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        (self.second_derivative)(t)
    }
}

struct Spline {
    period: f64,
    h: f64,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.y.len();
        let s = t.rem_euclid(self.period);
        let i = ((s / self.h).floor() as usize).min(n - 1);
        let u = s - i as f64 * self.h;
        let j = (i + 1) % n;
        let h = self.h;
        let (mi, mj, yi, yj) = (self.m[i], self.m[j], self.y[i], self.y[j]);
        let v = h - u;
        let ci = yi / h - mi * h / 6.0;
        let cj = yj / h - mj * h / 6.0;
        let value = mi * v * v * v / (6.0 * h) + mj * u * u * u / (6.0 * h) + ci * v + cj * u;
        let slope = -mi * v * v / (2.0 * h) + mj * u * u / (2.0 * h) - ci + cj;
        let curvature = (mi * v + mj * u) / h;
        (value, slope, curvature)
    }
}

/// Field of `ũ'' + f(t, ũ + a) + p(t, ũ + a, ũ' + ȧ) + ä = 0`, so that
/// `x = ũ + a` solves the original equation.
///
/// The `ä` term is carried inside `p̃`, which keeps the right-hand side exact.
pub fn translate_field(field: &PlanarField, a: &PeriodicFunction) -> Result<PlanarField> {
    if (field.period - a.period).abs() > 1e-12 * field.period {
        return Err(Error::PeriodMismatch {
            field: field.period,
            shift: a.period,
        });
    }
    let f = field.f.clone();
    let p = field.p.clone();
    let (a0, a1, a2) = (a.value.clone(), a.derivative.clone(), a.second_derivative.clone());
    let shift = a0.clone();
    let f_new = move |t: f64, u: f64| f(t, u + shift(t));
    let p_new: DampingFn = Arc::new(move |t: f64, u: f64, w: f64| {
        let base = match &p {
            Some(p) => p(t, u + a0(t), w + a1(t)),
            None => 0.0,
        };
        base + a2(t)
    });
    PlanarField::new(format!("translate({})", field.label), field.period, f_new, Some(p_new))?
        .with_breakpoints(field.breakpoints.clone())
}

/// Field of `w'' + f(t, w + x̄(t)) + x̄''(t) = 0` for a periodic solution `x̄`
/// of a Hamiltonian field, with `x̄'' = -f(t, x̄)` taken from the equation.
pub fn recenter_field(field: &PlanarField, orbit: &PeriodicOrbit) -> Result<PlanarField> {
    field.check_hamiltonian()?;
    let period = field.period;
    let f = field.f.clone();
    let traj = Arc::new(orbit.trajectory.clone());
    let anchor = orbit.z_star.x;
    let xbar = move |t: f64| -> f64 {
        let s = t.rem_euclid(period);
        traj.eval(s).map(|z| z[0]).unwrap_or(anchor)
    };
    let f_new = move |t: f64, w: f64| {
        let xb = xbar(t);
        f(t, w + xb) - f(t, xb)
    };
    PlanarField::new(format!("recenter({})", field.label), period, f_new, None)?
        .with_breakpoints(field.breakpoints.clone())
}
