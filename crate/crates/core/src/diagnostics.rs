//! Sampled checks of the structural hypotheses on a field.
//!
//! Every check evaluates the hypothesis on finitely many points and reports
//! `ConsistentOnSamples` or a concrete witness. Nothing here is a proof.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::field_model::{reverse_field, PeriodicFunction, PhasePoint, PlanarField};
use crate::integrator::{flow, FlowOutcome, IntegratorOptions};
use crate::rotation::Region;

pub const DEFAULT_SEED: u64 = 0x5EED_2024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    A3,
    A4,
    A5,
    A5Star,
    SuperEst,
    A5Sufficient,
}

/// A sample at which the checked inequality fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Left-hand side of the inequality at the witness.
    pub value: f64,
    /// Right-hand side of the inequality at the witness.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    ConsistentOnSamples,
    ViolatedAt(Witness),
}

impl Verdict {
    pub fn is_consistent(&self) -> bool {
        matches!(self, Verdict::ConsistentOnSamples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub hypothesis: Hypothesis,
    pub verdict: Verdict,
    pub samples: usize,
    pub parameters: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footnote: Option<String>,
}

impl HypothesisReport {
    fn new(hypothesis: Hypothesis, verdict: Verdict, samples: usize) -> Self {
        Self {
            hypothesis,
            verdict,
            samples,
            parameters: BTreeMap::new(),
            footnote: None,
        }
    }

    fn param(mut self, key: &str, value: Value) -> Self {
        self.parameters.insert(key.to_string(), value);
        self
    }
}

/// Draws `(t, x, y)` samples sequentially so results do not depend on the
/// thread count.
fn draw(seed: u64, n: usize, mut gen: impl FnMut(&mut ChaCha8Rng) -> (f64, f64, f64)) -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| gen(&mut rng)).collect()
}

/// First sample (in input order) where `holds` is false.
fn first_violation(
    pts: &[(f64, f64, f64)],
    sides: impl Fn(f64, f64, f64) -> (f64, f64) + Sync,
    holds: impl Fn(f64, f64) -> bool + Sync,
) -> Verdict {
    let found = pts
        .par_iter()
        .map(|&(t, x, y)| {
            let (value, bound) = sides(t, x, y);
            (!holds(value, bound)).then_some(Witness { t, x, y, value, bound })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .next();
    match found {
        Some(w) => Verdict::ViolatedAt(w),
        None => Verdict::ConsistentOnSamples,
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Superlinear growth: `min_t f(t, x)/x` over `|x| = m` must increase along
/// the magnitudes and exceed `threshold` at the largest one.
pub fn check_superlinearity(field: &PlanarField, x_magnitudes: &[f64], t_samples: usize, threshold: f64) -> HypothesisReport {
    let mut mags: Vec<f64> = x_magnitudes.iter().map(|m| m.abs()).filter(|m| *m > 0.0).collect();
    mags.sort_by(f64::total_cmp);
    mags.dedup();
    let nt = t_samples.max(1);
    let period = field.period();

    let mut minima: Vec<(f64, f64, f64)> = Vec::with_capacity(mags.len());
    for &m in &mags {
        let mut best = (f64::INFINITY, 0.0, m);
        for k in 0..nt {
            let t = period * k as f64 / nt as f64;
            for x in [m, -m] {
                let q = field.f(t, x) / x;
                if !(q >= best.0) {
                    best = (q, t, x);
                }
            }
        }
        minima.push(best);
    }

    let mut verdict = Verdict::ConsistentOnSamples;
    for w in minima.windows(2) {
        if !(w[1].0 > w[0].0) {
            verdict = Verdict::ViolatedAt(Witness {
                t: w[1].1,
                x: w[1].2,
                y: 0.0,
                value: w[1].0,
                bound: w[0].0,
            });
            break;
        }
    }
    if verdict.is_consistent() {
        if let Some(&(q, t, x)) = minima.last() {
            if !(q >= threshold) {
                verdict = Verdict::ViolatedAt(Witness {
                    t,
                    x,
                    y: 0.0,
                    value: q,
                    bound: threshold,
                });
            }
        }
    }
    HypothesisReport::new(Hypothesis::A3, verdict, mags.len() * nt * 2)
        .param("x_magnitudes", json!(mags))
        .param("t_samples", json!(nt))
        .param("threshold", json!(threshold))
        .param("min_quotients", json!(minima.iter().map(|m| m.0).collect::<Vec<_>>()))
}

/// `|p(t, x, y)| < γ_p(t) + C_p |x|` on random samples of `[0, T) × box`.
/// A degenerate box side (`min == max`) pins that coordinate.
pub fn check_p_bound(
    field: &PlanarField,
    gamma_p: impl Fn(f64) -> f64 + Sync,
    c_p: f64,
    samples: usize,
    region: Region,
    seed: u64,
) -> HypothesisReport {
    let period = field.period();
    let pts = draw(seed, samples, |rng| {
        (
            uniform(rng, 0.0, period),
            uniform(rng, region.xmin, region.xmax),
            uniform(rng, region.ymin, region.ymax),
        )
    });
    let verdict = first_violation(
        &pts,
        |t, x, y| (field.p(t, x, y).abs(), gamma_p(t) + c_p * x.abs()),
        |v, b| v < b,
    );
    HypothesisReport::new(Hypothesis::A4, verdict, samples)
        .param("c_p", json!(c_p))
        .param("region", json!(region))
        .param("seed", json!(seed))
}

/// Continuability of the solutions through `(a(t̄), ȧ(t̄))` for `t̄` on a grid
/// of `[0, T)`: forward to `T` with the field, and back to `0` through the
/// reversed field run from `T - t̄`. With `a = None` the zero function is used.
pub fn check_continuability(
    field: &PlanarField,
    a: Option<&PeriodicFunction>,
    t_grid: usize,
    opts: &IntegratorOptions,
) -> Result<HypothesisReport> {
    let period = field.period();
    if let Some(a) = a {
        if (a.period() - period).abs() > 1e-12 * period {
            return Err(Error::PeriodMismatch {
                field: period,
                shift: a.period(),
            });
        }
    }
    let reversed = reverse_field(field);
    let n = t_grid.max(1);
    let runs = (0..n)
        .into_par_iter()
        .map(|k| -> Result<Option<(Witness, f64, &'static str)>> {
            let tb = period * k as f64 / n as f64;
            let (x, y) = a.map_or((0.0, 0.0), |a| (a.value(tb), a.derivative(tb)));
            let forward = flow(field, tb, period, PhasePoint::new(x, y), opts)?;
            let backward = flow(&reversed, period - tb, period, PhasePoint::new(-x, y), opts)?;
            let witness = Witness {
                t: tb,
                x,
                y,
                value: 0.0,
                bound: 0.0,
            };
            Ok(match (forward, backward) {
                (FlowOutcome::Escaped { t_escape, .. }, _) => Some((witness, t_escape, "forward")),
                (_, FlowOutcome::Escaped { t_escape, .. }) => Some((witness, period - t_escape, "backward")),
                _ => None,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let hypothesis = if a.is_some() { Hypothesis::A5Star } else { Hypothesis::A5 };
    let mut report = HypothesisReport::new(hypothesis, Verdict::ConsistentOnSamples, 2 * n).param("t_grid", json!(n));
    if let Some((w, t_escape, direction)) = runs.into_iter().flatten().next() {
        report.verdict = Verdict::ViolatedAt(Witness {
            value: t_escape,
            bound: if direction == "forward" { period } else { 0.0 },
            ..w
        });
        report = report
            .param("escape_time", json!(t_escape))
            .param("escape_direction", json!(direction));
    }
    Ok(report)
}

/// `y (x - f(t, x) - p(t, x, y)) < α |(x, y)|` on random samples of
/// `[0, T] × B_{αT}` with the origin excluded. When it holds everywhere,
/// continuability near the origin follows.
pub fn check_a5_sufficient(field: &PlanarField, alpha: f64, samples: usize, seed: u64) -> Result<HypothesisReport> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let period = field.period();
    let radius = alpha * period;
    let pts = draw(seed, samples, |rng| {
        let t = uniform(rng, 0.0, period);
        let r = radius * rng.random_range(1e-9f64..1.0).sqrt();
        let phi = uniform(rng, 0.0, TAU);
        (t, r * phi.cos(), r * phi.sin())
    });
    let verdict = first_violation(
        &pts,
        |t, x, y| (y * (x - field.f(t, x) - field.p(t, x, y)), alpha * x.hypot(y)),
        |v, b| v < b,
    );
    let mut report = HypothesisReport::new(Hypothesis::A5Sufficient, verdict, samples)
        .param("alpha", json!(alpha))
        .param("ball_radius", json!(radius))
        .param("seed", json!(seed));
    report.footnote = Some(
        "the condition is stated with f(t,x,y); f takes no velocity argument here, so f(t,x) is used".to_string(),
    );
    Ok(report)
}

/// `(f(t, x) + p(t, x, y)) x > α x² - γ_α(t) |x|` on random samples with
/// `|x| ≤ x_range`, `|y| ≤ y_range`; `x = 0` is excluded since both sides
/// vanish there.
pub fn check_super_est(
    field: &PlanarField,
    alpha: f64,
    gamma_alpha: impl Fn(f64) -> f64 + Sync,
    samples: usize,
    x_range: f64,
    y_range: f64,
    seed: u64,
) -> Result<HypothesisReport> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must exceed 1, got {alpha}")));
    }
    let period = field.period();
    let pts = draw(seed, samples, |rng| {
        let t = uniform(rng, 0.0, period);
        let mut x = 0.0;
        while x == 0.0 {
            x = uniform(rng, -x_range, x_range);
        }
        (t, x, uniform(rng, -y_range, y_range))
    });
    let verdict = first_violation(
        &pts,
        |t, x, y| ((field.f(t, x) + field.p(t, x, y)) * x, alpha * x * x - gamma_alpha(t) * x.abs()),
        |v, b| v > b,
    );
    Ok(HypothesisReport::new(Hypothesis::SuperEst, verdict, samples)
        .param("alpha", json!(alpha))
        .param("x_range", json!(x_range))
        .param("y_range", json!(y_range))
        .param("seed", json!(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;

    fn expr_field(f: &str, p: Option<&str>) -> PlanarField {
        PlanarField::forced_general(
            "test",
            TAU,
            parse_expression(f).unwrap(),
            p.map(|p| parse_expression(p).unwrap()),
        )
        .unwrap()
    }

    fn witness(r: &HypothesisReport) -> Witness {
        match r.verdict {
            Verdict::ViolatedAt(w) => w,
            Verdict::ConsistentOnSamples => panic!("expected a violation: {r:?}"),
        }
    }

    #[test]
    fn superlinearity_examples() {
        let cubic = PlanarField::superlinear_poly(1.0, 0.0);
        assert!(check_superlinearity(&cubic, &[2.0, 5.0, 10.0], 16, 50.0).verdict.is_consistent());
        let lin = PlanarField::linear(1.0);
        let w = witness(&check_superlinearity(&lin, &[1.0, 2.0, 10.0], 16, 50.0));
        assert_eq!(w.value, lin.f(w.t, w.x) / w.x);
        let mixed = expr_field("x^3 + sin(t)*x", None);
        assert!(check_superlinearity(&mixed, &[8.0, 16.0, 32.0], 64, 50.0).verdict.is_consistent());
    }

    #[test]
    fn p_bound_examples() {
        let duff = PlanarField::duffing(0.05);
        let r = check_p_bound(&duff, |_| 0.06, 0.0, 500, Region::square(5.0), DEFAULT_SEED);
        assert!(r.verdict.is_consistent());

        let lin_y = expr_field("x", Some("y"));
        let strip = Region {
            xmin: 0.0,
            xmax: 0.0,
            ymin: -10.0,
            ymax: 10.0,
        };
        let r = check_p_bound(&lin_y, |_| 1.0, 1.0, 500, strip, DEFAULT_SEED);
        let w = witness(&r);
        assert_eq!(w.x, 0.0);
        assert!(w.y.abs() >= 1.0);
        assert!(lin_y.p(w.t, w.x, w.y).abs() >= 1.0 + w.x.abs());

        let bounded = expr_field("x", Some("0.1*x*sin(y)"));
        let r = check_p_bound(&bounded, |_| 0.01, 0.1, 500, Region::square(5.0), DEFAULT_SEED);
        assert!(r.verdict.is_consistent());
    }

    #[test]
    fn continuability_examples() {
        let cubic = PlanarField::superlinear_poly(1.0, 0.0);
        let opts = IntegratorOptions::default();
        assert!(check_continuability(&cubic, None, 8, &opts).unwrap().verdict.is_consistent());
        let duff = PlanarField::duffing(0.05);
        assert!(check_continuability(&duff, None, 32, &opts).unwrap().verdict.is_consistent());
        // x'' = x³ from x = 2 blows up forward within a period.
        let anti = expr_field("-x^3", None);
        let a = PeriodicFunction::harmonic(TAU, 2.0, 0.0).unwrap();
        let r = check_continuability(&anti, Some(&a), 4, &opts).unwrap();
        assert_eq!(r.hypothesis, Hypothesis::A5Star);
        witness(&r);
        assert!(r.parameters.contains_key("escape_time"));
    }

    #[test]
    fn a5_sufficient_examples() {
        let lin = PlanarField::linear(1.0);
        assert!(check_a5_sufficient(&lin, 1.0, 1000, DEFAULT_SEED).unwrap().verdict.is_consistent());
        let cubic = PlanarField::superlinear_poly(1.0, 0.0);
        let r = check_a5_sufficient(&cubic, 1.0, 1000, DEFAULT_SEED).unwrap();
        let w = witness(&r);
        let lhs = w.y * (w.x - w.x.powi(3));
        assert_eq!(lhs, w.value);
        assert!(lhs >= w.x.hypot(w.y));
        // Exact arithmetic at the documented point.
        assert!(2.0 * (-2.0f64 + 8.0) > 8.0f64.sqrt());
        // Small balls: |y x| <= r²/2 <= (αT/2) r, so the bound holds once T < 2.
        assert!(check_a5_sufficient(&lin, 0.001, 1000, DEFAULT_SEED).unwrap().verdict.is_consistent());
        let short = PlanarField::new("cubic", 1.0, |_, x| x * x * x, None).unwrap();
        assert!(check_a5_sufficient(&short, 0.001, 1000, DEFAULT_SEED).unwrap().verdict.is_consistent());
        assert!(r.footnote.is_some());
        assert!(check_a5_sufficient(&cubic, 0.0, 10, DEFAULT_SEED).is_err());
    }

    #[test]
    fn super_est_examples() {
        let cubic = PlanarField::superlinear_poly(1.0, 0.0);
        let r = check_super_est(&cubic, 2.0, |_| 2.0, 2000, 10.0, 10.0, DEFAULT_SEED).unwrap();
        assert!(r.verdict.is_consistent());
        let r = check_super_est(&cubic, 2.0, |_| 0.0, 2000, 10.0, 10.0, DEFAULT_SEED).unwrap();
        let w = witness(&r);
        assert!(w.x.powi(4) <= 2.0 * w.x * w.x);
        let duff = PlanarField::duffing(0.05);
        assert!(check_super_est(&duff, 2.0, |_| 2.06, 2000, 10.0, 10.0, DEFAULT_SEED)
            .unwrap()
            .verdict
            .is_consistent());
        assert!(check_super_est(&cubic, 1.0, |_| 2.0, 10, 1.0, 1.0, DEFAULT_SEED).is_err());
    }

    #[test]
    fn reports_are_reproducible() {
        let cubic = PlanarField::superlinear_poly(1.0, 0.0);
        let a = check_a5_sufficient(&cubic, 1.0, 300, 7).unwrap();
        let b = check_a5_sufficient(&cubic, 1.0, 300, 7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.parameters["seed"], json!(7));
    }
}
