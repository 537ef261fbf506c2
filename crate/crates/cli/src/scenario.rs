//! TOML scenario files.
//!
//! ```toml
//! T = 6.283185307179586
//! seed = 7
//!
//! [field]
//! kind = "expr"            # linear | duffing | superlinear_poly | expr
//! f = "x^3"
//! p = "-0.05*cos(t)"
//!
//! [region]
//! xmin = -3.0
//! xmax = 3.0
//! ymin = -3.0
//! ymax = 3.0
//!
//! [grid]
//! nx = 48
//! ny = 48
//!
//! [search]
//! n_bar = 1
//! k_list = [1, 2, 3]
//!
//! [integrator]
//! rel_tol = 1e-10
//!
//! [a]
//! expr = "0.1*sin(t)"
//! expr_dot = "0.1*cos(t)"
//! ```

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rotor_core::diagnostics::DEFAULT_SEED;
use rotor_core::topology::AnnulusHint;
use rotor_core::{parse_expression, Expr, IntegratorOptions, PeriodicFunction, PhasePoint, PlanarField, Region};
use serde::Deserialize;

use crate::pipeline::Stage;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid scenario {origin}: {message}")]
    Invalid { origin: String, message: String },
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum FieldKind {
    Linear,
    Duffing,
    SuperlinearPoly,
    Expr,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldSpec {
    kind: FieldKind,
    omega: Option<f64>,
    eps: Option<f64>,
    c3: Option<f64>,
    c5: Option<f64>,
    f: Option<String>,
    p: Option<String>,
    #[serde(default)]
    breakpoints: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionSpec {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    nx: usize,
    ny: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchSpec {
    n_bar: Option<u32>,
    #[serde(default)]
    k_list: Vec<u32>,
    /// Newton seed tried before the degree-guided bisection.
    seed: Option<[f64; 2]>,
    /// Seed for the base orbit of the multiplicity search.
    base_seed: Option<[f64; 2]>,
    r_max: Option<f64>,
    rays: Option<usize>,
    radial_steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntegratorSpec {
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    escape_radius: Option<f64>,
    min_step: Option<f64>,
    max_steps: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShiftSpec {
    expr: Option<String>,
    expr_dot: Option<String>,
    expr_ddot: Option<String>,
    samples: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckSpec {
    #[serde(default = "CheckSpec::default_magnitudes")]
    x_magnitudes: Vec<f64>,
    #[serde(default = "CheckSpec::default_threshold")]
    threshold: f64,
    #[serde(default = "CheckSpec::default_gamma_p")]
    gamma_p: String,
    #[serde(default)]
    c_p: f64,
    #[serde(default = "CheckSpec::default_alpha_super")]
    alpha_super: f64,
    gamma_alpha: Option<String>,
    #[serde(default = "CheckSpec::default_alpha_a5")]
    alpha_a5: f64,
    #[serde(default = "CheckSpec::default_samples")]
    samples: usize,
    #[serde(default = "CheckSpec::default_t_grid")]
    t_grid: usize,
    #[serde(default = "CheckSpec::default_reverse_samples")]
    reverse_samples: usize,
}

impl CheckSpec {
    fn default_magnitudes() -> Vec<f64> {
        vec![10.0, 100.0, 1000.0]
    }
    fn default_threshold() -> f64 {
        100.0
    }
    fn default_gamma_p() -> String {
        "1".into()
    }
    fn default_alpha_super() -> f64 {
        2.0
    }
    fn default_alpha_a5() -> f64 {
        1.0
    }
    fn default_samples() -> usize {
        1000
    }
    fn default_t_grid() -> usize {
        32
    }
    fn default_reverse_samples() -> usize {
        20
    }
}

impl Default for CheckSpec {
    fn default() -> Self {
        toml::from_str("").expect("all check keys have defaults")
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(rename = "T")]
    period: Option<f64>,
    label: Option<String>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    stages: Option<Vec<Stage>>,
    field: FieldSpec,
    region: Option<RegionSpec>,
    grid: Option<GridSpec>,
    #[serde(default)]
    search: SearchSpec,
    #[serde(default)]
    integrator: IntegratorSpec,
    a: Option<ShiftSpec>,
    #[serde(default)]
    check: CheckSpec,
}

/// Settings for the hypothesis checks.
#[derive(Debug, Clone)]
pub struct CheckSettings {
    pub x_magnitudes: Vec<f64>,
    pub threshold: f64,
    pub gamma_p: Expr,
    pub c_p: f64,
    pub alpha_super: f64,
    pub gamma_alpha: Option<Expr>,
    pub alpha_a5: f64,
    pub samples: usize,
    pub t_grid: usize,
    pub reverse_samples: usize,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub field: PlanarField,
    pub region: Region,
    pub nx: usize,
    pub ny: usize,
    pub n_bar: Option<u32>,
    pub newton_seed: Option<PhasePoint>,
    pub base_seed: PhasePoint,
    pub k_list: Vec<u32>,
    pub annulus: AnnulusHint,
    pub opts: IntegratorOptions,
    pub shift: Option<PeriodicFunction>,
    pub check: CheckSettings,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub stages: Option<Vec<Stage>>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let src = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let default_label = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        Self::parse(&src, &path.display().to_string(), default_label)
    }

    pub fn parse(src: &str, origin: &str, default_label: Option<String>) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(src).map_err(|e| ScenarioError::Parse {
            origin: origin.to_string(),
            message: describe_toml_error(src, &e),
        })?;
        let invalid = |message: String| ScenarioError::Invalid {
            origin: origin.to_string(),
            message,
        };
        let expr = |key: &str, s: &str| {
            parse_expression(s).map_err(|e| ScenarioError::Parse {
                origin: origin.to_string(),
                message: format!("expression `{key}`: {e}"),
            })
        };

        let period = file.period.unwrap_or(TAU);
        if !(period > 0.0) || !period.is_finite() {
            return Err(invalid(format!("T must be positive, got {period}")));
        }
        let spec = &file.field;
        let builtin_period = |name: &str| -> Result<(), ScenarioError> {
            if (period - TAU).abs() > 1e-12 {
                return Err(invalid(format!("built-in field `{name}` has T = 2π")));
            }
            Ok(())
        };
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| invalid(format!("[field] needs `{key}`")));
        let field = match spec.kind {
            FieldKind::Linear => {
                builtin_period("linear")?;
                PlanarField::linear(need(spec.omega, "omega")?)
            }
            FieldKind::Duffing => {
                builtin_period("duffing")?;
                PlanarField::duffing(need(spec.eps, "eps")?)
            }
            FieldKind::SuperlinearPoly => {
                builtin_period("superlinear_poly")?;
                PlanarField::superlinear_poly(spec.c3.unwrap_or(1.0), spec.c5.unwrap_or(0.0))
            }
            FieldKind::Expr => {
                let f = expr("f", spec.f.as_deref().ok_or_else(|| invalid("[field] needs `f`".into()))?)?;
                let p = spec.p.as_deref().map(|p| expr("p", p)).transpose()?;
                let label = file.label.clone().or(default_label.clone()).unwrap_or_else(|| "expr".into());
                PlanarField::forced_general(label, period, f, p).map_err(|e| invalid(e.to_string()))?
            }
        };
        let field = field
            .with_breakpoints(spec.breakpoints.clone())
            .map_err(|e| invalid(e.to_string()))?;
        let label = file.label.clone().or(default_label).unwrap_or_else(|| field.label().to_string());
        let field = field.relabel(label.clone());
        spot_check_periodicity(&field).map_err(invalid)?;

        let region = match &file.region {
            Some(r) => Region::new(r.xmin, r.xmax, r.ymin, r.ymax).map_err(|e| invalid(e.to_string()))?,
            None => Region::square(3.0),
        };
        if !region.contains(PhasePoint::ORIGIN) {
            return Err(invalid("the region must contain the origin".into()));
        }
        let (nx, ny) = file.grid.as_ref().map_or((48, 48), |g| (g.nx, g.ny));
        if nx < 2 || ny < 2 {
            return Err(invalid(format!("grid must be at least 2x2, got {nx}x{ny}")));
        }

        let mut opts = IntegratorOptions::default();
        let i = &file.integrator;
        if let Some(v) = i.rel_tol {
            opts.rel_tol = v;
        }
        if let Some(v) = i.abs_tol {
            opts.abs_tol = v;
        }
        if let Some(v) = i.escape_radius {
            opts.escape_radius = v;
        }
        if i.min_step.is_some() {
            opts.min_step = i.min_step;
        }
        if let Some(v) = i.max_steps {
            opts.max_steps = v;
        }
        opts.validate().map_err(|e| invalid(e.to_string()))?;

        let s = &file.search;
        let defaults = AnnulusHint::default();
        let annulus = AnnulusHint {
            r_max: s.r_max.unwrap_or(defaults.r_max),
            rays: s.rays.unwrap_or(defaults.rays),
            radial_steps: s.radial_steps.unwrap_or(defaults.radial_steps),
            rho_tol: defaults.rho_tol,
        };

        let shift = file.a.as_ref().map(|a| build_shift(a, period, &expr, &invalid)).transpose()?;

        let c = &file.check;
        let check = CheckSettings {
            x_magnitudes: c.x_magnitudes.clone(),
            threshold: c.threshold,
            gamma_p: expr("check.gamma_p", &c.gamma_p)?,
            c_p: c.c_p,
            alpha_super: c.alpha_super,
            gamma_alpha: c.gamma_alpha.as_deref().map(|g| expr("check.gamma_alpha", g)).transpose()?,
            alpha_a5: c.alpha_a5,
            samples: c.samples,
            t_grid: c.t_grid,
            reverse_samples: c.reverse_samples,
        };

        Ok(Scenario {
            label,
            field,
            region,
            nx,
            ny,
            n_bar: s.n_bar,
            newton_seed: s.seed.map(|[x, y]| PhasePoint::new(x, y)),
            base_seed: s.base_seed.map_or(PhasePoint::ORIGIN, |[x, y]| PhasePoint::new(x, y)),
            k_list: s.k_list.clone(),
            annulus,
            opts,
            shift,
            check,
            seed: file.seed.unwrap_or(DEFAULT_SEED),
            out: file.out.clone(),
            stages: file.stages.clone(),
        })
    }
}

fn build_shift(
    a: &ShiftSpec,
    period: f64,
    expr: &dyn Fn(&str, &str) -> Result<Expr, ScenarioError>,
    invalid: &dyn Fn(String) -> ScenarioError,
) -> Result<PeriodicFunction, ScenarioError> {
    if let Some(samples) = &a.samples {
        return PeriodicFunction::periodic_spline(period, samples).map_err(|e| invalid(e.to_string()));
    }
    let (Some(v), Some(d)) = (&a.expr, &a.expr_dot) else {
        return Err(invalid("[a] needs `expr` and `expr_dot`, or `samples`".into()));
    };
    let v = expr("a.expr", v)?;
    let d = expr("a.expr_dot", d)?;
    let dd = match &a.expr_ddot {
        Some(s) => Some(expr("a.expr_ddot", s)?),
        None => None,
    };
    let d2 = d.clone();
    // Without `expr_ddot` the second derivative is a central difference of `expr_dot`.
    let h = 1e-5 * period;
    PeriodicFunction::new(
        period,
        move |t| v.eval(t, 0.0, 0.0),
        move |t| d.eval(t, 0.0, 0.0),
        move |t| match &dd {
            Some(dd) => dd.eval(t, 0.0, 0.0),
            None => (d2.eval(t + h, 0.0, 0.0) - d2.eval(t - h, 0.0, 0.0)) / (2.0 * h),
        },
    )
    .map_err(|e| invalid(e.to_string()))
}

fn spot_check_periodicity(field: &PlanarField) -> Result<(), String> {
    let period = field.period();
    for k in 0..16 {
        let t = period * k as f64 / 16.0 + 0.0123;
        for (x, y) in [(0.3, -0.7), (-1.1, 0.4), (2.5, 1.5)] {
            let a = field.g(t, x, y);
            let b = field.g(t + period, x, y);
            if (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
                return Err(format!(
                    "field is not {period}-periodic in t: G({t}, {x}, {y}) = {a} but G(t + T) = {b}"
                ));
            }
        }
    }
    Ok(())
}

fn describe_toml_error(src: &str, e: &toml::de::Error) -> String {
    let msg = e.message().trim().to_string();
    match e.span() {
        Some(span) => {
            let line = src[..span.start.min(src.len())].matches('\n').count() + 1;
            format!("line {line}: {msg}")
        }
        None => msg,
    }
}
