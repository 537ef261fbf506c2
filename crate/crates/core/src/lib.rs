//! Rotation numbers, capture sets and degree-certified periodic orbits for
//! planar systems `x'' + f(t, x) + p(t, x, x') = 0` with superlinear `f`.

// `!(a > b)` guards reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod export;
pub mod expr;
pub mod field_model;
pub mod integrator;
pub mod rotation;
pub mod topology;

pub use error::{Error, Result};
pub use expr::{parse_expression, Expr, ParseError};
pub use field_model::{recenter_field, reverse_field, translate_field, PeriodicFunction, PhasePoint, PlanarField};
pub use integrator::{flow, flow_dense, poincare_map, EscapeReason, FlowOutcome, IntegratorOptions, Trajectory};
pub use rotation::{rotation, rotation_grid, Region, RotationGrid, RotationOutcome};
pub use topology::{
    build_capture_set, degree_fixed_point, find_periodic, find_periodic_in, multiplicity_search, winding_number,
    CaptureSet, DegreeReport, PeriodicOrbit, PolyCurve,
};
