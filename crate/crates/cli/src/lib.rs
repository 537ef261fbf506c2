//! Scenario files and the staged pipeline behind the `rotor` binary.

// `!(a > b)` guards reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod pipeline;
pub mod scenario;

pub use pipeline::{run_stages, Stage, StageReport};
pub use scenario::{Scenario, ScenarioError};
