//! Signal-detection model of two-agent decision teams.

// `!(x > 0.0)` style guards deliberately reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod bounds;
pub mod error;
pub mod inference;
pub mod io;
pub mod montecarlo;
pub mod normal;
pub mod quad;
pub mod rng;
pub mod sdt;

pub use error::{Error, Result};
pub use sdt::{AgentParams, PairConfig, TrialRecord};
