//! Timed-elastic-band local planning with variable splitting.
//!
//! The band optimizer alternates a Levenberg-Marquardt solve over poses and
//! time intervals with closed-form slack and multiplier updates. Baseline
//! planners, a grid simulator and a benchmark harness sit alongside it.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod band;
pub mod baselines;
pub mod bench;
pub mod error;
pub mod factors;
pub mod nlls;
pub mod sim;
pub mod vsloop;

pub use error::{Error, Result};
