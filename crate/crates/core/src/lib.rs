//! Conditional partial conjunction hypothesis tests.
//!
//! Given `m` independent unit-scale statistics `T_i ~ F(. - theta_i)`, the
//! partial conjunction null says fewer than `r` of the `theta_i` are
//! nonzero. The conditional test combines the `m - r + 1` smallest
//! magnitudes and calibrates the combination against its law given the
//! `r - 1` largest, with the unknown means replaced by a plug-in.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjustment;
pub mod combining;
pub mod distributions;
pub mod engine;
pub mod error;
pub mod multiple_testing;
pub mod rng;
pub mod simulation;

pub use adjustment::{AdjustmentTable, SgdConfig};
pub use combining::{CombiningMethod, OrderedDecomposition, StatVector};
pub use distributions::LocationFamily;
pub use engine::{CpchEngine, Decision, Evaluation, PchResult};
pub use error::{Error, Result};
