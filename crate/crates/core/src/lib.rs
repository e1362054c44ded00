//! Merge-zone coordination with control barrier functions.
//!
//! Three controllers share one simulation harness: a decentralized
//! predictor-corrector CBF controller, a centralized CBF benchmark, and a
//! first-in-first-out CBF benchmark.

// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cbf;
pub mod controllers;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod qp;
pub mod sim;
pub mod tuning;
pub mod units;
pub mod verify;
