//! Six linear multi-environment "unit test" problems for out-of-distribution
//! generalization, five training methods (ERM, IRMv1, IGA, AND-mask and an
//! oracle) and the search/selection/repetition protocol that turns them into
//! test-error tables and sweep curves.

pub mod adam;
pub mod algorithms;
pub mod cli;
pub mod error;
pub mod harness;
pub mod math;
pub mod models;
pub mod problems;
pub mod report;
pub mod selftest;

pub use error::{Error, Result};
