//! Desk-scale laboratory for learning-based UAV base-station placement.
//!
//! The pipeline runs in stages, each exposed as its own module:
//!
//! - [`mobility`] generates sessions of mobile-user trajectories,
//! - [`channel`] implements the air-to-ground pathloss model and the coverage
//!   predicate,
//! - [`oracle`] computes coverage-optimal UAV positions (the training labels),
//! - [`dataset`] turns 5-instant windows into grid count tensors,
//! - [`cnn`] is a small from-scratch CNN regressor with Adam,
//! - [`rl`] holds the tabular and deep Q-learning baselines,
//! - [`eval`] compares every method on coverage and runtime,
//! - [`config`] parses the flat `section.key = value` run configuration.

pub mod channel;
pub mod cnn;
pub mod config;
pub mod dataset;
mod error;
pub mod eval;
pub mod geom;
pub mod mobility;
pub mod oracle;
pub mod rl;
pub mod rng;
mod textfmt;

pub use error::{Error, Result};
pub use geom::{Area, Position, UavPose};
