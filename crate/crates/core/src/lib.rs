//! Vehicle odometry from the radial velocities of individual range-sensor scans.
//!
//! The sensor velocity is recovered from one scan's radial velocities
//! ([`ego_velocity`]), converted into vehicle linear and angular velocity with a
//! fixed-rotation-axis kinematic model ([`kinematics`]) and integrated into an
//! SE(3) trajectory ([`odometry`]). Supporting modules cover extrinsic
//! calibration, a synthetic scan generator, file formats, trajectory
//! evaluation and the command-line front end.

// Negated comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cli;
pub mod config;
pub mod ego_velocity;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod kinematics;
pub mod odometry;
pub mod simulator;

pub use error::{Error, Result};
