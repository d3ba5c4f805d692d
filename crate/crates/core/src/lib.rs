//! Drone-racing stack with a perception/control split.
//!
//! A perception backend maps an onboard observation to a goal direction in
//! normalized image coordinates plus a normalized speed. The control side
//! back-projects that direction into a goal point, plans a minimum-jerk
//! interception segment in receding-horizon fashion and tracks it with a
//! flatness-based controller. Training labels come from an expert that
//! follows a minimum-snap global trajectory through the gates.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod control;
pub mod error;
pub mod expert;
pub mod geometry;
pub mod harness;
pub mod perception;
pub mod render;
pub mod rng;
pub mod sim;
pub mod trajectory;

pub use error::{Error, Result};
