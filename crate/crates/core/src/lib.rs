//! Localization workbench for a STAR-RIS assisted uplink in which one BS
//! locates an outdoor MS (direct + reflected paths) and an indoor MS
//! (refracted path) at the same time.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod estimator;
pub mod fisher;
pub mod geometry;
pub mod harness;
pub mod scenario;
pub mod signal;
pub mod star_ris;

pub use error::{LocError, Result};
