//! Levitated opto-magno-mechanical cavity as a displacement sensor.
//!
//! A graphite plate carrying a cavity mirror is diamagnetically levitated
//! between two checkerboard magnet arrays; its vertical trap frequency depends
//! on the array separation `d`. The crate simulates the cavity/mechanics
//! dynamics, photon loss via a collision model, and the quantum and classical
//! Fisher information available for estimating `d`.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod channels;
pub mod dynamics;
pub mod hilbert;
pub mod metrology;
pub mod trap;

pub use error::{Error, Result};
