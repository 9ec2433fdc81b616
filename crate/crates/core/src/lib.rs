//! Memory-based data-driven model reference adaptive control.
//!
//! The identifier recovers the plant parameters in finite time from a
//! history stack of filtered regressors; the controller then drives its
//! gains to the matching values using a second stack of recorded states
//! and references, without requiring persistent excitation.

pub mod controller;
pub mod error;
pub mod excitation;
pub mod identifier;
pub mod matrixlab;
pub mod memory;
pub mod simengine;
pub mod system;

pub use error::{MracError, Result};
