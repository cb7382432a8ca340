//! Experiment runner, verification suite and scaling benchmark for the
//! Ginger preconditioner.

pub mod bench;
pub mod config;
pub mod error;
pub mod metrics;
pub mod run;
pub mod verify;

pub use error::{HarnessError, Result};
