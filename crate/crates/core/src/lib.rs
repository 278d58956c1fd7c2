//! Simulation and analysis toolkit for a device-independent QKD link built on
//! heralded entanglement between two remote atoms.

pub mod error;
pub mod harness;
pub mod keyrate;
pub mod link;
pub mod numeric;
pub mod protocol;
pub mod quantum;
pub mod stats;

pub use error::{Error, Result};
