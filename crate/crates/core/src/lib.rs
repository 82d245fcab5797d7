//! Simulation and key-processing stack for a wavelength-multiplexed,
//! time-bin phase-coded BB84 link with automatic drift stabilization.

pub mod bits;
pub mod channel;
pub mod distill;
pub mod error;
pub mod optics;
pub mod scenario;
pub mod stabilizer;
pub mod timebin;

pub use error::{Error, Result};
