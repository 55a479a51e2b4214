//! Simulation and estimation toolkit for the 4/3-variation of the derivative of
//! self-intersection Brownian local time and of the companion smoothed-noise process.

pub mod constants;
pub mod error;
pub mod fractional;
pub mod lemmas;
pub mod local_time;
pub mod paths;
pub mod quadrature;
pub mod silt;
pub mod stats;
pub mod variation;

pub use error::{Error, Result};
