//! Learning, analysing and benchmarking consistent, time-symmetric splitting
//! methods for the spectrally discretised 1-D Schrödinger equation.

pub mod analysis;
pub mod data;
pub mod error;
pub mod reference;
pub mod spectral;
pub mod splitcore;
pub mod train;

pub use error::{Error, Result};
