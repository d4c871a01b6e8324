pub mod cir;
pub mod config;
pub mod detection;
pub mod drift;
pub mod error;
pub mod experiment;
pub mod quadrature;
pub mod sim;
pub mod special;
pub mod waveform;

pub use error::{FamcError, Result};
