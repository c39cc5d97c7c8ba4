pub mod codec;
pub mod data;
pub mod defense;
pub mod diffusion;
pub mod eavesdrop;
pub mod error;
pub mod harness;
pub mod jammer;
pub mod nn;
pub mod shield;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
