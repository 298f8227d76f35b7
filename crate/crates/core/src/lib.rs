pub mod align;
pub mod commands;
pub mod data;
pub mod dsp;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
