pub mod calibration;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod noise;
pub mod observables;

pub use error::{Error, Result};
