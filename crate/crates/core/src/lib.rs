//! Ultrasonic full-matrix-capture simulation and defect imaging.

pub mod acquisition;
pub mod error;
pub mod fwi;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rtm;
pub mod scenarios;
pub mod tfm;
pub mod wavesim;

pub use error::{Error, Result};
