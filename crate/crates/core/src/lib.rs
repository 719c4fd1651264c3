//! Statistical characterization and mitigation of NLOS bias in UWB
//! time-of-arrival localization.
//!
//! The pipeline runs from a synthetic waveform corpus ([`corpus`]) through
//! waveform features ([`features`]) and the TOA observation model
//! ([`ranging`]) to joint bias/feature densities ([`density`]), position
//! estimators ([`localization`]) and a Monte-Carlo benchmark ([`harness`]).
//!
//! All quantities are SI: seconds, meters, and amplitudes in arbitrary volts.

pub mod config;
pub mod corpus;
pub mod density;
pub mod error;
pub mod features;
pub mod harness;
pub mod localization;
pub mod ranging;

mod geometry;
mod stats;

pub use error::{Error, Result};
pub use geometry::Point2;

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
