//! Blind pilot-beacon estimation and Doppler-only positioning for LEO
//! signals of opportunity.
//!
//! The pipeline: a frame-periodic downlink is captured (or synthesized
//! with known truth), the recurring pilot beacon is estimated by Kalman
//! phase tracking plus gated coherent frame averaging, single-frame
//! correlation against the estimated beacon yields timestamped Doppler
//! measurements, and an iterative least-squares engine turns those into a
//! receiver position.

pub mod acquisition;
pub mod beacon;
pub mod capture;
pub mod correlator;
pub mod error;
pub mod estimator;
pub mod kf;
pub mod nav;
pub mod orbit;
pub mod sim;

pub use error::{Error, Result};
