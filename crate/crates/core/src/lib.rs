//! Simulation and analysis of heralding on zero photons.
//!
//! A pulsed photon-pair source feeds a Hong-Ou-Mandel interferometer with two
//! click detectors. [`sim`] generates time-tag streams from that setup,
//! [`tags`] rebuilds click/no-click tables from the streams, [`analysis`]
//! turns the tables into heralded rates and fitted center-to-wings ratios,
//! and [`model`] holds the closed-form predictions they are checked against.

pub mod analysis;
pub mod config;
pub mod error;
pub mod model;
pub mod sim;
pub mod tags;

pub use error::{Error, ErrorKind, Result};
