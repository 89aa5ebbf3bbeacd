//! Simulation and analysis toolkit for a counter-propagating fiber-loop source
//! of polarization-entangled photon pairs.
//!
//! The crate is layered bottom-up:
//!
//! - [`polarization`]: two-photon polarization states, waveplates and analyzer projections.
//! - [`source`]: filter and pump spectra, per-pulse emission of pairs, Raman and
//!   SPM leakage photons.
//! - [`detection`]: lumped channel efficiencies and gated-Geiger click statistics.
//! - [`engine`]: per-gate Monte Carlo counting with reproducible parallel streams.
//! - [`oracle`]: closed-form first-order singles, coincidences and visibility.
//! - [`analysis`]: dark subtraction and linearized cosine fringe fits.
//! - [`experiment`]: apparatus configuration, presets, scenarios, calibration and I/O.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod detection;
pub mod engine;
mod error;
pub mod experiment;
pub mod oracle;
pub mod polarization;
pub mod source;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// One of the two detection arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Signal,
    Idler,
}
