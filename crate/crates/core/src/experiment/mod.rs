//! Apparatus configuration, scan scenarios, calibration and result I/O.

mod calibrate;
mod config;
pub mod output;
mod scenario;

pub use calibrate::{calibrate, CalibrationResult, CalibrationTarget, TargetResidual};
pub use config::{ApparatusConfig, ChannelsConfig, EmissionConfig, FiberMetadata, PRESET_NAMES};
pub use scenario::{
    analyzer_scan, phase_scan, power_sweep, pump_monitor_mw, series_from_points, uniform_grid,
    Provenance, Quantity, ScanFits, ScanOptions, ScanPoint, ScenarioKind, ScenarioResult,
    SweepPoint, VisibilityPair,
};
