//! Apparatus configuration: JSON schema, named presets and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detection::{gate_schedule, ChannelEfficiency};
use crate::engine::{DetectionChannel, MeasurementSetup};
use crate::error::invalid;
use crate::polarization::{make_source_state, AnalyzerSetting};
use crate::source::{
    emission_rates, idler_wavelength, EmissionCoefficients, EmissionRates, FilterSpec, PumpSpec,
};
use crate::{Channel, Error, Result};

const DGFAWG_JSON: &str = include_str!("../../presets/dgfawg.json");
const CWDMF_JSON: &str = include_str!("../../presets/cwdmf.json");

/// Names accepted by [`ApparatusConfig::preset`].
pub const PRESET_NAMES: [&str; 2] = ["cwdmf", "dgfawg"];

const ISOLATION_WARN: f64 = 1e-10;
const IDLER_CENTER_WARN_NM: f64 = 0.2;
const QUOTED_EFFICIENCY_WARN: f64 = 0.2;
const GATE_RATE_WARN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionConfig {
    pub coefficients: EmissionCoefficients,
    /// Pair-correlation coefficient of this filter set.
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelsConfig {
    pub signal: ChannelEfficiency,
    pub idler: ChannelEfficiency,
}

/// Descriptive fiber parameters; not used by the emission model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberMetadata {
    pub length_m: f64,
    pub zero_dispersion_wavelength_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApparatusConfig {
    pub name: String,
    pub pump: PumpSpec,
    pub signal_filter: FilterSpec,
    pub idler_filter: FilterSpec,
    pub emission: EmissionConfig,
    pub channels: ChannelsConfig,
    /// Pump pulses per detector gate.
    pub decimation: u32,
    pub fiber: FiberMetadata,
}

impl ApparatusConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let json = match name {
            "dgfawg" => DGFAWG_JSON,
            "cwdmf" => CWDMF_JSON,
            _ => {
                return Err(invalid(format!(
                    "unknown preset '{name}' (expected one of {PRESET_NAMES:?})"
                )))
            }
        };
        Self::from_json(json)
    }

    /// Parses and validates a JSON document. Warnings are not errors.
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: ApparatusConfig =
            serde_json::from_str(json).map_err(|e| invalid(format!("config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a preset by name, or a JSON file by path.
    pub fn load(path_or_preset: &str) -> Result<Self> {
        if PRESET_NAMES.contains(&path_or_preset) && !Path::new(path_or_preset).exists() {
            return Self::preset(path_or_preset);
        }
        let text = std::fs::read_to_string(path_or_preset)?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Checks every component invariant and returns the non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.pump.validate()?;
        self.signal_filter.validate()?;
        self.idler_filter.validate()?;
        self.emission.coefficients.validate()?;
        if !(0.0..=1.0).contains(&self.emission.xi) {
            return Err(invalid(format!(
                "emission xi {} outside [0, 1]",
                self.emission.xi
            )));
        }
        self.channels.signal.validate()?;
        self.channels.idler.validate()?;
        let gate_khz = gate_schedule(self.pump.repetition_rate_mhz, self.decimation)?;
        if !(self.fiber.length_m > 0.0 && self.fiber.zero_dispersion_wavelength_nm > 0.0) {
            return Err(invalid(
                "fiber length and zero-dispersion wavelength must be positive",
            ));
        }

        let mut warnings = Vec::new();
        for (label, f) in [
            ("signal", &self.signal_filter),
            ("idler", &self.idler_filter),
        ] {
            let t = f.transmission(self.pump.center_wavelength_nm);
            if t > ISOLATION_WARN {
                warnings.push(format!(
                    "{label} filter transmits {t:.3e} at the pump wavelength (isolation below 100 dB)"
                ));
            }
        }
        let expected_idler = idler_wavelength(
            self.pump.center_wavelength_nm,
            self.signal_filter.center_wavelength_nm,
        )?;
        if (expected_idler - self.idler_filter.center_wavelength_nm).abs() > IDLER_CENTER_WARN_NM {
            warnings.push(format!(
                "idler filter centered at {} nm but energy conservation puts the idler at {expected_idler:.2} nm",
                self.idler_filter.center_wavelength_nm
            ));
        }
        for (label, ch) in [
            ("signal", &self.channels.signal),
            ("idler", &self.channels.idler),
        ] {
            if let Some(m) = ch.quoted_mismatch() {
                if m > QUOTED_EFFICIENCY_WARN {
                    warnings.push(format!(
                        "{label} component product differs from the quoted total efficiency by {:.0}%",
                        100.0 * m
                    ));
                }
            }
            let rate = ch.detector.gate_rate_khz;
            if ((rate - gate_khz) / gate_khz).abs() > GATE_RATE_WARN {
                warnings.push(format!(
                    "{label} detector gate rate {rate} kHz differs from pump rate / decimation = {gate_khz} kHz"
                ));
            }
        }
        Ok(warnings)
    }

    /// Gate rate implied by the pump repetition rate and decimation.
    pub fn gate_rate_khz(&self) -> f64 {
        gate_schedule(self.pump.repetition_rate_mhz, self.decimation).unwrap_or(f64::NAN)
    }

    /// Number of gates in `seconds` of integration.
    pub fn gates_for_seconds(&self, seconds: f64) -> u64 {
        (seconds * self.gate_rate_khz() * 1e3).round() as u64
    }

    pub fn with_power_per_arm(&self, power_mw: f64) -> Self {
        ApparatusConfig {
            pump: self.pump.with_power_per_arm(power_mw),
            ..self.clone()
        }
    }

    pub fn rates(&self) -> Result<EmissionRates> {
        emission_rates(&self.emission.coefficients, &self.pump, self.emission.xi)
    }

    /// Lumped efficiency and dark probability of one arm with the analyzer inserted.
    pub fn detection_channel(&self, ch: Channel) -> DetectionChannel {
        let c = match ch {
            Channel::Signal => &self.channels.signal,
            Channel::Idler => &self.channels.idler,
        };
        DetectionChannel {
            efficiency: c.efficiency_with(true),
            dark_prob: c.detector.dark_count_prob_per_gate,
        }
    }

    /// Engine input for one analyzer and pump-phase setting.
    pub fn measurement_setup(
        &self,
        theta_s: AnalyzerSetting,
        theta_i: AnalyzerSetting,
        phi_p: f64,
    ) -> Result<MeasurementSetup> {
        let state = make_source_state(self.pump.power_h_mw, self.pump.power_v_mw, phi_p)?;
        Ok(MeasurementSetup {
            rates: self.rates()?,
            state,
            theta_s,
            theta_i,
            phi_p,
            signal: self.detection_channel(Channel::Signal),
            idler: self.detection_channel(Channel::Idler),
        })
    }
}

impl std::str::FromStr for ApparatusConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_json(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn presets_load_without_warnings() {
        for name in PRESET_NAMES {
            let cfg = ApparatusConfig::preset(name).unwrap();
            assert_eq!(cfg.name, name);
            let w = cfg.validate().unwrap();
            assert!(w.is_empty(), "{name}: {w:?}");
        }
    }

    #[test]
    fn preset_operating_points() {
        let c = ApparatusConfig::preset("cwdmf").unwrap();
        let r = c.rates().unwrap();
        assert_abs_diff_eq!(r.pair_rate, 0.006, epsilon = 1e-12);
        assert_abs_diff_eq!(r.total_per_channel(Channel::Signal), 0.02, epsilon = 1e-6);
        assert_abs_diff_eq!(
            c.detection_channel(Channel::Signal).efficiency,
            0.10,
            epsilon = 1e-4
        );
        assert_abs_diff_eq!(
            c.detection_channel(Channel::Idler).efficiency,
            0.08,
            epsilon = 1e-4
        );

        let d = ApparatusConfig::preset("dgfawg").unwrap();
        let r = d.rates().unwrap();
        assert_abs_diff_eq!(r.pair_rate, 0.07, epsilon = 1e-12);
        assert_abs_diff_eq!(r.total_per_channel(Channel::Idler), 0.1, epsilon = 1e-4);
        assert_abs_diff_eq!(
            d.detection_channel(Channel::Signal).efficiency,
            0.035,
            epsilon = 2e-3
        );
    }

    #[test]
    fn twenty_second_gates() {
        let c = ApparatusConfig::preset("dgfawg").unwrap();
        assert_abs_diff_eq!(c.gate_rate_khz(), 588.28125, epsilon = 1e-9);
        assert_eq!(c.gates_for_seconds(20.0), 11_765_625);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(DGFAWG_JSON).unwrap();
        v["pump"]["power_mW"] = serde_json::json!(0.3);
        assert!(matches!(
            ApparatusConfig::from_json(&v.to_string()),
            Err(Error::InvalidConfig(_))
        ));
        v = serde_json::from_str(DGFAWG_JSON).unwrap();
        v["colour"] = serde_json::json!("red");
        assert!(ApparatusConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(CWDMF_JSON).unwrap();
        v["signal_filter"]["peak_transmission"] = serde_json::json!(1.5);
        assert!(ApparatusConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(CWDMF_JSON).unwrap();
        v["decimation"] = serde_json::json!(0);
        assert!(ApparatusConfig::from_json(&v.to_string()).is_err());
        assert!(ApparatusConfig::preset("nope").is_err());
    }

    #[test]
    fn warnings_raised() {
        let mut c = ApparatusConfig::preset("cwdmf").unwrap();
        c.idler_filter.center_wavelength_nm = 1544.0;
        c.signal_filter.isolation_floor = 1e-8;
        c.channels.idler.quoted_total_efficiency = Some(0.2);
        c.decimation = 64;
        let w = c.validate().unwrap();
        assert_eq!(w.len(), 5, "{w:?}");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ApparatusConfig::preset("cwdmf").unwrap();
        let b: ApparatusConfig = a.to_json_pretty().parse().unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
        let c = a.with_power_per_arm(0.15);
        assert_ne!(a.config_hash(), c.config_hash());
    }
}
