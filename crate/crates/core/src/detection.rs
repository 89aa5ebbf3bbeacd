//! Channel efficiencies and gated-Geiger detection.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::Result;

/// InGaAs/InP APD operated in gated-Geiger mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub quantum_efficiency: f64,
    pub dark_count_prob_per_gate: f64,
    pub gate_width_ns: f64,
    pub gate_rate_khz: f64,
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.quantum_efficiency) {
            return Err(invalid(format!(
                "detector quantum_efficiency {} outside [0, 1]",
                self.quantum_efficiency
            )));
        }
        if !(self.dark_count_prob_per_gate >= 0.0 && self.dark_count_prob_per_gate < 1.0) {
            return Err(invalid(format!(
                "detector dark_count_prob_per_gate {} outside [0, 1)",
                self.dark_count_prob_per_gate
            )));
        }
        if !(self.gate_width_ns > 0.0 && self.gate_rate_khz > 0.0) {
            return Err(invalid("detector gate width and rate must be positive"));
        }
        Ok(())
    }
}

/// One lossy element between the fiber and the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub label: String,
    pub transmission: f64,
    /// Present only while a polarization analyzer is inserted in the arm.
    #[serde(default)]
    pub analyzer: bool,
}

impl Component {
    pub fn new(label: impl Into<String>, transmission: f64) -> Self {
        Component {
            label: label.into(),
            transmission,
            analyzer: false,
        }
    }
}

/// Everything that scales the probability a photon in the band is counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelEfficiency {
    pub components: Vec<Component>,
    pub detector: DetectorSpec,
    /// Total efficiency as quoted for the apparatus, kept next to the computed product.
    #[serde(default)]
    pub quoted_total_efficiency: Option<f64>,
}

impl ChannelEfficiency {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        for c in &self.components {
            if !(c.transmission > 0.0 && c.transmission <= 1.0) {
                return Err(invalid(format!(
                    "component '{}' transmission {} outside (0, 1]",
                    c.label, c.transmission
                )));
            }
        }
        if let Some(q) = self.quoted_total_efficiency {
            if !(q > 0.0 && q <= 1.0) {
                return Err(invalid(format!(
                    "quoted_total_efficiency {q} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Product of component transmissions and detector efficiency, with or without
    /// the analyzer-only components.
    pub fn efficiency_with(&self, analyzer_inserted: bool) -> f64 {
        self.components
            .iter()
            .filter(|c| analyzer_inserted || !c.analyzer)
            .map(|c| c.transmission)
            .product::<f64>()
            * self.detector.quantum_efficiency
    }

    /// Relative deviation of the computed product from the quoted total.
    pub fn quoted_mismatch(&self) -> Option<f64> {
        self.quoted_total_efficiency
            .map(|q| (total_efficiency(self) - q).abs() / q)
    }
}

/// Overall detection efficiency of a channel with every listed component in place.
pub fn total_efficiency(channel: &ChannelEfficiency) -> f64 {
    channel.efficiency_with(true)
}

/// Click probability for Poisson light of mean `mean_photons` at the detector input.
pub fn click_probability(mean_photons: f64, detector: &DetectorSpec) -> f64 {
    let no_photon_click = (-detector.quantum_efficiency * mean_photons).exp();
    1.0 - (1.0 - detector.dark_count_prob_per_gate) * no_photon_click
}

/// One gate with explicit photon sampling: Poisson photon number, per-photon
/// detection, and an independent dark count.
pub fn sample_click<R: Rng + ?Sized>(
    mean_photons: f64,
    detector: &DetectorSpec,
    rng: &mut R,
) -> bool {
    let mut click = rng.random::<f64>() < detector.dark_count_prob_per_gate;
    if mean_photons > 0.0 {
        let n = Poisson::new(mean_photons)
            .expect("positive finite mean")
            .sample(rng) as u64;
        for _ in 0..n {
            click |= rng.random::<f64>() < detector.quantum_efficiency;
        }
    }
    click
}

/// Gate rate in kHz for a pump repetition rate in MHz divided down by `decimation`.
pub fn gate_schedule(pump_rep_rate_mhz: f64, decimation: u32) -> Result<f64> {
    if decimation == 0 {
        return Err(invalid("gate decimation must be >= 1"));
    }
    if !(pump_rep_rate_mhz > 0.0) {
        return Err(invalid("pump repetition rate must be positive"));
    }
    Ok(pump_rep_rate_mhz * 1e3 / decimation as f64)
}
