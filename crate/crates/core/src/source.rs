//! Pump and filter spectra and the per-pulse emission model.
//!
//! Three photon populations leave the loop in the signal and idler bands:
//! correlated four-photon-scattering pairs, uncorrelated Raman photons, and pump
//! photons that leak through the filters after SPM broadening. Their mean
//! numbers per pulse follow phenomenological power laws in the per-direction
//! pump power.

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::polarization::AnalyzerSetting;
use crate::{Channel, Result};

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3; // 2*sqrt(2 ln 2)

/// Fitted passband `peak * exp(-1/2 ((lambda - center) / width)^(2m))` with a
/// floor set by the out-of-band isolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub center_wavelength_nm: f64,
    pub peak_transmission: f64,
    pub width_param_nm: f64,
    /// `m = 1` is a Gaussian.
    pub super_gaussian_order: f64,
    /// Transmission floor, `10^(-isolation_dB / 10)`.
    pub isolation_floor: f64,
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_transmission > 0.0 && self.peak_transmission <= 1.0) {
            return Err(invalid(format!(
                "filter peak_transmission {} outside (0, 1]",
                self.peak_transmission
            )));
        }
        if !(self.width_param_nm > 0.0 && self.width_param_nm.is_finite()) {
            return Err(invalid(format!(
                "filter width_param_nm must be positive, got {}",
                self.width_param_nm
            )));
        }
        if !(self.super_gaussian_order >= 1.0) {
            return Err(invalid(format!(
                "filter super_gaussian_order must be >= 1, got {}",
                self.super_gaussian_order
            )));
        }
        if !(self.isolation_floor >= 0.0 && self.isolation_floor < self.peak_transmission) {
            return Err(invalid(format!(
                "filter isolation_floor {} outside [0, peak)",
                self.isolation_floor
            )));
        }
        if !(self.center_wavelength_nm > 0.0) {
            return Err(invalid("filter center_wavelength_nm must be positive"));
        }
        Ok(())
    }

    pub fn transmission(&self, wavelength_nm: f64) -> f64 {
        filter_transmission(self, wavelength_nm)
    }

    /// Closed-form full width at half maximum of the fitted passband.
    pub fn fwhm_nm(&self) -> f64 {
        let m = self.super_gaussian_order;
        2.0 * self.width_param_nm * (2.0 * std::f64::consts::LN_2).powf(1.0 / (2.0 * m))
    }

    pub fn isolation_db(&self) -> f64 {
        -10.0 * self.isolation_floor.log10()
    }
}

/// Transmission of `filter` at `wavelength_nm`.
pub fn filter_transmission(filter: &FilterSpec, wavelength_nm: f64) -> f64 {
    let x = ((wavelength_nm - filter.center_wavelength_nm) / filter.width_param_nm).abs();
    let shape = (-0.5 * x.powf(2.0 * filter.super_gaussian_order)).exp();
    (filter.peak_transmission * shape).max(filter.isolation_floor)
}

/// Idler wavelength from energy conservation `2/lp = 1/ls + 1/li`.
pub fn idler_wavelength(pump_wavelength_nm: f64, signal_wavelength_nm: f64) -> Result<f64> {
    if !(pump_wavelength_nm > 0.0 && signal_wavelength_nm > 0.0) {
        return Err(invalid("wavelengths must be positive"));
    }
    let inv = 2.0 / pump_wavelength_nm - 1.0 / signal_wavelength_nm;
    if !(inv > 0.0) {
        return Err(invalid(format!(
            "no idler for pump {pump_wavelength_nm} nm and signal {signal_wavelength_nm} nm"
        )));
    }
    Ok(1.0 / inv)
}

/// Pulsed pump launched into the loop, split into H (clockwise) and V
/// (counter-clockwise) components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpSpec {
    pub center_wavelength_nm: f64,
    /// Intensity FWHM of the Gaussian pump spectrum.
    pub fwhm_nm: f64,
    pub power_h_mw: f64,
    pub power_v_mw: f64,
    pub phi_p_rad: f64,
    pub pulse_duration_ps: f64,
    pub repetition_rate_mhz: f64,
    pub photons_per_pulse: f64,
}

impl PumpSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("center_wavelength_nm", self.center_wavelength_nm),
            ("fwhm_nm", self.fwhm_nm),
            ("pulse_duration_ps", self.pulse_duration_ps),
            ("repetition_rate_mhz", self.repetition_rate_mhz),
            ("photons_per_pulse", self.photons_per_pulse),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("pump {name} must be positive, got {v}")));
            }
        }
        if !(self.power_h_mw >= 0.0 && self.power_v_mw >= 0.0) {
            return Err(invalid("pump powers must be nonnegative"));
        }
        if self.power_h_mw == 0.0 && self.power_v_mw == 0.0 {
            return Err(invalid("both pump powers are zero"));
        }
        if !self.phi_p_rad.is_finite() {
            return Err(invalid("pump phi_p_rad must be finite"));
        }
        Ok(())
    }

    /// Per-direction pump power, the mean of the H and V launches.
    pub fn per_arm_power_mw(&self) -> f64 {
        0.5 * (self.power_h_mw + self.power_v_mw)
    }

    pub fn with_power_per_arm(mut self, power_mw: f64) -> Self {
        self.power_h_mw = power_mw;
        self.power_v_mw = power_mw;
        self
    }
}

/// Coefficients of the power laws mapping per-direction pump power to mean
/// photon numbers per pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionCoefficients {
    /// Pairs per pulse per mW^2.
    pub c_fps_per_mw2: f64,
    /// Raman photons per pulse per mW, each channel.
    pub c_raman_per_mw: f64,
    /// Leaked pump photons per pulse in the signal band at the reference power.
    pub c_spm_signal: f64,
    pub c_spm_idler: f64,
    pub spm_reference_power_mw: f64,
    pub spm_exponent: f64,
    /// Phase offset of the leaked-pump fringe relative to the pump fringe.
    pub spm_phase_signal_rad: f64,
    pub spm_phase_idler_rad: f64,
}

impl EmissionCoefficients {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("c_fps_per_mw2", self.c_fps_per_mw2),
            ("c_raman_per_mw", self.c_raman_per_mw),
            ("c_spm_signal", self.c_spm_signal),
            ("c_spm_idler", self.c_spm_idler),
            ("spm_exponent", self.spm_exponent),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("emission {name} must be >= 0, got {v}")));
            }
        }
        if !(self.spm_reference_power_mw > 0.0) {
            return Err(invalid("emission spm_reference_power_mw must be positive"));
        }
        Ok(())
    }
}

/// Mean photon numbers per pulse in each band, before the analyzers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionRates {
    /// Mean pairs per pulse.
    pub pair_rate: f64,
    /// Fraction of pairs whose partner is captured by the opposite filter.
    pub xi: f64,
    pub raman_signal: f64,
    pub raman_idler: f64,
    pub spm_signal: f64,
    pub spm_idler: f64,
    pub spm_phase_signal: f64,
    pub spm_phase_idler: f64,
}

impl EmissionRates {
    /// No emission at all, the pump-blocked condition.
    pub fn blocked() -> Self {
        EmissionRates {
            pair_rate: 0.0,
            xi: 0.0,
            raman_signal: 0.0,
            raman_idler: 0.0,
            spm_signal: 0.0,
            spm_idler: 0.0,
            spm_phase_signal: 0.0,
            spm_phase_idler: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.pair_rate,
            self.raman_signal,
            self.raman_idler,
            self.spm_signal,
            self.spm_idler,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("emission rates must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(invalid(format!("xi {} outside [0, 1]", self.xi)));
        }
        Ok(())
    }

    pub fn raman(&self, ch: Channel) -> f64 {
        match ch {
            Channel::Signal => self.raman_signal,
            Channel::Idler => self.raman_idler,
        }
    }

    pub fn spm(&self, ch: Channel) -> f64 {
        match ch {
            Channel::Signal => self.spm_signal,
            Channel::Idler => self.spm_idler,
        }
    }

    pub fn spm_phase(&self, ch: Channel) -> f64 {
        match ch {
            Channel::Signal => self.spm_phase_signal,
            Channel::Idler => self.spm_phase_idler,
        }
    }

    /// Pair photons plus background in one band, the per-channel production rate.
    pub fn total_per_channel(&self, ch: Channel) -> f64 {
        self.pair_rate + self.raman(ch) + self.spm(ch)
    }
}

/// Mean photon numbers for a pump setting.
pub fn emission_rates(
    coeffs: &EmissionCoefficients,
    pump: &PumpSpec,
    xi: f64,
) -> Result<EmissionRates> {
    coeffs.validate()?;
    if !(0.0..=1.0).contains(&xi) {
        return Err(invalid(format!("xi {xi} outside [0, 1]")));
    }
    let p = pump.per_arm_power_mw();
    if !(p >= 0.0 && p.is_finite()) {
        return Err(invalid("pump power must be finite and nonnegative"));
    }
    let spm_scale = if p == 0.0 {
        0.0
    } else {
        (p / coeffs.spm_reference_power_mw).powf(coeffs.spm_exponent)
    };
    Ok(EmissionRates {
        pair_rate: coeffs.c_fps_per_mw2 * p * p,
        xi,
        raman_signal: coeffs.c_raman_per_mw * p,
        raman_idler: coeffs.c_raman_per_mw * p,
        spm_signal: coeffs.c_spm_signal * spm_scale,
        spm_idler: coeffs.c_spm_idler * spm_scale,
        spm_phase_signal: coeffs.spm_phase_signal_rad,
        spm_phase_idler: coeffs.spm_phase_idler_rad,
    })
}

/// Mean leaked pump photons per pulse after the analyzer in `channel`.
///
/// The leaked light is an equal-amplitude H/V superposition whose relative phase
/// follows the pump phase shifted by the channel offset.
pub fn spm_post_analyzer_mean(
    rates: &EmissionRates,
    channel: Channel,
    theta: AnalyzerSetting,
    phi_p: f64,
) -> f64 {
    let contrast = (2.0 * theta.radians()).sin() * (phi_p + rates.spm_phase(channel)).cos();
    rates.spm(channel) * 0.5 * (1.0 + contrast)
}

/// Heuristic pair-correlation coefficient from spectral overlap.
///
/// The sum wavenumber of a pair is distributed like the pump autoconvolution;
/// a signal photon drawn through the signal passband has its partner at the
/// mirrored wavenumber. The estimate is the mean idler passband transmission
/// (normalized to its peak) seen by those partners.
pub fn estimate_xi_overlap(
    pump: &PumpSpec,
    signal_filter: &FilterSpec,
    idler_filter: &FilterSpec,
) -> Result<f64> {
    signal_filter.validate()?;
    idler_filter.validate()?;
    if !(pump.fwhm_nm > 0.0 && pump.center_wavelength_nm > 0.0) {
        return Err(invalid(
            "pump spectrum must have positive width and wavelength",
        ));
    }
    const STEP_NM: f64 = 0.01;
    const HALF_SPAN_NM: f64 = 5.0;
    const SUM_POINTS: usize = 601;

    let lp = pump.center_wavelength_nm;
    let k_pump = 1.0 / lp;
    // wavenumber std of the pump intensity spectrum
    let sigma_k = (pump.fwhm_nm / FWHM_PER_SIGMA) / (lp * lp);
    let sigma_sum = std::f64::consts::SQRT_2 * sigma_k;
    let delta_span = 6.0 * sigma_sum;

    let n_sig = (2.0 * HALF_SPAN_NM / STEP_NM).round() as usize + 1;
    let mut num = 0.0;
    let mut den = 0.0;
    for a in 0..n_sig {
        let ls = signal_filter.center_wavelength_nm - HALF_SPAN_NM + a as f64 * STEP_NM;
        let ts = filter_transmission(signal_filter, ls) / signal_filter.peak_transmission;
        // uniform wavelength grid, so weight by |dk/dlambda|
        let ws = ts / (ls * ls);
        let ks = 1.0 / ls;
        for b in 0..SUM_POINTS {
            let delta = -delta_span + 2.0 * delta_span * b as f64 / (SUM_POINTS - 1) as f64;
            let g = (-0.5 * (delta / sigma_sum).powi(2)).exp();
            let ki = 2.0 * k_pump + delta - ks;
            let ti = if ki > 0.0 {
                filter_transmission(idler_filter, 1.0 / ki) / idler_filter.peak_transmission
            } else {
                0.0
            };
            num += ws * g * ti;
            den += ws * g;
        }
    }
    if den <= 0.0 {
        return Err(invalid(
            "signal passband has no support on the integration grid",
        ));
    }
    Ok((num / den).clamp(0.0, 1.0))
}
