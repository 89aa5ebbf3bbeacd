//! Closed-form first-order predictions of singles, coincidences and visibility.
//!
//! For the loop state `|HH> + e^{2i phi_p}|VV>` the singles probability per gate
//! is `eta * alpha / 2` plus background, and the true coincidence probability is
//! `xi * eta_s * eta_i * alpha / 2` times the angular bracket of
//! [`coincidence_bracket`]. Accidentals are the product of the singles.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::engine::DetectionChannel;
use crate::polarization::{
    joint_outcome_probabilities, marginal_pass_probability, AnalyzerSetting, TwoPhotonState,
};
use crate::source::{spm_post_analyzer_mean, EmissionRates};
use crate::Channel;

/// Expected probabilities per gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    pub singles_signal: f64,
    pub singles_idler: f64,
    pub true_coincidence: f64,
    pub accidental_coincidence: f64,
    pub total_coincidence: f64,
}

/// `cos^2 t1 cos^2 t2 + sin^2 t1 sin^2 t2 + 2 cos(2 phi_p) sin t1 cos t1 sin t2 cos t2`.
pub fn coincidence_bracket(theta1: f64, theta2: f64, phi_p: f64) -> f64 {
    let (s1, c1) = theta1.sin_cos();
    let (s2, c2) = theta2.sin_cos();
    c1 * c1 * c2 * c2 + s1 * s1 * s2 * s2 + 2.0 * (2.0 * phi_p).cos() * s1 * c1 * s2 * c2
}

fn singles_with_marginal(
    rates: &EmissionRates,
    channel: Channel,
    det: DetectionChannel,
    marginal: f64,
    theta: AnalyzerSetting,
    phi_p: f64,
) -> f64 {
    let photons = rates.pair_rate * marginal
        + 0.5 * rates.raman(channel)
        + spm_post_analyzer_mean(rates, channel, theta, phi_p);
    det.efficiency * photons + det.dark_prob
}

/// Singles probability per gate for the loop state.
pub fn expected_singles(
    rates: &EmissionRates,
    channel: Channel,
    det: DetectionChannel,
    theta: AnalyzerSetting,
    phi_p: f64,
) -> f64 {
    singles_with_marginal(rates, channel, det, 0.5, theta, phi_p)
}

/// Singles and coincidence probabilities per gate for the loop state.
pub fn expected_coincidence(
    rates: &EmissionRates,
    signal: DetectionChannel,
    idler: DetectionChannel,
    theta_s: AnalyzerSetting,
    theta_i: AnalyzerSetting,
    phi_p: f64,
) -> RatePrediction {
    let s = expected_singles(rates, Channel::Signal, signal, theta_s, phi_p);
    let i = expected_singles(rates, Channel::Idler, idler, theta_i, phi_p);
    let t = 0.5
        * rates.xi
        * signal.efficiency
        * idler.efficiency
        * rates.pair_rate
        * coincidence_bracket(theta_s.radians(), theta_i.radians(), phi_p);
    RatePrediction {
        singles_signal: s,
        singles_idler: i,
        true_coincidence: t,
        accidental_coincidence: s * i,
        total_coincidence: t + s * i,
    }
}

/// Same first-order model for an arbitrary pair state (e.g. unequal pump powers).
pub fn expected_coincidence_for_state(
    rates: &EmissionRates,
    state: &TwoPhotonState,
    signal: DetectionChannel,
    idler: DetectionChannel,
    theta_s: AnalyzerSetting,
    theta_i: AnalyzerSetting,
    phi_p: f64,
) -> RatePrediction {
    let ms = marginal_pass_probability(state, Channel::Signal, theta_s);
    let mi = marginal_pass_probability(state, Channel::Idler, theta_i);
    let s = singles_with_marginal(rates, Channel::Signal, signal, ms, theta_s, phi_p);
    let i = singles_with_marginal(rates, Channel::Idler, idler, mi, theta_i, phi_p);
    let pp = joint_outcome_probabilities(state, theta_s, theta_i).pass_pass;
    let t = rates.xi * signal.efficiency * idler.efficiency * rates.pair_rate * pp;
    RatePrediction {
        singles_signal: s,
        singles_idler: i,
        true_coincidence: t,
        accidental_coincidence: s * i,
        total_coincidence: t + s * i,
    }
}

/// Which variable a two-photon interference scan sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScanKind {
    /// Pump phase swept with both analyzers fixed.
    PhaseScan {
        theta_s: AnalyzerSetting,
        theta_i: AnalyzerSetting,
    },
    /// Idler analyzer swept with the signal analyzer and pump phase fixed.
    AnalyzerScan {
        theta_s: AnalyzerSetting,
        phi_p: f64,
    },
}

impl ScanKind {
    pub fn phase_scan_45() -> Self {
        ScanKind::PhaseScan {
            theta_s: AnalyzerSetting::from_degrees(45.0),
            theta_i: AnalyzerSetting::from_degrees(45.0),
        }
    }

    pub fn analyzer_scan_45() -> Self {
        ScanKind::AnalyzerScan {
            theta_s: AnalyzerSetting::from_degrees(45.0),
            phi_p: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DarkTreatment {
    /// Dark-count contributions removed, as in the reduced data.
    Subtracted,
    /// Raw counts including dark clicks.
    Raw,
}

const SCAN_SAMPLES: usize = 7200;

/// Fringe visibility `(Cmax - Cmin) / (Cmax + Cmin)` over the scan.
pub fn expected_visibility(
    rates: &EmissionRates,
    signal: DetectionChannel,
    idler: DetectionChannel,
    scan: ScanKind,
    dark: DarkTreatment,
) -> f64 {
    let strip = |d: DetectionChannel| match dark {
        DarkTreatment::Subtracted => DetectionChannel {
            dark_prob: 0.0,
            ..d
        },
        DarkTreatment::Raw => d,
    };
    let (sig, idl) = (strip(signal), strip(idler));
    let (mut cmax, mut cmin) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..SCAN_SAMPLES {
        let u = k as f64 / SCAN_SAMPLES as f64;
        let c = match scan {
            // leaked-pump singles vary with period 2 pi in phi_p
            ScanKind::PhaseScan { theta_s, theta_i } => {
                expected_coincidence(rates, sig, idl, theta_s, theta_i, 2.0 * PI * u)
            }
            ScanKind::AnalyzerScan { theta_s, phi_p } => {
                expected_coincidence(rates, sig, idl, theta_s, AnalyzerSetting(PI * u), phi_p)
            }
        }
        .total_coincidence;
        cmax = cmax.max(c);
        cmin = cmin.min(c);
    }
    if cmax + cmin <= 0.0 {
        return 0.0;
    }
    (cmax - cmin) / (cmax + cmin)
}

/// `T / (T + 2A)` with both analyzers at 45 degrees and no leaked pump.
pub fn first_order_visibility(rates: &EmissionRates, eta_s: f64, eta_i: f64) -> f64 {
    let t = 0.5 * rates.xi * eta_s * eta_i * rates.pair_rate;
    let s = 0.5 * eta_s * (rates.pair_rate + rates.raman_signal);
    let i = 0.5 * eta_i * (rates.pair_rate + rates.raman_idler);
    let a = s * i;
    if t + a <= 0.0 {
        return 0.0;
    }
    t / (t + 2.0 * a)
}
