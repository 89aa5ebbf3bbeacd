//! Least-squares calibration of the emission power laws against operating points.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::source::EmissionCoefficients;
use crate::{Error, Result};

/// Measured operating point: per-arm pump power, photons per pulse per channel
/// (pairs plus background), and the pair part of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTarget {
    pub power_mw: f64,
    pub total_photons: f64,
    pub pair_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetResidual {
    pub power_mw: f64,
    pub pair_rate_target: f64,
    pub pair_rate_fit: f64,
    /// `(fit - target) / target`, zero when the target is zero and matched.
    pub pair_relative_residual: f64,
    pub background_target: f64,
    pub background_fit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub coefficients: EmissionCoefficients,
    pub residuals: Vec<TargetResidual>,
    pub max_pair_relative_residual: f64,
}

fn relative(fit: f64, target: f64) -> f64 {
    if target != 0.0 {
        (fit - target) / target
    } else if fit == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Fits `pair = c_fps P^2` and `background = c_raman P` (plus
/// `c_spm (P/P_ref)^n` when `fit_spm`) by ordinary least squares.
///
/// Coefficients not being fit are copied from `base`. With `fit_spm` the fitted
/// SPM coefficient is applied to the signal band and the idler coefficient keeps
/// the idler/signal ratio of `base`.
pub fn calibrate(
    targets: &[CalibrationTarget],
    base: &EmissionCoefficients,
    fit_spm: bool,
) -> Result<CalibrationResult> {
    if targets.is_empty() {
        return Err(Error::UnderDetermined("no calibration targets".into()));
    }
    for t in targets {
        let vals = [t.power_mw, t.total_photons, t.pair_rate];
        if vals.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid(format!(
                "calibration target {t:?} has negative or non-finite values"
            )));
        }
        if t.pair_rate > t.total_photons {
            return Err(invalid(format!(
                "pair rate {} exceeds total photons {} at {} mW",
                t.pair_rate, t.total_photons, t.power_mw
            )));
        }
    }
    let powered: Vec<&CalibrationTarget> = targets.iter().filter(|t| t.power_mw > 0.0).collect();
    if powered.is_empty() {
        return Err(Error::UnderDetermined("all target powers are zero".into()));
    }

    let p4: f64 = powered.iter().map(|t| t.power_mw.powi(4)).sum();
    let c_fps = powered
        .iter()
        .map(|t| t.power_mw.powi(2) * t.pair_rate)
        .sum::<f64>()
        / p4;

    let mut coeffs = *base;
    coeffs.c_fps_per_mw2 = c_fps;
    let bg = |t: &CalibrationTarget| t.total_photons - t.pair_rate;
    if fit_spm {
        let mut distinct: Vec<f64> = powered.iter().map(|t| t.power_mw).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::UnderDetermined(
                "a joint Raman and SPM fit needs at least two distinct powers".into(),
            ));
        }
        let spm_basis = |p: f64| (p / base.spm_reference_power_mw).powf(base.spm_exponent);
        let mut ata = Matrix2::<f64>::zeros();
        let mut atb = Vector2::<f64>::zeros();
        for t in &powered {
            let row = Vector2::new(t.power_mw, spm_basis(t.power_mw));
            ata += row * row.transpose();
            atb += row * bg(t);
        }
        let sv = ata.singular_values();
        if !(sv.min() > 1e-14 * sv.max()) {
            return Err(Error::UnderDetermined(
                "Raman and SPM terms are not separable".into(),
            ));
        }
        let sol = ata
            .try_inverse()
            .ok_or_else(|| Error::UnderDetermined("singular calibration system".into()))?
            * atb;
        let ratio = if base.c_spm_signal > 0.0 {
            base.c_spm_idler / base.c_spm_signal
        } else {
            1.0
        };
        coeffs.c_raman_per_mw = sol[0].max(0.0);
        coeffs.c_spm_signal = sol[1].max(0.0);
        coeffs.c_spm_idler = sol[1].max(0.0) * ratio;
    } else {
        let p2: f64 = powered.iter().map(|t| t.power_mw.powi(2)).sum();
        coeffs.c_raman_per_mw = powered.iter().map(|t| t.power_mw * bg(t)).sum::<f64>() / p2;
    }
    coeffs.validate()?;

    let residuals: Vec<TargetResidual> = targets
        .iter()
        .map(|t| {
            let p = t.power_mw;
            let pair_fit = coeffs.c_fps_per_mw2 * p * p;
            let spm = if fit_spm && p > 0.0 {
                coeffs.c_spm_signal * (p / coeffs.spm_reference_power_mw).powf(coeffs.spm_exponent)
            } else {
                0.0
            };
            TargetResidual {
                power_mw: p,
                pair_rate_target: t.pair_rate,
                pair_rate_fit: pair_fit,
                pair_relative_residual: relative(pair_fit, t.pair_rate),
                background_target: bg(t),
                background_fit: coeffs.c_raman_per_mw * p + spm,
            }
        })
        .collect();
    let max_pair_relative_residual = residuals
        .iter()
        .map(|r| r.pair_relative_residual.abs())
        .fold(0.0, f64::max);
    Ok(CalibrationResult {
        coefficients: coeffs,
        residuals,
        max_pair_relative_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::ApparatusConfig;
    use approx::assert_abs_diff_eq;

    fn base() -> EmissionCoefficients {
        ApparatusConfig::preset("cwdmf")
            .unwrap()
            .emission
            .coefficients
    }

    fn target(p: f64, total: f64, pair: f64) -> CalibrationTarget {
        CalibrationTarget {
            power_mw: p,
            total_photons: total,
            pair_rate: pair,
        }
    }

    #[test]
    fn single_exact_point() {
        let r = calibrate(&[target(0.1, 0.03, 0.024)], &base(), false).unwrap();
        assert_abs_diff_eq!(r.coefficients.c_fps_per_mw2, 2.4, epsilon = 1e-12);
        assert_abs_diff_eq!(r.coefficients.c_raman_per_mw, 0.06, epsilon = 1e-12);
        assert!(r.max_pair_relative_residual < 1e-12);
    }

    #[test]
    fn two_operating_points() {
        let t = [target(0.05, 0.02, 0.006), target(0.15, 0.13, 0.07)];
        let r = calibrate(&t, &base(), false).unwrap();
        // independent closed form sum(P^2 y) / sum(P^4)
        let expected = (0.05f64.powi(2) * 0.006 + 0.15f64.powi(2) * 0.07)
            / (0.05f64.powi(4) + 0.15f64.powi(4));
        assert_abs_diff_eq!(r.coefficients.c_fps_per_mw2, expected, epsilon = 1e-12);
        assert!(r.max_pair_relative_residual > 0.2 && r.max_pair_relative_residual <= 0.35);
        assert_eq!(r.residuals.len(), 2);
    }

    #[test]
    fn zero_pairs_give_zero_coefficient() {
        let t = [target(0.05, 0.01, 0.0), target(0.1, 0.02, 0.0)];
        let r = calibrate(&t, &base(), false).unwrap();
        assert_eq!(r.coefficients.c_fps_per_mw2, 0.0);
        assert_eq!(r.max_pair_relative_residual, 0.0);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(matches!(
            calibrate(&[], &base(), false),
            Err(Error::UnderDetermined(_))
        ));
        assert!(matches!(
            calibrate(&[target(0.0, 0.1, 0.05)], &base(), false),
            Err(Error::UnderDetermined(_))
        ));
        assert!(matches!(
            calibrate(&[target(0.1, 0.1, 0.05)], &base(), true),
            Err(Error::UnderDetermined(_))
        ));
        assert!(calibrate(&[target(0.1, 0.01, 0.05)], &base(), false).is_err());
    }

    #[test]
    fn joint_spm_fit_recovers_generated_coefficients() {
        let mut truth = base();
        truth.spm_exponent = 3.0;
        truth.c_raman_per_mw = 0.2;
        truth.c_spm_signal = 0.01;
        let t: Vec<CalibrationTarget> = [0.1, 0.2, 0.3, 0.4]
            .iter()
            .map(|&p| {
                let pair = 2.0 * p * p;
                let bg = 0.2 * p + 0.01 * (p / truth.spm_reference_power_mw).powi(3);
                target(p, pair + bg, pair)
            })
            .collect();
        let r = calibrate(&t, &truth, true).unwrap();
        assert_abs_diff_eq!(r.coefficients.c_raman_per_mw, 0.2, epsilon = 1e-9);
        assert_abs_diff_eq!(r.coefficients.c_spm_signal, 0.01, epsilon = 1e-9);
        assert_abs_diff_eq!(r.coefficients.c_fps_per_mw2, 2.0, epsilon = 1e-9);
    }
}
