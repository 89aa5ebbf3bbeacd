//! Data reduction: dark-count subtraction and cosine fringe fits.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::{Error, Result};

/// Unit of the ordinate values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesUnit {
    Counts,
    /// Counts divided by gates per point.
    PerGate,
}

/// Counts recorded along a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeSeries {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Dark baseline for each point, already normalized to `gates_per_point`.
    pub y_dark: Option<Vec<f64>>,
    /// Set once `y_dark` has been taken out of `y`.
    pub dark_subtracted: bool,
    pub gates_per_point: u64,
    pub unit: SeriesUnit,
}

impl FringeSeries {
    pub fn new(x: Vec<f64>, y: Vec<f64>, gates_per_point: u64) -> Result<Self> {
        let s = FringeSeries {
            x,
            y,
            y_dark: None,
            dark_subtracted: false,
            gates_per_point,
            unit: SeriesUnit::Counts,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_dark(mut self, y_dark: Vec<f64>) -> Result<Self> {
        self.y_dark = Some(y_dark);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() || self.x.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "series needs matching nonempty x/y (got {} and {})",
                self.x.len(),
                self.y.len()
            )));
        }
        if let Some(d) = &self.y_dark {
            if d.len() != self.y.len() {
                return Err(Error::InvalidConfig("dark baseline length mismatch".into()));
            }
            if d.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidConfig(
                    "dark baseline must be nonnegative".into(),
                ));
            }
        }
        if self.y.iter().any(|v| !(*v >= 0.0)) || self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "series values must be finite and y >= 0".into(),
            ));
        }
        if self.gates_per_point == 0 {
            return Err(Error::InvalidConfig("gates_per_point must be >= 1".into()));
        }
        Ok(())
    }

    /// Factor converting ordinate values to counts.
    fn count_scale(&self) -> f64 {
        match self.unit {
            SeriesUnit::Counts => 1.0,
            SeriesUnit::PerGate => self.gates_per_point as f64,
        }
    }

    /// Same series expressed per gate.
    pub fn to_rates(&self) -> FringeSeries {
        let k = match self.unit {
            SeriesUnit::Counts => 1.0 / self.gates_per_point as f64,
            SeriesUnit::PerGate => 1.0,
        };
        FringeSeries {
            x: self.x.clone(),
            y: self.y.iter().map(|v| v * k).collect(),
            y_dark: self
                .y_dark
                .as_ref()
                .map(|d| d.iter().map(|v| v * k).collect()),
            dark_subtracted: self.dark_subtracted,
            gates_per_point: self.gates_per_point,
            unit: SeriesUnit::PerGate,
        }
    }

    /// Poisson variance of point `i` for an expected value `mean`, in y units squared.
    fn variance_for(&self, i: usize, mean: f64) -> f64 {
        let scale = self.count_scale();
        let dark = match (&self.y_dark, self.dark_subtracted) {
            (Some(d), true) => d[i],
            _ => 0.0,
        };
        let counts = (mean.max(0.0) + dark) * scale;
        counts.max(1.0) / (scale * scale)
    }
}

/// Result of [`subtract_dark`].
#[derive(Debug, Clone, PartialEq)]
pub struct DarkSubtracted {
    pub series: FringeSeries,
    /// Indices where the baseline exceeded the signal and the value was floored at 0.
    pub floored: Vec<usize>,
}

/// Removes the dark baseline, flooring at zero.
pub fn subtract_dark(series: &FringeSeries) -> Result<DarkSubtracted> {
    let dark = series.y_dark.as_ref().ok_or(Error::MissingBaseline)?;
    if series.dark_subtracted {
        return Err(Error::InvalidConfig(
            "dark baseline already subtracted".into(),
        ));
    }
    let mut floored = Vec::new();
    let y = series
        .y
        .iter()
        .zip(dark)
        .enumerate()
        .map(|(i, (y, d))| {
            let v = y - d;
            if v < 0.0 {
                floored.push(i);
                0.0
            } else {
                v
            }
        })
        .collect();
    Ok(DarkSubtracted {
        series: FringeSeries {
            y,
            dark_subtracted: true,
            ..series.clone()
        },
        floored,
    })
}

/// Cosine fit `y = offset + amplitude * cos(k x - phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub offset: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub angular_frequency: f64,
    pub visibility: f64,
    pub sigma_offset: f64,
    pub sigma_amplitude: f64,
    pub sigma_phase: f64,
    pub sigma_visibility: f64,
    pub chi2: f64,
    pub dof: usize,
    /// Visibility above 1 by more than three standard deviations.
    pub overshoot: bool,
}

impl FringeFit {
    pub fn evaluate(&self, x: f64) -> f64 {
        self.offset + self.amplitude * (self.angular_frequency * x - self.phase).cos()
    }

    /// Amplitude compatible with zero at three standard deviations.
    pub fn is_flat(&self) -> bool {
        self.amplitude < 3.0 * self.sigma_amplitude
    }
}

struct LinearFit {
    coef: Vector3<f64>,
    cov: Matrix3<f64>,
    chi2: f64,
}

fn weighted_fit(x: &[f64], y: &[f64], w: &[f64], k: f64) -> Result<LinearFit> {
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for ((xi, yi), wi) in x.iter().zip(y).zip(w) {
        let (s, c) = (k * xi).sin_cos();
        let row = Vector3::new(1.0, c, s);
        ata += row * row.transpose() * *wi;
        aty += row * (*wi * yi);
    }
    let sv = ata.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smax > 0.0) || smin / smax < 1e-12 {
        return Err(Error::FitFailure(
            "singular design matrix (degenerate abscissas)".into(),
        ));
    }
    let cov = ata
        .try_inverse()
        .ok_or_else(|| Error::FitFailure("normal equations not invertible".into()))?;
    let coef = cov * aty;
    let chi2 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((xi, yi), wi)| {
            let (s, c) = (k * xi).sin_cos();
            let r = yi - (coef[0] + coef[1] * c + coef[2] * s);
            wi * r * r
        })
        .sum();
    Ok(LinearFit { coef, cov, chi2 })
}

/// Weighted linear least-squares fit on the basis `{1, cos kx, sin kx}`.
///
/// Weights are Poisson, `1/max(counts, 1)`, first from the observed counts and
/// then once more from the fitted model so low fluctuations are not over-weighted.
pub fn fit_fringe(series: &FringeSeries, angular_frequency: f64) -> Result<FringeFit> {
    series.validate()?;
    let n = series.x.len();
    if n < 4 {
        return Err(Error::FitFailure(format!(
            "need at least 4 points, got {n}"
        )));
    }
    if !(angular_frequency > 0.0 && angular_frequency.is_finite()) {
        return Err(Error::FitFailure(
            "angular frequency must be positive".into(),
        ));
    }
    let (xmin, xmax) = series
        .x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(*v), b.max(*v))
        });
    let span = xmax - xmin;
    let period = 2.0 * PI / angular_frequency;
    if span + span / ((n - 1) as f64) < period * (1.0 - 1e-9) {
        return Err(Error::FitFailure(format!(
            "abscissas span {span:.4} rad, less than one period {period:.4}"
        )));
    }

    let k = angular_frequency;
    let w0: Vec<f64> = (0..n)
        .map(|i| 1.0 / series.variance_for(i, series.y[i]))
        .collect();
    let first = weighted_fit(&series.x, &series.y, &w0, k)?;
    let w1: Vec<f64> = (0..n)
        .map(|i| {
            let (s, c) = (k * series.x[i]).sin_cos();
            let m = first.coef[0] + first.coef[1] * c + first.coef[2] * s;
            1.0 / series.variance_for(i, m)
        })
        .collect();
    let fit = weighted_fit(&series.x, &series.y, &w1, k)?;

    let (a, c, s) = (fit.coef[0], fit.coef[1], fit.coef[2]);
    if !(a > 0.0) {
        return Err(Error::FitFailure(format!("nonpositive fitted offset {a}")));
    }
    let cov = fit.cov;
    let b = c.hypot(s);
    let (sigma_b, sigma_phase, sigma_v) = if b > 0.0 {
        let var_b =
            (c * c * cov[(1, 1)] + s * s * cov[(2, 2)] + 2.0 * c * s * cov[(1, 2)]) / (b * b);
        let var_ph =
            (s * s * cov[(1, 1)] + c * c * cov[(2, 2)] - 2.0 * c * s * cov[(1, 2)]) / b.powi(4);
        let j = Vector3::new(-b / (a * a), c / (a * b), s / (a * b));
        let var_v = (j.transpose() * cov * j)[(0, 0)];
        (
            var_b.max(0.0).sqrt(),
            var_ph.max(0.0).sqrt(),
            var_v.max(0.0).sqrt(),
        )
    } else {
        let sb = (0.5 * (cov[(1, 1)] + cov[(2, 2)])).sqrt();
        (sb, PI, sb / a)
    };
    let visibility = b / a;
    Ok(FringeFit {
        offset: a,
        amplitude: b,
        phase: s.atan2(c),
        angular_frequency: k,
        visibility,
        sigma_offset: cov[(0, 0)].max(0.0).sqrt(),
        sigma_amplitude: sigma_b,
        sigma_phase,
        sigma_visibility: sigma_v,
        chi2: fit.chi2,
        dof: n - 3,
        overshoot: visibility > 1.0 + 3.0 * sigma_v,
    })
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = (x + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Phase offsets of the signal and idler singles fringes relative to the pump
/// fringe, in the `cos(phi_p + delta)` convention: a negative offset means the
/// fringe maximum trails the pump maximum.
pub fn singles_fringe_phases(
    signal: &FringeSeries,
    idler: &FringeSeries,
    pump: &FringeSeries,
) -> Result<(f64, f64)> {
    if signal.x != pump.x || idler.x != pump.x {
        return Err(Error::InvalidConfig(
            "singles and pump series must share one phase grid".into(),
        ));
    }
    let fs = fit_fringe(signal, 1.0)?;
    let fi = fit_fringe(idler, 1.0)?;
    let fp = fit_fringe(pump, 1.0)?;
    Ok((
        wrap_phase(fp.phase - fs.phase),
        wrap_phase(fp.phase - fi.phase),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    fn grid(n: usize, period: f64) -> Vec<f64> {
        (0..n).map(|i| period * i as f64 / n as f64).collect()
    }

    fn cosine(x: &[f64], a: f64, b: f64, k: f64, ph: f64) -> Vec<f64> {
        x.iter().map(|v| a + b * (k * v - ph).cos()).collect()
    }

    fn poisson_series(x: &[f64], mean: &[f64], rng: &mut ChaCha8Rng) -> FringeSeries {
        let y = mean
            .iter()
            .map(|m| Poisson::new(*m).unwrap().sample(rng))
            .collect();
        FringeSeries::new(x.to_vec(), y, 1000).unwrap()
    }

    #[test]
    fn subtract_dark_basic() {
        let s = FringeSeries::new(vec![0.0, 1.0], vec![100.0, 100.0], 10)
            .unwrap()
            .with_dark(vec![10.0, 10.0])
            .unwrap();
        let out = subtract_dark(&s).unwrap();
        assert_eq!(out.series.y, vec![90.0, 90.0]);
        assert!(out.floored.is_empty());
        assert!(out.series.dark_subtracted);
        // propagated variance is y + dark in counts
        assert_abs_diff_eq!(out.series.variance_for(0, 90.0), 100.0, epsilon = 1e-12);

        let s = FringeSeries::new(vec![0.0], vec![5.0], 10)
            .unwrap()
            .with_dark(vec![10.0])
            .unwrap();
        let out = subtract_dark(&s).unwrap();
        assert_eq!(out.series.y, vec![0.0]);
        assert_eq!(out.floored, vec![0]);
    }

    #[test]
    fn subtract_dark_requires_baseline() {
        let s = FringeSeries::new(vec![0.0], vec![5.0], 10).unwrap();
        assert!(matches!(subtract_dark(&s), Err(Error::MissingBaseline)));
    }

    #[test]
    fn noiseless_cosine_recovery() {
        let x = grid(16, 2.0 * PI);
        let s = FringeSeries::new(x.clone(), cosine(&x, 100.0, 90.0, 1.0, 0.0), 1).unwrap();
        let f = fit_fringe(&s, 1.0).unwrap();
        assert_abs_diff_eq!(f.visibility, 0.9, epsilon = 1e-9);
        assert_abs_diff_eq!(f.offset, 100.0, epsilon = 1e-9 * 100.0);
        assert_abs_diff_eq!(f.phase, 0.0, epsilon = 1e-9);
        assert!(f.chi2 < 1e-15);
    }

    #[test]
    fn constant_series_has_zero_visibility() {
        let x = grid(16, PI);
        let s = FringeSeries::new(x, vec![400.0; 16], 1).unwrap();
        let f = fit_fringe(&s, 2.0).unwrap();
        assert!(f.visibility < 1e-12);
        // sigma from Poisson weights: var(c) = var(s) = 2*400/16
        assert_abs_diff_eq!(
            f.sigma_visibility,
            (2.0 * 400.0 / 16.0f64).sqrt() / 400.0,
            epsilon = 1e-9
        );
        assert!(f.is_flat());
    }

    #[test]
    fn degenerate_abscissas_fail() {
        let s = FringeSeries::new(vec![1.0; 8], vec![10.0; 8], 1).unwrap();
        assert!(matches!(fit_fringe(&s, 1.0), Err(Error::FitFailure(_))));
        // points spaced by a full period are indistinguishable
        let x: Vec<f64> = (0..8).map(|i| 2.0 * PI * i as f64).collect();
        let s = FringeSeries::new(x, vec![10.0; 8], 1).unwrap();
        assert!(matches!(fit_fringe(&s, 1.0), Err(Error::FitFailure(_))));
        let s = FringeSeries::new(vec![0.0, 1.0, 2.0], vec![1.0; 3], 1).unwrap();
        assert!(fit_fringe(&s, 1.0).is_err());
        let s = FringeSeries::new(grid(8, 1.0), vec![1.0; 8], 1).unwrap();
        assert!(fit_fringe(&s, 1.0).is_err());
    }

    #[test]
    fn counts_and_rates_give_same_visibility() {
        let x = grid(21, PI);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let s = poisson_series(&x, &cosine(&x, 120.0, 100.0, 2.0, 0.3), &mut rng);
        let f1 = fit_fringe(&s, 2.0).unwrap();
        let f2 = fit_fringe(&s.to_rates(), 2.0).unwrap();
        assert_abs_diff_eq!(f1.visibility, f2.visibility, epsilon = 1e-12);
        assert_abs_diff_eq!(f1.sigma_visibility, f2.sigma_visibility, epsilon = 1e-12);
    }

    #[test]
    fn singles_phase_offsets_recovered() {
        let x = grid(24, 2.0 * PI);
        let sig = FringeSeries::new(
            x.clone(),
            x.iter().map(|p| 500.0 + 60.0 * (p - 2.0).cos()).collect(),
            1,
        )
        .unwrap();
        let idl = FringeSeries::new(
            x.clone(),
            x.iter().map(|p| 400.0 + 40.0 * (p + 2.0).cos()).collect(),
            1,
        )
        .unwrap();
        let pump = FringeSeries::new(
            x.clone(),
            x.iter().map(|p| 3.0 + 3.0 * p.cos()).collect(),
            1,
        )
        .unwrap();
        let (ds, di) = singles_fringe_phases(&sig, &idl, &pump).unwrap();
        assert_abs_diff_eq!(ds, -2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(di, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn wrap_phase_range() {
        assert_abs_diff_eq!(wrap_phase(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_phase(-PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_phase(0.5 - 4.0 * PI), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn reported_sigma_matches_replica_spread() {
        let x = grid(21, PI);
        let mean = cosine(&x, 118.0, 108.0, 2.0, PI / 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0xf17);
        let fits: Vec<FringeFit> = (0..300)
            .map(|_| fit_fringe(&poisson_series(&x, &mean, &mut rng), 2.0).unwrap())
            .collect();
        let n = fits.len() as f64;
        let m = fits.iter().map(|f| f.visibility).sum::<f64>() / n;
        let sd = (fits.iter().map(|f| (f.visibility - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let reported = fits.iter().map(|f| f.sigma_visibility).sum::<f64>() / n;
        let ratio = sd / reported;
        assert!(
            (1.0 / 1.5..1.5).contains(&ratio),
            "spread {sd} vs reported {reported}"
        );
        assert!((m - 108.0 / 118.0).abs() < 3.0 * sd / n.sqrt() + 2e-3);
    }

    proptest! {
        #[test]
        fn noiseless_recovery_is_exact(
            a in 10.0f64..1e4, vfrac in 0.0f64..1.0, ph in -3.0f64..3.0, n in 6usize..40, k in 1u32..3
        ) {
            let k = k as f64;
            let x = grid(n, 2.0 * PI / k);
            let b = a * vfrac;
            let s = FringeSeries::new(x.clone(), cosine(&x, a, b, k, ph), 1).unwrap();
            let f = fit_fringe(&s, k).unwrap();
            prop_assert!((f.offset - a).abs() <= 1e-9 * a);
            prop_assert!((f.amplitude - b).abs() <= 1e-9 * a);
            prop_assert!((f.visibility - vfrac).abs() <= 1e-9);
            if vfrac > 1e-3 {
                prop_assert!(wrap_phase(f.phase - ph).abs() <= 1e-9 / vfrac);
            }
        }

        #[test]
        fn visibility_invariant_under_scaling(scale in 1.0f64..50.0, seed in 0u64..1000) {
            let x = grid(16, 2.0 * PI);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = poisson_series(&x, &cosine(&x, 200.0, 150.0, 1.0, 1.0), &mut rng);
            prop_assume!(s.y.iter().all(|v| *v >= 1.0));
            let scaled = FringeSeries { y: s.y.iter().map(|v| v * scale).collect(), ..s.clone() };
            let f1 = fit_fringe(&s, 1.0).unwrap();
            let f2 = fit_fringe(&scaled, 1.0).unwrap();
            prop_assert!((f1.visibility - f2.visibility).abs() < 1e-3 * f1.sigma_visibility.max(1e-6));
        }
    }
}
