//! End-to-end scan scenarios: Monte Carlo counts, dark baseline, oracle and fits.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{fit_fringe, singles_fringe_phases, subtract_dark, FringeFit, FringeSeries};
use crate::engine::{derive_seed, run_counts, CountRecord, RunConfig};
use crate::error::invalid;
use crate::oracle::{
    expected_coincidence_for_state, expected_visibility, DarkTreatment, RatePrediction, ScanKind,
};
use crate::polarization::AnalyzerSetting;
use crate::{Channel, Result};

use super::config::ApparatusConfig;

const DARK_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    PhaseScan,
    AnalyzerScan,
    PowerSweep,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::PhaseScan => "phase-scan",
            ScenarioKind::AnalyzerScan => "analyzer-scan",
            ScenarioKind::PowerSweep => "power-sweep",
        }
    }
}

/// Run parameters shared by all scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub gates_per_point: u64,
    pub seed: u64,
    pub theta_s: AnalyzerSetting,
    /// Idler analyzer for phase scans; ignored by analyzer scans.
    pub theta_i: AnalyzerSetting,
}

impl ScanOptions {
    /// Both analyzers at 45 degrees.
    pub fn new(gates_per_point: u64, seed: u64) -> Self {
        ScanOptions {
            gates_per_point,
            seed,
            theta_s: AnalyzerSetting::from_degrees(45.0),
            theta_i: AnalyzerSetting::from_degrees(45.0),
        }
    }
}

/// Which counter a series is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    SinglesSignal,
    SinglesIdler,
    Coincidences,
}

/// One simulated setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub x_value: f64,
    /// Extra label for sweeps ("max" or "min").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
    pub counts: CountRecord,
    /// Expected dark contributions to each counter for this point.
    pub dark_s: f64,
    pub dark_i: f64,
    pub dark_coincidences: f64,
    /// Pump interferometer monitor output in mW (phase scans only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_monitor_mw: Option<f64>,
    pub oracle: RatePrediction,
}

impl ScanPoint {
    pub fn value(&self, q: Quantity) -> (f64, f64) {
        match q {
            Quantity::SinglesSignal => (self.counts.singles_signal as f64, self.dark_s),
            Quantity::SinglesIdler => (self.counts.singles_idler as f64, self.dark_i),
            Quantity::Coincidences => (self.counts.coincidences as f64, self.dark_coincidences),
        }
    }
}

/// Builds a fringe series with its dark baseline from scan points.
pub fn series_from_points(points: &[ScanPoint], q: Quantity) -> Result<FringeSeries> {
    let gates = points
        .first()
        .ok_or_else(|| invalid("no scan points"))?
        .counts
        .gates;
    if points.iter().any(|p| p.counts.gates != gates) {
        return Err(invalid("scan points have different gate counts"));
    }
    let (y, d): (Vec<f64>, Vec<f64>) = points.iter().map(|p| p.value(q)).unzip();
    FringeSeries::new(points.iter().map(|p| p.x_value).collect(), y, gates)?.with_dark(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFits {
    /// Dark-subtracted coincidences. Phase scans fit against `phi = 2 phi_p`.
    pub coincidences: FringeFit,
    pub coincidences_raw: FringeFit,
    pub floored_points: Vec<usize>,
    pub singles_signal: FringeFit,
    pub singles_idler: FringeFit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_monitor: Option<FringeFit>,
    /// Signal and idler singles-fringe offsets relative to the pump fringe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singles_phase_offsets_rad: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityPair {
    pub subtracted: f64,
    pub raw: f64,
}

/// Two-setting visibility at one pump power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub power_mw: f64,
    pub pair_rate: f64,
    pub total_per_channel_signal: f64,
    pub oracle_visibility: VisibilityPair,
    pub mc_visibility: VisibilityPair,
    pub mc_sigma: VisibilityPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_name: String,
    pub config_hash: String,
    pub seed: u64,
    pub gates_per_point: u64,
    pub theta_s_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_i_deg: Option<f64>,
    pub phi_p_rad: f64,
    pub power_per_arm_mw: f64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: ScenarioKind,
    pub x_label: String,
    pub points: Vec<ScanPoint>,
    pub dark_run: CountRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fits: Option<ScanFits>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_visibility: Option<VisibilityPair>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepPoint>,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
}

impl ScenarioResult {
    pub fn series(&self, q: Quantity) -> Result<FringeSeries> {
        series_from_points(&self.points, q)
    }

    /// Dark-subtracted coincidence visibility and its uncertainty.
    pub fn visibility(&self) -> Option<(f64, f64)> {
        self.fits
            .as_ref()
            .map(|f| (f.coincidences.visibility, f.coincidences.sigma_visibility))
    }
}

fn check_grid(grid: &[f64], period: f64, what: &str) -> Result<()> {
    if grid.len() < 4 {
        return Err(invalid(format!("{what} grid needs at least 4 points")));
    }
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(invalid(format!("{what} grid has non-finite values")));
    }
    let (lo, hi) = grid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
            (a.min(*x), b.max(*x))
        });
    let span = hi - lo;
    if span + span / ((grid.len() - 1) as f64) < period * (1.0 - 1e-9) {
        return Err(invalid(format!(
            "{what} grid spans {span:.4} rad, needs a full period of {period:.4}"
        )));
    }
    Ok(())
}

/// `n` points evenly covering `[0, period)`.
pub fn uniform_grid(n: usize, period: f64) -> Vec<f64> {
    (0..n).map(|k| period * k as f64 / n as f64).collect()
}

fn prepare(config: &ApparatusConfig, opts: &ScanOptions) -> Result<Vec<String>> {
    let warnings = config.validate()?;
    if opts.gates_per_point == 0 {
        return Err(invalid("gates_per_point must be >= 1"));
    }
    Ok(warnings)
}

fn dark_run(config: &ApparatusConfig, opts: &ScanOptions, gates: u64) -> Result<CountRecord> {
    let setup = config
        .measurement_setup(opts.theta_s, opts.theta_i, config.pump.phi_p_rad)?
        .pump_blocked();
    run_counts(&RunConfig::new(
        setup,
        gates,
        derive_seed(opts.seed, DARK_STREAM),
    ))
}

/// Expected dark contributions `(singles_s, singles_i, coincidences)` for a point,
/// using the measured singles of that point for the dark-times-light terms.
fn baselines(point: &CountRecord, dark: &CountRecord) -> (f64, f64, f64) {
    let g = point.gates as f64;
    let ds = dark.singles_frequency(Channel::Signal);
    let di = dark.singles_frequency(Channel::Idler);
    let ss = point.singles_frequency(Channel::Signal);
    let si = point.singles_frequency(Channel::Idler);
    let c = g * (ds * si + di * ss - ds * di);
    (ds * g, di * g, c.max(0.0))
}

struct Setting {
    x: f64,
    label: Option<String>,
    config: ApparatusConfig,
    theta_s: AnalyzerSetting,
    theta_i: AnalyzerSetting,
    phi_p: f64,
}

fn simulate(
    settings: &[Setting],
    opts: &ScanOptions,
) -> Result<Vec<(CountRecord, RatePrediction)>> {
    settings
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let setup = s.config.measurement_setup(s.theta_s, s.theta_i, s.phi_p)?;
            let oracle = expected_coincidence_for_state(
                &setup.rates,
                &setup.state,
                setup.signal,
                setup.idler,
                s.theta_s,
                s.theta_i,
                s.phi_p,
            );
            let counts = run_counts(&RunConfig::new(
                setup,
                opts.gates_per_point,
                derive_seed(opts.seed, k as u64),
            ))?;
            Ok((counts, oracle))
        })
        .collect()
}

fn assemble(
    settings: &[Setting],
    runs: Vec<(CountRecord, RatePrediction)>,
    dark: &CountRecord,
) -> Vec<ScanPoint> {
    settings
        .iter()
        .zip(runs)
        .map(|(s, (counts, oracle))| {
            let (dark_s, dark_i, dark_coincidences) = baselines(&counts, dark);
            ScanPoint {
                x_value: s.x,
                setting: s.label.clone(),
                counts,
                dark_s,
                dark_i,
                dark_coincidences,
                pump_monitor_mw: None,
                oracle,
            }
        })
        .collect()
}

fn provenance(
    config: &ApparatusConfig,
    opts: &ScanOptions,
    theta_i: Option<AnalyzerSetting>,
) -> Provenance {
    Provenance {
        config_name: config.name.clone(),
        config_hash: config.config_hash(),
        seed: opts.seed,
        gates_per_point: opts.gates_per_point,
        theta_s_deg: opts.theta_s.degrees(),
        theta_i_deg: theta_i.map(|t| t.degrees()),
        phi_p_rad: config.pump.phi_p_rad,
        power_per_arm_mw: config.pump.per_arm_power_mw(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn fit_scan(
    points: &[ScanPoint],
    coincidence_x_scale: f64,
    k_coinc: f64,
    k_singles: f64,
) -> Result<ScanFits> {
    let mut coinc = series_from_points(points, Quantity::Coincidences)?;
    coinc.x.iter_mut().for_each(|x| *x *= coincidence_x_scale);
    let sub = subtract_dark(&coinc)?;
    Ok(ScanFits {
        coincidences: fit_fringe(&sub.series, k_coinc)?,
        coincidences_raw: fit_fringe(&coinc, k_coinc)?,
        floored_points: sub.floored,
        singles_signal: fit_fringe(
            &series_from_points(points, Quantity::SinglesSignal)?,
            k_singles,
        )?,
        singles_idler: fit_fringe(
            &series_from_points(points, Quantity::SinglesIdler)?,
            k_singles,
        )?,
        pump_monitor: None,
        singles_phase_offsets_rad: None,
    })
}

/// Pump interferometer output behind the monitor polarizer.
pub fn pump_monitor_mw(power_h_mw: f64, power_v_mw: f64, phi_p: f64) -> f64 {
    0.5 * (power_h_mw + power_v_mw + 2.0 * (power_h_mw * power_v_mw).sqrt() * phi_p.cos())
}

/// Sweeps the pump phase with both analyzers fixed.
///
/// Coincidences are fit against `phi = 2 phi_p` with unit angular frequency;
/// singles and the pump monitor against `phi_p`.
pub fn phase_scan(
    config: &ApparatusConfig,
    phi_grid: &[f64],
    opts: &ScanOptions,
) -> Result<ScenarioResult> {
    let warnings = prepare(config, opts)?;
    check_grid(phi_grid, 2.0 * PI, "phase")?;
    let settings: Vec<Setting> = phi_grid
        .iter()
        .map(|&phi| Setting {
            x: phi,
            label: None,
            config: config.clone(),
            theta_s: opts.theta_s,
            theta_i: opts.theta_i,
            phi_p: phi,
        })
        .collect();
    let runs = simulate(&settings, opts)?;
    let dark = dark_run(config, opts, opts.gates_per_point * phi_grid.len() as u64)?;
    let mut points = assemble(&settings, runs, &dark);
    let (ph, pv) = (config.pump.power_h_mw, config.pump.power_v_mw);
    for p in &mut points {
        p.pump_monitor_mw = Some(pump_monitor_mw(ph, pv, p.x_value));
    }

    let mut fits = fit_scan(&points, 2.0, 1.0, 1.0)?;
    let pump = FringeSeries::new(
        phi_grid.to_vec(),
        points
            .iter()
            .map(|p| p.pump_monitor_mw.unwrap_or(0.0))
            .collect(),
        opts.gates_per_point,
    )?;
    fits.pump_monitor = fit_fringe(&pump, 1.0).ok();
    if fits.pump_monitor.is_some() {
        let sig = series_from_points(&points, Quantity::SinglesSignal)?;
        let idl = series_from_points(&points, Quantity::SinglesIdler)?;
        fits.singles_phase_offsets_rad = singles_fringe_phases(&sig, &idl, &pump)
            .ok()
            .map(|(s, i)| [s, i]);
    }

    let rates = config.rates()?;
    let scan = ScanKind::PhaseScan {
        theta_s: opts.theta_s,
        theta_i: opts.theta_i,
    };
    let (sig, idl) = (
        config.detection_channel(Channel::Signal),
        config.detection_channel(Channel::Idler),
    );
    Ok(ScenarioResult {
        scenario: ScenarioKind::PhaseScan,
        x_label: "phi_p_rad".into(),
        points,
        dark_run: dark,
        fits: Some(fits),
        oracle_visibility: Some(VisibilityPair {
            subtracted: expected_visibility(&rates, sig, idl, scan, DarkTreatment::Subtracted),
            raw: expected_visibility(&rates, sig, idl, scan, DarkTreatment::Raw),
        }),
        sweep: Vec::new(),
        provenance: provenance(config, opts, Some(opts.theta_i)),
        warnings,
    })
}

/// Rotates the idler analyzer with the signal analyzer and pump phase fixed.
pub fn analyzer_scan(
    config: &ApparatusConfig,
    theta_i_grid: &[f64],
    opts: &ScanOptions,
) -> Result<ScenarioResult> {
    let warnings = prepare(config, opts)?;
    check_grid(theta_i_grid, PI, "analyzer")?;
    let phi_p = config.pump.phi_p_rad;
    let settings: Vec<Setting> = theta_i_grid
        .iter()
        .map(|&th| Setting {
            x: th,
            label: None,
            config: config.clone(),
            theta_s: opts.theta_s,
            theta_i: AnalyzerSetting(th),
            phi_p,
        })
        .collect();
    let runs = simulate(&settings, opts)?;
    let dark = dark_run(
        config,
        opts,
        opts.gates_per_point * theta_i_grid.len() as u64,
    )?;
    let points = assemble(&settings, runs, &dark);
    let fits = fit_scan(&points, 1.0, 2.0, 2.0)?;

    let rates = config.rates()?;
    let scan = ScanKind::AnalyzerScan {
        theta_s: opts.theta_s,
        phi_p,
    };
    let (sig, idl) = (
        config.detection_channel(Channel::Signal),
        config.detection_channel(Channel::Idler),
    );
    Ok(ScenarioResult {
        scenario: ScenarioKind::AnalyzerScan,
        x_label: "theta_i_rad".into(),
        points,
        dark_run: dark,
        fits: Some(fits),
        oracle_visibility: Some(VisibilityPair {
            subtracted: expected_visibility(&rates, sig, idl, scan, DarkTreatment::Subtracted),
            raw: expected_visibility(&rates, sig, idl, scan, DarkTreatment::Raw),
        }),
        sweep: Vec::new(),
        provenance: provenance(config, opts, None),
        warnings,
    })
}

fn two_point_visibility(max: f64, min: f64, var_max: f64, var_min: f64) -> (f64, f64) {
    let sum = max + min;
    if sum <= 0.0 {
        return (0.0, 0.0);
    }
    let v = (max - min) / sum;
    let dmax = 2.0 * min / (sum * sum);
    let dmin = -2.0 * max / (sum * sum);
    (v, (dmax * dmax * var_max + dmin * dmin * var_min).sqrt())
}

/// Visibility versus per-arm pump power from the two extreme analyzer settings
/// (idler parallel and perpendicular to the signal analyzer).
pub fn power_sweep(
    config: &ApparatusConfig,
    powers_mw: &[f64],
    opts: &ScanOptions,
) -> Result<ScenarioResult> {
    let warnings = prepare(config, opts)?;
    if powers_mw.is_empty() || powers_mw.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(invalid("power grid must be nonempty with positive powers"));
    }
    let cfgs: Vec<ApparatusConfig> = powers_mw
        .iter()
        .map(|p| config.with_power_per_arm(*p))
        .collect();
    for c in &cfgs {
        c.validate()?;
    }
    let phi_p = config.pump.phi_p_rad;
    let along = opts.theta_s;
    let across = AnalyzerSetting(opts.theta_s.radians() + PI / 2.0);
    let settings: Vec<Setting> = cfgs
        .iter()
        .zip(powers_mw)
        .flat_map(|(c, p)| {
            [("max", along), ("min", across)].map(|(label, th)| Setting {
                x: *p,
                label: Some(label.to_string()),
                config: c.clone(),
                theta_s: opts.theta_s,
                theta_i: th,
                phi_p,
            })
        })
        .collect();
    let runs = simulate(&settings, opts)?;
    let dark = dark_run(config, opts, opts.gates_per_point * settings.len() as u64)?;
    let points = assemble(&settings, runs, &dark);

    let scan = ScanKind::AnalyzerScan {
        theta_s: opts.theta_s,
        phi_p,
    };
    let (sig, idl) = (
        config.detection_channel(Channel::Signal),
        config.detection_channel(Channel::Idler),
    );
    let mut sweep = Vec::with_capacity(cfgs.len());
    for (c, pair) in cfgs.iter().zip(points.chunks(2)) {
        let rates = c.rates()?;
        let (hi, lo) = (&pair[0], &pair[1]);
        let (chi, clo) = (hi.counts.coincidences as f64, lo.counts.coincidences as f64);
        let raw = two_point_visibility(chi, clo, chi, clo);
        let sub = two_point_visibility(
            (chi - hi.dark_coincidences).max(0.0),
            (clo - lo.dark_coincidences).max(0.0),
            chi,
            clo,
        );
        sweep.push(SweepPoint {
            power_mw: c.pump.per_arm_power_mw(),
            pair_rate: rates.pair_rate,
            total_per_channel_signal: rates.total_per_channel(Channel::Signal),
            oracle_visibility: VisibilityPair {
                subtracted: expected_visibility(&rates, sig, idl, scan, DarkTreatment::Subtracted),
                raw: expected_visibility(&rates, sig, idl, scan, DarkTreatment::Raw),
            },
            mc_visibility: VisibilityPair {
                subtracted: sub.0,
                raw: raw.0,
            },
            mc_sigma: VisibilityPair {
                subtracted: sub.1,
                raw: raw.1,
            },
        });
    }
    Ok(ScenarioResult {
        scenario: ScenarioKind::PowerSweep,
        x_label: "power_per_arm_mw".into(),
        points,
        dark_run: dark,
        fits: None,
        oracle_visibility: None,
        sweep,
        provenance: provenance(config, opts, None),
        warnings,
    })
}
