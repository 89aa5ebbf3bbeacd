//! Per-gate Monte Carlo counting.
//!
//! Every photon population in a gate is an independent Poisson process, so the
//! engine draws the total event number from the summed mean and assigns each
//! event to its population in proportion to the population means. Each event
//! is then followed explicitly: correlated pairs through the joint analyzer
//! measurement, single photons through their analyzer, and every surviving
//! photon through the channel efficiency. Dark counts enter as a Poisson event
//! with mean `-ln(1 - d)`, which clicks with probability exactly `d`.
//!
//! Gates are processed in fixed-size blocks. Block `k` draws from ChaCha8
//! stream `k` keyed by the master seed, so results do not depend on how blocks
//! are scheduled across threads.

use std::ops::{Add, AddAssign};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::polarization::{
    joint_outcome_probabilities, marginal_pass_probability, AnalyzerSetting, TwoPhotonState,
};
use crate::source::{spm_post_analyzer_mean, EmissionRates};
use crate::{Channel, Result};

pub const DEFAULT_BLOCK_SIZE: u64 = 1 << 16;

/// Lumped efficiency and dark-count probability of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionChannel {
    pub efficiency: f64,
    pub dark_prob: f64,
}

/// Physics of one measurement setting: emission, pair state, analyzers, detectors.
#[derive(Debug, Clone)]
pub struct MeasurementSetup {
    pub rates: EmissionRates,
    pub state: TwoPhotonState,
    pub theta_s: AnalyzerSetting,
    pub theta_i: AnalyzerSetting,
    pub phi_p: f64,
    pub signal: DetectionChannel,
    pub idler: DetectionChannel,
}

impl MeasurementSetup {
    /// Same detectors with the pump blocked.
    pub fn pump_blocked(&self) -> MeasurementSetup {
        MeasurementSetup {
            rates: EmissionRates::blocked(),
            ..self.clone()
        }
    }

    pub fn channel(&self, ch: Channel) -> DetectionChannel {
        match ch {
            Channel::Signal => self.signal,
            Channel::Idler => self.idler,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub gates: u64,
    pub master_seed: u64,
    pub block_size: u64,
    pub setup: MeasurementSetup,
}

impl RunConfig {
    pub fn new(setup: MeasurementSetup, gates: u64, master_seed: u64) -> Self {
        RunConfig {
            gates,
            master_seed,
            block_size: DEFAULT_BLOCK_SIZE,
            setup,
        }
    }
}

/// Accumulated counts for one measurement setting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub gates: u64,
    pub singles_signal: u64,
    pub singles_idler: u64,
    pub coincidences: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dark_baseline: Option<Box<CountRecord>>,
}

impl CountRecord {
    pub fn singles(&self, ch: Channel) -> u64 {
        match ch {
            Channel::Signal => self.singles_signal,
            Channel::Idler => self.singles_idler,
        }
    }

    pub fn singles_frequency(&self, ch: Channel) -> f64 {
        self.singles(ch) as f64 / self.gates as f64
    }

    pub fn coincidence_frequency(&self) -> f64 {
        self.coincidences as f64 / self.gates as f64
    }

    fn record(&mut self, signal: bool, idler: bool) {
        self.gates += 1;
        self.singles_signal += signal as u64;
        self.singles_idler += idler as u64;
        self.coincidences += (signal && idler) as u64;
    }
}

impl Add for CountRecord {
    type Output = CountRecord;

    fn add(mut self, rhs: CountRecord) -> CountRecord {
        self += rhs;
        self
    }
}

impl AddAssign for CountRecord {
    fn add_assign(&mut self, rhs: CountRecord) {
        self.gates += rhs.gates;
        self.singles_signal += rhs.singles_signal;
        self.singles_idler += rhs.singles_idler;
        self.coincidences += rhs.coincidences;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    CorrelatedPair,
    UncorrelatedSignal,
    UncorrelatedIdler,
    RamanSignal,
    RamanIdler,
    SpmSignal,
    SpmIdler,
    DarkSignal,
    DarkIdler,
}

/// Click outcome of a single gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GateOutcome {
    pub signal: bool,
    pub idler: bool,
}

/// Precomputed per-gate sampling tables for one [`MeasurementSetup`].
#[derive(Debug, Clone)]
pub struct GateModel {
    events: Vec<(Event, f64)>, // cumulative means
    total_mean: f64,
    count: Option<Poisson<f64>>,
    // cumulative joint outcome thresholds: pp, pp+pf, pp+pf+fp
    joint: [f64; 3],
    marginal_s: f64,
    marginal_i: f64,
    eta_s: f64,
    eta_i: f64,
}

impl GateModel {
    pub fn new(setup: &MeasurementSetup) -> Result<Self> {
        setup.rates.validate()?;
        for ch in [setup.signal, setup.idler] {
            if !(0.0..=1.0).contains(&ch.efficiency) {
                return Err(invalid(format!(
                    "channel efficiency {} outside [0, 1]",
                    ch.efficiency
                )));
            }
            if !(ch.dark_prob >= 0.0 && ch.dark_prob < 1.0) {
                return Err(invalid(format!(
                    "dark probability {} outside [0, 1)",
                    ch.dark_prob
                )));
            }
        }
        let r = &setup.rates;
        let jo = joint_outcome_probabilities(&setup.state, setup.theta_s, setup.theta_i);
        let means = [
            (Event::CorrelatedPair, r.xi * r.pair_rate),
            (Event::UncorrelatedSignal, (1.0 - r.xi) * r.pair_rate),
            (Event::UncorrelatedIdler, (1.0 - r.xi) * r.pair_rate),
            (Event::RamanSignal, r.raman_signal),
            (Event::RamanIdler, r.raman_idler),
            (
                Event::SpmSignal,
                spm_post_analyzer_mean(r, Channel::Signal, setup.theta_s, setup.phi_p),
            ),
            (
                Event::SpmIdler,
                spm_post_analyzer_mean(r, Channel::Idler, setup.theta_i, setup.phi_p),
            ),
            (Event::DarkSignal, -(-setup.signal.dark_prob).ln_1p()),
            (Event::DarkIdler, -(-setup.idler.dark_prob).ln_1p()),
        ];
        let mut events = Vec::with_capacity(means.len());
        let mut acc = 0.0;
        for (ev, m) in means {
            if m > 0.0 {
                acc += m;
                events.push((ev, acc));
            }
        }
        let count = if acc > 0.0 {
            Some(Poisson::new(acc).map_err(|e| invalid(format!("event mean {acc}: {e}")))?)
        } else {
            None
        };
        Ok(GateModel {
            events,
            total_mean: acc,
            count,
            joint: [
                jo.pass_pass,
                jo.pass_pass + jo.pass_fail,
                jo.pass_pass + jo.pass_fail + jo.fail_pass,
            ],
            marginal_s: marginal_pass_probability(&setup.state, Channel::Signal, setup.theta_s),
            marginal_i: marginal_pass_probability(&setup.state, Channel::Idler, setup.theta_i),
            eta_s: setup.signal.efficiency,
            eta_i: setup.idler.efficiency,
        })
    }

    /// Mean number of photon and dark events per gate.
    pub fn event_mean(&self) -> f64 {
        self.total_mean
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GateOutcome {
        let mut out = GateOutcome::default();
        let Some(count) = &self.count else {
            return out;
        };
        let n = count.sample(rng) as u64;
        for _ in 0..n {
            let u = rng.random::<f64>() * self.total_mean;
            let ev = self
                .events
                .iter()
                .find(|(_, cum)| u < *cum)
                .map_or(self.events[self.events.len() - 1].0, |(e, _)| *e);
            match ev {
                Event::CorrelatedPair => {
                    let v = rng.random::<f64>();
                    let (s_pass, i_pass) = if v < self.joint[0] {
                        (true, true)
                    } else if v < self.joint[1] {
                        (true, false)
                    } else if v < self.joint[2] {
                        (false, true)
                    } else {
                        (false, false)
                    };
                    if s_pass && rng.random::<f64>() < self.eta_s {
                        out.signal = true;
                    }
                    if i_pass && rng.random::<f64>() < self.eta_i {
                        out.idler = true;
                    }
                }
                Event::UncorrelatedSignal => {
                    out.signal |= self.photon(rng, self.marginal_s, self.eta_s);
                }
                Event::UncorrelatedIdler => {
                    out.idler |= self.photon(rng, self.marginal_i, self.eta_i);
                }
                Event::RamanSignal => out.signal |= self.photon(rng, 0.5, self.eta_s),
                Event::RamanIdler => out.idler |= self.photon(rng, 0.5, self.eta_i),
                // SPM means are already taken after the analyzer
                Event::SpmSignal => out.signal |= rng.random::<f64>() < self.eta_s,
                Event::SpmIdler => out.idler |= rng.random::<f64>() < self.eta_i,
                Event::DarkSignal => out.signal = true,
                Event::DarkIdler => out.idler = true,
            }
        }
        out
    }

    #[inline]
    fn photon<R: Rng + ?Sized>(&self, rng: &mut R, pass: f64, eta: f64) -> bool {
        rng.random::<f64>() < pass && rng.random::<f64>() < eta
    }
}

/// Samples one gate for `setup`.
pub fn simulate_gate<R: Rng + ?Sized>(
    setup: &MeasurementSetup,
    rng: &mut R,
) -> Result<GateOutcome> {
    Ok(GateModel::new(setup)?.sample(rng))
}

/// Random stream for block `block` of a run keyed by `master_seed`.
pub fn block_rng(master_seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(block);
    rng
}

/// Independent seed for sub-run `index` of a run keyed by `master_seed`.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..24].copy_from_slice(b"subrun\0\0");
    ChaCha8Rng::from_seed(key).next_u64()
}

fn run_block(model: &GateModel, master_seed: u64, block: u64, gates: u64) -> CountRecord {
    let mut rng = block_rng(master_seed, block);
    let mut rec = CountRecord::default();
    for _ in 0..gates {
        let o = model.sample(&mut rng);
        rec.record(o.signal, o.idler);
    }
    rec
}

/// Runs `config.gates` independent gates and accumulates the counts.
///
/// The result depends only on the configuration and seed, never on the number
/// of worker threads.
pub fn run_counts(config: &RunConfig) -> Result<CountRecord> {
    if config.gates == 0 {
        return Err(invalid("run needs at least one gate"));
    }
    if config.block_size == 0 {
        return Err(invalid("block size must be >= 1"));
    }
    let model = GateModel::new(&config.setup)?;
    let blocks = config.gates.div_ceil(config.block_size);
    let rec = (0..blocks)
        .into_par_iter()
        .map(|k| {
            let start = k * config.block_size;
            let n = config.block_size.min(config.gates - start);
            run_block(&model, config.master_seed, k, n)
        })
        .reduce(CountRecord::default, |a, b| a + b);
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::{BellState, TwoPhotonState};

    fn setup(rates: EmissionRates, ts: f64, ti: f64, eta: f64, d: f64) -> MeasurementSetup {
        MeasurementSetup {
            rates,
            state: TwoPhotonState::bell(BellState::PsiPlus),
            theta_s: AnalyzerSetting::from_degrees(ts),
            theta_i: AnalyzerSetting::from_degrees(ti),
            phi_p: 0.0,
            signal: DetectionChannel {
                efficiency: eta,
                dark_prob: d,
            },
            idler: DetectionChannel {
                efficiency: eta,
                dark_prob: d,
            },
        }
    }

    fn pairs_only(alpha: f64, xi: f64) -> EmissionRates {
        EmissionRates {
            pair_rate: alpha,
            xi,
            ..EmissionRates::blocked()
        }
    }

    #[test]
    fn nothing_in_nothing_out() {
        let cfg = RunConfig::new(
            setup(EmissionRates::blocked(), 45.0, 45.0, 1.0, 0.0),
            100_000,
            1,
        );
        let rec = run_counts(&cfg).unwrap();
        assert_eq!(rec.singles_signal + rec.singles_idler + rec.coincidences, 0);
        assert_eq!(rec.gates, 100_000);
    }

    #[test]
    fn orthogonal_analyzers_block_coincidences() {
        let cfg = RunConfig::new(
            setup(pairs_only(0.1, 1.0), 45.0, 135.0, 1.0, 0.0),
            1_000_000,
            7,
        );
        let rec = run_counts(&cfg).unwrap();
        assert!(rec.singles_signal > 10_000);
        // each pair lands on exactly one side, so only multi-pair gates coincide
        let alpha: f64 = 0.1;
        let p: f64 = (2..30)
            .map(|n| {
                let pn = (-alpha).exp() * alpha.powi(n) / (1..=n).map(f64::from).product::<f64>();
                pn * (1.0 - 2.0 * 0.5f64.powi(n))
            })
            .sum();
        let expected = p * rec.gates as f64;
        assert!((rec.coincidences as f64 - expected).abs() < 4.0 * expected.sqrt());

        let cfg = RunConfig::new(
            setup(pairs_only(1e-4, 1.0), 45.0, 135.0, 1.0, 0.0),
            1_000_000,
            7,
        );
        assert_eq!(run_counts(&cfg).unwrap().coincidences, 0);
    }

    #[test]
    fn parallel_analyzers_with_unit_efficiency_always_coincide() {
        // one pair, perfect detection: every signal click has an idler partner
        let cfg = RunConfig::new(
            setup(pairs_only(0.05, 1.0), 45.0, 45.0, 1.0, 0.0),
            200_000,
            3,
        );
        let rec = run_counts(&cfg).unwrap();
        assert_eq!(rec.coincidences, rec.singles_signal);
        assert_eq!(rec.coincidences, rec.singles_idler);
    }

    #[test]
    fn zero_gates_rejected_single_gate_bounded() {
        let mut cfg = RunConfig::new(setup(pairs_only(0.1, 1.0), 0.0, 0.0, 0.5, 0.1), 0, 1);
        assert!(run_counts(&cfg).is_err());
        cfg.gates = 1;
        let rec = run_counts(&cfg).unwrap();
        assert!(rec.singles_signal <= 1 && rec.singles_idler <= 1 && rec.coincidences <= 1);
        cfg.block_size = 0;
        assert!(run_counts(&cfg).is_err());
    }

    #[test]
    fn dark_event_mean_reproduces_dark_probability() {
        let d = 0.2;
        let cfg = RunConfig::new(
            setup(EmissionRates::blocked(), 0.0, 0.0, 1.0, d),
            2_000_000,
            11,
        );
        let rec = run_counts(&cfg).unwrap();
        let n = rec.gates as f64;
        let sigma = (n * d * (1.0 - d)).sqrt();
        assert!((rec.singles_signal as f64 - n * d).abs() < 4.0 * sigma);
        // independent arms
        let exp_c = n * d * d;
        assert!((rec.coincidences as f64 - exp_c).abs() < 4.0 * exp_c.sqrt());
    }

    #[test]
    fn block_streams_are_distinct_and_reproducible() {
        let mut a = block_rng(5, 0);
        let mut b = block_rng(5, 1);
        let mut a2 = block_rng(5, 0);
        let x = a.next_u64();
        assert_ne!(x, b.next_u64());
        assert_eq!(x, a2.next_u64());
        assert_ne!(derive_seed(5, 0), derive_seed(5, 1));
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
    }

    #[test]
    fn counts_are_structurally_consistent() {
        let rates = EmissionRates {
            pair_rate: 0.3,
            xi: 0.6,
            raman_signal: 0.2,
            raman_idler: 0.1,
            spm_signal: 0.05,
            spm_idler: 0.02,
            spm_phase_signal: -2.0,
            spm_phase_idler: 2.0,
        };
        for seed in 0..5 {
            let cfg = RunConfig::new(setup(rates, 10.0, 70.0, 0.6, 0.01), 50_000, seed);
            let rec = run_counts(&cfg).unwrap();
            assert!(rec.coincidences <= rec.singles_signal.min(rec.singles_idler));
            assert!(rec.singles_signal <= rec.gates && rec.singles_idler <= rec.gates);
        }
    }
}
