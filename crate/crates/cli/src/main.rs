//! `fiberpairs` command-line front end.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use fiberpairs::experiment::output::write_result;
use fiberpairs::experiment::{
    analyzer_scan, calibrate, phase_scan, power_sweep, uniform_grid, ApparatusConfig,
    CalibrationTarget, ScanOptions, ScenarioResult,
};
use fiberpairs::oracle::{
    expected_coincidence_for_state, expected_visibility, first_order_visibility, DarkTreatment,
    ScanKind,
};
use fiberpairs::polarization::AnalyzerSetting;
use fiberpairs::{Channel, Error, Result};

#[derive(Parser)]
#[command(
    name = "fiberpairs",
    version,
    about = "Fiber-loop entangled photon-pair simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo scenario.
    Simulate {
        #[command(subcommand)]
        scenario: Scenario,
    },
    /// Fit emission coefficients to measured operating points.
    Calibrate(CalibrateArgs),
    /// Closed-form rates and visibilities for one setting.
    Oracle(OracleArgs),
    /// Check a configuration and list warnings.
    ValidateConfig(ConfigArgs),
}

#[derive(Subcommand)]
enum Scenario {
    /// Sweep the pump phase with both analyzers fixed.
    PhaseScan(ScanArgs),
    /// Rotate the idler analyzer with the signal analyzer fixed.
    AnalyzerScan(ScanArgs),
    /// Two-setting visibility versus pump power.
    PowerSweep(SweepArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config JSON path or preset name (cwdmf, dgfawg).
    #[arg(long)]
    config: String,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Gates per point; overrides --integration-s.
    #[arg(long)]
    gates: Option<u64>,
    /// Integration time per point in seconds of gate-rate time.
    #[arg(long, default_value_t = 20.0)]
    integration_s: f64,
    /// Output stem; writes <out>.csv and <out>.json. Without it the JSON result goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 45.0)]
    theta_s_deg: f64,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Scan points over one full period.
    #[arg(long, default_value_t = 72)]
    points: usize,
    /// Per-arm pump power; defaults to the config value.
    #[arg(long)]
    power_mw: Option<f64>,
    /// Idler analyzer for phase scans.
    #[arg(long, default_value_t = 45.0)]
    theta_i_deg: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Per-arm pump powers.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.025,0.05,0.1,0.15,0.2,0.3"
    )]
    powers_mw: Vec<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Config whose coefficients seed the fit; preset name or path.
    #[arg(long, default_value = "cwdmf")]
    config: String,
    /// JSON file with an array of {power_mw, total_photons, pair_rate}.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Inline target POWER_MW:TOTAL_PHOTONS:PAIR_RATE; repeatable.
    #[arg(long = "target")]
    inline: Vec<String>,
    /// Also fit the SPM coefficient jointly with Raman.
    #[arg(long)]
    fit_spm: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    power_mw: Option<f64>,
    #[arg(long, default_value_t = 45.0)]
    theta_s_deg: f64,
    #[arg(long, default_value_t = 45.0)]
    theta_i_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    phi_p_rad: f64,
}

fn load(args: &ConfigArgs, power_mw: Option<f64>) -> Result<ApparatusConfig> {
    let cfg = ApparatusConfig::load(&args.config)?;
    Ok(match power_mw {
        Some(p) => cfg.with_power_per_arm(p),
        None => cfg,
    })
}

fn options(cfg: &ApparatusConfig, run: &RunArgs) -> Result<ScanOptions> {
    let gates = match run.gates {
        Some(g) => g,
        None if run.integration_s > 0.0 => cfg.gates_for_seconds(run.integration_s),
        None => {
            return Err(Error::InvalidConfig(
                "integration time must be positive".into(),
            ))
        }
    };
    let mut opts = ScanOptions::new(gates, run.seed);
    opts.theta_s = AnalyzerSetting::from_degrees(run.theta_s_deg);
    Ok(opts)
}

fn emit(result: &ScenarioResult, out: &Option<PathBuf>) -> Result<serde_json::Value> {
    match out {
        Some(stem) => {
            let (csv, sidecar) = write_result(result, stem)?;
            Ok(json!({
                "scenario": result.scenario.as_str(),
                "csv": csv,
                "sidecar": sidecar,
                "visibility": result.visibility().map(|(v, s)| json!({"value": v, "sigma": s})),
                "oracle_visibility": result.oracle_visibility,
                "sweep": result.sweep,
                "config_hash": result.provenance.config_hash,
                "warnings": result.warnings,
            }))
        }
        None => Ok(serde_json::to_value(result)?),
    }
}

fn parse_target(s: &str) -> Result<CalibrationTarget> {
    let v: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidConfig(format!("target '{s}': {e}")))?;
    match v[..] {
        [power_mw, total_photons, pair_rate] => Ok(CalibrationTarget {
            power_mw,
            total_photons,
            pair_rate,
        }),
        _ => Err(Error::InvalidConfig(format!(
            "target '{s}' must be POWER_MW:TOTAL_PHOTONS:PAIR_RATE"
        ))),
    }
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Simulate { scenario } => match scenario {
            Scenario::PhaseScan(a) => {
                let cfg = load(&a.run.config, a.power_mw)?;
                let mut opts = options(&cfg, &a.run)?;
                opts.theta_i = AnalyzerSetting::from_degrees(a.theta_i_deg);
                let r = phase_scan(
                    &cfg,
                    &uniform_grid(a.points, 2.0 * std::f64::consts::PI),
                    &opts,
                )?;
                emit(&r, &a.run.out)
            }
            Scenario::AnalyzerScan(a) => {
                let cfg = load(&a.run.config, a.power_mw)?;
                let opts = options(&cfg, &a.run)?;
                let r = analyzer_scan(&cfg, &uniform_grid(a.points, std::f64::consts::PI), &opts)?;
                emit(&r, &a.run.out)
            }
            Scenario::PowerSweep(a) => {
                let cfg = load(&a.run.config, None)?;
                let opts = options(&cfg, &a.run)?;
                let r = power_sweep(&cfg, &a.powers_mw, &opts)?;
                emit(&r, &a.run.out)
            }
        },
        Command::Calibrate(a) => {
            let base = ApparatusConfig::load(&a.config)?;
            let mut targets: Vec<CalibrationTarget> = match &a.targets {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
                    .map_err(|e| Error::InvalidConfig(format!("targets JSON: {e}")))?,
                None => Vec::new(),
            };
            for t in &a.inline {
                targets.push(parse_target(t)?);
            }
            let r = calibrate(&targets, &base.emission.coefficients, a.fit_spm)?;
            let v = serde_json::to_value(&r)?;
            if let Some(out) = &a.out {
                std::fs::write(out, serde_json::to_string_pretty(&v)? + "\n")?;
            }
            Ok(v)
        }
        Command::Oracle(a) => {
            let cfg = load(&a.config, a.power_mw)?;
            let warnings = cfg.validate()?;
            let (ts, ti) = (
                AnalyzerSetting::from_degrees(a.theta_s_deg),
                AnalyzerSetting::from_degrees(a.theta_i_deg),
            );
            let setup = cfg.measurement_setup(ts, ti, a.phi_p_rad)?;
            let rates = setup.rates;
            let prediction = expected_coincidence_for_state(
                &rates,
                &setup.state,
                setup.signal,
                setup.idler,
                ts,
                ti,
                a.phi_p_rad,
            );
            let vis = |scan: ScanKind| {
                json!({
                    "subtracted": expected_visibility(&rates, setup.signal, setup.idler, scan, DarkTreatment::Subtracted),
                    "raw": expected_visibility(&rates, setup.signal, setup.idler, scan, DarkTreatment::Raw),
                })
            };
            Ok(json!({
                "config": cfg.name,
                "config_hash": cfg.config_hash(),
                "power_per_arm_mw": cfg.pump.per_arm_power_mw(),
                "rates": rates,
                "efficiency": {"signal": setup.signal.efficiency, "idler": setup.idler.efficiency},
                "prediction_per_gate": prediction,
                "phase_scan_visibility": vis(ScanKind::PhaseScan { theta_s: ts, theta_i: ti }),
                "analyzer_scan_visibility": vis(ScanKind::AnalyzerScan { theta_s: ts, phi_p: a.phi_p_rad }),
                "first_order_visibility": first_order_visibility(&rates, setup.signal.efficiency, setup.idler.efficiency),
                "gate_rate_khz": cfg.gate_rate_khz(),
                "total_per_channel": {
                    "signal": rates.total_per_channel(Channel::Signal),
                    "idler": rates.total_per_channel(Channel::Idler),
                },
                "warnings": warnings,
            }))
        }
        Command::ValidateConfig(a) => {
            let cfg = load(&a, None)?;
            let warnings = cfg.validate()?;
            Ok(json!({
                "valid": true,
                "name": cfg.name,
                "config_hash": cfg.config_hash(),
                "warnings": warnings,
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            let text = serde_json::to_string_pretty(&v).expect("JSON output");
            // a closed pipe (e.g. `| head`) is not an error
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!(
                "{}",
                json!({"error": {"kind": e.kind(), "message": e.to_string()}})
            );
            ExitCode::FAILURE
        }
    }
}
