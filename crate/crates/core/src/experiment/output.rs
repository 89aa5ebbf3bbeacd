//! CSV and JSON sidecar output for scenario results.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::FringeSeries;
use crate::error::invalid;
use crate::Result;

use super::scenario::{Quantity, ScenarioResult};

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub x_value: f64,
    pub setting: String,
    pub singles_s: u64,
    pub singles_i: u64,
    pub coincidences: u64,
    pub dark_s: f64,
    pub dark_i: f64,
    pub dark_coincidences: f64,
    pub pump_monitor_mw: Option<f64>,
    pub gates: u64,
    pub config_hash: String,
}

impl ScanRow {
    fn value(&self, q: Quantity) -> (f64, f64) {
        match q {
            Quantity::SinglesSignal => (self.singles_s as f64, self.dark_s),
            Quantity::SinglesIdler => (self.singles_i as f64, self.dark_i),
            Quantity::Coincidences => (self.coincidences as f64, self.dark_coincidences),
        }
    }
}

pub fn rows(result: &ScenarioResult) -> Vec<ScanRow> {
    let hash = &result.provenance.config_hash;
    result
        .points
        .iter()
        .map(|p| ScanRow {
            x_value: p.x_value,
            setting: p.setting.clone().unwrap_or_default(),
            singles_s: p.counts.singles_signal,
            singles_i: p.counts.singles_idler,
            coincidences: p.counts.coincidences,
            dark_s: p.dark_s,
            dark_i: p.dark_i,
            dark_coincidences: p.dark_coincidences,
            pump_monitor_mw: p.pump_monitor_mw,
            gates: p.counts.gates,
            config_hash: hash.clone(),
        })
        .collect()
}

pub fn write_csv<W: Write>(result: &ScenarioResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows(result) {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ScanRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Series for one counter, optionally restricted to rows with a given `setting`.
pub fn series_from_rows(
    rows: &[ScanRow],
    q: Quantity,
    setting: Option<&str>,
) -> Result<FringeSeries> {
    let sel: Vec<&ScanRow> = rows
        .iter()
        .filter(|r| setting.is_none_or(|s| r.setting == s))
        .collect();
    let gates = sel
        .first()
        .ok_or_else(|| invalid("no matching CSV rows"))?
        .gates;
    if sel.iter().any(|r| r.gates != gates) {
        return Err(invalid("CSV rows have different gate counts"));
    }
    let (y, d): (Vec<f64>, Vec<f64>) = sel.iter().map(|r| r.value(q)).unzip();
    FringeSeries::new(sel.iter().map(|r| r.x_value).collect(), y, gates)?.with_dark(d)
}

/// Pump monitor series from phase-scan rows.
pub fn pump_series_from_rows(rows: &[ScanRow]) -> Result<FringeSeries> {
    let y: Option<Vec<f64>> = rows.iter().map(|r| r.pump_monitor_mw).collect();
    let y = y.ok_or_else(|| invalid("rows carry no pump monitor column"))?;
    let gates = rows.first().map_or(1, |r| r.gates);
    FringeSeries::new(rows.iter().map(|r| r.x_value).collect(), y, gates)
}

/// Paths of the CSV and JSON files for an output stem.
pub fn output_paths(out: &Path) -> (PathBuf, PathBuf) {
    (out.with_extension("csv"), out.with_extension("json"))
}

/// Writes `<out>.csv` and the `<out>.json` sidecar; returns both paths.
pub fn write_result(result: &ScenarioResult, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let (csv_path, json_path) = output_paths(out);
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(result, BufWriter::new(File::create(&csv_path)?))?;
    let mut j = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut j, result)?;
    j.write_all(b"\n")?;
    j.flush()?;
    Ok((csv_path, json_path))
}

pub fn read_sidecar(path: &Path) -> Result<ScenarioResult> {
    Ok(serde_json::from_reader(std::io::BufReader::new(
        File::open(path)?,
    ))?)
}
