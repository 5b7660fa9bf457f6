use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rate::{fit_rate, RateFit};
use super::runner::ExperimentOutcome;
use super::ExperimentError;

pub const CSV_HEADER: [&str; 9] = [
    "variant",
    "schedule_kind",
    "regime",
    "T",
    "seed",
    "t",
    "error_sq",
    "value_error",
    "bound",
];

/// One checkpoint of one run. `schedule_kind` carries the configured η₀ as
/// `kind(eta0=…)` so cells that differ only in η₀ stay distinct; `seed` is
/// the seed index and `bound` is empty where no bound applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub variant: String,
    pub schedule_kind: String,
    pub regime: String,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub seed: u64,
    pub t: u64,
    pub error_sq: f64,
    pub value_error: f64,
    pub bound: Option<f64>,
}

/// Floats use the shortest representation that round-trips.
pub(crate) fn write_runs_csv(path: &Path, outcome: &ExperimentOutcome) -> Result<(), ExperimentError> {
    let mut w = ::csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for cell in &outcome.cells {
        let variant = &cell.cell.variant_label;
        let kind = format!("{}(eta0={})", cell.cell.schedule.kind().name(), cell.cell.eta0_label);
        let regime = cell.cell.regime.name();
        let horizon = cell.cell.schedule.horizon().to_string();
        for record in &cell.records {
            let seed = record.stream.to_string();
            for (cp, bound) in record.checkpoints.iter().zip(&cell.checkpoint_bounds) {
                w.write_record([
                    variant.as_str(),
                    kind.as_str(),
                    regime,
                    horizon.as_str(),
                    seed.as_str(),
                    &cp.t.to_string(),
                    &cp.error_sq.to_string(),
                    &cp.value_error.to_string(),
                    &bound.map(|b| b.to_string()).unwrap_or_default(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| ExperimentError::io(path, e))?;
    Ok(())
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<RunRow>, ExperimentError> {
    let mut r = ::csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if !header.iter().eq(CSV_HEADER) {
        return Err(ExperimentError::invalid(
            path.display().to_string(),
            format!("expected header {}", CSV_HEADER.join(",")),
        ));
    }
    r.deserialize().map(|row| row.map_err(ExperimentError::from)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CsvFit {
    pub variant: String,
    pub schedule_kind: String,
    pub regime: String,
    pub points: Vec<(u64, f64)>,
    pub fit: Result<RateFit, String>,
}

/// Mean final error per horizon for each (variant, schedule, regime)
/// group, and the rate fit over those means.
pub fn fit_runs_csv(path: &Path) -> Result<Vec<CsvFit>, ExperimentError> {
    let rows = read_runs_csv(path)?;
    type Key = (String, String, String);
    let mut groups: BTreeMap<Key, BTreeMap<u64, Vec<(u64, f64)>>> = BTreeMap::new();
    for row in rows.into_iter().filter(|r| r.t == r.horizon) {
        groups
            .entry((row.variant, row.schedule_kind, row.regime))
            .or_default()
            .entry(row.horizon)
            .or_default()
            .push((row.seed, row.error_sq));
    }
    Ok(groups
        .into_iter()
        .map(|((variant, schedule_kind, regime), by_t)| {
            let points: Vec<(u64, f64)> = by_t
                .into_iter()
                .map(|(t, mut v)| {
                    v.sort_by_key(|p| p.0);
                    (t, v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64)
                })
                .collect();
            CsvFit {
                variant,
                schedule_kind,
                regime,
                fit: fit_rate(&points).map_err(|e| e.to_string()),
                points,
            }
        })
        .collect())
}
