//! Config-driven sweeps: load a problem, run every (variant, schedule,
//! regime, horizon) cell over a set of seeds, attach theorem bounds, fit
//! empirical rates and persist `runs.csv`, `summary.json` and `manifest.json`.

mod config;
mod csv;
mod rate;
mod runner;

use std::path::PathBuf;

use thiserror::Error;

pub use self::config::{
    BuiltinProblem, Eta0Rule, Eta0Spec, ExperimentConfig, GeneratorSpec, KindName, LambdaRule, LambdaSpec,
    ProblemSpec, ScheduleParams, ScheduleSpec, SweepSpec, VariantSpec,
};
pub use self::csv::{fit_runs_csv, read_runs_csv, CsvFit, RunRow, CSV_HEADER};
pub use self::rate::{fit_rate, RateFit, MIN_HORIZONS};
pub use self::runner::{
    execute, run_experiment, write_outputs, BoundSummary, Cell, CellOutcome, CellSummary, ExperimentOutcome,
    GroupFit, Manifest, Summary,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config at `{path}`: {message}")]
    ConfigInvalid { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] ::csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<crate::Error>,
    },
    #[error("rate fit needs at least {MIN_HORIZONS} horizons, got {found}")]
    InsufficientHorizons { found: usize },
    #[error("rate fit needs a geometric horizon grid")]
    NonGeometricHorizons,
    #[error("rate fit needs positive mean errors; T = {horizon} has {value}")]
    NonPositiveError { horizon: u64, value: f64 },
}

impl ExperimentError {
    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ExperimentError::ConfigInvalid {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.into(),
            source,
        }
    }
}
