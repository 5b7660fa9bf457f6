//! Policy-evaluation laboratory for TD(0) with linear function approximation.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: Markov reward processes, feature maps, stationary analysis.
//! * [`oracle`]: exact fixed points, noise level and explicit theorem bounds.
//! * [`schedules`]: step-size schedules and their prescribed initial values.
//! * [`sampling`]: transition sources and exact mixing analytics.
//! * [`engine`]: the TD(0) recurrence and Monte Carlo aggregation.
//! * [`lemmas`]: numerical verification of the supporting inequalities.
//! * [`experiment`]: config-driven sweeps, CSV/JSON persistence, rate fits.

pub mod engine;
pub mod experiment;
pub mod lemmas;
pub mod mdp;
pub mod oracle;
pub mod sampling;
pub mod schedules;

pub use engine::{run, EngineError, RunConfig, RunRecord, Variant};
pub use mdp::{FeatureMap, MdpError, MdpSpec, Problem, StationaryAnalysis};
pub use oracle::{solve_fixed_point, FixedPoints, OracleError, Theorem};
pub use sampling::{MixingEnvelope, MixingProfile, Regime, SamplingError, TransitionSource};
pub use schedules::{Schedule, ScheduleError, ScheduleKind};

use thiserror::Error;

/// Any error raised by the library, for callers that do not care which layer failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Lemma(#[from] lemmas::LemmaError),
    #[error(transparent)]
    Experiment(#[from] experiment::ExperimentError),
}
