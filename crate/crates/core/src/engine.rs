//! The TD(0) recurrence.
//!
//! Iterates are indexed from `w₁ = w_init`; update `t ∈ 1..=T` uses `η_t`
//! and produces `w_{t+1}`. Checkpoint `t` therefore holds the iterate after
//! `t` updates, and checkpoint 0 holds `w₁`.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{FeatureMap, Problem};
use crate::oracle::{phi_dot, solve_fixed_point, MeanPathOperator, OracleError};
use crate::sampling::{Regime, SamplingError, Transition, TransitionSource};
use crate::schedules::{Schedule, ScheduleKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("iterate became non-finite at update {iteration}")]
    NonFiniteIterate { iteration: u64 },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("records do not share a configuration: {0}")]
    HeterogeneousConfigs(String),
    #[error("no records to aggregate")]
    EmptyAggregate,
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Variant {
    Standard,
    /// Direction `g_t(w) − λw`.
    Regularized { lambda: f64 },
    /// Standard TD followed by projection onto a ball. `None` picks
    /// `2ζ/((1−γ)ω)` with `ζ = max{1, ‖w*‖}`.
    Projected { radius: Option<f64> },
    /// Standard TD that also reports the mean of the last `⌈f·T⌉` iterates.
    TailAveraged { window_fraction: f64 },
}

impl Variant {
    pub fn lambda(&self) -> f64 {
        match self {
            Variant::Regularized { lambda } => *lambda,
            _ => 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Regularized { .. } => "regularized",
            Variant::Projected { .. } => "projected",
            Variant::TailAveraged { .. } => "tail-averaged",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Standard => write!(f, "standard"),
            Variant::Regularized { lambda } => write!(f, "regularized({lambda})"),
            Variant::Projected { radius: Some(r) } => write!(f, "projected({r})"),
            Variant::Projected { radius: None } => write!(f, "projected(default)"),
            Variant::TailAveraged { window_fraction } => write!(f, "tail-averaged({window_fraction})"),
        }
    }
}

/// `{1, 2, 4, …} ∪ {T}`.
pub fn geometric_checkpoints(horizon: u64) -> Vec<u64> {
    let mut out: Vec<u64> = std::iter::successors(Some(1u64), |&t| t.checked_mul(2))
        .take_while(|&t| t < horizon)
        .collect();
    out.push(horizon);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub schedule: Schedule,
    pub regime: Regime,
    /// Key of the random generator.
    pub seed: u64,
    /// Stream of the random generator (the seed index in sweeps).
    pub stream: u64,
    /// `None` starts from the zero vector.
    pub w_init: Option<DVector<f64>>,
    /// Empty means [`geometric_checkpoints`].
    pub checkpoints: Vec<u64>,
    pub record_trace: bool,
}

impl RunConfig {
    pub fn new(variant: Variant, schedule: Schedule, regime: Regime, seed: u64, stream: u64) -> Self {
        Self {
            variant,
            schedule,
            regime,
            seed,
            stream,
            w_init: None,
            checkpoints: Vec::new(),
            record_trace: false,
        }
    }

    pub fn horizon(&self) -> u64 {
        self.schedule.horizon()
    }

    fn resolved_checkpoints(&self) -> Result<Vec<u64>, EngineError> {
        let horizon = self.horizon();
        if self.checkpoints.is_empty() {
            return Ok(geometric_checkpoints(horizon));
        }
        let sorted = self.checkpoints.windows(2).all(|w| w[0] < w[1]);
        if !sorted || self.checkpoints.last() != Some(&horizon) {
            return Err(EngineError::InvalidConfig(format!(
                "checkpoints must be strictly increasing, within [0, {horizon}] and end at T"
            )));
        }
        Ok(self.checkpoints.clone())
    }

    fn validate(&self, d: usize) -> Result<(), EngineError> {
        match self.variant {
            Variant::Regularized { lambda } if !(lambda.is_finite() && lambda >= 0.0) => {
                return Err(EngineError::InvalidConfig(format!("λ = {lambda}")));
            }
            Variant::Projected { radius: Some(r) } if !(r.is_finite() && r > 0.0) => {
                return Err(EngineError::InvalidConfig(format!("projection radius {r}")));
            }
            Variant::TailAveraged { window_fraction: f }
                if !(f.is_finite() && f > 0.0 && f <= 1.0) =>
            {
                return Err(EngineError::InvalidConfig(format!("tail window fraction {f}")));
            }
            _ => {}
        }
        if let Some(w) = &self.w_init {
            if w.len() != d || w.iter().any(|x| !x.is_finite()) {
                return Err(EngineError::InvalidConfig(format!(
                    "w_init must be a finite {d}-vector"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Checkpoint {
    pub t: u64,
    /// `‖w − w*‖²`
    pub error_sq: f64,
    /// `‖w − w_r*‖²`; equals `error_sq` for unregularized variants.
    pub reg_error_sq: f64,
    /// `‖V_w − V_{w*}‖²_D = (w − w*)ᵀΣ(w − w*)`
    pub value_error: f64,
}

/// Full trajectory, kept only on request.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// `w₁ … w_{T+1}`
    pub iterates: Vec<DVector<f64>>,
    /// Transition used by update `t` at index `t − 1`; empty for mean-path runs.
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub variant: Variant,
    pub schedule_kind: ScheduleKind,
    pub eta0: f64,
    pub regime: Regime,
    pub horizon: u64,
    pub seed: u64,
    pub stream: u64,
    pub w_star: DVector<f64>,
    pub w_reg_star: DVector<f64>,
    pub initial: Checkpoint,
    pub checkpoints: Vec<Checkpoint>,
    pub final_iterate: DVector<f64>,
    pub tail_average: Option<DVector<f64>>,
    pub tail_error_sq: Option<f64>,
    /// `max_t ‖w_t − w_r*‖²` over `w₁ … w_{T+1}`.
    pub max_reg_error_sq: f64,
    /// `max_t ‖w_t‖` over `w₁ … w_{T+1}`.
    pub max_norm: f64,
    /// Projection radius actually used.
    pub radius: Option<f64>,
    /// Theorem right-hand side at `T`, attached by the caller.
    pub bound: Option<f64>,
    pub trace: Option<Trace>,
}

impl RunRecord {
    pub fn final_error_sq(&self) -> f64 {
        self.checkpoints.last().map_or(self.initial.error_sq, |c| c.error_sq)
    }
}

/// In-place `w ← w + η[(r + γφ(s′)ᵀw − φ(s)ᵀw)φ(s) − λw]`.
#[inline]
pub fn td_step_in_place(
    w: &mut DVector<f64>,
    features: &FeatureMap,
    gamma: f64,
    transition: &Transition,
    eta: f64,
    lambda: f64,
) {
    let s = transition.state;
    let td_error = transition.reward + gamma * phi_dot(features, transition.next_state, w)
        - phi_dot(features, s, w);
    let phi = features.matrix();
    for j in 0..w.len() {
        w[j] += eta * (td_error * phi[(s, j)] - lambda * w[j]);
    }
}

/// Pure form of [`td_step_in_place`].
pub fn td_step(
    w: &DVector<f64>,
    transition: &Transition,
    eta: f64,
    lambda: f64,
    features: &FeatureMap,
    gamma: f64,
) -> DVector<f64> {
    let mut out = w.clone();
    td_step_in_place(&mut out, features, gamma, transition, eta, lambda);
    out
}

/// Scales `w` onto the closed ball of `radius` when it lies outside.
fn project(w: &mut DVector<f64>, radius: f64) {
    let norm = w.norm();
    if norm > radius {
        *w *= radius / norm;
        while w.norm() > radius {
            *w *= 1.0 - f64::EPSILON;
        }
    }
}

fn quadratic(sigma: &nalgebra::DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(sigma * v))
}

/// Runs `T = config.schedule.horizon()` updates. Deterministic in `config`.
pub fn run(config: &RunConfig, problem: &Problem) -> Result<RunRecord, EngineError> {
    let d = problem.d();
    config.validate(d)?;
    let horizon = config.horizon();
    let checkpoints = config.resolved_checkpoints()?;
    let lambda = config.variant.lambda();
    let fixed = solve_fixed_point(problem, lambda)?;
    let sigma = &problem.analysis().sigma;
    let gamma = problem.gamma();
    let features = problem.features();

    let radius = match config.variant {
        Variant::Projected { radius: Some(r) } => Some(r),
        Variant::Projected { radius: None } => {
            let zeta = fixed.w_star.norm().max(1.0);
            Some(2.0 * zeta / ((1.0 - gamma) * problem.omega()))
        }
        _ => None,
    };
    let tail_len = match config.variant {
        Variant::TailAveraged { window_fraction } => {
            Some(((window_fraction * horizon as f64).ceil() as u64).clamp(1, horizon))
        }
        _ => None,
    };

    let mut w = config.w_init.clone().unwrap_or_else(|| DVector::zeros(d));
    let snapshot = |t: u64, w: &DVector<f64>| {
        let diff = w - &fixed.w_star;
        Checkpoint {
            t,
            error_sq: diff.norm_squared(),
            reg_error_sq: (w - &fixed.w_reg_star).norm_squared(),
            value_error: quadratic(sigma, &diff),
        }
    };

    let initial = snapshot(0, &w);
    let mut records = Vec::with_capacity(checkpoints.len());
    let mut next_cp = checkpoints.iter().copied().peekable();
    if next_cp.peek() == Some(&0) {
        records.push(initial);
        next_cp.next();
    }
    let mut max_reg_error_sq = initial.reg_error_sq;
    let mut max_norm = w.norm();
    let mut tail_sum = tail_len.map(|_| DVector::<f64>::zeros(d));
    let mut trace = config.record_trace.then(|| Trace {
        iterates: {
            let mut v = Vec::with_capacity(horizon as usize + 1);
            v.push(w.clone());
            v
        },
        transitions: Vec::new(),
    });

    let mut source = match config.regime {
        Regime::MeanPath => None,
        regime => Some(TransitionSource::new(problem, regime, config.seed, config.stream)?),
    };
    let operator = (config.regime == Regime::MeanPath).then(|| MeanPathOperator::new(problem, lambda));

    for t in 1..=horizon {
        let eta = config.schedule.eta(t);
        match (&mut source, &operator) {
            (Some(src), _) => {
                let tr = src.next_transition();
                td_step_in_place(&mut w, features, gamma, &tr, eta, lambda);
                if let Some(tr_log) = trace.as_mut() {
                    tr_log.transitions.push(tr);
                }
            }
            (None, Some(op)) => {
                let g = op.direction(&w);
                w.axpy(eta, &g, 1.0);
            }
            (None, None) => unreachable!("every regime has a source or an operator"),
        }
        if let Some(r) = radius {
            project(&mut w, r);
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(EngineError::NonFiniteIterate { iteration: t });
        }

        let reg_err = (&w - &fixed.w_reg_star).norm_squared();
        max_reg_error_sq = max_reg_error_sq.max(reg_err);
        max_norm = max_norm.max(w.norm());
        if let (Some(sum), Some(k)) = (tail_sum.as_mut(), tail_len) {
            if t > horizon - k {
                *sum += &w;
            }
        }
        if let Some(tr_log) = trace.as_mut() {
            tr_log.iterates.push(w.clone());
        }
        if next_cp.peek() == Some(&t) {
            records.push(snapshot(t, &w));
            next_cp.next();
        }
    }

    let tail_average = tail_sum.zip(tail_len).map(|(sum, k)| sum / k as f64);
    let tail_error_sq = tail_average
        .as_ref()
        .map(|avg| (avg - &fixed.w_star).norm_squared());

    Ok(RunRecord {
        variant: config.variant,
        schedule_kind: config.schedule.kind(),
        eta0: config.schedule.eta0(),
        regime: config.regime,
        horizon,
        seed: config.seed,
        stream: config.stream,
        w_star: fixed.w_star,
        w_reg_star: fixed.w_reg_star,
        initial,
        checkpoints: records,
        final_iterate: w,
        tail_average,
        tail_error_sq,
        max_reg_error_sq,
        max_norm,
        radius,
        bound: None,
        trace,
    })
}

/// Mean and standard error of one quantity across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    /// `None` for a single record, where it is undefined.
    pub stderr: Option<f64>,
}

impl Moments {
    /// Sums in the given order; callers sort first for order independence.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = (values.len() > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1.0)).sqrt() / n.sqrt()
        });
        Self { mean, stderr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregatePoint {
    pub t: u64,
    pub error_sq: Moments,
    pub reg_error_sq: Moments,
    pub value_error: Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    pub horizon: u64,
    pub initial_error_sq: Moments,
    pub points: Vec<AggregatePoint>,
    pub tail_error_sq: Option<Moments>,
    pub max_reg_error_sq: f64,
}

impl Aggregate {
    pub fn final_point(&self) -> &AggregatePoint {
        self.points.last().expect("aggregates always hold the T checkpoint")
    }
}

/// Per-checkpoint moments across records that differ only in seed/stream.
/// Records are reduced in `(seed, stream)` order, so the input order never
/// changes the result.
pub fn aggregate(records: &[RunRecord]) -> Result<Aggregate, EngineError> {
    let first = records.first().ok_or(EngineError::EmptyAggregate)?;
    let same = |r: &RunRecord| {
        r.variant == first.variant
            && r.schedule_kind == first.schedule_kind
            && r.eta0 == first.eta0
            && r.regime == first.regime
            && r.horizon == first.horizon
            && r.checkpoints.iter().map(|c| c.t).eq(first.checkpoints.iter().map(|c| c.t))
    };
    if let Some(bad) = records.iter().find(|r| !same(r)) {
        return Err(EngineError::HeterogeneousConfigs(format!(
            "{} / {} / {} / T={} vs {} / {} / {} / T={}",
            first.variant,
            first.schedule_kind,
            first.regime,
            first.horizon,
            bad.variant,
            bad.schedule_kind,
            bad.regime,
            bad.horizon
        )));
    }
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.seed, r.stream));

    let collect = |f: &dyn Fn(&RunRecord) -> f64| sorted.iter().map(|r| f(r)).collect::<Vec<_>>();
    let points = (0..first.checkpoints.len())
        .map(|i| AggregatePoint {
            t: first.checkpoints[i].t,
            error_sq: Moments::of(&collect(&|r| r.checkpoints[i].error_sq)),
            reg_error_sq: Moments::of(&collect(&|r| r.checkpoints[i].reg_error_sq)),
            value_error: Moments::of(&collect(&|r| r.checkpoints[i].value_error)),
        })
        .collect();
    let tail_error_sq = first
        .tail_error_sq
        .map(|_| Moments::of(&collect(&|r| r.tail_error_sq.unwrap_or(f64::NAN))));
    Ok(Aggregate {
        runs: records.len(),
        horizon: first.horizon,
        initial_error_sq: Moments::of(&collect(&|r| r.initial.error_sq)),
        points,
        tail_error_sq,
        max_reg_error_sq: sorted.iter().map(|r| r.max_reg_error_sq).fold(0.0, f64::max),
    })
}
