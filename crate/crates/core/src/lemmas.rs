//! Numerical verification of the inequalities behind the convergence
//! analysis, over randomized instances and iterates.
//!
//! Every expectation is an exact enumeration over `(s, s′)`. A check records
//! the most negative normalized slack it has seen,
//! `(rhs − lhs) / max{1, |lhs|, |rhs|}`, and passes when that value is at
//! least `−SLACK_TOL`. The worst input is kept as a [`Witness`] that
//! [`evaluate`] replays to the same number.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{run, EngineError, RunConfig, RunRecord, Variant};
use crate::mdp::{make_random_mdp, reference_two_state, single_state, GeneratorFamily, MdpError, Problem};
use crate::oracle::{
    expected_direction, expected_sq_deviation, expected_sq_norm, phi_dot, reg_constants,
    solve_fixed_point, BoundInputs, FixedPoints, MeanPathOperator, OracleError, ProofConstants, Theorem,
};
use crate::sampling::{compute_tau, derive_cell_seed, MixingProfile, Regime, SamplingError};
use crate::schedules::{default_eta0, geometric_sum, Schedule, ScheduleError, ScheduleKind};

/// Checks pass when the worst normalized slack is at least `−SLACK_TOL`.
pub const SLACK_TOL: f64 = 1e-9;
/// Relative agreement required by the value-norm identity.
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LemmaError {
    #[error("trace of length T = {horizon} is shorter than τ_mix = {tau_mix}")]
    TraceTooShort { horizon: u64, tau_mix: u64 },
    #[error("run record has no trace; enable record_trace")]
    MissingTrace,
    #[error("witness does not fit check `{0}`")]
    WitnessShape(LemmaId),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(into = "&'static str")]
pub enum LemmaId {
    /// `⟨g(w), w* − w⟩ ≥ (1−γ)‖V_w − V_{w*}‖²_D`
    TdAlignment,
    /// `ω‖w₁ − w₂‖² ≤ ‖V_{w₁} − V_{w₂}‖²_D`
    ValueNormLower,
    /// `‖V_{w₁} − V_{w₂}‖²_D = ‖w₁ − w₂‖²_Σ`
    ValueNormIdentity,
    /// `E‖g_t(w)‖² ≤ 2σ² + 8‖V_w − V_{w*}‖²_D`
    TdSecondMoment,
    /// `‖g(w₁) − g(w₂)‖ ≤ 2‖w₁ − w₂‖`
    MeanLipschitz,
    /// `‖g_t(w₁) − g_t(w₂)‖ ≤ 2‖w₁ − w₂‖` for every transition
    SampleLipschitz,
    /// `‖g_t(w)‖ ≤ 2‖w − w*‖ + 4ζ`
    SampleNormLoose,
    /// `‖g(w)‖ ≤ 2‖w − w*‖`
    MeanNormStandard,
    /// `‖g^r_t(w)‖ ≤ (2+λ)‖w − w_r*‖ + (3+λ)ζ`
    RegSampleNorm,
    /// `‖g_t(w)‖ ≤ 2‖w − w*‖ + 3ζ`
    SampleNormStandard,
    /// `‖g^r(w)‖ ≤ (2+λ)‖w − w_r*‖`
    RegMeanNorm,
    /// `⟨g^r(w), w_r* − w⟩ ≥ [(1−γ)ω + λ]‖w − w_r*‖²`
    RegStrongMonotone,
    /// `‖g^r(w)‖² ≤ (8 + 2λ²)‖w − w_r*‖²`
    RegMeanSecondMoment,
    /// `‖w* − w_r*‖ ≤ λ‖w*‖/(λ + ω(1−γ))`
    FixedPointDistance,
    /// `‖E_{P^tμ₀}[g^r_t(w)] − g^r(w)‖ ≤ 2(2+λ)δ(‖w‖+1)` for `t ≥ τ_δ`
    MixingDeviation,
    /// Same at the run's `δ`: `≤ η_T(‖w‖+1)` for `t ≥ τ_mix`
    MixingDeviationRun,
    /// `‖w_t − w_r*‖² ≤ B(τ_mix)` for `t ≤ τ_mix`
    BoundedBeforeMixing,
    /// `‖w_t − w_r*‖² ≤ B(τ_mix)` for every `t`
    BoundedAllT,
    /// `‖w_t − w_{t−τ_mix}‖² ≤ c₁² B(τ_mix) η_t² ln⁴T`
    MixingWindowDrift,
    /// `E_{P^tμ₀}‖g^r_t(w_t) − g^r(w_t)‖² ≤ C′ B(τ_mix)`
    MarkovNoise,
    /// Seed-averaged `⟨w_t − w_r*, g^r_t(w_t) − g^r(w_t)⟩` against `C η_t ln²T B(τ_mix)`; diagnostic only.
    MarkovCrossTerm,
    /// `Σ_{t≤T} α^t ≥ αT/ln T − 1/ln T`
    GeometricSumLower,
    /// `Σ_{t≤T} α^{2t} exp(−a Σ_{i>t} α^i) ≤ 4c ln²T/(a²e²α²T)`, `c = exp(a/ln T)`
    WeightedSumUpper,
    /// `exp(−x) ≤ (ν/(ex))^ν`
    ExpPower,
}

impl LemmaId {
    pub const ALL: [LemmaId; 24] = [
        LemmaId::TdAlignment,
        LemmaId::ValueNormLower,
        LemmaId::ValueNormIdentity,
        LemmaId::TdSecondMoment,
        LemmaId::MeanLipschitz,
        LemmaId::SampleLipschitz,
        LemmaId::SampleNormLoose,
        LemmaId::MeanNormStandard,
        LemmaId::RegSampleNorm,
        LemmaId::SampleNormStandard,
        LemmaId::RegMeanNorm,
        LemmaId::RegStrongMonotone,
        LemmaId::RegMeanSecondMoment,
        LemmaId::FixedPointDistance,
        LemmaId::MixingDeviation,
        LemmaId::MixingDeviationRun,
        LemmaId::BoundedBeforeMixing,
        LemmaId::BoundedAllT,
        LemmaId::MixingWindowDrift,
        LemmaId::MarkovNoise,
        LemmaId::MarkovCrossTerm,
        LemmaId::GeometricSumLower,
        LemmaId::WeightedSumUpper,
        LemmaId::ExpPower,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LemmaId::TdAlignment => "td-alignment",
            LemmaId::ValueNormLower => "value-norm-lower",
            LemmaId::ValueNormIdentity => "value-norm-identity",
            LemmaId::TdSecondMoment => "td-second-moment",
            LemmaId::MeanLipschitz => "mean-lipschitz",
            LemmaId::SampleLipschitz => "sample-lipschitz",
            LemmaId::SampleNormLoose => "sample-norm-loose",
            LemmaId::MeanNormStandard => "mean-norm-standard",
            LemmaId::RegSampleNorm => "reg-sample-norm",
            LemmaId::SampleNormStandard => "sample-norm-standard",
            LemmaId::RegMeanNorm => "reg-mean-norm",
            LemmaId::RegStrongMonotone => "reg-strong-monotone",
            LemmaId::RegMeanSecondMoment => "reg-mean-second-moment",
            LemmaId::FixedPointDistance => "fixed-point-distance",
            LemmaId::MixingDeviation => "mixing-deviation",
            LemmaId::MixingDeviationRun => "mixing-deviation-run",
            LemmaId::BoundedBeforeMixing => "bounded-before-mixing",
            LemmaId::BoundedAllT => "bounded-all-t",
            LemmaId::MixingWindowDrift => "mixing-window-drift",
            LemmaId::MarkovNoise => "markov-noise",
            LemmaId::MarkovCrossTerm => "markov-cross-term",
            LemmaId::GeometricSumLower => "geometric-sum-lower",
            LemmaId::WeightedSumUpper => "weighted-sum-upper",
            LemmaId::ExpPower => "exp-power",
        }
    }

    /// Diagnostic checks are reported but never fail a suite.
    pub fn gated(self) -> bool {
        self != LemmaId::MarkovCrossTerm
    }
}

impl From<LemmaId> for &'static str {
    fn from(id: LemmaId) -> Self {
        id.name()
    }
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Inputs that reproduce one evaluation. Layout depends on the check; see [`evaluate`].
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Witness {
    pub vectors: Vec<Vec<f64>>,
    pub indices: Vec<u64>,
    pub scalars: Vec<f64>,
}

impl Witness {
    fn vecs(vectors: &[&DVector<f64>]) -> Self {
        Self {
            vectors: vectors.iter().map(|v| v.as_slice().to_vec()).collect(),
            ..Self::default()
        }
    }

    fn vector(&self, i: usize, id: LemmaId) -> Result<DVector<f64>, LemmaError> {
        self.vectors
            .get(i)
            .map(|v| DVector::from_column_slice(v))
            .ok_or(LemmaError::WitnessShape(id))
    }

    fn scalar(&self, i: usize, id: LemmaId) -> Result<f64, LemmaError> {
        self.scalars.get(i).copied().ok_or(LemmaError::WitnessShape(id))
    }

    fn index(&self, i: usize, id: LemmaId) -> Result<u64, LemmaError> {
        self.indices.get(i).copied().ok_or(LemmaError::WitnessShape(id))
    }
}

/// Normalized slack of `lhs ≤ rhs`. Non-finite inputs count as violations,
/// except an infinite right-hand side, which any finite left side satisfies.
pub fn slack(lhs: f64, rhs: f64) -> f64 {
    if lhs.is_nan() || rhs.is_nan() || lhs == f64::INFINITY || rhs == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if rhs == f64::INFINITY || lhs == f64::NEG_INFINITY {
        return 1.0;
    }
    (rhs - lhs) / 1f64.max(lhs.abs()).max(rhs.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub id: LemmaId,
    pub trials: u64,
    /// Evaluations that could not run (e.g. a trace shorter than `τ_mix`).
    pub skipped: u64,
    /// Most negative slack seen; `+∞` (serialized as null) before any trial.
    pub max_violation: f64,
    pub witness: Option<Witness>,
    /// Diagnostic `(t, value)` pairs, e.g. the measured cross term.
    pub series: Vec<(u64, f64)>,
}

impl LemmaCheck {
    pub fn new(id: LemmaId) -> Self {
        Self {
            id,
            trials: 0,
            skipped: 0,
            max_violation: f64::INFINITY,
            witness: None,
            series: Vec::new(),
        }
    }

    pub fn record(&mut self, slack: f64, witness: impl FnOnce() -> Witness) {
        self.trials += 1;
        if slack < self.max_violation || (slack.is_nan() && !self.max_violation.is_nan()) {
            self.max_violation = slack;
            self.witness = Some(witness());
        }
    }

    pub fn passed(&self) -> bool {
        !self.id.gated() || self.max_violation >= -SLACK_TOL
    }

    /// Combines results for the same id; the earlier witness wins ties.
    pub fn merge(&mut self, other: LemmaCheck) {
        debug_assert_eq!(self.id, other.id);
        self.trials += other.trials;
        self.skipped += other.skipped;
        if other.max_violation < self.max_violation {
            self.max_violation = other.max_violation;
            self.witness = other.witness;
        }
        self.series.extend(other.series);
    }
}

/// Ground truth shared by the checks on one instance at one `λ`.
#[derive(Debug, Clone)]
pub struct LemmaContext {
    pub problem: Problem,
    pub lambda: f64,
    pub standard: FixedPoints,
    pub regularized: FixedPoints,
    mean0: MeanPathOperator,
    mean_reg: MeanPathOperator,
}

impl LemmaContext {
    pub fn new(problem: Problem, lambda: f64) -> Result<Self, LemmaError> {
        let standard = solve_fixed_point(&problem, 0.0)?;
        let regularized = solve_fixed_point(&problem, lambda)?;
        let mean0 = MeanPathOperator::new(&problem, 0.0);
        let mean_reg = MeanPathOperator::new(&problem, lambda);
        Ok(Self {
            problem,
            lambda,
            standard,
            regularized,
            mean0,
            mean_reg,
        })
    }

    /// `10·max{1, ‖w*‖}`.
    pub fn default_radius(&self) -> f64 {
        10.0 * self.standard.w_star.norm().max(1.0)
    }

    fn value_norm_sq(&self, diff: &DVector<f64>) -> f64 {
        // Σ_s μ(s)(φ(s)ᵀΔ)², independent of Σ.
        let mu = &self.problem.analysis().mu;
        (0..self.problem.n())
            .map(|s| mu[s] * phi_dot(self.problem.features(), s, diff).powi(2))
            .sum()
    }

    /// Worst case of `f(‖g^λ_t(w)‖)` over transitions with positive probability.
    fn max_sample_norm(&self, w: &DVector<f64>, lambda: f64) -> f64 {
        let p = self.problem.spec().transition();
        let features = self.problem.features();
        let rewards = self.problem.spec().rewards();
        let gamma = self.problem.gamma();
        let mut worst = 0.0_f64;
        for s in 0..self.problem.n() {
            let own = phi_dot(features, s, w);
            for s_next in 0..self.problem.n() {
                if p[(s, s_next)] == 0.0 {
                    continue;
                }
                let td = rewards[s] + gamma * phi_dot(features, s_next, w) - own;
                let mut sq = 0.0;
                for j in 0..w.len() {
                    let g = td * features.matrix()[(s, j)] - lambda * w[j];
                    sq += g * g;
                }
                worst = worst.max(sq.sqrt());
            }
        }
        worst
    }

    fn max_sample_lipschitz_ratio(&self, w1: &DVector<f64>, w2: &DVector<f64>) -> f64 {
        // g_t(w₁) − g_t(w₂) = φ(s)(γφ(s′) − φ(s))ᵀ(w₁ − w₂)
        let p = self.problem.spec().transition();
        let features = self.problem.features();
        let diff = w1 - w2;
        let gamma = self.problem.gamma();
        let mut worst = 0.0_f64;
        for s in 0..self.problem.n() {
            let phi_norm = features.matrix().row(s).norm();
            let own = phi_dot(features, s, &diff);
            for s_next in 0..self.problem.n() {
                if p[(s, s_next)] == 0.0 {
                    continue;
                }
                let coef = gamma * phi_dot(features, s_next, &diff) - own;
                worst = worst.max(phi_norm * coef.abs());
            }
        }
        worst
    }
}

/// Uniform draw from the ball of `radius` around `center`.
fn random_in_ball(rng: &mut ChaCha8Rng, center: &DVector<f64>, radius: f64) -> DVector<f64> {
    let d = center.len();
    let mut dir = DVector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    let norm = dir.norm();
    if norm == 0.0 {
        return center.clone();
    }
    dir /= norm;
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    center + dir * r
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| {
        let e: f64 = Exp1.sample(rng);
        e
    });
    let total = v.sum();
    v / total
}

/// Alternates draws centred at 0 and at `w*`, as coverage rather than correctness.
fn draw_w(rng: &mut ChaCha8Rng, ctx: &LemmaContext, radius: f64, trial: u64) -> DVector<f64> {
    let center = if trial % 2 == 0 {
        DVector::zeros(ctx.problem.d())
    } else {
        ctx.standard.w_star.clone()
    };
    random_in_ball(rng, &center, radius)
}

/// Slack of check `id` at `witness`. This is the single definition used both
/// by the randomized checks and by witness replay.
///
/// Witness layouts:
/// * single-iterate checks: `vectors = [w]`;
/// * two-iterate checks (value norms, Lipschitz): `vectors = [w₁, w₂]`;
/// * fixed-point distance: `scalars = [λ]` (fixed points recomputed);
/// * mixing deviation: `vectors = [w, μ₀]`, `indices = [t]`, `scalars = [δ]`;
///   the run variant adds `scalars[1] = η_T`;
/// * boundedness: `vectors = [w_t]`, `scalars = [B(τ_mix)]`;
/// * drift: `vectors = [w_t, w_{t−τ}]`, `scalars = [bound]`;
/// * Markov noise: `vectors = [w_t, state distribution]`, `scalars = [C′B]`;
/// * cross term: `scalars = [measured, bound]`;
/// * helpers: `scalars = [T]`, `[T, a]` or `[x, ν]`.
pub fn evaluate(id: LemmaId, ctx: &LemmaContext, witness: &Witness) -> Result<f64, LemmaError> {
    let problem = &ctx.problem;
    let gamma = problem.gamma();
    let omega = problem.omega();
    let lambda = ctx.lambda;
    let w_star = &ctx.standard.w_star;
    let w_reg = &ctx.regularized.w_reg_star;
    let v = |i| witness.vector(i, id);
    let x = |i| witness.scalar(i, id);

    let value = match id {
        LemmaId::TdAlignment => {
            let w = v(0)?;
            let lhs = (1.0 - gamma) * ctx.value_norm_sq(&(&w - w_star));
            let rhs = ctx.mean0.direction(&w).dot(&(w_star - &w));
            slack(lhs, rhs)
        }
        LemmaId::ValueNormLower => {
            let diff = v(0)? - v(1)?;
            slack(omega * diff.norm_squared(), ctx.value_norm_sq(&diff))
        }
        LemmaId::ValueNormIdentity => {
            let diff = v(0)? - v(1)?;
            let by_values = ctx.value_norm_sq(&diff);
            let by_sigma = diff.dot(&(&problem.analysis().sigma * &diff));
            let rel = (by_values - by_sigma).abs() / 1f64.max(by_values.abs()).max(by_sigma.abs());
            IDENTITY_TOL - rel
        }
        LemmaId::TdSecondMoment => {
            let w = v(0)?;
            let lhs = expected_sq_norm(problem, &problem.analysis().mu, &w, 0.0);
            let rhs = 2.0 * ctx.standard.sigma_sq + 8.0 * ctx.value_norm_sq(&(&w - w_star));
            slack(lhs, rhs)
        }
        LemmaId::MeanLipschitz => {
            let (w1, w2) = (v(0)?, v(1)?);
            let lhs = (ctx.mean0.direction(&w1) - ctx.mean0.direction(&w2)).norm();
            slack(lhs, 2.0 * (w1 - w2).norm())
        }
        LemmaId::SampleLipschitz => {
            let (w1, w2) = (v(0)?, v(1)?);
            slack(ctx.max_sample_lipschitz_ratio(&w1, &w2), 2.0 * (w1 - w2).norm())
        }
        LemmaId::SampleNormLoose | LemmaId::SampleNormStandard => {
            let w = v(0)?;
            let zeta = w_star.norm().max(1.0);
            let k = if id == LemmaId::SampleNormLoose { 4.0 } else { 3.0 };
            slack(ctx.max_sample_norm(&w, 0.0), 2.0 * (&w - w_star).norm() + k * zeta)
        }
        LemmaId::MeanNormStandard => {
            let w = v(0)?;
            slack(ctx.mean0.direction(&w).norm(), 2.0 * (&w - w_star).norm())
        }
        LemmaId::RegSampleNorm => {
            let w = v(0)?;
            let rhs = (2.0 + lambda) * (&w - w_reg).norm() + (3.0 + lambda) * ctx.regularized.zeta;
            slack(ctx.max_sample_norm(&w, lambda), rhs)
        }
        LemmaId::RegMeanNorm => {
            let w = v(0)?;
            slack(ctx.mean_reg.direction(&w).norm(), (2.0 + lambda) * (&w - w_reg).norm())
        }
        LemmaId::RegStrongMonotone => {
            let w = v(0)?;
            let lhs = ((1.0 - gamma) * omega + lambda) * (&w - w_reg).norm_squared();
            slack(lhs, ctx.mean_reg.direction(&w).dot(&(w_reg - &w)))
        }
        LemmaId::RegMeanSecondMoment => {
            let w = v(0)?;
            let rhs = (8.0 + 2.0 * lambda * lambda) * (&w - w_reg).norm_squared();
            slack(ctx.mean_reg.direction(&w).norm_squared(), rhs)
        }
        LemmaId::FixedPointDistance => {
            let lam = x(0)?;
            let fp = solve_fixed_point(problem, lam)?;
            let rhs = lam * fp.w_star.norm() / (lam + omega * (1.0 - gamma));
            slack((&fp.w_star - &fp.w_reg_star).norm(), rhs)
        }
        LemmaId::MixingDeviation | LemmaId::MixingDeviationRun => {
            let (w, start) = (v(0)?, v(1)?);
            let t = witness.index(0, id)?;
            let delta = x(0)?;
            let dist = propagate(problem, &start, t);
            let lhs = (expected_direction(problem, &dist, &w, lambda) - ctx.mean_reg.direction(&w)).norm();
            let rhs = if id == LemmaId::MixingDeviation {
                2.0 * (2.0 + lambda) * delta * (w.norm() + 1.0)
            } else {
                x(1)? * (w.norm() + 1.0)
            };
            slack(lhs, rhs)
        }
        LemmaId::BoundedBeforeMixing | LemmaId::BoundedAllT => {
            slack((v(0)? - w_reg).norm_squared(), x(0)?)
        }
        LemmaId::MixingWindowDrift => slack((v(0)? - v(1)?).norm_squared(), x(0)?),
        LemmaId::MarkovNoise => {
            let (w, dist) = (v(0)?, v(1)?);
            let center = ctx.mean_reg.direction(&w);
            slack(expected_sq_deviation(problem, &dist, &w, lambda, &center), x(0)?)
        }
        LemmaId::MarkovCrossTerm => slack(x(0)?, x(1)?),
        LemmaId::GeometricSumLower => {
            let t = x(0)?;
            let ln_t = t.ln();
            let alpha = (-ln_t / t).exp();
            slack(alpha * t / ln_t - 1.0 / ln_t, geometric_sum(alpha, t as u64))
        }
        LemmaId::WeightedSumUpper => {
            let (t, a) = (x(0)?, x(1)?);
            let ln_t = t.ln();
            let alpha = (-ln_t / t).exp();
            let c = (a / ln_t).exp();
            let e = std::f64::consts::E;
            let rhs = 4.0 * c * ln_t * ln_t / (a * a * e * e * alpha * alpha * t);
            slack(weighted_sum(alpha, t as u64, a), rhs)
        }
        LemmaId::ExpPower => {
            // Compared in log space: −x ≤ ν ln(ν/(e x)).
            let (xv, nu) = (x(0)?, x(1)?);
            slack(-xv, nu * (nu / xv).ln() - nu)
        }
    };
    Ok(value)
}

/// `Σ_{t=1}^T α^{2t} exp(−a Σ_{i=t+1}^T α^i)` by direct summation.
pub fn weighted_sum(alpha: f64, horizon: u64, a: f64) -> f64 {
    let mut tail = 0.0; // Σ_{i=t+1}^T α^i
    let mut total = 0.0;
    for t in (1..=horizon).rev() {
        let at = alpha.powf(t as f64);
        total += at * at * (-a * tail).exp();
        tail += at;
    }
    total
}

/// `(P^t)ᵀ start`.
fn propagate(problem: &Problem, start: &DVector<f64>, t: u64) -> DVector<f64> {
    let pt = problem.spec().transition().transpose();
    matrix_power(&pt, t) * start
}

fn matrix_power(m: &DMatrix<f64>, mut k: u64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        k >>= 1;
    }
    result
}

fn run_checks(
    ids: &[LemmaId],
    ctx: &LemmaContext,
    trials: u64,
    rng: &mut ChaCha8Rng,
    pairs: bool,
) -> Result<Vec<LemmaCheck>, LemmaError> {
    let radius = ctx.default_radius();
    let mut checks: Vec<LemmaCheck> = ids.iter().map(|&id| LemmaCheck::new(id)).collect();
    for trial in 0..trials {
        let w1 = draw_w(rng, ctx, radius, trial);
        let witness = if pairs {
            let w2 = draw_w(rng, ctx, radius, trial + 1);
            Witness::vecs(&[&w1, &w2])
        } else {
            Witness::vecs(&[&w1])
        };
        for check in checks.iter_mut() {
            let s = evaluate(check.id, ctx, &witness)?;
            check.record(s, || witness.clone());
        }
    }
    Ok(checks)
}

/// Alignment, value-norm and second-moment inequalities under stationary sampling.
pub fn check_iid_lemmas(ctx: &LemmaContext, trials: u64, rng: &mut ChaCha8Rng) -> Result<Vec<LemmaCheck>, LemmaError> {
    let mut out = run_checks(&[LemmaId::TdAlignment, LemmaId::TdSecondMoment], ctx, trials, rng, false)?;
    out.extend(run_checks(
        &[LemmaId::ValueNormLower, LemmaId::ValueNormIdentity],
        ctx,
        trials,
        rng,
        true,
    )?);
    Ok(out)
}

/// Lipschitz constants and norm bounds of the sampled and mean-path directions.
pub fn check_lipschitz_and_norm_bounds(
    ctx: &LemmaContext,
    trials: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LemmaCheck>, LemmaError> {
    let mut out = run_checks(&[LemmaId::MeanLipschitz, LemmaId::SampleLipschitz], ctx, trials, rng, true)?;
    out.extend(run_checks(
        &[
            LemmaId::SampleNormLoose,
            LemmaId::MeanNormStandard,
            LemmaId::RegSampleNorm,
            LemmaId::SampleNormStandard,
            LemmaId::RegMeanNorm,
            LemmaId::RegStrongMonotone,
            LemmaId::RegMeanSecondMoment,
        ],
        ctx,
        trials,
        rng,
        false,
    )?);
    Ok(out)
}

pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [1e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0];

/// Distance between the standard and regularized fixed points over `lambdas`.
pub fn check_fixed_point_distance(ctx: &LemmaContext, lambdas: &[f64]) -> Result<LemmaCheck, LemmaError> {
    let mut check = LemmaCheck::new(LemmaId::FixedPointDistance);
    for &lam in lambdas {
        let witness = Witness {
            scalars: vec![lam],
            ..Witness::default()
        };
        let s = evaluate(LemmaId::FixedPointDistance, ctx, &witness)?;
        check.record(s, || witness);
    }
    Ok(check)
}

pub const DEFAULT_DELTA_GRID: [f64; 3] = [0.1, 0.01, 1e-3];

/// Deviation of the time-`t` expected direction from the mean path for
/// `t ≥ τ_δ`, over `deltas` plus the run's `δ`. Starts are random points of
/// the simplex and `t` is drawn from `[τ_δ, τ_δ + 64]`.
pub fn check_mixing_deviation(
    ctx: &LemmaContext,
    profile: &MixingProfile,
    eta_final: f64,
    deltas: &[f64],
    trials: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LemmaCheck>, LemmaError> {
    let radius = ctx.default_radius();
    let n = ctx.problem.n();
    let pt = ctx.problem.spec().transition().transpose();
    let mut grid: Vec<(LemmaId, f64)> = deltas.iter().map(|&d| (LemmaId::MixingDeviation, d)).collect();
    grid.push((LemmaId::MixingDeviation, profile.delta));
    grid.push((LemmaId::MixingDeviationRun, profile.delta));
    let mut general = LemmaCheck::new(LemmaId::MixingDeviation);
    let mut at_run = LemmaCheck::new(LemmaId::MixingDeviationRun);
    let per_delta = (trials / grid.len() as u64).max(1);
    for (id, delta) in grid {
        let tau = compute_tau(&profile.envelope, delta)?;
        const SPAN: u64 = 64;
        let mut powers = Vec::with_capacity(SPAN as usize + 1);
        powers.push(matrix_power(&pt, tau));
        for k in 1..=SPAN as usize {
            let next = &pt * &powers[k - 1];
            powers.push(next);
        }
        for trial in 0..per_delta {
            let w = draw_w(rng, ctx, radius, trial);
            let start = if trial % 3 == 0 {
                let mut e = DVector::zeros(n);
                e[rng.random_range(0..n)] = 1.0;
                e
            } else {
                random_simplex(rng, n)
            };
            let k = rng.random_range(0..=SPAN);
            let t = tau + k;
            let dist = &powers[k as usize] * &start;
            let lhs = (expected_direction(&ctx.problem, &dist, &w, ctx.lambda) - ctx.mean_reg.direction(&w)).norm();
            let rhs = match id {
                LemmaId::MixingDeviation => 2.0 * (2.0 + ctx.lambda) * delta * (w.norm() + 1.0),
                _ => eta_final * (w.norm() + 1.0),
            };
            let witness = || Witness {
                vectors: vec![w.as_slice().to_vec(), start.as_slice().to_vec()],
                indices: vec![t],
                scalars: if id == LemmaId::MixingDeviation { vec![delta] } else { vec![delta, eta_final] },
            };
            let target = if id == LemmaId::MixingDeviation { &mut general } else { &mut at_run };
            target.record(slack(lhs, rhs), witness);
        }
    }
    Ok(vec![general, at_run])
}

/// Trajectory inequalities on Markovian traces run with the exponential
/// schedule `schedule`: boundedness by `B(τ_mix)`, drift across one mixing
/// window, and the second moment of the Markovian noise at `samples` evenly
/// spaced times. Also records the seed-averaged cross term as a diagnostic.
pub fn check_markovian_lemmas(
    ctx: &LemmaContext,
    profile: &MixingProfile,
    traces: &[RunRecord],
    schedule: &Schedule,
    samples: u64,
) -> Result<Vec<LemmaCheck>, LemmaError> {
    let horizon = schedule.horizon();
    let tau = profile.tau_mix;
    if horizon < tau {
        return Err(LemmaError::TraceTooShort { horizon, tau_mix: tau });
    }
    let problem = &ctx.problem;
    let lambda = ctx.lambda;
    let w_reg = &ctx.regularized.w_reg_star;
    let mut bounded_before = LemmaCheck::new(LemmaId::BoundedBeforeMixing);
    let mut bounded_all = LemmaCheck::new(LemmaId::BoundedAllT);
    let mut drift = LemmaCheck::new(LemmaId::MixingWindowDrift);
    let mut noise = LemmaCheck::new(LemmaId::MarkovNoise);
    let mut cross = LemmaCheck::new(LemmaId::MarkovCrossTerm);

    let ln_t = (horizon as f64).ln();
    let proof = ProofConstants::new(lambda);
    // Distribution of the state used by update t (index t − 1).
    let dists: Vec<DVector<f64>> = crate::sampling::StateDistributions::new(problem.spec())
        .take(horizon as usize)
        .collect();
    let step = (horizon / samples.max(1)).max(1);
    let sample_times: Vec<u64> = (1..=horizon).step_by(step as usize).collect();
    let mut cross_sums = vec![0.0; sample_times.len()];
    let mut b_max = 0.0_f64;

    for record in traces {
        let trace = record.trace.as_ref().ok_or(LemmaError::MissingTrace)?;
        let iter_at = |t: u64| &trace.iterates[(t - 1) as usize];
        let w1 = iter_at(1);
        let rc = reg_constants(
            lambda,
            &profile.envelope,
            horizon,
            (w1 - w_reg).norm(),
            ctx.regularized.zeta,
        )?;
        let b = rc.b_taumix;
        b_max = b_max.max(b);
        for t in 1..=horizon + 1 {
            let w = iter_at(t);
            let s = slack((w - w_reg).norm_squared(), b);
            let witness = || Witness {
                vectors: vec![w.as_slice().to_vec()],
                indices: vec![t],
                scalars: vec![b],
            };
            if t <= tau {
                bounded_before.record(s, witness);
            }
            bounded_all.record(s, witness);
        }
        for t in (tau + 1)..=horizon {
            let (wt, wprev) = (iter_at(t), iter_at(t - tau));
            let eta = schedule.step_size(t)?;
            let rhs = proof.c1_sq * b * eta * eta * ln_t.powi(4);
            drift.record(slack((wt - wprev).norm_squared(), rhs), || Witness {
                vectors: vec![wt.as_slice().to_vec(), wprev.as_slice().to_vec()],
                indices: vec![t, t - tau],
                scalars: vec![rhs],
            });
        }
        for (k, &t) in sample_times.iter().enumerate() {
            let w = iter_at(t);
            let dist = &dists[(t - 1) as usize];
            let center = ctx.mean_reg.direction(w);
            let rhs = proof.c_prime * b;
            let lhs = expected_sq_deviation(problem, dist, w, lambda, &center);
            noise.record(slack(lhs, rhs), || Witness {
                vectors: vec![w.as_slice().to_vec(), dist.as_slice().to_vec()],
                indices: vec![t],
                scalars: vec![rhs],
            });
            let tr = trace.transitions[(t - 1) as usize];
            let realized = crate::oracle::sample_direction(problem.features(), problem.gamma(), tr.as_tuple(), w, lambda);
            cross_sums[k] += (w - w_reg).dot(&(realized - center));
        }
    }

    if !traces.is_empty() {
        for (k, &t) in sample_times.iter().enumerate() {
            let mean = cross_sums[k] / traces.len() as f64;
            cross.series.push((t, mean));
            if t >= tau {
                let eta = schedule.step_size(t)?;
                let rhs = proof.big_c * eta * ln_t * ln_t * b_max;
                cross.record(slack(mean, rhs), || Witness {
                    scalars: vec![mean, rhs],
                    indices: vec![t],
                    ..Witness::default()
                });
            }
        }
    }
    Ok(vec![bounded_before, bounded_all, drift, noise, cross])
}

pub const DEFAULT_HORIZON_GRID: [u64; 4] = [10, 100, 1000, 10_000];
pub const DEFAULT_A_GRID: [f64; 3] = [0.01, 0.1, 1.0];

/// Log-spaced grid over `[lo, hi]` with `points` entries.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1).max(1) as f64).exp())
        .collect()
}

/// Scalar inequalities about the exponential schedule.
pub fn check_helper_lemmas(
    horizons: &[u64],
    a_grid: &[f64],
    x_nu_grid: &[f64],
    ctx: &LemmaContext,
) -> Result<Vec<LemmaCheck>, LemmaError> {
    let mut f1 = LemmaCheck::new(LemmaId::GeometricSumLower);
    let mut f2 = LemmaCheck::new(LemmaId::WeightedSumUpper);
    let mut f3 = LemmaCheck::new(LemmaId::ExpPower);
    let with = |scalars: Vec<f64>| Witness {
        scalars,
        ..Witness::default()
    };
    for &t in horizons {
        let w = with(vec![t as f64]);
        f1.record(evaluate(f1.id, ctx, &w)?, || w.clone());
        for &a in a_grid {
            let w = with(vec![t as f64, a]);
            f2.record(evaluate(f2.id, ctx, &w)?, || w.clone());
        }
    }
    for &x in x_nu_grid {
        for &nu in x_nu_grid {
            let w = with(vec![x, nu]);
            f3.record(evaluate(f3.id, ctx, &w)?, || w.clone());
        }
    }
    Ok(vec![f1, f2, f3])
}

/// Configuration of [`run_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub instances: usize,
    pub trials: u64,
    pub seed: u64,
    pub markov_horizon: u64,
    pub markov_seeds: u64,
    pub markov_samples: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            trials: 1000,
            seed: 0,
            markov_horizon: 1 << 12,
            markov_seeds: 4,
            markov_samples: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub instances: usize,
    pub checks: Vec<LemmaCheck>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(LemmaCheck::passed)
    }
}

const SUITE_LAMBDAS: [f64; 4] = [0.01, 0.1, 0.5, 1.0];

/// Instance `i` of the suite: the reference chain, the single-state chain,
/// then seeded random instances cycling through the generator families.
pub fn suite_instance(seed: u64, i: usize) -> Result<(Problem, f64), LemmaError> {
    let lambda = SUITE_LAMBDAS[i % SUITE_LAMBDAS.len()];
    let (spec, features) = match i {
        0 => reference_two_state(),
        1 => single_state(),
        _ => {
            let inst_seed = derive_cell_seed(seed, &[i as u64]);
            let n = 2 + (inst_seed % 19) as usize;
            let d = 1 + ((inst_seed >> 8) % 8) as usize;
            let family = match i % 3 {
                0 => GeneratorFamily::DenseDirichlet,
                1 => GeneratorFamily::Chain,
                _ => GeneratorFamily::Garnet {
                    branching: 2 + (inst_seed >> 16) as usize % 3,
                },
            };
            make_random_mdp(inst_seed, n, d.min(n), family)?
        }
    };
    let lambda = if i == 0 { 0.1 } else { lambda };
    Ok((Problem::new(spec, features)?, lambda))
}

fn markov_checks_for(
    ctx: &LemmaContext,
    theorem: Theorem,
    cfg: &SuiteConfig,
    rng: &mut ChaCha8Rng,
    stream_base: u64,
) -> Result<Vec<LemmaCheck>, LemmaError> {
    let problem = &ctx.problem;
    let horizon = cfg.markov_horizon;
    let fixed = if theorem == Theorem::ExpMarkov { &ctx.standard } else { &ctx.regularized };
    let inputs = BoundInputs::new(problem, fixed, &DVector::zeros(problem.d()), 1.0, horizon, None);
    let eta0 = default_eta0(theorem, &(&inputs).into())?;
    let profile = MixingProfile::for_run(problem, eta0, ctx.lambda, horizon)?;
    let schedule = Schedule::new(ScheduleKind::Exponential, eta0, horizon)?;
    let mut out = check_mixing_deviation(ctx, &profile, eta0 / horizon as f64, &DEFAULT_DELTA_GRID, cfg.trials, rng)?;

    let variant = if theorem == Theorem::ExpMarkov {
        Variant::Standard
    } else {
        Variant::Regularized { lambda: ctx.lambda }
    };
    let traces = (0..cfg.markov_seeds)
        .map(|k| {
            let mut rc = RunConfig::new(variant, schedule, Regime::Markovian, cfg.seed, stream_base + k);
            rc.record_trace = true;
            run(&rc, problem)
        })
        .collect::<Result<Vec<_>, _>>()?;
    match check_markovian_lemmas(ctx, &profile, &traces, &schedule, cfg.markov_samples) {
        Ok(checks) => out.extend(checks),
        Err(LemmaError::TraceTooShort { .. }) => {
            for id in [
                LemmaId::BoundedBeforeMixing,
                LemmaId::BoundedAllT,
                LemmaId::MixingWindowDrift,
                LemmaId::MarkovNoise,
                LemmaId::MarkovCrossTerm,
            ] {
                let mut c = LemmaCheck::new(id);
                c.skipped = 1;
                out.push(c);
            }
        }
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// Every check on one instance.
pub fn check_instance(problem: Problem, lambda: f64, cfg: &SuiteConfig, instance: usize) -> Result<Vec<LemmaCheck>, LemmaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_cell_seed(cfg.seed, &[instance as u64, 1]));
    let ctx = LemmaContext::new(problem.clone(), lambda)?;
    let ctx0 = LemmaContext::new(problem, 0.0)?;
    let mut out = check_iid_lemmas(&ctx, cfg.trials, &mut rng)?;
    out.extend(check_lipschitz_and_norm_bounds(&ctx, cfg.trials, &mut rng)?);
    out.push(check_fixed_point_distance(&ctx, &DEFAULT_LAMBDA_GRID)?);
    let base = 1000 * instance as u64;
    out.extend(markov_checks_for(&ctx0, Theorem::ExpMarkov, cfg, &mut rng, base)?);
    out.extend(markov_checks_for(&ctx, Theorem::RegMarkov, cfg, &mut rng, base + 500)?);
    Ok(out)
}

fn merge_into(acc: &mut Vec<LemmaCheck>, checks: Vec<LemmaCheck>) {
    for c in checks {
        match acc.iter_mut().find(|a| a.id == c.id) {
            Some(a) => a.merge(c),
            None => acc.push(c),
        }
    }
}

/// Runs every check over `cfg.instances` instances in parallel and merges
/// the results per check in instance order, so the report is deterministic.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport, LemmaError> {
    let per_instance: Vec<Vec<LemmaCheck>> = (0..cfg.instances)
        .into_par_iter()
        .map(|i| {
            let (problem, lambda) = suite_instance(cfg.seed, i)?;
            check_instance(problem, lambda, cfg, i)
        })
        .collect::<Result<_, _>>()?;
    let mut checks = Vec::new();
    for batch in per_instance {
        merge_into(&mut checks, batch);
    }
    // Helper inequalities do not depend on the instance.
    let (p, _) = suite_instance(cfg.seed, 0)?;
    let ctx = LemmaContext::new(p, 0.0)?;
    merge_into(
        &mut checks,
        check_helper_lemmas(&DEFAULT_HORIZON_GRID, &DEFAULT_A_GRID, &log_grid(1e-3, 1e3, 61), &ctx)?,
    );
    checks.sort_by_key(|c| c.id);
    Ok(SuiteReport {
        instances: cfg.instances,
        checks,
    })
}
