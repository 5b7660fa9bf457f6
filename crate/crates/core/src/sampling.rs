//! Transition sources for the three sampling regimes, plus exact mixing
//! analytics computed from the transition matrix.
//!
//! RNG contract: a source for `(seed, stream)` is a ChaCha8 generator keyed
//! by `seed` and positioned on stream `stream`. Multi-seed sweeps keep the
//! run seed fixed and use the seed index as the stream, so every seed owns an
//! independent, reproducible sequence no matter which worker runs it.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{MdpSpec, Problem};

/// TV values at or below this are treated as numerical zero when inflating an envelope.
pub const TV_NOISE_FLOOR: f64 = 1e-12;
/// The default fit window ends at the last index whose TV exceeds this.
pub const FIT_WINDOW_CUTOFF: f64 = 1e-10;
/// Decay rate assigned when the curve is zero after one step, where every ρ is valid.
pub const DEGENERATE_RHO: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("the mean-path regime uses exact expectations and emits no samples")]
    MeanPathHasNoSamples,
    #[error("TV curve is numerically zero at t = {t} inside the fit window; shrink the window")]
    WindowContainsZero { t: usize },
    #[error("fit window {start}..={end} does not lie inside a curve of length {len}")]
    WindowOutOfRange { start: usize, end: usize, len: usize },
    #[error("fit window needs at least two points unless the curve vanishes after it")]
    WindowTooShort,
    #[error("TV curve is not decaying (fitted log-slope {0})")]
    NotDecaying(f64),
    #[error("δ must lie in (0, 1], got {0}")]
    BadDelta(f64),
    #[error("mixing envelope needs m > 0 and 0 < ρ < 1 (m = {m}, ρ = {rho})")]
    InvalidEnvelope { m: f64, rho: f64 },
    #[error("unknown sampling regime `{0}`")]
    UnknownRegime(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    MeanPath,
    Iid,
    Markovian,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::MeanPath => "mean-path",
            Regime::Iid => "iid",
            Regime::Markovian => "markovian",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean-path" => Ok(Regime::MeanPath),
            "iid" => Ok(Regime::Iid),
            "markovian" => Ok(Regime::Markovian),
            other => Err(SamplingError::UnknownRegime(other.to_string())),
        }
    }
}

/// One observed transition `(s, r(s), s′)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub reward: f64,
    pub next_state: usize,
}

impl Transition {
    pub fn as_tuple(&self) -> (usize, f64, usize) {
        (self.state, self.reward, self.next_state)
    }
}

/// Categorical sampler that degrades gracefully to a constant for one-hot rows.
#[derive(Debug, Clone)]
enum Categorical {
    Fixed(usize),
    Weighted(WeightedIndex<f64>),
}

impl Categorical {
    fn new(weights: impl Iterator<Item = f64>) -> Self {
        let clamped: Vec<f64> = weights.map(|w| w.max(0.0)).collect();
        let support: Vec<usize> = (0..clamped.len()).filter(|&i| clamped[i] > 0.0).collect();
        if support.len() == 1 {
            return Categorical::Fixed(support[0]);
        }
        Categorical::Weighted(WeightedIndex::new(clamped).expect("validated probability vector"))
    }

    #[inline]
    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            Categorical::Fixed(s) => *s,
            Categorical::Weighted(w) => w.sample(rng),
        }
    }
}

/// Seeded stream of transitions. One per worker; not shared.
#[derive(Debug, Clone)]
pub struct TransitionSource {
    regime: Regime,
    rng: ChaCha8Rng,
    rows: Vec<Categorical>,
    stationary: Categorical,
    rewards: Vec<f64>,
    current: usize,
}

impl TransitionSource {
    pub fn new(problem: &Problem, regime: Regime, seed: u64, stream: u64) -> Result<Self, SamplingError> {
        if regime == Regime::MeanPath {
            return Err(SamplingError::MeanPathHasNoSamples);
        }
        let spec = problem.spec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let rows = (0..spec.n())
            .map(|s| Categorical::new(spec.transition().row(s).iter().copied()))
            .collect();
        let stationary = Categorical::new(problem.analysis().mu.iter().copied());
        let current = Categorical::new(spec.initial().iter().copied()).sample(&mut rng);
        Ok(Self {
            regime,
            rng,
            rows,
            stationary,
            rewards: spec.rewards().as_slice().to_vec(),
            current,
        })
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// State the next Markovian transition will start from.
    pub fn current_state(&self) -> usize {
        self.current
    }

    pub fn next_transition(&mut self) -> Transition {
        let s = match self.regime {
            Regime::Iid => self.stationary.sample(&mut self.rng),
            _ => self.current,
        };
        let s_next = self.rows[s].sample(&mut self.rng);
        if self.regime == Regime::Markovian {
            self.current = s_next;
        }
        Transition {
            state: s,
            reward: self.rewards[s],
            next_state: s_next,
        }
    }
}

/// SplitMix64 finaliser; used to derive independent seeds for sweep cells.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `base` one word at a time.
pub fn derive_cell_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}

/// `μ₀ P^t` for `t = 0, 1, 2, …`.
pub struct StateDistributions {
    transition_t: DMatrix<f64>,
    current: DVector<f64>,
}

impl StateDistributions {
    pub fn new(spec: &MdpSpec) -> Self {
        Self::starting_at(spec, spec.initial().clone())
    }

    pub fn starting_at(spec: &MdpSpec, start: DVector<f64>) -> Self {
        Self {
            transition_t: spec.transition().transpose(),
            current: start,
        }
    }
}

impl Iterator for StateDistributions {
    type Item = DVector<f64>;

    fn next(&mut self) -> Option<DVector<f64>> {
        let next = &self.transition_t * &self.current;
        Some(std::mem::replace(&mut self.current, next))
    }
}

fn tv_distance(a: impl Iterator<Item = f64>, b: &DVector<f64>) -> f64 {
    0.5 * a.zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// `max_s ½‖δ_s P^t − μ_π‖₁` for `t = 0..=t_max`. Point masses suffice since
/// TV distance to `μ_π` is convex in the starting distribution.
pub fn exact_tv_curve(problem: &Problem, t_max: usize) -> Vec<f64> {
    let p = problem.spec().transition();
    let mu = &problem.analysis().mu;
    let n = problem.n();
    let mut powers = DMatrix::<f64>::identity(n, n);
    let mut curve = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        if t > 0 {
            powers = &powers * p;
        }
        let worst = (0..n)
            .map(|s| tv_distance(powers.row(s).iter().copied(), mu))
            .fold(0.0_f64, f64::max);
        curve.push(worst);
    }
    curve
}

/// Extends the curve until it reaches the noise floor or `cap` steps.
pub fn tv_curve_to_floor(problem: &Problem, cap: usize) -> Vec<f64> {
    let mut t_max = 64;
    loop {
        let curve = exact_tv_curve(problem, t_max);
        if curve.last().is_some_and(|&v| v <= TV_NOISE_FLOOR) || t_max >= cap {
            return curve;
        }
        t_max = (t_max * 4).min(cap);
    }
}

/// Geometric envelope `d_TV(P^t μ₀, μ_π) ≤ m ρ^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingEnvelope {
    pub m: f64,
    pub rho: f64,
}

impl MixingEnvelope {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.m.is_finite() && self.m > 0.0 && self.rho > 0.0 && self.rho < 1.0 {
            Ok(())
        } else {
            Err(SamplingError::InvalidEnvelope {
                m: self.m,
                rho: self.rho,
            })
        }
    }

    pub fn at(&self, t: u64) -> f64 {
        self.m * self.rho.powf(t as f64)
    }
}

fn default_window(curve: &[f64]) -> RangeInclusive<usize> {
    let last = curve.iter().rposition(|&v| v > FIT_WINDOW_CUTOFF).unwrap_or(0);
    if last >= 2 {
        1..=last
    } else {
        0..=last
    }
}

/// Least-squares fit of `ln tv[t] = ln m + t ln ρ` over `window` (default:
/// `[1, t*]`, `t*` the last index above 1e−10), followed by the smallest
/// inflation of `m` that makes `m ρ^t` dominate the whole curve.
pub fn fit_mixing(
    curve: &[f64],
    window: Option<RangeInclusive<usize>>,
) -> Result<MixingEnvelope, SamplingError> {
    let window = window.unwrap_or_else(|| default_window(curve));
    let (start, end) = (*window.start(), *window.end());
    if start > end || end >= curve.len() {
        return Err(SamplingError::WindowOutOfRange {
            start,
            end,
            len: curve.len(),
        });
    }
    if let Some(t) = window.clone().find(|&t| !(curve[t] > TV_NOISE_FLOOR)) {
        return Err(SamplingError::WindowContainsZero { t });
    }

    let (log_m, log_rho) = if start == end {
        if curve[end + 1..].iter().any(|&v| v > TV_NOISE_FLOOR) {
            return Err(SamplingError::WindowTooShort);
        }
        let log_rho = DEGENERATE_RHO.ln();
        (curve[start].ln() - start as f64 * log_rho, log_rho)
    } else {
        let k = (end - start + 1) as f64;
        let mean_t = window.clone().map(|t| t as f64).sum::<f64>() / k;
        let mean_y = window.clone().map(|t| curve[t].ln()).sum::<f64>() / k;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for t in window.clone() {
            let dx = t as f64 - mean_t;
            sxy += dx * (curve[t].ln() - mean_y);
            sxx += dx * dx;
        }
        let slope = sxy / sxx;
        if !(slope < 0.0) {
            return Err(SamplingError::NotDecaying(slope));
        }
        (mean_y - slope * mean_t, slope)
    };

    // Smallest factor ≥ 1 that puts every non-negligible point under the envelope.
    let excess = curve
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > TV_NOISE_FLOOR)
        .map(|(t, &v)| v.ln() - (log_m + t as f64 * log_rho))
        .fold(0.0_f64, f64::max);
    let mut envelope = MixingEnvelope {
        m: (log_m + excess).exp(),
        rho: log_rho.exp(),
    };
    // Guard against the last ulp of rounding in exp/powf.
    while curve
        .iter()
        .enumerate()
        .any(|(t, &v)| v > TV_NOISE_FLOOR && v > envelope.at(t as u64))
    {
        envelope.m *= 1.0 + 4.0 * f64::EPSILON;
    }
    envelope.validate()?;
    Ok(envelope)
}

/// `τ_δ = min{t ∈ ℕ₀ : m ρ^t ≤ δ}`: closed form, then checked directly.
pub fn compute_tau(envelope: &MixingEnvelope, delta: f64) -> Result<u64, SamplingError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(SamplingError::BadDelta(delta));
    }
    envelope.validate()?;
    let closed = ((envelope.m / delta).ln() / (1.0 / envelope.rho).ln()).ceil();
    let mut tau = if closed > 0.0 { closed as u64 } else { 0 };
    while envelope.at(tau) > delta {
        tau += 1;
    }
    while tau > 0 && envelope.at(tau - 1) <= delta {
        tau -= 1;
    }
    Ok(tau)
}

/// Mixing quantities for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingProfile {
    pub envelope: MixingEnvelope,
    pub tv_curve: Vec<f64>,
    pub delta: f64,
    pub tau_delta: u64,
    pub tau_mix: u64,
    pub a: f64,
    pub b: f64,
}

/// `δ = η₀/(2(2+λ)T)`.
pub fn run_delta(eta0: f64, lambda: f64, horizon: u64) -> f64 {
    eta0 / (2.0 * (2.0 + lambda) * horizon as f64)
}

impl MixingProfile {
    pub fn new(
        envelope: MixingEnvelope,
        tv_curve: Vec<f64>,
        delta: f64,
        lambda: f64,
    ) -> Result<Self, SamplingError> {
        let tau_delta = compute_tau(&envelope, delta)?;
        let (a, b) = crate::oracle::mixing_ab(lambda, &envelope);
        Ok(Self {
            envelope,
            tv_curve,
            delta,
            tau_delta,
            tau_mix: tau_delta,
            a,
            b,
        })
    }

    /// Exact curve, default-window envelope and `δ = η₀/(2(2+λ)T)`. A chain
    /// that starts at stationarity (single state) gets the envelope `(1, ρ₀)`.
    pub fn for_run(problem: &Problem, eta0: f64, lambda: f64, horizon: u64) -> Result<Self, SamplingError> {
        let curve = tv_curve_to_floor(problem, 100_000);
        let envelope = if curve.iter().all(|&v| v <= TV_NOISE_FLOOR) {
            MixingEnvelope {
                m: 1.0,
                rho: DEGENERATE_RHO,
            }
        } else {
            fit_mixing(&curve, None)?
        };
        Self::new(envelope, curve, run_delta(eta0, lambda, horizon), lambda)
    }
}
