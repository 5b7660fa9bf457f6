//! Tabular Markov reward processes, linear feature maps and the
//! stationary-distribution quantities derived from them.
//!
//! A policy is assumed to be baked into the transition matrix `P` and the
//! per-state expected reward `r(s)`, so an [`MdpSpec`] is really a Markov
//! reward process with a discount factor and an initial distribution.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row sums and the initial distribution must match 1 to this precision.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Smallest singular value a feature matrix may have and still count as full rank.
pub const RANK_TOL: f64 = 1e-10;
/// Below this the smallest eigenvalue of `Σ` is treated as zero.
pub const OMEGA_TOL: f64 = 1e-12;
/// A chain is certified ergodic when `|λ₂| < 1 - ERGODIC_GAP`.
pub const ERGODIC_GAP: f64 = 1e-9;
/// Required stationarity residual `‖μP − μ‖∞`.
pub const STATIONARY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("row {row} of the transition matrix is not a probability vector (sum {sum})")]
    NonStochasticRow { row: usize, sum: f64 },
    #[error("reward r({state}) = {value} lies outside [0, 1]")]
    RewardOutOfRange { state: usize, value: f64 },
    #[error("discount factor {0} is not in (0, 1)")]
    DiscountOutOfRange(f64),
    #[error("initial distribution is not a probability vector (sum {sum})")]
    BadInitialDistribution { sum: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("feature row {row} has squared norm {norm_sq} > 1")]
    FeatureNormExceeded { row: usize, norm_sq: f64 },
    #[error("feature matrix is rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),
    #[error("chain is not ergodic: subdominant eigenvalue modulus {0}")]
    ChainNotErgodic(f64),
    #[error("degenerate features: smallest eigenvalue of Σ is {0:e}")]
    DegenerateFeatures(f64),
    #[error("stationary solve failed: {0}")]
    StationarySolve(String),
    #[error("unknown generator family `{0}`")]
    UnknownFamily(String),
    #[error("invalid generator dimensions n = {n}, d = {d}")]
    InvalidDimensions { n: usize, d: usize },
    #[error("generator could not produce an ergodic, well-conditioned instance after {0} attempts")]
    GeneratorExhausted(usize),
}

/// Unvalidated Markov reward process, as read from a document or built by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMdp {
    pub transition: DMatrix<f64>,
    pub rewards: DVector<f64>,
    pub gamma: f64,
    pub initial: DVector<f64>,
}

/// A validated Markov reward process. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSpec {
    transition: DMatrix<f64>,
    rewards: DVector<f64>,
    gamma: f64,
    initial: DVector<f64>,
}

impl MdpSpec {
    pub fn new(
        transition: DMatrix<f64>,
        rewards: DVector<f64>,
        gamma: f64,
        initial: DVector<f64>,
    ) -> Result<Self, MdpError> {
        validate_mdp(RawMdp {
            transition,
            rewards,
            gamma,
            initial,
        })
    }

    pub fn n(&self) -> usize {
        self.rewards.len()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn rewards(&self) -> &DVector<f64> {
        &self.rewards
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.initial
    }

    /// Same chain with a different initial distribution.
    pub fn with_initial(&self, initial: DVector<f64>) -> Result<Self, MdpError> {
        Self::new(self.transition.clone(), self.rewards.clone(), self.gamma, initial)
    }
}

fn check_simplex(v: impl Iterator<Item = f64>) -> Result<(), f64> {
    let mut sum = 0.0;
    let mut ok = true;
    for x in v {
        if !x.is_finite() || x < 0.0 {
            ok = false;
        }
        sum += x;
    }
    if ok && (sum - 1.0).abs() <= SIMPLEX_TOL {
        Ok(())
    } else {
        Err(sum)
    }
}

/// Checks every structural invariant of a Markov reward process and returns
/// it unchanged on success.
pub fn validate_mdp(raw: RawMdp) -> Result<MdpSpec, MdpError> {
    let n = raw.rewards.len();
    if n == 0 {
        return Err(MdpError::DimensionMismatch("zero states".into()));
    }
    if raw.transition.nrows() != n || raw.transition.ncols() != n {
        return Err(MdpError::DimensionMismatch(format!(
            "P is {}x{}, expected {n}x{n}",
            raw.transition.nrows(),
            raw.transition.ncols()
        )));
    }
    if raw.initial.len() != n {
        return Err(MdpError::DimensionMismatch(format!(
            "mu0 has {} entries, expected {n}",
            raw.initial.len()
        )));
    }
    for row in 0..n {
        check_simplex(raw.transition.row(row).iter().copied())
            .map_err(|sum| MdpError::NonStochasticRow { row, sum })?;
    }
    for (state, &value) in raw.rewards.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(MdpError::RewardOutOfRange { state, value });
        }
    }
    if !(raw.gamma > 0.0 && raw.gamma < 1.0) {
        return Err(MdpError::DiscountOutOfRange(raw.gamma));
    }
    check_simplex(raw.initial.iter().copied())
        .map_err(|sum| MdpError::BadInitialDistribution { sum })?;
    Ok(MdpSpec {
        transition: raw.transition,
        rewards: raw.rewards,
        gamma: raw.gamma,
        initial: raw.initial,
    })
}

/// Feature matrix `Φ` (rows are `φ(s)ᵀ`) with `‖φ(s)‖² ≤ 1` and full column rank.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
}

impl FeatureMap {
    pub fn new(phi: DMatrix<f64>) -> Result<Self, MdpError> {
        let (n, d) = phi.shape();
        if d == 0 || d > n {
            return Err(MdpError::DimensionMismatch(format!(
                "feature matrix is {n}x{d}; need 1 <= d <= n"
            )));
        }
        for row in 0..n {
            let norm_sq = phi.row(row).norm_squared();
            if !norm_sq.is_finite() || norm_sq > 1.0 + SIMPLEX_TOL {
                return Err(MdpError::FeatureNormExceeded { row, norm_sq });
            }
        }
        let smallest = phi
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !(smallest > RANK_TOL) {
            return Err(MdpError::RankDeficient(smallest));
        }
        Ok(Self { phi })
    }

    /// Tabular features.
    pub fn identity(n: usize) -> Self {
        Self {
            phi: DMatrix::identity(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn d(&self) -> usize {
        self.phi.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// `φ(s)` as a column vector.
    pub fn row(&self, s: usize) -> DVector<f64> {
        self.phi.row(s).transpose()
    }

    /// `V_w = Φ w`.
    pub fn values(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.phi * w
    }
}

/// Stationary distribution and the feature covariance built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryAnalysis {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub omega: f64,
    pub lambda2_mod: f64,
}

impl StationaryAnalysis {
    /// `D = diag(μ_π)`.
    pub fn d_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.mu)
    }
}

/// Modulus of the second-largest eigenvalue of `P` (0 for a single state).
pub fn subdominant_modulus(transition: &DMatrix<f64>) -> f64 {
    if transition.nrows() <= 1 {
        return 0.0;
    }
    let mut moduli: Vec<f64> = transition
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    moduli[1]
}

/// Solves `μ(P − I) = 0, Σμ = 1` by replacing one balance equation with the
/// normalisation constraint.
fn stationary_by_null_space(transition: &DMatrix<f64>) -> Result<DVector<f64>, MdpError> {
    let n = transition.nrows();
    let mut system = transition.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        system[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let mut mu = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| MdpError::StationarySolve("balance system is singular".into()))?;
    let total = mu.sum();
    mu /= total;
    Ok(mu)
}

/// Independent route to `μ_π`: power iteration on the lazy chain `(P + I)/2`,
/// which has the same stationary distribution and is always aperiodic.
pub fn stationary_by_power_iteration(
    spec: &MdpSpec,
    tol: f64,
    max_iter: usize,
) -> Option<DVector<f64>> {
    let n = spec.n();
    let lazy = (spec.transition() + DMatrix::<f64>::identity(n, n)) * 0.5;
    let lazy_t = lazy.transpose();
    let mut mu = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..max_iter {
        let next = &lazy_t * &mu;
        let delta = (&next - &mu).amax();
        mu = next;
        if delta < tol {
            let total = mu.sum();
            return Some(mu / total);
        }
    }
    None
}

/// Computes `μ_π`, `D`, `Σ = ΦᵀDΦ`, `ω = λ_min(Σ)` and certifies ergodicity.
pub fn stationary_analysis(
    spec: &MdpSpec,
    features: &FeatureMap,
) -> Result<StationaryAnalysis, MdpError> {
    if features.n() != spec.n() {
        return Err(MdpError::DimensionMismatch(format!(
            "features have {} rows, MDP has {} states",
            features.n(),
            spec.n()
        )));
    }
    let lambda2_mod = subdominant_modulus(spec.transition());
    if !(lambda2_mod < 1.0 - ERGODIC_GAP) {
        return Err(MdpError::ChainNotErgodic(lambda2_mod));
    }
    let mu = stationary_by_null_space(spec.transition())?;
    let residual = (spec.transition().tr_mul(&mu) - &mu).amax();
    if !(residual <= STATIONARY_TOL) {
        return Err(MdpError::StationarySolve(format!(
            "residual ‖μP − μ‖∞ = {residual:e}"
        )));
    }
    let phi = features.matrix();
    let weighted = DMatrix::from_diagonal(&mu) * phi;
    let raw = phi.tr_mul(&weighted);
    let sigma = (&raw + raw.transpose()) * 0.5;
    let omega = sigma.clone().symmetric_eigen().eigenvalues.min();
    if !(omega > OMEGA_TOL) {
        return Err(MdpError::DegenerateFeatures(omega));
    }
    Ok(StationaryAnalysis {
        mu,
        sigma,
        omega,
        lambda2_mod,
    })
}

/// A validated instance together with its stationary analysis.
#[derive(Debug, Clone)]
pub struct Problem {
    spec: MdpSpec,
    features: FeatureMap,
    analysis: StationaryAnalysis,
}

impl Problem {
    pub fn new(spec: MdpSpec, features: FeatureMap) -> Result<Self, MdpError> {
        let analysis = stationary_analysis(&spec, &features)?;
        Ok(Self {
            spec,
            features,
            analysis,
        })
    }

    pub fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn analysis(&self) -> &StationaryAnalysis {
        &self.analysis
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    pub fn d(&self) -> usize {
        self.features.d()
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma()
    }

    pub fn omega(&self) -> f64 {
        self.analysis.omega
    }
}

/// Two-state chain `P = [[0.9, 0.1], [0.2, 0.8]]`, `r = [1, 0]`, `γ = 0.9`,
/// tabular features, started from state 1 (away from stationarity).
pub fn reference_two_state() -> (MdpSpec, FeatureMap) {
    let spec = MdpSpec::new(
        DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]),
        DVector::from_vec(vec![1.0, 0.0]),
        0.9,
        DVector::from_vec(vec![0.0, 1.0]),
    )
    .expect("reference chain is valid");
    (spec, FeatureMap::identity(2))
}

/// One state, `r = 1`, `γ = 0.5`, `φ = 1`.
pub fn single_state() -> (MdpSpec, FeatureMap) {
    let spec = MdpSpec::new(
        DMatrix::from_element(1, 1, 1.0),
        DVector::from_element(1, 1.0),
        0.5,
        DVector::from_element(1, 1.0),
    )
    .expect("single-state chain is valid");
    (spec, FeatureMap::identity(1))
}

/// Random instance families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorFamily {
    /// Every row of `P` is a Dirichlet(1) draw.
    DenseDirichlet,
    /// Lazy birth-death chain on a line.
    Chain,
    /// Exactly `branching` successors per state with Dirichlet(1) weights.
    Garnet { branching: usize },
}

impl fmt::Display for GeneratorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorFamily::DenseDirichlet => write!(f, "dense-dirichlet"),
            GeneratorFamily::Chain => write!(f, "chain"),
            GeneratorFamily::Garnet { branching } => write!(f, "garnet({branching})"),
        }
    }
}

impl FromStr for GeneratorFamily {
    type Err = MdpError;

    /// Accepts `dense-dirichlet`, `chain`, `garnet(b)` and `garnet:b`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || MdpError::UnknownFamily(s.to_string());
        match s.trim() {
            "dense-dirichlet" => Ok(GeneratorFamily::DenseDirichlet),
            "chain" => Ok(GeneratorFamily::Chain),
            other => {
                let rest = other.strip_prefix("garnet").ok_or_else(unknown)?;
                let inner = rest
                    .strip_prefix('(')
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| rest.strip_prefix(':'))
                    .ok_or_else(unknown)?;
                let branching: usize = inner.trim().parse().map_err(|_| unknown())?;
                if branching == 0 {
                    return Err(unknown());
                }
                Ok(GeneratorFamily::Garnet { branching })
            }
        }
    }
}

const GENERATOR_ATTEMPTS: usize = 64;

fn dirichlet_ones(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..k)
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            e + f64::MIN_POSITIVE
        })
        .collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

fn normalise_row(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= total);
}

fn random_transition(rng: &mut ChaCha8Rng, n: usize, family: GeneratorFamily) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(n, n);
    match family {
        GeneratorFamily::DenseDirichlet => {
            for s in 0..n {
                let mut row = dirichlet_ones(rng, n);
                normalise_row(&mut row);
                for (j, x) in row.into_iter().enumerate() {
                    p[(s, j)] = x;
                }
            }
        }
        GeneratorFamily::Chain => {
            for s in 0..n {
                let mut row = vec![0.0; n];
                if n == 1 {
                    row[0] = 1.0;
                } else {
                    let stay = rng.random_range(0.1..0.5);
                    let forward_share = rng.random_range(0.2..0.8);
                    let moving = 1.0 - stay;
                    row[s] += stay;
                    if s + 1 < n {
                        row[s + 1] += moving * forward_share;
                    } else {
                        row[s] += moving * forward_share;
                    }
                    if s > 0 {
                        row[s - 1] += moving * (1.0 - forward_share);
                    } else {
                        row[s] += moving * (1.0 - forward_share);
                    }
                }
                normalise_row(&mut row);
                for (j, x) in row.into_iter().enumerate() {
                    p[(s, j)] = x;
                }
            }
        }
        GeneratorFamily::Garnet { branching } => {
            let b = branching.min(n);
            for s in 0..n {
                let successors = rand::seq::index::sample(rng, n, b).into_vec();
                let mut weights = dirichlet_ones(rng, b);
                normalise_row(&mut weights);
                for (j, w) in successors.into_iter().zip(weights) {
                    p[(s, j)] = w;
                }
            }
        }
    }
    p
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    let mut phi = DMatrix::from_fn(n, d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    let max_norm = (0..n)
        .map(|s| phi.row(s).norm())
        .fold(0.0_f64, f64::max);
    if max_norm > 0.0 {
        phi /= max_norm;
        // Rounding can leave the longest row a hair above 1.
        for s in 0..n {
            let norm = phi.row(s).norm();
            if norm > 1.0 {
                let scale = 1.0 / norm;
                phi.row_mut(s).scale_mut(scale);
            }
        }
    }
    phi
}

/// Deterministic random instance. Draws are rejected (and redrawn from the
/// same stream) until the chain is ergodic and `ω` is non-degenerate.
pub fn make_random_mdp(
    seed: u64,
    n: usize,
    d: usize,
    family: GeneratorFamily,
) -> Result<(MdpSpec, FeatureMap), MdpError> {
    if n == 0 || d == 0 || d > n {
        return Err(MdpError::InvalidDimensions { n, d });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..GENERATOR_ATTEMPTS {
        let transition = random_transition(&mut rng, n, family);
        let rewards = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
        let gamma = rng.random_range(0.5..0.95);
        let initial = DVector::from_vec(dirichlet_ones(&mut rng, n));
        let phi = random_features(&mut rng, n, d);
        let Ok(spec) = MdpSpec::new(transition, rewards, gamma, initial) else {
            continue;
        };
        let Ok(features) = FeatureMap::new(phi) else {
            continue;
        };
        if stationary_analysis(&spec, &features).is_ok() {
            return Ok((spec, features));
        }
    }
    Err(MdpError::GeneratorExhausted(GENERATOR_ATTEMPTS))
}

/// Structured-text form of an instance. Matrices are flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub n: usize,
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma: f64,
    pub mu0: Vec<f64>,
    #[serde(rename = "Phi")]
    pub phi: Vec<f64>,
}

impl MdpDocument {
    pub fn from_parts(spec: &MdpSpec, features: &FeatureMap) -> Self {
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        Self {
            n: spec.n(),
            p: row_major(spec.transition()),
            r: spec.rewards().as_slice().to_vec(),
            gamma: spec.gamma(),
            mu0: spec.initial().as_slice().to_vec(),
            phi: row_major(features.matrix()),
        }
    }

    pub fn into_parts(self) -> Result<(MdpSpec, FeatureMap), MdpError> {
        let n = self.n;
        if n == 0 || self.p.len() != n * n {
            return Err(MdpError::DimensionMismatch(format!(
                "P has {} entries, expected {}",
                self.p.len(),
                n * n
            )));
        }
        if self.phi.is_empty() || self.phi.len() % n != 0 {
            return Err(MdpError::DimensionMismatch(format!(
                "Phi has {} entries, not a multiple of n = {n}",
                self.phi.len()
            )));
        }
        let d = self.phi.len() / n;
        let spec = validate_mdp(RawMdp {
            transition: DMatrix::from_row_slice(n, n, &self.p),
            rewards: DVector::from_vec(self.r),
            gamma: self.gamma,
            initial: DVector::from_vec(self.mu0),
        })?;
        let features = FeatureMap::new(DMatrix::from_row_slice(n, d, &self.phi))?;
        Ok((spec, features))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn raw_two_state() -> RawMdp {
        RawMdp {
            transition: DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]),
            rewards: DVector::from_vec(vec![1.0, 0.0]),
            gamma: 0.9,
            initial: DVector::from_vec(vec![0.5, 0.5]),
        }
    }

    #[test]
    fn single_state_is_valid() {
        let (spec, features) = single_state();
        assert_eq!(spec.n(), 1);
        let analysis = stationary_analysis(&spec, &features).unwrap();
        assert_eq!(analysis.mu[0], 1.0);
        assert_eq!(analysis.sigma[(0, 0)], 1.0);
        assert_eq!(analysis.omega, 1.0);
    }

    #[test]
    fn two_state_chain_validates() {
        let raw = raw_two_state();
        let spec = validate_mdp(raw.clone()).unwrap();
        assert_eq!(spec.transition(), &raw.transition);
    }

    #[test]
    fn rejects_row_summing_to_more_than_one() {
        let mut raw = raw_two_state();
        raw.transition = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.2, 0.8]);
        assert!(matches!(
            validate_mdp(raw),
            Err(MdpError::NonStochasticRow { row: 0, .. })
        ));
    }

    #[test]
    fn rejects_bad_reward_discount_and_initial() {
        let mut raw = raw_two_state();
        raw.rewards[1] = 1.5;
        assert!(matches!(validate_mdp(raw), Err(MdpError::RewardOutOfRange { state: 1, .. })));

        for gamma in [0.0, 1.0, -0.1, f64::NAN] {
            let mut raw = raw_two_state();
            raw.gamma = gamma;
            assert!(matches!(validate_mdp(raw), Err(MdpError::DiscountOutOfRange(_))));
        }

        let mut raw = raw_two_state();
        raw.initial = DVector::from_vec(vec![0.7, 0.7]);
        assert!(matches!(validate_mdp(raw), Err(MdpError::BadInitialDistribution { .. })));
    }

    #[test]
    fn two_state_stationary_quantities() {
        let spec = validate_mdp(raw_two_state()).unwrap();
        let analysis = stationary_analysis(&spec, &FeatureMap::identity(2)).unwrap();
        // μ·0.1 = (1 − μ)·0.2
        assert_relative_eq!(analysis.mu[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(analysis.mu[1], 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(analysis.omega, 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(analysis.lambda2_mod, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn periodic_chain_is_not_ergodic() {
        let spec = MdpSpec::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            0.9,
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        assert!(matches!(
            stationary_analysis(&spec, &FeatureMap::identity(2)),
            Err(MdpError::ChainNotErgodic(m)) if (m - 1.0).abs() < 1e-12
        ));
    }

    #[test]
    fn reducible_chain_is_not_ergodic() {
        let spec = MdpSpec::new(
            DMatrix::identity(3, 3),
            DVector::from_vec(vec![0.0, 0.5, 1.0]),
            0.9,
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
        )
        .unwrap();
        assert!(matches!(
            stationary_analysis(&spec, &FeatureMap::identity(3)),
            Err(MdpError::ChainNotErgodic(_))
        ));
    }

    #[test]
    fn feature_invariants_enforced() {
        let too_long = DMatrix::from_row_slice(2, 1, &[1.5, 0.1]);
        assert!(matches!(
            FeatureMap::new(too_long),
            Err(MdpError::FeatureNormExceeded { row: 0, .. })
        ));
        let collinear = DMatrix::from_row_slice(3, 2, &[0.5, 0.5, 0.2, 0.2, 0.1, 0.1]);
        assert!(matches!(FeatureMap::new(collinear), Err(MdpError::RankDeficient(_))));
        let too_wide = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert!(matches!(FeatureMap::new(too_wide), Err(MdpError::DimensionMismatch(_))));
    }

    #[test]
    fn generator_is_deterministic() {
        let a = make_random_mdp(7, 5, 2, GeneratorFamily::DenseDirichlet).unwrap();
        let b = make_random_mdp(7, 5, 2, GeneratorFamily::DenseDirichlet).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn garnet_rows_have_exact_branching() {
        let (spec, _) = make_random_mdp(7, 5, 2, GeneratorFamily::Garnet { branching: 2 }).unwrap();
        for s in 0..5 {
            let nonzeros = spec.transition().row(s).iter().filter(|&&x| x > 0.0).count();
            assert_eq!(nonzeros, 2, "row {s}");
        }
    }

    #[test]
    fn chain_family_validates() {
        let (spec, features) = make_random_mdp(1, 8, 3, GeneratorFamily::Chain).unwrap();
        let raw = RawMdp {
            transition: spec.transition().clone(),
            rewards: spec.rewards().clone(),
            gamma: spec.gamma(),
            initial: spec.initial().clone(),
        };
        assert!(validate_mdp(raw).is_ok());
        let max_norm = (0..8).map(|s| features.matrix().row(s).norm()).fold(0.0, f64::max);
        assert_relative_eq!(max_norm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn family_parsing() {
        assert_eq!("chain".parse::<GeneratorFamily>().unwrap(), GeneratorFamily::Chain);
        assert_eq!(
            "garnet(3)".parse::<GeneratorFamily>().unwrap(),
            GeneratorFamily::Garnet { branching: 3 }
        );
        assert_eq!(
            "garnet:2".parse::<GeneratorFamily>().unwrap(),
            GeneratorFamily::Garnet { branching: 2 }
        );
        assert!(matches!(
            "erdos-renyi".parse::<GeneratorFamily>(),
            Err(MdpError::UnknownFamily(_))
        ));
        assert!("garnet(0)".parse::<GeneratorFamily>().is_err());
    }

    #[test]
    fn invalid_generator_dimensions() {
        assert!(matches!(
            make_random_mdp(0, 3, 4, GeneratorFamily::Chain),
            Err(MdpError::InvalidDimensions { n: 3, d: 4 })
        ));
    }

    #[test]
    fn power_iteration_agrees_with_null_space() {
        for seed in 0..20 {
            let family = match seed % 3 {
                0 => GeneratorFamily::DenseDirichlet,
                1 => GeneratorFamily::Chain,
                _ => GeneratorFamily::Garnet { branching: 3 },
            };
            let n = 2 + (seed as usize % 12);
            let (spec, features) = make_random_mdp(seed, n, 1, family).unwrap();
            let analysis = stationary_analysis(&spec, &features).unwrap();
            let power = stationary_by_power_iteration(&spec, 1e-15, 2_000_000).unwrap();
            assert!((power - &analysis.mu).amax() <= 1e-8, "seed {seed}");
        }
    }

    #[test]
    fn document_round_trip() {
        let (spec, features) = make_random_mdp(3, 6, 3, GeneratorFamily::DenseDirichlet).unwrap();
        let doc = MdpDocument::from_parts(&spec, &features);
        let text = serde_json::to_string(&doc).unwrap();
        let back: MdpDocument = serde_json::from_str(&text).unwrap();
        let (spec2, features2) = back.into_parts().unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-15 * a.abs().max(b.abs());
        assert!(spec.transition().iter().zip(spec2.transition().iter()).all(|(a, b)| rel(*a, *b)));
        assert!(features.matrix().iter().zip(features2.matrix().iter()).all(|(a, b)| rel(*a, *b)));
        assert_eq!(spec.gamma(), spec2.gamma());
    }

    #[test]
    fn document_rejects_unknown_keys() {
        let text = r#"{"n":1,"P":[1.0],"r":[1.0],"gamma":0.5,"mu0":[1.0],"Phi":[1.0],"extra":1}"#;
        assert!(serde_json::from_str::<MdpDocument>(text).is_err());
    }
}
