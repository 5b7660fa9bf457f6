//! Exact ground truth: fixed points, the noise level `σ²`, the proof
//! constants of the Markovian analysis and explicit theorem right-hand sides.
//!
//! Every expectation over a transition `(s, s′)` is an exact double sum
//! weighted by `μ(s)·P(s, s′)`; nothing here is sampled.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{FeatureMap, Problem};
use crate::sampling::MixingEnvelope;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("fixed-point system is singular (λ = {lambda})")]
    SingularSystem { lambda: f64 },
    #[error("regularization strength must be finite and non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("theorem `{0}` needs a mixing profile")]
    MissingMixingProfile(Theorem),
    #[error("unsupported theorem `{0}`")]
    UnsupportedTheorem(String),
    #[error("horizon T = {horizon} is invalid for `{theorem}` (needs T >= {min})")]
    InvalidHorizon {
        theorem: Theorem,
        horizon: u64,
        min: u64,
    },
    #[error("mixing envelope must have 0 < ρ < 1 and m > 0 (m = {m}, ρ = {rho})")]
    InvalidMixing { m: f64, rho: f64 },
}

/// Fixed points of standard and regularized TD at one `λ`, plus `σ²` and `ζ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoints {
    pub w_star: DVector<f64>,
    pub w_reg_star: DVector<f64>,
    pub lambda: f64,
    pub sigma_sq: f64,
    pub zeta: f64,
}

/// `g(w) = b − A w` with `A = ΦᵀD(I − γP)Φ + λI` and `b = ΦᵀD r`.
///
/// Algebraically identical to [`mean_path_direction`] but O(d²) per call,
/// which is what the mean-path engine and the lemma checks use in hot loops.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPathOperator {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lambda: f64,
}

impl MeanPathOperator {
    pub fn new(problem: &Problem, lambda: f64) -> Self {
        let spec = problem.spec();
        let phi = problem.features().matrix();
        let n = spec.n();
        let d_mat = problem.analysis().d_matrix();
        let resolvent = DMatrix::<f64>::identity(n, n) - spec.transition() * spec.gamma();
        let mut a = phi.transpose() * &d_mat * resolvent * phi;
        for i in 0..a.nrows() {
            a[(i, i)] += lambda;
        }
        let b = phi.transpose() * (&d_mat * spec.rewards());
        Self { a, b, lambda }
    }

    pub fn direction(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.b - &self.a * w
    }

    pub fn solve(&self) -> Option<DVector<f64>> {
        self.a.clone().lu().solve(&self.b)
    }
}

fn check_lambda(lambda: f64) -> Result<(), OracleError> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(OracleError::NegativeLambda(lambda))
    }
}

fn check_dim(problem: &Problem, w: &DVector<f64>) -> Result<(), OracleError> {
    if w.len() == problem.d() {
        Ok(())
    } else {
        Err(OracleError::DimensionMismatch(format!(
            "w has {} entries, features have d = {}",
            w.len(),
            problem.d()
        )))
    }
}

/// `φ(s)ᵀw`.
#[inline]
pub fn phi_dot(features: &FeatureMap, s: usize, w: &DVector<f64>) -> f64 {
    let phi = features.matrix();
    let mut acc = 0.0;
    for j in 0..phi.ncols() {
        acc += phi[(s, j)] * w[j];
    }
    acc
}

/// Per-transition direction `g^r_t(w) = (r + γφ(s′)ᵀw − φ(s)ᵀw)φ(s) − λw`.
pub fn sample_direction(
    features: &FeatureMap,
    gamma: f64,
    transition: (usize, f64, usize),
    w: &DVector<f64>,
    lambda: f64,
) -> DVector<f64> {
    let (s, reward, s_next) = transition;
    let td_error = reward + gamma * phi_dot(features, s_next, w) - phi_dot(features, s, w);
    features.row(s) * td_error - w * lambda
}

/// Visits every `(s, s′)` with its weight `dist(s)·P(s, s′)`, skipping zero weights.
fn for_each_pair(problem: &Problem, dist: &DVector<f64>, mut f: impl FnMut(f64, usize, usize)) {
    let p = problem.spec().transition();
    for s in 0..problem.n() {
        if dist[s] == 0.0 {
            continue;
        }
        for s_next in 0..problem.n() {
            let weight = dist[s] * p[(s, s_next)];
            if weight != 0.0 {
                f(weight, s, s_next);
            }
        }
    }
}

/// `E[g^r_t(w)]` for `s ~ dist`, `s′ ~ P(·|s)`, by exact enumeration.
pub fn expected_direction(
    problem: &Problem,
    dist: &DVector<f64>,
    w: &DVector<f64>,
    lambda: f64,
) -> DVector<f64> {
    let rewards = problem.spec().rewards();
    let gamma = problem.gamma();
    let mut acc = DVector::zeros(problem.d());
    for_each_pair(problem, dist, |weight, s, s_next| {
        let g = sample_direction(problem.features(), gamma, (s, rewards[s], s_next), w, lambda);
        acc.axpy(weight, &g, 1.0);
    });
    acc
}

/// `E‖g^r_t(w) − center‖²` for `s ~ dist`, by exact enumeration.
pub fn expected_sq_deviation(
    problem: &Problem,
    dist: &DVector<f64>,
    w: &DVector<f64>,
    lambda: f64,
    center: &DVector<f64>,
) -> f64 {
    let rewards = problem.spec().rewards();
    let gamma = problem.gamma();
    let mut acc = 0.0;
    for_each_pair(problem, dist, |weight, s, s_next| {
        let g = sample_direction(problem.features(), gamma, (s, rewards[s], s_next), w, lambda);
        acc += weight * (g - center).norm_squared();
    });
    acc
}

/// `E‖g^r_t(w)‖²` for `s ~ dist`.
pub fn expected_sq_norm(problem: &Problem, dist: &DVector<f64>, w: &DVector<f64>, lambda: f64) -> f64 {
    expected_sq_deviation(problem, dist, w, lambda, &DVector::zeros(problem.d()))
}

/// Mean-path direction `g^r(w) = Σ μ_π(s)P(s,s′) g^r_t(w)`, by enumeration.
pub fn mean_path_direction(
    problem: &Problem,
    w: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>, OracleError> {
    check_dim(problem, w)?;
    check_lambda(lambda)?;
    Ok(expected_direction(problem, &problem.analysis().mu, w, lambda))
}

/// Solves `(ΦᵀD(I − γP)Φ + λI) w = ΦᵀD r` for `λ = 0` and the given `λ`.
pub fn solve_fixed_point(problem: &Problem, lambda: f64) -> Result<FixedPoints, OracleError> {
    check_lambda(lambda)?;
    let w_star = MeanPathOperator::new(problem, 0.0)
        .solve()
        .ok_or(OracleError::SingularSystem { lambda: 0.0 })?;
    let w_reg_star = if lambda == 0.0 {
        w_star.clone()
    } else {
        MeanPathOperator::new(problem, lambda)
            .solve()
            .ok_or(OracleError::SingularSystem { lambda })?
    };
    let sigma_sq = expected_sq_norm(problem, &problem.analysis().mu, &w_star, 0.0);
    let zeta = w_reg_star.norm().max(1.0);
    Ok(FixedPoints {
        w_star,
        w_reg_star,
        lambda,
        sigma_sq,
        zeta,
    })
}

/// Constants of the Markovian analysis that depend on `λ` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProofConstants {
    pub c1_sq: f64,
    pub c1: f64,
    pub c2: f64,
    pub big_c1: f64,
    pub big_c2: f64,
    pub big_c: f64,
    pub c_prime: f64,
}

impl ProofConstants {
    pub fn new(lambda: f64) -> Self {
        let two = 2.0 + lambda;
        let three = 3.0 + lambda;
        let c1_sq = 2560.0 * two * two;
        let c1 = c1_sq.sqrt();
        let c2 = 4.0 * two * two + 4.0 * three * three + 2.0 * two * two;
        let big_c1 = c1 / 2.0;
        let big_c2 = c1 * c2 / 2.0;
        Self {
            c1_sq,
            c1,
            c2,
            big_c1,
            big_c2,
            big_c: big_c1 + 3.0 + 2.0 * big_c2,
            c_prime: 10.0 * three * three,
        }
    }

    /// `C ln²T + C′`, the bracket shared by the step-size conditions and `C(T)`.
    pub fn bracket(&self, horizon: u64) -> f64 {
        let ln_t = (horizon as f64).ln();
        self.big_c * ln_t * ln_t + self.c_prime
    }
}

/// Mixing-dependent constants: `a`, `b`, `B(τ_mix)` and `C(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegConstants {
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
    pub proof: ProofConstants,
    pub b_taumix: f64,
    pub c_t: f64,
}

/// `a = 1/ln(1/ρ)` and `b = ln(2(2+λ)m)/ln(1/ρ)`.
pub fn mixing_ab(lambda: f64, envelope: &MixingEnvelope) -> (f64, f64) {
    let log_inv_rho = (1.0 / envelope.rho).ln();
    (
        1.0 / log_inv_rho,
        (2.0 * (2.0 + lambda) * envelope.m).ln() / log_inv_rho,
    )
}

/// `B(τ_mix) = exp(2(2+λ)max{a,b})·(‖w₁ − w_r*‖ + ζ)²` and friends.
pub fn reg_constants(
    lambda: f64,
    envelope: &MixingEnvelope,
    horizon: u64,
    w1_dist: f64,
    zeta: f64,
) -> Result<RegConstants, OracleError> {
    check_lambda(lambda)?;
    if !(envelope.rho > 0.0 && envelope.rho < 1.0 && envelope.m > 0.0) {
        return Err(OracleError::InvalidMixing {
            m: envelope.m,
            rho: envelope.rho,
        });
    }
    if horizon == 0 {
        return Err(OracleError::InvalidHorizon {
            theorem: Theorem::RegMarkov,
            horizon,
            min: 1,
        });
    }
    let (a, b) = mixing_ab(lambda, envelope);
    let proof = ProofConstants::new(lambda);
    let radius = w1_dist + zeta;
    let b_taumix = (2.0 * (2.0 + lambda) * a.max(b)).exp() * radius * radius;
    Ok(RegConstants {
        lambda,
        a,
        b,
        proof,
        b_taumix,
        c_t: 2.0 * proof.bracket(horizon),
    })
}

/// Theorems with an explicit right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    /// Constant step, mean-path updates.
    ConstantMean,
    /// Constant step, i.i.d. samples.
    ConstantIid,
    /// Exponential schedule, i.i.d. samples.
    ExpIid,
    /// Exponential schedule, Markovian samples, standard TD.
    ExpMarkov,
    /// Exponential schedule, Markovian samples, regularized TD.
    RegMarkov,
}

impl Theorem {
    pub const ALL: [Theorem; 5] = [
        Theorem::ConstantMean,
        Theorem::ConstantIid,
        Theorem::ExpIid,
        Theorem::ExpMarkov,
        Theorem::RegMarkov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Theorem::ConstantMean => "constant-mean",
            Theorem::ConstantIid => "constant-iid",
            Theorem::ExpIid => "exp-iid",
            Theorem::ExpMarkov => "exp-markov",
            Theorem::RegMarkov => "reg-markov",
        }
    }

    pub fn needs_mixing(self) -> bool {
        matches!(self, Theorem::ExpMarkov | Theorem::RegMarkov)
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Theorem {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Theorem::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| OracleError::UnsupportedTheorem(s.to_string()))
    }
}

/// Everything a bound needs. `eta0` is the constant step for the
/// constant-step theorems and the initial step otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub horizon: u64,
    pub eta0: f64,
    pub gamma: f64,
    pub omega: f64,
    pub sigma_sq: f64,
    /// `‖w₁ − w*‖²`
    pub init_error_sq: f64,
    /// `‖w₁ − w_r*‖²` at `lambda`
    pub init_reg_error_sq: f64,
    pub w_star_norm_sq: f64,
    pub lambda: f64,
    /// `max{1, ‖w*‖}`
    pub zeta_star: f64,
    /// `max{1, ‖w_r*‖}` at `lambda`
    pub zeta_reg: f64,
    pub mixing: Option<MixingEnvelope>,
}

impl BoundInputs {
    pub fn new(
        problem: &Problem,
        fixed: &FixedPoints,
        w1: &DVector<f64>,
        eta0: f64,
        horizon: u64,
        mixing: Option<MixingEnvelope>,
    ) -> Self {
        Self {
            horizon,
            eta0,
            gamma: problem.gamma(),
            omega: problem.omega(),
            sigma_sq: fixed.sigma_sq,
            init_error_sq: (w1 - &fixed.w_star).norm_squared(),
            init_reg_error_sq: (w1 - &fixed.w_reg_star).norm_squared(),
            w_star_norm_sq: fixed.w_star.norm_squared(),
            lambda: fixed.lambda,
            zeta_star: fixed.w_star.norm().max(1.0),
            zeta_reg: fixed.zeta,
            mixing,
        }
    }
}

/// Two terms whose sum is the bound: initialization forgetting plus noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundTerms {
    pub bias: f64,
    pub variance: f64,
    /// Distance between the regularized and standard fixed points (reg-markov only).
    pub regularization: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.bias + self.variance + self.regularization
    }
}

/// `ln²T/(α²T)` with `α = (1/T)^{1/T}`.
pub fn log_sq_rate(horizon: u64) -> f64 {
    let t = horizon as f64;
    let ln_t = t.ln();
    let alpha = (-ln_t / t).exp();
    ln_t * ln_t / (alpha * alpha * t)
}

fn exp_schedule_terms(inp: &BoundInputs, theorem: Theorem) -> Result<(f64, f64, f64), OracleError> {
    if inp.horizon < 2 {
        return Err(OracleError::InvalidHorizon {
            theorem,
            horizon: inp.horizon,
            min: 2,
        });
    }
    let t = inp.horizon as f64;
    let ln_t = t.ln();
    let alpha = (-ln_t / t).exp();
    let kappa = inp.omega * (1.0 - inp.gamma);
    Ok((kappa, alpha * t / ln_t, log_sq_rate(inp.horizon)))
}

/// Explicit right-hand side of `theorem`, split into its terms.
///
/// The Markovian forms carry the full proof constants (`C` is in the
/// thousands), so they are loose by orders of magnitude at desk scale.
pub fn bound_terms(theorem: Theorem, inp: &BoundInputs) -> Result<BoundTerms, OracleError> {
    let e = std::f64::consts::E;
    let kappa = inp.omega * (1.0 - inp.gamma);
    let terms = match theorem {
        Theorem::ConstantMean => BoundTerms {
            bias: (-inp.eta0 * kappa * inp.horizon as f64).exp() * inp.init_error_sq,
            variance: 0.0,
            regularization: 0.0,
        },
        Theorem::ConstantIid => BoundTerms {
            bias: (-inp.eta0 * kappa * inp.horizon as f64).exp() * inp.init_error_sq,
            variance: inp.eta0 * 2.0 * inp.sigma_sq / kappa,
            regularization: 0.0,
        },
        Theorem::ExpIid => {
            let (kappa, decay, rate) = exp_schedule_terms(inp, theorem)?;
            BoundTerms {
                bias: e * inp.init_error_sq * (-inp.eta0 * kappa * decay).exp(),
                variance: 8.0 * inp.sigma_sq / (e * kappa * kappa) * rate,
                regularization: 0.0,
            }
        }
        Theorem::ExpMarkov => {
            let envelope = inp.mixing.ok_or(OracleError::MissingMixingProfile(theorem))?;
            let (kappa, decay, rate) = exp_schedule_terms(inp, theorem)?;
            let reg = reg_constants(
                0.0,
                &envelope,
                inp.horizon,
                inp.init_error_sq.sqrt(),
                inp.zeta_star,
            )?;
            BoundTerms {
                bias: e * inp.init_error_sq * (-inp.eta0 * kappa * decay).exp(),
                variance: 8.0 * reg.c_t * reg.b_taumix / (e * kappa * kappa) * rate,
                regularization: 0.0,
            }
        }
        Theorem::RegMarkov => {
            let envelope = inp.mixing.ok_or(OracleError::MissingMixingProfile(theorem))?;
            let (kappa, decay, rate) = exp_schedule_terms(inp, theorem)?;
            let reg = reg_constants(
                inp.lambda,
                &envelope,
                inp.horizon,
                inp.init_reg_error_sq.sqrt(),
                inp.zeta_reg,
            )?;
            BoundTerms {
                bias: 2.0 * e * inp.init_reg_error_sq * (-2.0 * inp.eta0 * kappa * decay).exp(),
                variance: 8.0 * reg.c_t * reg.b_taumix / (e * e * kappa * kappa) * rate,
                regularization: 2.0 * inp.lambda * inp.lambda * inp.w_star_norm_sq
                    / (kappa * kappa),
            }
        }
    };
    Ok(terms)
}

/// Explicit right-hand side of `theorem` as one number.
pub fn eval_bound(theorem: Theorem, inp: &BoundInputs) -> Result<f64, OracleError> {
    bound_terms(theorem, inp).map(|t| t.total())
}

/// Exportable summary of the ground truth for one instance.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    pub mu_pi: Vec<f64>,
    pub omega: f64,
    pub lambda2_mod: f64,
    pub lambda: f64,
    pub w_star: Vec<f64>,
    pub w_reg_star: Vec<f64>,
    pub sigma_sq: f64,
    pub zeta: f64,
    pub horizon: u64,
    pub mixing: Option<MixingEnvelope>,
    /// Theorem name to `{eta0, bound}` evaluated at that theorem's default step.
    pub bounds: BTreeMap<String, ReportedBound>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReportedBound {
    pub eta0: f64,
    pub bound: f64,
    pub bias: f64,
    pub variance: f64,
    pub regularization: f64,
}

/// Builds an [`OracleReport`] at horizon `horizon`, starting from `w₁ = 0`.
/// Theorems whose inputs are unavailable (no mixing envelope, `λ = 0` for
/// reg-markov) are left out of `bounds`.
pub fn oracle_report(
    problem: &Problem,
    lambda: f64,
    horizon: u64,
    mixing: Option<MixingEnvelope>,
) -> Result<OracleReport, OracleError> {
    let fixed = solve_fixed_point(problem, lambda)?;
    let w1 = DVector::zeros(problem.d());
    let mut bounds = BTreeMap::new();
    for theorem in Theorem::ALL {
        let probe = BoundInputs::new(problem, &fixed, &w1, 1.0, horizon, mixing);
        let Ok(eta0) = crate::schedules::default_eta0(theorem, &(&probe).into()) else {
            continue;
        };
        let inputs = BoundInputs { eta0, ..probe };
        if let Ok(terms) = bound_terms(theorem, &inputs) {
            bounds.insert(
                theorem.name().to_string(),
                ReportedBound {
                    eta0,
                    bound: terms.total(),
                    bias: terms.bias,
                    variance: terms.variance,
                    regularization: terms.regularization,
                },
            );
        }
    }
    Ok(OracleReport {
        n: problem.n(),
        d: problem.d(),
        gamma: problem.gamma(),
        mu_pi: problem.analysis().mu.as_slice().to_vec(),
        omega: problem.omega(),
        lambda2_mod: problem.analysis().lambda2_mod,
        lambda,
        w_star: fixed.w_star.as_slice().to_vec(),
        w_reg_star: fixed.w_reg_star.as_slice().to_vec(),
        sigma_sq: fixed.sigma_sq,
        zeta: fixed.zeta,
        horizon,
        mixing,
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_random_mdp, reference_two_state, single_state, GeneratorFamily};
    use approx::assert_relative_eq;

    fn reference() -> Problem {
        let (spec, features) = reference_two_state();
        Problem::new(spec, features).unwrap()
    }

    fn single() -> Problem {
        let (spec, features) = single_state();
        Problem::new(spec, features).unwrap()
    }

    #[test]
    fn single_state_fixed_points() {
        let p = single();
        let fp = solve_fixed_point(&p, 0.0).unwrap();
        assert_relative_eq!(fp.w_star[0], 2.0, epsilon = 1e-14);
        // Deterministic single state: g_t(w*) = 0 for the only transition.
        assert_eq!(fp.sigma_sq, 0.0);
        let fp = solve_fixed_point(&p, 0.5).unwrap();
        assert_relative_eq!(fp.w_reg_star[0], 1.0, epsilon = 1e-14);
        assert_eq!(fp.zeta, 1.0);
    }

    #[test]
    fn reference_fixed_point_matches_dense_value_solve() {
        let p = reference();
        let fp = solve_fixed_point(&p, 0.0).unwrap();
        // Tabular features: w* = V = (I − γP)⁻¹ r, solved here by Cramer's rule.
        let (a, b, c, d) = (1.0 - 0.81, -0.09, -0.18, 1.0 - 0.72);
        let det = a * d - b * c;
        let v0 = (d * 1.0 - b * 0.0) / det;
        let v1 = (a * 0.0 - c * 1.0) / det;
        assert_relative_eq!(fp.w_star[0], v0, epsilon = 1e-10);
        assert_relative_eq!(fp.w_star[1], v1, epsilon = 1e-10);
    }

    #[test]
    fn mean_path_at_zero_is_phi_d_r() {
        let p = reference();
        let g = mean_path_direction(&p, &DVector::zeros(2), 0.0).unwrap();
        assert_relative_eq!(g[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(g[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn fixed_point_residuals_vanish() {
        for seed in 0..10 {
            let (spec, features) = make_random_mdp(seed, 12, 4, GeneratorFamily::DenseDirichlet).unwrap();
            let p = Problem::new(spec, features).unwrap();
            let fp = solve_fixed_point(&p, 0.3).unwrap();
            assert!(mean_path_direction(&p, &fp.w_star, 0.0).unwrap().norm() <= 1e-10);
            assert!(mean_path_direction(&p, &fp.w_reg_star, 0.3).unwrap().norm() <= 1e-10);
        }
    }

    #[test]
    fn operator_matches_enumeration() {
        let (spec, features) = make_random_mdp(5, 9, 3, GeneratorFamily::Chain).unwrap();
        let p = Problem::new(spec, features).unwrap();
        let op = MeanPathOperator::new(&p, 0.2);
        let w = DVector::from_vec(vec![0.3, -1.2, 2.5]);
        let diff = op.direction(&w) - mean_path_direction(&p, &w, 0.2).unwrap();
        assert!(diff.amax() <= 1e-12);
    }

    #[test]
    fn proof_constants_at_zero_and_one() {
        let c = ProofConstants::new(0.0);
        assert_eq!(c.c1_sq, 10240.0);
        assert_eq!(c.c_prime, 90.0);
        assert_eq!(c.c2, 16.0 + 36.0 + 8.0);
        let c = ProofConstants::new(1.0);
        assert_eq!(c.c_prime, 160.0);
    }

    #[test]
    fn reg_constants_closed_forms() {
        let env = MixingEnvelope { m: 1.0, rho: 0.7 };
        let rc = reg_constants(0.0, &env, 100, 0.5, 1.0).unwrap();
        let l = (1.0f64 / 0.7).ln();
        assert_relative_eq!(rc.a, 1.0 / l, max_relative = 1e-15);
        assert_relative_eq!(rc.b, 4.0f64.ln() / l, max_relative = 1e-15);
        assert_relative_eq!(rc.b_taumix, (4.0 * rc.b).exp() * 2.25, max_relative = 1e-14);
        assert!(matches!(
            reg_constants(0.0, &MixingEnvelope { m: 1.0, rho: 1.0 }, 100, 0.5, 1.0),
            Err(OracleError::InvalidMixing { .. })
        ));
    }

    #[test]
    fn constant_mean_at_zero_horizon_is_initial_error() {
        let p = reference();
        let fp = solve_fixed_point(&p, 0.0).unwrap();
        let w1 = DVector::zeros(2);
        let inp = BoundInputs::new(&p, &fp, &w1, 0.0125, 0, None);
        assert_eq!(eval_bound(Theorem::ConstantMean, &inp).unwrap(), inp.init_error_sq);
    }

    #[test]
    fn exp_iid_without_noise_is_pure_bias() {
        let p = single();
        let fp = solve_fixed_point(&p, 0.0).unwrap();
        let inp = BoundInputs::new(&p, &fp, &DVector::zeros(1), 0.0625, 1000, None);
        let terms = bound_terms(Theorem::ExpIid, &inp).unwrap();
        assert_eq!(terms.variance, 0.0);
        let t = 1000.0f64;
        let alpha = (1.0 / t).powf(1.0 / t);
        let expected = std::f64::consts::E * 4.0 * (-0.0625 * 0.5 * alpha * t / t.ln()).exp();
        assert_relative_eq!(terms.total(), expected, max_relative = 1e-13);
    }

    #[test]
    fn markov_bounds_require_mixing() {
        let p = reference();
        let fp = solve_fixed_point(&p, 0.1).unwrap();
        let inp = BoundInputs::new(&p, &fp, &DVector::zeros(2), 0.01, 1024, None);
        assert_eq!(
            eval_bound(Theorem::ExpMarkov, &inp),
            Err(OracleError::MissingMixingProfile(Theorem::ExpMarkov))
        );
        assert!(matches!(
            "exp-sgd".parse::<Theorem>(),
            Err(OracleError::UnsupportedTheorem(_))
        ));
    }

    #[test]
    fn theorem_names_round_trip() {
        for t in Theorem::ALL {
            assert_eq!(t.name().parse::<Theorem>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{}\"", t.name()));
        }
    }
}
