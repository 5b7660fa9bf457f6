//! Step-size schedules.
//!
//! The exponential schedule is `η_t = η₀ α^t` with `α = (1/T)^{1/T}`, so it
//! decays from `η₀` to `η₀/T` over the horizon. It is evaluated in log space
//! as `η₀ exp(−(t/T) ln T)`, which avoids drift from repeated powers.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{BoundInputs, ProofConstants, Theorem};

/// Initial step used by rate-slope and convergence runs when the
/// theorem-prescribed value is too small to move at desk-scale `T`.
pub const PRACTICAL_ETA0: f64 = 0.5;

/// `C″` in the regularized step-size cap `η₀ ≤ λ/C″`.
pub const REG_STEP_CAP: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("iteration {t} is outside [0, {horizon}]")]
    IndexOutOfHorizon { t: u64, horizon: u64 },
    #[error("initial step size must be finite and positive, got {0}")]
    InvalidEta0(f64),
    #[error("horizon must be at least {min}, got {horizon}")]
    InvalidHorizon { horizon: u64, min: u64 },
    #[error("invalid schedule parameter: {0}")]
    InvalidParameter(String),
    #[error("default step size for `{0}` needs ω")]
    MissingOmega(Theorem),
    #[error("default step size for `{0}` needs λ > 0")]
    MissingLambda(Theorem),
}

/// What the initial step of an exponential-scaled schedule is divided by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Divisor {
    Value(f64),
    /// `ln T`
    LnT,
    /// `√T ln T`
    SqrtTLnT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `η₀`
    Constant,
    /// `η₀/√T`, constant over the run.
    #[serde(rename = "inv-sqrt-T")]
    InvSqrtT,
    /// `η₀/(t+1)^z`
    Poly { z: f64 },
    /// `η₀/(1 + ωt)`
    InvOmegaT { omega: f64 },
    /// `η₀ (1/T)^{t/T}`
    Exponential,
    /// `(η₀/divisor) (1/T)^{t/T}`
    ExponentialScaled { divisor: Divisor },
}

impl ScheduleKind {
    pub fn name(&self) -> String {
        match self {
            ScheduleKind::Constant => "constant".into(),
            ScheduleKind::InvSqrtT => "inv-sqrt-T".into(),
            ScheduleKind::Poly { z } => format!("poly({z})"),
            ScheduleKind::InvOmegaT { omega } => format!("inv-omega-t({omega})"),
            ScheduleKind::Exponential => "exponential".into(),
            ScheduleKind::ExponentialScaled { divisor } => match divisor {
                Divisor::Value(v) => format!("exponential-scaled({v})"),
                Divisor::LnT => "exponential-scaled(lnT)".into(),
                Divisor::SqrtTLnT => "exponential-scaled(sqrtT*lnT)".into(),
            },
        }
    }

    pub fn is_exponential(&self) -> bool {
        matches!(
            self,
            ScheduleKind::Exponential | ScheduleKind::ExponentialScaled { .. }
        )
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// A schedule bound to a horizon. Immutable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    kind: ScheduleKind,
    eta0: f64,
    horizon: u64,
    /// Effective leading factor after divisors are applied.
    scale: f64,
    ln_t: f64,
}

impl Schedule {
    pub fn new(kind: ScheduleKind, eta0: f64, horizon: u64) -> Result<Self, ScheduleError> {
        if !(eta0.is_finite() && eta0 > 0.0) {
            return Err(ScheduleError::InvalidEta0(eta0));
        }
        if horizon == 0 {
            return Err(ScheduleError::InvalidHorizon { horizon, min: 1 });
        }
        let t = horizon as f64;
        let ln_t = t.ln();
        let scale = match kind {
            ScheduleKind::Constant | ScheduleKind::Exponential => eta0,
            ScheduleKind::InvSqrtT => eta0 / t.sqrt(),
            ScheduleKind::Poly { z } => {
                if !(z.is_finite() && z >= 0.0) {
                    return Err(ScheduleError::InvalidParameter(format!("poly exponent {z}")));
                }
                eta0
            }
            ScheduleKind::InvOmegaT { omega } => {
                if !(omega.is_finite() && omega > 0.0) {
                    return Err(ScheduleError::InvalidParameter(format!("omega {omega}")));
                }
                eta0
            }
            ScheduleKind::ExponentialScaled { divisor } => {
                let div = match divisor {
                    Divisor::Value(v) => v,
                    Divisor::LnT => ln_t,
                    Divisor::SqrtTLnT => t.sqrt() * ln_t,
                };
                if !(div.is_finite() && div > 0.0) {
                    return Err(ScheduleError::InvalidParameter(format!(
                        "divisor {div} at T = {horizon}"
                    )));
                }
                eta0 / div
            }
        };
        Ok(Self {
            kind,
            eta0,
            horizon,
            scale,
            ln_t,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// `α = (1/T)^{1/T}`.
    pub fn alpha(&self) -> f64 {
        (-self.ln_t / self.horizon as f64).exp()
    }

    pub fn step_size(&self, t: u64) -> Result<f64, ScheduleError> {
        if t > self.horizon {
            return Err(ScheduleError::IndexOutOfHorizon {
                t,
                horizon: self.horizon,
            });
        }
        Ok(self.eta(t))
    }

    /// Unchecked variant for hot loops whose index is already in range.
    #[inline]
    pub(crate) fn eta(&self, t: u64) -> f64 {
        let t = t as f64;
        match self.kind {
            ScheduleKind::Constant | ScheduleKind::InvSqrtT => self.scale,
            ScheduleKind::Poly { z } => self.scale / (t + 1.0).powf(z),
            ScheduleKind::InvOmegaT { omega } => self.scale / (1.0 + omega * t),
            ScheduleKind::Exponential | ScheduleKind::ExponentialScaled { .. } => {
                self.scale * (-(t / self.horizon as f64) * self.ln_t).exp()
            }
        }
    }
}

/// What a theorem's default initial step depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eta0Inputs {
    pub gamma: f64,
    pub omega: Option<f64>,
    pub lambda: Option<f64>,
    pub horizon: u64,
}

impl From<&BoundInputs> for Eta0Inputs {
    fn from(inp: &BoundInputs) -> Self {
        Self {
            gamma: inp.gamma,
            omega: Some(inp.omega),
            lambda: Some(inp.lambda),
            horizon: inp.horizon,
        }
    }
}

/// Prescribed initial (or constant) step for `theorem`.
///
/// For reg-markov this is
/// `min{λ/([C ln²T + C′] + 8 + 2λ²), 1/(2λ), (1−γ)/(16 ln T), λ/C″}`,
/// i.e. the stated value together with the caps its proof relies on.
pub fn default_eta0(theorem: Theorem, inp: &Eta0Inputs) -> Result<f64, ScheduleError> {
    let one_minus_gamma = 1.0 - inp.gamma;
    match theorem {
        Theorem::ConstantMean | Theorem::ConstantIid | Theorem::ExpIid => Ok(one_minus_gamma / 8.0),
        Theorem::ExpMarkov => {
            let omega = inp
                .omega
                .filter(|w| w.is_finite() && *w > 0.0)
                .ok_or(ScheduleError::MissingOmega(theorem))?;
            if inp.horizon == 0 {
                return Err(ScheduleError::InvalidHorizon { horizon: 0, min: 1 });
            }
            let bracket = ProofConstants::new(0.0).bracket(inp.horizon);
            Ok(one_minus_gamma * omega / (2.0 * bracket))
        }
        Theorem::RegMarkov => {
            let lambda = inp
                .lambda
                .filter(|l| l.is_finite() && *l > 0.0)
                .ok_or(ScheduleError::MissingLambda(theorem))?;
            if inp.horizon < 2 {
                return Err(ScheduleError::InvalidHorizon {
                    horizon: inp.horizon,
                    min: 2,
                });
            }
            let bracket = ProofConstants::new(lambda).bracket(inp.horizon);
            let ln_t = (inp.horizon as f64).ln();
            let stated = lambda / (bracket + 8.0 + 2.0 * lambda * lambda);
            Ok(stated
                .min(1.0 / (2.0 * lambda))
                .min(one_minus_gamma / (16.0 * ln_t))
                .min(lambda / REG_STEP_CAP))
        }
    }
}

/// `Σ_{t=1}^T α^t` in closed form.
pub fn geometric_sum(alpha: f64, horizon: u64) -> f64 {
    if alpha == 1.0 {
        return horizon as f64;
    }
    alpha * (1.0 - alpha.powf(horizon as f64)) / (1.0 - alpha)
}
