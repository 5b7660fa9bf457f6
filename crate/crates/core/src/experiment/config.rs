use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::engine::Variant;
use crate::mdp::{make_random_mdp, reference_two_state, single_state, GeneratorFamily, MdpDocument, Problem};
use crate::oracle::Theorem;
use crate::sampling::Regime;
use crate::schedules::{Divisor, ScheduleKind, PRACTICAL_ETA0};

/// One JSON document describing a sweep. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    /// Overrides the problem's initial distribution `μ₀`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    pub sweep: SweepSpec,
    /// Theorems whose bounds are attached to the cells they apply to.
    #[serde(default)]
    pub bounds: Vec<Theorem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Builtin(BuiltinProblem),
    Generator(GeneratorSpec),
    Inline(MdpDocument),
    /// A JSON file holding an inline document; relative to the config file.
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinProblem {
    ReferenceTwoState,
    SingleState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    /// `dense-dirichlet`, `chain` or `garnet(b)`.
    pub family: String,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variants: Vec<VariantSpec>,
    pub schedules: Vec<ScheduleSpec>,
    pub regimes: Vec<Regime>,
    pub horizons: Vec<u64>,
    /// Number of seeds per cell; seed `k` is the generator stream `k`.
    pub seeds: u64,
    /// Generator key shared by every run.
    #[serde(default)]
    pub base_seed: u64,
    /// Starting iterate; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_init: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VariantSpec {
    Standard,
    Regularized {
        lambda: LambdaSpec,
    },
    Projected {
        #[serde(default)]
        radius: Option<f64>,
    },
    TailAveraged {
        window_fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Value(f64),
    Rule(LambdaRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LambdaRule {
    /// `λ = 1/√T`
    #[serde(rename = "inv-sqrt-T")]
    InvSqrtT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: KindName,
    pub eta0: Eta0Spec,
    #[serde(default)]
    pub params: ScheduleParams,
    /// Theorem used for `theorem-default` and for bounds; inferred when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem: Option<Theorem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindName {
    Constant,
    #[serde(rename = "inv-sqrt-T")]
    InvSqrtT,
    Poly,
    InvOmegaT,
    Exponential,
    ExponentialScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    /// Defaults to the problem's `ω`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divisor: Option<Divisor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Eta0Spec {
    Value(f64),
    Rule(Eta0Rule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Eta0Rule {
    TheoremDefault,
    Practical,
}

impl fmt::Display for Eta0Spec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Eta0Spec::Value(v) => write!(f, "{v}"),
            Eta0Spec::Rule(Eta0Rule::TheoremDefault) => f.write_str("theorem-default"),
            Eta0Spec::Rule(Eta0Rule::Practical) => f.write_str("practical"),
        }
    }
}

impl VariantSpec {
    /// Stable label used in the CSV; independent of `T`.
    pub fn label(&self) -> String {
        match self {
            VariantSpec::Regularized {
                lambda: LambdaSpec::Rule(LambdaRule::InvSqrtT),
            } => "regularized(inv-sqrt-T)".into(),
            other => other.resolve(1).to_string(),
        }
    }

    pub fn resolve(&self, horizon: u64) -> Variant {
        match *self {
            VariantSpec::Standard => Variant::Standard,
            VariantSpec::Regularized { lambda } => Variant::Regularized {
                lambda: match lambda {
                    LambdaSpec::Value(v) => v,
                    LambdaSpec::Rule(LambdaRule::InvSqrtT) => 1.0 / (horizon as f64).sqrt(),
                },
            },
            VariantSpec::Projected { radius } => Variant::Projected { radius },
            VariantSpec::TailAveraged { window_fraction } => Variant::TailAveraged { window_fraction },
        }
    }
}

impl ScheduleSpec {
    pub fn resolve_kind(&self, omega: f64) -> ScheduleKind {
        match self.kind {
            KindName::Constant => ScheduleKind::Constant,
            KindName::InvSqrtT => ScheduleKind::InvSqrtT,
            KindName::Poly => ScheduleKind::Poly {
                z: self.params.z.unwrap_or(f64::NAN),
            },
            KindName::InvOmegaT => ScheduleKind::InvOmegaT {
                omega: self.params.omega.unwrap_or(omega),
            },
            KindName::Exponential => ScheduleKind::Exponential,
            KindName::ExponentialScaled => ScheduleKind::ExponentialScaled {
                divisor: self.params.divisor.unwrap_or(Divisor::Value(f64::NAN)),
            },
        }
    }

    fn validate(&self, path: &str) -> Result<(), ExperimentError> {
        if let Eta0Spec::Value(v) = self.eta0 {
            if !(v.is_finite() && v > 0.0) {
                return Err(ExperimentError::invalid(format!("{path}.eta0"), format!("must be positive, got {v}")));
            }
        }
        let p = &self.params;
        let allowed = (
            self.kind == KindName::Poly,
            self.kind == KindName::InvOmegaT,
            self.kind == KindName::ExponentialScaled,
        );
        for (present, ok, name) in [
            (p.z.is_some(), allowed.0, "z"),
            (p.omega.is_some(), allowed.1, "omega"),
            (p.divisor.is_some(), allowed.2, "divisor"),
        ] {
            if present && !ok {
                return Err(ExperimentError::invalid(
                    format!("{path}.params.{name}"),
                    format!("not a parameter of schedule {:?}", self.kind),
                ));
            }
        }
        match self.kind {
            KindName::Poly => match p.z {
                Some(z) if z.is_finite() && z > 0.0 => {}
                _ => return Err(ExperimentError::invalid(format!("{path}.params.z"), "poly needs z > 0")),
            },
            KindName::InvOmegaT => {
                if let Some(w) = p.omega.filter(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(ExperimentError::invalid(format!("{path}.params.omega"), format!("must be positive, got {w}")));
                }
            }
            KindName::ExponentialScaled => match p.divisor {
                None => return Err(ExperimentError::invalid(format!("{path}.params.divisor"), "exponential-scaled needs a divisor")),
                Some(Divisor::Value(v)) if !(v.is_finite() && v > 0.0) => {
                    return Err(ExperimentError::invalid(format!("{path}.params.divisor"), format!("must be positive, got {v}")));
                }
                _ => {}
            },
            _ => {}
        }
        Ok(())
    }
}

/// The theorem whose setting a cell matches, if any.
pub(crate) fn applicable_theorem(kind: KindName, regime: Regime, variant: &Variant) -> Option<Theorem> {
    match (kind, regime, variant) {
        (KindName::Constant, Regime::MeanPath, Variant::Standard) => Some(Theorem::ConstantMean),
        (KindName::Constant, Regime::Iid, Variant::Standard) => Some(Theorem::ConstantIid),
        (KindName::Exponential, Regime::Iid | Regime::MeanPath, Variant::Standard) => Some(Theorem::ExpIid),
        (KindName::Exponential, Regime::Markovian, Variant::Standard) => Some(Theorem::ExpMarkov),
        (KindName::Exponential, Regime::Markovian, Variant::Regularized { lambda }) if *lambda > 0.0 => {
            Some(Theorem::RegMarkov)
        }
        _ => None,
    }
}

impl ExperimentConfig {
    /// Parses JSON; failures name the offending field path.
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ExperimentError::invalid(path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and parses `path`; a `file` problem is resolved relative to it.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let mut config = Self::parse(&text)?;
        if let ProblemSpec::File(file) = &config.problem {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    config.problem = ProblemSpec::File(dir.join(file));
                }
            }
        }
        Ok(config)
    }

    /// Structural checks that do not need the problem.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let sweep = &self.sweep;
        if sweep.seeds == 0 {
            return Err(ExperimentError::invalid("sweep.seeds", "need at least one seed"));
        }
        for (i, &t) in sweep.horizons.iter().enumerate() {
            if t == 0 {
                return Err(ExperimentError::invalid(format!("sweep.horizons[{i}]"), "horizons must be positive"));
            }
        }
        for (i, v) in sweep.variants.iter().enumerate() {
            let path = format!("sweep.variants[{i}]");
            match *v {
                VariantSpec::Regularized {
                    lambda: LambdaSpec::Value(l),
                } if !(l.is_finite() && l >= 0.0) => {
                    return Err(ExperimentError::invalid(format!("{path}.lambda"), format!("must be ≥ 0, got {l}")));
                }
                VariantSpec::Projected { radius: Some(r) } if !(r.is_finite() && r > 0.0) => {
                    return Err(ExperimentError::invalid(format!("{path}.radius"), format!("must be positive, got {r}")));
                }
                VariantSpec::TailAveraged { window_fraction: f } if !(f.is_finite() && f > 0.0 && f <= 1.0) => {
                    return Err(ExperimentError::invalid(
                        format!("{path}.window_fraction"),
                        format!("must lie in (0, 1], got {f}"),
                    ));
                }
                _ => {}
            }
        }
        for (i, s) in sweep.schedules.iter().enumerate() {
            let path = format!("sweep.schedules[{i}]");
            s.validate(&path)?;
            let is_exp = matches!(s.kind, KindName::Exponential | KindName::ExponentialScaled);
            if is_exp {
                if let Some(j) = sweep.horizons.iter().position(|&t| t < 2) {
                    return Err(ExperimentError::invalid(
                        format!("sweep.horizons[{j}]"),
                        "exponential schedules need T ≥ 2",
                    ));
                }
            }
            if s.eta0 == Eta0Spec::Rule(Eta0Rule::TheoremDefault) && s.theorem.is_none() {
                for v in &sweep.variants {
                    for &regime in &sweep.regimes {
                        if applicable_theorem(s.kind, regime, &v.resolve(4)).is_none() {
                            return Err(ExperimentError::invalid(
                                format!("{path}.eta0"),
                                format!(
                                    "no theorem covers {:?} with {} in the {} regime; set `theorem` or a number",
                                    s.kind,
                                    v.label(),
                                    regime.name()
                                ),
                            ));
                        }
                    }
                }
            }
        }
        if let Some(mu0) = &self.initial {
            if mu0.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(ExperimentError::invalid("initial", "must be a probability vector"));
            }
        }
        Ok(())
    }

    /// Replaces every `theorem-default` step with the practical value.
    pub fn use_practical_eta0(&mut self) {
        for s in &mut self.sweep.schedules {
            if s.eta0 == Eta0Spec::Rule(Eta0Rule::TheoremDefault) {
                s.eta0 = Eta0Spec::Rule(Eta0Rule::Practical);
            }
        }
    }

    pub fn is_empty_sweep(&self) -> bool {
        let s = &self.sweep;
        s.variants.is_empty() || s.schedules.is_empty() || s.regimes.is_empty() || s.horizons.is_empty()
    }

    /// Builds the problem, applying `initial` and checking `w_init` against `d`.
    pub fn load_problem(&self) -> Result<Problem, ExperimentError> {
        let mut problem = self.problem.load()?;
        if let Some(mu0) = &self.initial {
            let spec = problem
                .spec()
                .with_initial(DVector::from_column_slice(mu0))
                .map_err(|e| ExperimentError::invalid("initial", e.to_string()))?;
            problem = Problem::new(spec, problem.features().clone())
                .map_err(|e| ExperimentError::invalid("initial", e.to_string()))?;
        }
        if let Some(w) = &self.sweep.w_init {
            if w.len() != problem.d() || w.iter().any(|x| !x.is_finite()) {
                return Err(ExperimentError::invalid(
                    "sweep.w_init",
                    format!("must be a finite vector of length d = {}", problem.d()),
                ));
            }
        }
        Ok(problem)
    }

    pub(crate) fn eta0_value(spec: &Eta0Spec) -> Option<f64> {
        match spec {
            Eta0Spec::Value(v) => Some(*v),
            Eta0Spec::Rule(Eta0Rule::Practical) => Some(PRACTICAL_ETA0),
            Eta0Spec::Rule(Eta0Rule::TheoremDefault) => None,
        }
    }
}

impl ProblemSpec {
    pub fn load(&self) -> Result<Problem, ExperimentError> {
        let invalid = |e: crate::mdp::MdpError| ExperimentError::invalid("problem", e.to_string());
        let (spec, features) = match self {
            ProblemSpec::Builtin(BuiltinProblem::ReferenceTwoState) => reference_two_state(),
            ProblemSpec::Builtin(BuiltinProblem::SingleState) => single_state(),
            ProblemSpec::Generator(g) => {
                let family: GeneratorFamily = g
                    .family
                    .parse()
                    .map_err(|e: crate::mdp::MdpError| ExperimentError::invalid("problem.generator.family", e.to_string()))?;
                make_random_mdp(g.seed, g.n, g.d, family).map_err(invalid)?
            }
            ProblemSpec::Inline(doc) => doc.clone().into_parts().map_err(invalid)?,
            ProblemSpec::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                let doc: MdpDocument = serde_path_to_error::deserialize(de).map_err(|e| {
                    ExperimentError::invalid(format!("problem.file:{}", e.path()), e.into_inner().to_string())
                })?;
                doc.into_parts().map_err(invalid)?
            }
        };
        Problem::new(spec, features).map_err(invalid)
    }

    /// Command-line form: a builtin name, `generator:<family>:<seed>:<n>:<d>`,
    /// or a path to a JSON document (an instance, or a problem spec).
    pub fn from_arg(arg: &str) -> Result<Self, ExperimentError> {
        match arg {
            "reference-two-state" => return Ok(ProblemSpec::Builtin(BuiltinProblem::ReferenceTwoState)),
            "single-state" => return Ok(ProblemSpec::Builtin(BuiltinProblem::SingleState)),
            _ => {}
        }
        if let Some(rest) = arg.strip_prefix("generator:") {
            let parts: Vec<&str> = rest.rsplitn(4, ':').collect();
            let bad = || ExperimentError::invalid("problem", format!("expected generator:<family>:<seed>:<n>:<d>, got `{arg}`"));
            if parts.len() != 4 {
                return Err(bad());
            }
            return Ok(ProblemSpec::Generator(GeneratorSpec {
                family: parts[3].to_string(),
                seed: parts[2].parse().map_err(|_| bad())?,
                n: parts[1].parse().map_err(|_| bad())?,
                d: parts[0].parse().map_err(|_| bad())?,
            }));
        }
        let path = PathBuf::from(arg);
        let text = std::fs::read_to_string(&path).map_err(|e| ExperimentError::io(&path, e))?;
        if let Ok(spec) = serde_json::from_str::<ProblemSpec>(&text) {
            return Ok(match spec {
                ProblemSpec::File(f) if f.is_relative() => {
                    ProblemSpec::File(path.parent().map(|d| d.join(&f)).unwrap_or(f))
                }
                other => other,
            });
        }
        Ok(ProblemSpec::File(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "problem": {"builtin": "reference-two-state"},
        "sweep": {
            "variants": [{"kind": "standard"}, {"kind": "regularized", "lambda": "inv-sqrt-T"}],
            "schedules": [{"kind": "exponential", "eta0": "theorem-default", "theorem": "exp-iid"}],
            "regimes": ["iid"],
            "horizons": [16, 64],
            "seeds": 3
        },
        "bounds": ["exp-iid"]
    }"#;

    fn expect_path(text: &str, want: &str) {
        match ExperimentConfig::parse(text) {
            Err(ExperimentError::ConfigInvalid { path, .. }) => assert_eq!(path, want),
            other => panic!("expected ConfigInvalid at {want}, got {other:?}"),
        }
    }

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.sweep.seeds, 3);
        assert_eq!(c.sweep.variants[1].label(), "regularized(inv-sqrt-T)");
        assert_eq!(c.sweep.variants[1].resolve(64), Variant::Regularized { lambda: 0.125 });
    }

    #[test]
    fn config_round_trips_through_serde() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn unknown_regime_names_the_field() {
        expect_path(&MINIMAL.replace(r#"["iid"]"#, r#"["iid", "ergodic"]"#), "sweep.regimes[1]");
    }

    #[test]
    fn unknown_key_is_rejected() {
        expect_path(&MINIMAL.replace(r#""seeds": 3"#, r#""seeds": 3, "sed": 1"#), "sweep.sed");
    }

    #[test]
    fn poly_without_z_is_rejected() {
        let text = MINIMAL.replace(
            r#"{"kind": "exponential", "eta0": "theorem-default", "theorem": "exp-iid"}"#,
            r#"{"kind": "poly", "eta0": 0.5}"#,
        );
        expect_path(&text, "sweep.schedules[0].params.z");
    }

    #[test]
    fn uncovered_theorem_default_is_rejected() {
        let text = MINIMAL.replace(r#", "theorem": "exp-iid""#, "");
        // regularized + iid has no theorem
        expect_path(&text, "sweep.schedules[0].eta0");
    }

    #[test]
    fn zero_seeds_rejected() {
        expect_path(&MINIMAL.replace(r#""seeds": 3"#, r#""seeds": 0"#), "sweep.seeds");
    }

    #[test]
    fn generator_argument_parses() {
        let spec = ProblemSpec::from_arg("generator:garnet(3):7:10:4").unwrap();
        assert_eq!(
            spec,
            ProblemSpec::Generator(GeneratorSpec {
                family: "garnet(3)".into(),
                seed: 7,
                n: 10,
                d: 4
            })
        );
        assert!(spec.load().is_ok());
    }

    #[test]
    fn practical_flag_rewrites_theorem_default() {
        let mut c = ExperimentConfig::parse(MINIMAL).unwrap();
        c.use_practical_eta0();
        assert_eq!(c.sweep.schedules[0].eta0, Eta0Spec::Rule(Eta0Rule::Practical));
    }
}
