use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{applicable_theorem, ExperimentConfig};
use super::rate::{fit_rate, RateFit};
use super::ExperimentError;
use crate::engine::{aggregate, run, Aggregate, AggregatePoint, Moments, RunConfig, RunRecord, Variant};
use crate::mdp::Problem;
use crate::oracle::{bound_terms, solve_fixed_point, BoundInputs, Theorem};
use crate::sampling::{MixingProfile, Regime};
use crate::schedules::{default_eta0, Eta0Inputs, Schedule};

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub variant_label: String,
    pub eta0_label: String,
    pub variant: Variant,
    pub schedule: Schedule,
    pub regime: Regime,
    /// The theorem this cell instantiates, if any.
    pub theorem: Option<Theorem>,
    group: (usize, usize, Regime),
}

impl Cell {
    pub fn describe(&self) -> String {
        format!(
            "[{} / {} η₀={} / {} / T={}]",
            self.variant_label,
            self.schedule.kind(),
            self.eta0_label,
            self.regime.name(),
            self.schedule.horizon()
        )
    }

    fn tag<E: Into<crate::Error>>(&self) -> impl FnOnce(E) -> ExperimentError + '_ {
        move |e| ExperimentError::Cell {
            cell: self.describe(),
            source: Box::new(e.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSummary {
    pub theorem: Theorem,
    pub bound: f64,
    pub bias: f64,
    pub variance: f64,
    pub regularization: f64,
    /// Bound divided by the mean final error.
    pub looseness: f64,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    /// Ordered by seed index.
    pub records: Vec<RunRecord>,
    pub aggregate: Aggregate,
    pub bound: Option<BoundSummary>,
    /// Bound at each checkpoint where the theorem defines one.
    pub checkpoint_bounds: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub problem: Problem,
    pub cells: Vec<CellOutcome>,
}

impl ExperimentOutcome {
    pub fn runs(&self) -> usize {
        self.cells.iter().map(|c| c.records.len()).sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub variant: String,
    pub variant_resolved: String,
    pub schedule_kind: String,
    pub eta0_spec: String,
    pub eta0: f64,
    pub regime: Regime,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub theorem: Option<Theorem>,
    pub runs: usize,
    pub initial_error_sq: Moments,
    pub final_point: AggregatePoint,
    pub tail_error_sq: Option<Moments>,
    pub max_reg_error_sq: f64,
    pub bound: Option<BoundSummary>,
    pub points: Vec<AggregatePoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupFit {
    pub variant: String,
    pub schedule_kind: String,
    pub eta0_spec: String,
    pub regime: Regime,
    pub horizons: Vec<u64>,
    pub mean_final_error_sq: Vec<f64>,
    pub fit: Option<RateFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemSummary {
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    pub omega: f64,
    pub sigma_sq: f64,
    pub w_star: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub problem: ProblemSummary,
    pub cells: Vec<CellSummary>,
    pub rate_fits: Vec<GroupFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub files: Vec<String>,
    pub cells: usize,
    pub runs: usize,
    pub config: ExperimentConfig,
}

fn build_cells(config: &ExperimentConfig, problem: &Problem) -> Result<Vec<Cell>, ExperimentError> {
    let sweep = &config.sweep;
    let mut cells = Vec::new();
    for (vi, vspec) in sweep.variants.iter().enumerate() {
        for (si, sspec) in sweep.schedules.iter().enumerate() {
            for &regime in &sweep.regimes {
                for &horizon in &sweep.horizons {
                    let variant = vspec.resolve(horizon);
                    let theorem = sspec
                        .theorem
                        .or_else(|| applicable_theorem(sspec.kind, regime, &variant));
                    let eta0 = match ExperimentConfig::eta0_value(&sspec.eta0) {
                        Some(v) => v,
                        None => {
                            let th = theorem.ok_or_else(|| {
                                ExperimentError::invalid(format!("sweep.schedules[{si}].eta0"), "no theorem to take the default from")
                            })?;
                            let inputs = Eta0Inputs {
                                gamma: problem.gamma(),
                                omega: Some(problem.omega()),
                                lambda: Some(variant.lambda()),
                                horizon,
                            };
                            default_eta0(th, &inputs)
                                .map_err(|e| ExperimentError::invalid(format!("sweep.schedules[{si}].eta0"), e.to_string()))?
                        }
                    };
                    let schedule = Schedule::new(sspec.resolve_kind(problem.omega()), eta0, horizon)
                        .map_err(|e| ExperimentError::invalid(format!("sweep.schedules[{si}]"), format!("T = {horizon}: {e}")))?;
                    cells.push(Cell {
                        variant_label: vspec.label(),
                        eta0_label: sspec.eta0.to_string(),
                        variant,
                        schedule,
                        regime,
                        theorem,
                        group: (vi, si, regime),
                    });
                }
            }
        }
    }
    Ok(cells)
}

fn attach_bound(
    config: &ExperimentConfig,
    problem: &Problem,
    cell: &Cell,
    agg: &Aggregate,
    w1: &DVector<f64>,
) -> Result<(Option<BoundSummary>, Vec<Option<f64>>), ExperimentError> {
    let none = vec![None; agg.points.len()];
    let Some(theorem) = cell.theorem.filter(|t| config.bounds.contains(t)) else {
        return Ok((None, none));
    };
    let lambda = cell.variant.lambda();
    let horizon = cell.schedule.horizon();
    let eta0 = cell.schedule.eta0();
    let fixed = solve_fixed_point(problem, lambda).map_err(cell.tag())?;
    let mixing = if theorem.needs_mixing() {
        let profile = MixingProfile::for_run(problem, eta0, lambda, horizon).map_err(cell.tag())?;
        Some(profile.envelope)
    } else {
        None
    };
    let mut inputs = BoundInputs::new(problem, &fixed, w1, eta0, horizon, mixing);
    let terms = bound_terms(theorem, &inputs).map_err(cell.tag())?;
    let per_point = match theorem {
        Theorem::ConstantMean | Theorem::ConstantIid => agg
            .points
            .iter()
            .map(|p| {
                inputs.horizon = p.t;
                bound_terms(theorem, &inputs).map(|b| Some(b.total()))
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(cell.tag())?,
        _ => agg.points.iter().map(|p| (p.t == horizon).then(|| terms.total())).collect(),
    };
    let bound = terms.total();
    Ok((
        Some(BoundSummary {
            theorem,
            bound,
            bias: terms.bias,
            variance: terms.variance,
            regularization: terms.regularization,
            looseness: bound / agg.final_point().error_sq.mean,
        }),
        per_point,
    ))
}

/// Runs every cell and seed. Work is spread over the rayon pool; results are
/// collected in grid order so the outcome does not depend on scheduling.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    config.validate()?;
    let problem = config.load_problem()?;
    let cells = build_cells(config, &problem)?;
    let seeds = config.sweep.seeds;
    let w_init = config.sweep.w_init.as_ref().map(|w| DVector::from_column_slice(w));

    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..seeds).map(move |k| (c, k)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(c, k)| {
            let cell = &cells[c];
            let mut rc = RunConfig::new(cell.variant, cell.schedule, cell.regime, config.sweep.base_seed, k);
            rc.w_init = w_init.clone();
            run(&rc, &problem).map_err(cell.tag())
        })
        .collect::<Result<_, _>>()?;

    let w1 = w_init.unwrap_or_else(|| DVector::zeros(problem.d()));
    let mut out = Vec::with_capacity(cells.len());
    let mut chunks = records.into_iter();
    for cell in cells {
        let recs: Vec<RunRecord> = chunks.by_ref().take(seeds as usize).collect();
        let agg = aggregate(&recs).map_err(cell.tag())?;
        let (bound, checkpoint_bounds) = attach_bound(config, &problem, &cell, &agg, &w1)?;
        out.push(CellOutcome {
            cell,
            records: recs,
            aggregate: agg,
            bound,
            checkpoint_bounds,
        });
    }
    Ok(ExperimentOutcome { problem, cells: out })
}

fn summarize(outcome: &ExperimentOutcome) -> Summary {
    let problem = &outcome.problem;
    let fixed = solve_fixed_point(problem, 0.0).ok();
    let cells = outcome
        .cells
        .iter()
        .map(|c| CellSummary {
            variant: c.cell.variant_label.clone(),
            variant_resolved: c.cell.variant.to_string(),
            schedule_kind: c.cell.schedule.kind().name(),
            eta0_spec: c.cell.eta0_label.clone(),
            eta0: c.cell.schedule.eta0(),
            regime: c.cell.regime,
            horizon: c.cell.schedule.horizon(),
            theorem: c.cell.theorem,
            runs: c.records.len(),
            initial_error_sq: c.aggregate.initial_error_sq,
            final_point: *c.aggregate.final_point(),
            tail_error_sq: c.aggregate.tail_error_sq,
            max_reg_error_sq: c.aggregate.max_reg_error_sq,
            bound: c.bound.clone(),
            points: c.aggregate.points.clone(),
        })
        .collect();

    let mut groups: BTreeMap<(usize, usize, Regime), Vec<&CellOutcome>> = BTreeMap::new();
    for c in &outcome.cells {
        groups.entry(c.cell.group).or_default().push(c);
    }
    let rate_fits = groups
        .into_values()
        .map(|members| {
            let first = &members[0].cell;
            let mut pts: Vec<(u64, f64)> = members
                .iter()
                .map(|m| (m.cell.schedule.horizon(), m.aggregate.final_point().error_sq.mean))
                .collect();
            pts.sort_by_key(|p| p.0);
            let fit = fit_rate(&pts);
            GroupFit {
                variant: first.variant_label.clone(),
                schedule_kind: first.schedule.kind().name(),
                eta0_spec: first.eta0_label.clone(),
                regime: first.regime,
                horizons: pts.iter().map(|p| p.0).collect(),
                mean_final_error_sq: pts.iter().map(|p| p.1).collect(),
                error: fit.as_ref().err().map(|e| e.to_string()),
                fit: fit.ok(),
            }
        })
        .collect();

    Summary {
        problem: ProblemSummary {
            n: problem.n(),
            d: problem.d(),
            gamma: problem.gamma(),
            omega: problem.omega(),
            sigma_sq: fixed.as_ref().map_or(f64::NAN, |f| f.sigma_sq),
            w_star: fixed.map_or_else(Vec::new, |f| f.w_star.as_slice().to_vec()),
        },
        cells,
        rate_fits,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| ExperimentError::io(path, e))
}

/// Writes `runs.csv`, `summary.json` (both skipped for an empty sweep) and
/// `manifest.json` into `out_dir`.
pub fn write_outputs(
    config: &ExperimentConfig,
    outcome: &ExperimentOutcome,
    out_dir: &Path,
) -> Result<Manifest, ExperimentError> {
    std::fs::create_dir_all(out_dir).map_err(|e| ExperimentError::io(out_dir, e))?;
    let mut files = Vec::new();
    if !outcome.cells.is_empty() {
        super::csv::write_runs_csv(&out_dir.join("runs.csv"), outcome)?;
        write_json(&out_dir.join("summary.json"), &summarize(outcome))?;
        files.push("runs.csv".to_string());
        files.push("summary.json".to_string());
    }
    let manifest = Manifest {
        files,
        cells: outcome.cells.len(),
        runs: outcome.runs(),
        config: config.clone(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// [`execute`] followed by [`write_outputs`].
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<(ExperimentOutcome, Manifest), ExperimentError> {
    let outcome = execute(config)?;
    let manifest = write_outputs(config, &outcome, out_dir)?;
    Ok((outcome, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text).unwrap()
    }

    const ONE_CELL: &str = r#"{
        "problem": {"builtin": "reference-two-state"},
        "sweep": {
            "variants": [{"kind": "standard"}],
            "schedules": [{"kind": "exponential", "eta0": "theorem-default"}],
            "regimes": ["iid"],
            "horizons": [256],
            "seeds": 4
        },
        "bounds": ["exp-iid"]
    }"#;

    #[test]
    fn one_cell_has_one_record_per_seed() {
        let out = execute(&config(ONE_CELL)).unwrap();
        assert_eq!(out.cells.len(), 1);
        let cell = &out.cells[0];
        assert_eq!(cell.cell.theorem, Some(Theorem::ExpIid));
        assert_eq!(cell.records.len(), 4);
        assert!((cell.cell.schedule.eta0() - 0.1 / 8.0).abs() < 1e-15);
        assert_eq!(cell.checkpoint_bounds.iter().filter(|b| b.is_some()).count(), 1);
        let streams: Vec<u64> = cell.records.iter().map(|r| r.stream).collect();
        assert_eq!(streams, vec![0, 1, 2, 3]);
    }

    #[test]
    fn bounds_not_requested_are_not_attached() {
        let out = execute(&config(&ONE_CELL.replace(r#"["exp-iid"]"#, "[]"))).unwrap();
        assert!(out.cells[0].bound.is_none());
    }

    #[test]
    fn constant_mean_path_bound_at_every_checkpoint() {
        let text = ONE_CELL
            .replace(r#""exponential", "eta0": "theorem-default""#, r#""constant", "eta0": "theorem-default""#)
            .replace(r#"["iid"]"#, r#"["mean-path"]"#)
            .replace(r#""seeds": 4"#, r#""seeds": 1"#)
            .replace("exp-iid", "constant-mean");
        let out = execute(&config(&text)).unwrap();
        let cell = &out.cells[0];
        for (p, b) in cell.aggregate.points.iter().zip(&cell.checkpoint_bounds) {
            assert!(p.error_sq.mean <= b.unwrap() + 1e-12, "t = {}", p.t);
        }
    }

    #[test]
    fn empty_sweep_writes_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(&ONE_CELL.replace(r#""horizons": [256]"#, r#""horizons": []"#));
        let (_, manifest) = run_experiment(&c, dir.path()).unwrap();
        assert!(manifest.files.is_empty());
        assert!(dir.path().join("manifest.json").exists());
        assert!(!dir.path().join("runs.csv").exists());
    }
}
