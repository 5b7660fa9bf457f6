use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tdlab::experiment::{fit_runs_csv, run_experiment, ExperimentConfig, ProblemSpec};
use tdlab::lemmas::{run_suite, SuiteConfig};
use tdlab::oracle::oracle_report;
use tdlab::sampling::{compute_tau, MixingProfile};
use tdlab::schedules::PRACTICAL_ETA0;

#[derive(Parser)]
#[command(name = "tdlab", version, about = "TD(0) policy evaluation laboratory")]
struct Cli {
    /// Seed for sweeps (overrides `base_seed`) and for the lemma suite.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where output files go.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Replace every theorem-prescribed η₀ with the practical value.
    #[arg(long, global = true)]
    practical_eta0: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fixed points, ω, σ² and every applicable theorem bound, as JSON.
    Oracle {
        /// `reference-two-state`, `single-state`, `generator:<family>:<seed>:<n>:<d>` or a JSON file.
        problem: String,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 4096)]
        horizon: u64,
    },
    /// Run the sweep described by a JSON config.
    Run { config: PathBuf },
    /// Exact TV curve and fitted envelope `m ρ^t` as CSV `t,tv,envelope`.
    Mixing {
        problem: String,
        /// δ for the reported τ_δ.
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
    },
    /// Randomized verification of the supporting inequalities.
    Lemmas {
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
    /// Rate fits over the final-iterate errors in a runs.csv.
    Fit { csv: PathBuf },
}

type Failure = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                msg.push_str(&format!("\n  caused by: {s}"));
                source = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` means the command ran but a check failed.
fn dispatch(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Oracle {
            ref problem,
            lambda,
            horizon,
        } => oracle(&cli, problem, lambda, horizon),
        Command::Run { ref config } => run(&cli, config),
        Command::Mixing { ref problem, delta } => mixing(&cli, problem, delta),
        Command::Lemmas { trials, instances } => lemmas(&cli, trials, instances),
        Command::Fit { ref csv } => fit(csv),
    }
}

fn emit(cli: &Cli, file: &str, text: &str) -> Result<(), Failure> {
    match &cli.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(file), text)?;
            eprintln!("wrote {}", dir.join(file).display());
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn oracle(cli: &Cli, problem: &str, lambda: f64, horizon: u64) -> Result<bool, Failure> {
    let problem = ProblemSpec::from_arg(problem)?.load()?;
    let envelope = MixingProfile::for_run(&problem, PRACTICAL_ETA0, lambda, horizon.max(2))?.envelope;
    let report = oracle_report(&problem, lambda, horizon, Some(envelope))?;
    emit(cli, "oracle.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(true)
}

fn run(cli: &Cli, path: &Path) -> Result<bool, Failure> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.sweep.base_seed = seed;
    }
    if cli.practical_eta0 {
        config.use_practical_eta0();
    }
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let (outcome, manifest) = run_experiment(&config, &out_dir)?;
    println!(
        "{} cells, {} runs -> {} ({})",
        manifest.cells,
        manifest.runs,
        out_dir.display(),
        if manifest.files.is_empty() { "no data files".to_string() } else { manifest.files.join(", ") }
    );
    let mut all_within = true;
    for cell in &outcome.cells {
        if let Some(b) = &cell.bound {
            let mean = cell.aggregate.final_point().error_sq.mean;
            let ok = mean <= b.bound;
            all_within &= ok;
            println!(
                "{} {:<44} mean ‖w_T − w*‖² = {:.4e}  {} bound = {:.4e}",
                if ok { "PASS" } else { "FAIL" },
                cell.cell.describe(),
                mean,
                b.theorem,
                b.bound
            );
        }
    }
    Ok(all_within)
}

fn mixing(cli: &Cli, problem: &str, delta: f64) -> Result<bool, Failure> {
    let problem = ProblemSpec::from_arg(problem)?.load()?;
    let profile = MixingProfile::for_run(&problem, PRACTICAL_ETA0, 0.0, 2)?;
    let env = profile.envelope;
    let tau = compute_tau(&env, delta)?;
    let mut text = String::from("t,tv,envelope\n");
    for (t, tv) in profile.tv_curve.iter().enumerate() {
        text.push_str(&format!("{t},{tv},{}\n", env.at(t as u64)));
    }
    emit(cli, "mixing.csv", &text)?;
    eprintln!(
        "m = {}, rho = {}, |lambda2| = {}, tau_delta = {} (delta = {})",
        env.m,
        env.rho,
        problem.analysis().lambda2_mod,
        tau,
        delta
    );
    Ok(true)
}

fn lemmas(cli: &Cli, trials: u64, instances: usize) -> Result<bool, Failure> {
    let cfg = SuiteConfig {
        instances,
        trials,
        seed: cli.seed.unwrap_or(0),
        ..SuiteConfig::default()
    };
    let report = run_suite(&cfg)?;
    let mut text = format!("{:<24} {:>9} {:>8} {:>14}  pass\n", "lemma-id", "trials", "skipped", "max-violation");
    for c in &report.checks {
        let verdict = if !c.id.gated() {
            "info"
        } else if c.passed() {
            "yes"
        } else {
            "NO"
        };
        text.push_str(&format!(
            "{:<24} {:>9} {:>8} {:>14.6e}  {}\n",
            c.id.name(),
            c.trials,
            c.skipped,
            c.max_violation,
            verdict
        ));
    }
    if cli.out_dir.is_some() {
        emit(cli, "lemmas.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    print!("{text}");
    Ok(report.passed())
}

fn fit(csv: &Path) -> Result<bool, Failure> {
    let fits = fit_runs_csv(csv)?;
    let mut ok = true;
    for f in &fits {
        let label = format!("{} / {} / {}", f.variant, f.schedule_kind, f.regime);
        match &f.fit {
            Ok(r) => println!(
                "{label}: slope {:.4} (r² {:.4}), ln²T/T-corrected slope {:.4} (r² {:.4}), T ∈ [{}, {}]",
                r.slope, r.r_squared, r.corrected_slope, r.corrected_r_squared, r.t_min, r.t_max
            ),
            Err(e) => {
                ok = false;
                println!("{label}: {e}");
            }
        }
    }
    Ok(ok)
}
