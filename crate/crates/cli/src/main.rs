//! Command-line interface: reproducible estimation, simulation, and
//! matching-diagnostic runs with machine-readable artifacts.
//!
//! Every run writes `report.json` (plus `replications.csv` for simulate)
//! into the output directory, along with a `run.log` sidecar that carries
//! the wall-clock information deliberately kept out of the deterministic
//! artifacts. Exit codes: 0 success, 1 estimation or I/O failure, 2 usage
//! error.

mod args;
mod config;
mod report;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use matchvar::data::{csv_header, load_csv, CsvSchema, Dataset};
use matchvar::matching::{aggregate_weights, diagnostics, mean_cluster_ess};
use matchvar::pipeline::{build_match, run_method, MatcherSpec, MethodSpec};
use matchvar::simulation::{run_coverage, set_max_threads};
use matchvar::{Error, Result};

use args::{parse_args, InputArgs, RunPlan};
use report::{write_artifact, DiagnoseSummary};

fn main() -> ExitCode {
    let plan = match parse_args(std::env::args_os()) {
        Ok(plan) => plan,
        // Exits 2 on usage errors and 0 for --help/--version.
        Err(e) => e.exit(),
    };
    let argv: Vec<String> = std::env::args().collect();
    match execute(&plan, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("matchvar: {e}");
            ExitCode::from(1)
        }
    }
}

/// Runs a validated plan to completion.
fn execute(plan: &RunPlan, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    match plan {
        RunPlan::Estimate {
            input,
            method,
            seed,
            level,
            out_dir,
            threads,
        } => {
            apply_thread_cap(*threads)?;
            let (data, input_name) = load_input(input)?;
            estimate(&data, &input_name, method, *seed, *level, out_dir)?;
            write_log(out_dir, argv, started)
        }
        RunPlan::Simulate {
            config,
            out_dir,
            threads,
        } => {
            apply_thread_cap(*threads)?;
            simulate(config, out_dir)?;
            write_log(out_dir, argv, started)
        }
        RunPlan::Diagnose {
            input,
            matcher,
            out_dir,
        } => {
            let (data, input_name) = load_input(input)?;
            diagnose(&data, &input_name, matcher, out_dir)?;
            write_log(out_dir, argv, started)
        }
    }
}

/// Applies `--threads`, falling back to the `MATCHVAR_THREADS` environment
/// variable; absent both, the worker pool keeps its default size.
fn apply_thread_cap(flag: Option<usize>) -> Result<()> {
    let cap = match flag {
        Some(n) => Some(n),
        None => match std::env::var("MATCHVAR_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| {
                Error::Parameter(format!("MATCHVAR_THREADS must be a positive integer, got '{v}'"))
            })?),
            Err(_) => None,
        },
    };
    match cap {
        Some(n) => set_max_threads(n),
        None => Ok(()),
    }
}

/// Loads the dataset named by the input flags. When no covariate list is
/// given, every column not claimed by the outcome, treatment, or id flags
/// is a covariate, in file order.
fn load_input(input: &InputArgs) -> Result<(Dataset, String)> {
    let covariates = match &input.covariate_cols {
        Some(cols) => cols.clone(),
        None => csv_header(&input.input)?
            .into_iter()
            .filter(|h| {
                *h != input.outcome_col
                    && *h != input.treatment_col
                    && Some(h) != input.id_col.as_ref()
            })
            .collect(),
    };
    let schema = CsvSchema {
        outcome: input.outcome_col.clone(),
        treatment: input.treatment_col.clone(),
        covariates,
        id: input.id_col.clone(),
    };
    let data = load_csv(&input.input, &schema)?;
    Ok((data, input.input.display().to_string()))
}

fn estimate(
    data: &Dataset,
    input_name: &str,
    method: &MethodSpec,
    seed: u64,
    level: f64,
    out_dir: &Path,
) -> Result<()> {
    let out = run_method(data, method, seed, level)?;
    let (treated, controls) = data.split_by_treatment();
    let json = report::estimate_report(
        input_name,
        data.n(),
        treated.len(),
        controls.len(),
        seed,
        &out,
    );
    write_artifact(out_dir, "report.json", &json)?;
    println!(
        "tau_hat={} ci=[{}, {}] method={}",
        out.estimate, out.interval.lower, out.interval.upper, out.interval.method
    );
    Ok(())
}

fn simulate(config_path: &Path, out_dir: &Path) -> Result<()> {
    let spec = config::load_simulation(config_path)?;
    let cov = run_coverage(&spec)?;
    let json = report::simulate_report(&config_path.display().to_string(), &cov);
    write_artifact(out_dir, "report.json", &json)?;
    write_artifact(
        out_dir,
        "replications.csv",
        &report::replications_csv(&cov.replications),
    )?;
    for m in &cov.methods {
        println!(
            "method={} coverage={:.3} mean_ci_length={:.4} failures={}",
            m.name, m.coverage, m.mean_ci_length, m.n_failed
        );
    }
    Ok(())
}

fn diagnose(
    data: &Dataset,
    input_name: &str,
    matcher: &MatcherSpec,
    out_dir: &Path,
) -> Result<()> {
    let matched = build_match(data, matcher)?;
    let diag = diagnostics(&matched, data);
    let agg = aggregate_weights(&matched, data.n());
    let (treated, controls) = data.split_by_treatment();
    let n_clusters = matched.clusters.len();
    let mean_cluster_size = if n_clusters == 0 {
        0.0
    } else {
        matched
            .clusters
            .iter()
            .map(|c| c.controls.len() as f64)
            .sum::<f64>()
            / n_clusters as f64
    };
    let (max_radius, mean_radius) = if diag.radii.is_empty() {
        (0.0, 0.0)
    } else {
        (
            diag.radii.iter().copied().fold(0.0_f64, f64::max),
            diag.radii.iter().sum::<f64>() / diag.radii.len() as f64,
        )
    };
    let summary = DiagnoseSummary {
        n: data.n(),
        n_treated: treated.len(),
        n_controls: controls.len(),
        n_matched_treated: n_clusters,
        n_unmatched_treated: diag.n_unmatched,
        mean_cluster_size,
        mean_cluster_ess: mean_cluster_ess(&matched),
        aggregate_ess: agg.ess,
        mean_shared_controls: diag.mean_shared_controls,
        max_radius,
        mean_radius,
    };
    let json = report::diagnose_report(input_name, &summary);
    write_artifact(out_dir, "report.json", &json)?;
    println!(
        "matched={} unmatched={} mean_cluster_ess={:.3} shared_controls={:.3}",
        summary.n_matched_treated,
        summary.n_unmatched_treated,
        summary.mean_cluster_ess,
        summary.mean_shared_controls
    );
    Ok(())
}

/// Writes the wall-clock sidecar. This is the only artifact carrying
/// timestamps, so `report.json` and `replications.csv` stay byte-identical
/// across reruns of the same invocation.
fn write_log(out_dir: &Path, argv: &[String], started: Instant) -> Result<()> {
    let unix_seconds = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let contents = format!(
        "finished_unix_seconds={}\nduration_ms={}\nargv={}\n",
        unix_seconds,
        started.elapsed().as_millis(),
        argv.join(" "),
    );
    write_artifact(out_dir, "run.log", &contents)
}
