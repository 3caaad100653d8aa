//! Argument parsing into a validated run plan.
//!
//! Parsing is strict: unknown flags are errors, every estimation run needs
//! an explicit seed, and flags that only apply to one matcher or variance
//! method are rejected when combined with another.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use matchvar::matching::Metric;
use matchvar::pipeline::{MatcherSpec, MethodSpec, VarianceSpec};
use matchvar::variance::BootstrapMultiplier;

/// Matching-based ATT estimation with reuse-aware variance estimation.
#[derive(Debug, Parser)]
#[command(name = "matchvar", version, disable_help_subcommand = true)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the ATT on a CSV dataset and write report.json.
    Estimate(EstimateArgs),
    /// Run a seeded coverage study described by a config file.
    Simulate(SimulateArgs),
    /// Run a matcher alone and report reuse and balance diagnostics.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatcherKind {
    /// Fixed-M nearest neighbours with uniform weights.
    Mnn,
    /// All controls within a shrinking caliper.
    Radius,
    /// Synthetic-control weights inside each M-nearest neighbourhood.
    Scm,
    /// Nearest neighbours on the fitted propensity score.
    Propensity,
    /// Stable balancing weights over all controls.
    Sbw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VarianceKind {
    /// Pooled cluster variance with the control-reuse correction.
    Pooled,
    /// Matched-pair comparison variance.
    Ai06,
    /// Wild bootstrap percentile interval.
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MultiplierKind {
    /// Signs +1/-1 with equal probability.
    Rademacher,
    /// Two-point distribution matching the first three moments.
    Mammen,
}

/// Flags shared by every command that reads a CSV dataset.
#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Header name of the outcome column.
    #[arg(long = "outcome-col")]
    pub outcome_col: String,
    /// Header name of the 0/1 treatment column.
    #[arg(long = "treatment-col")]
    pub treatment_col: String,
    /// Comma-separated covariate column names; defaults to every column
    /// not claimed by the outcome, treatment, or id flags.
    #[arg(long = "covariate-cols", value_delimiter = ',')]
    pub covariate_cols: Option<Vec<String>>,
    /// Optional unit-id column carried through to reports.
    #[arg(long = "id-col")]
    pub id_col: Option<String>,
}

/// Flags selecting and parameterising a matcher.
#[derive(Debug, Args)]
pub struct MatcherArgs {
    /// Matching method.
    #[arg(long, value_enum)]
    pub matcher: MatcherKind,
    /// Number of nearest neighbours (mnn, scm, propensity).
    #[arg(long = "M")]
    pub m: Option<usize>,
    /// Caliper constant c in the radius c * n_C^(-1/k) (radius, scm).
    #[arg(long)]
    pub caliper: Option<f64>,
    /// Balance tolerance per covariate (sbw only).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Neighbourhood size the sbw noise level is pooled from.
    #[arg(long = "s2-neighbors")]
    pub s2_neighbors: Option<usize>,
    /// Solve sbw on raw rather than standardised covariates.
    #[arg(long = "no-standardize")]
    pub no_standardize: bool,
    /// Standardise covariates before distance computation.
    #[arg(long)]
    pub standardized_distance: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub matcher: MatcherArgs,
    /// Interval construction.
    #[arg(long, value_enum)]
    pub variance: VarianceKind,
    /// Comparison-set size of the matched-pair variance (ai06 only).
    #[arg(long = "ai06-m")]
    pub ai06_m: Option<usize>,
    /// Number of bootstrap replicates (bootstrap only).
    #[arg(long = "bootstrap-b")]
    pub bootstrap_b: Option<usize>,
    /// Bootstrap multiplier distribution (bootstrap only).
    #[arg(long, value_enum)]
    pub multiplier: Option<MultiplierKind>,
    /// Subtract a cross-fitted regression adjustment from the estimate.
    #[arg(long)]
    pub debias: bool,
    /// RNG seed; every run states one explicitly.
    #[arg(long)]
    pub seed: u64,
    /// Nominal confidence level.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Directory report.json and run.log are written to.
    #[arg(long = "out-dir", default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker-thread cap; MATCHVAR_THREADS is the fallback.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Study description file (key = value lines with [method] sections).
    #[arg(long)]
    pub config: PathBuf,
    /// Directory report.json, replications.csv, and run.log are written to.
    #[arg(long = "out-dir", default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker-thread cap; MATCHVAR_THREADS is the fallback.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub matcher: MatcherArgs,
    /// Directory report.json and run.log are written to.
    #[arg(long = "out-dir", default_value = ".")]
    pub out_dir: PathBuf,
}

/// A fully validated invocation, ready to execute.
#[derive(Debug)]
pub enum RunPlan {
    Estimate {
        input: InputArgs,
        method: MethodSpec,
        seed: u64,
        level: f64,
        out_dir: PathBuf,
        threads: Option<usize>,
    },
    Simulate {
        config: PathBuf,
        out_dir: PathBuf,
        threads: Option<usize>,
    },
    Diagnose {
        input: InputArgs,
        matcher: MatcherSpec,
        out_dir: PathBuf,
    },
}

/// A rejected invocation; printed to standard error with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

/// Builds a matcher spec from the flag group, rejecting any flag that does
/// not belong to the selected matcher.
fn matcher_spec(args: &MatcherArgs) -> Result<MatcherSpec, UsageError> {
    let metric = if args.standardized_distance {
        Metric::Standardized
    } else {
        Metric::Euclidean
    };
    let require_m = |what: &str| {
        args.m
            .ok_or_else(|| usage(format!("--matcher {what} requires --M")))
    };
    let no_m = |what: &str| {
        if args.m.is_some() {
            Err(usage(format!("--M does not apply to --matcher {what}")))
        } else {
            Ok(())
        }
    };
    let no_caliper = |what: &str| {
        if args.caliper.is_some() {
            Err(usage(format!("--caliper does not apply to --matcher {what}")))
        } else {
            Ok(())
        }
    };
    let no_sbw_flags = |what: &str| {
        if args.delta.is_some() {
            Err(usage(format!("--delta does not apply to --matcher {what}")))
        } else if args.s2_neighbors.is_some() {
            Err(usage(format!(
                "--s2-neighbors does not apply to --matcher {what}"
            )))
        } else if args.no_standardize {
            Err(usage(format!(
                "--no-standardize does not apply to --matcher {what}"
            )))
        } else {
            Ok(())
        }
    };

    match args.matcher {
        MatcherKind::Mnn => {
            no_caliper("mnn")?;
            no_sbw_flags("mnn")?;
            Ok(MatcherSpec::MNearest {
                m: require_m("mnn")?,
                metric,
                synthetic: false,
            })
        }
        MatcherKind::Radius => {
            no_m("radius")?;
            no_sbw_flags("radius")?;
            let c = args
                .caliper
                .ok_or_else(|| usage("--matcher radius requires --caliper"))?;
            Ok(MatcherSpec::Radius {
                c,
                metric,
                synthetic: false,
            })
        }
        MatcherKind::Scm => {
            no_sbw_flags("scm")?;
            match (args.m, args.caliper) {
                (Some(m), None) => Ok(MatcherSpec::MNearest {
                    m,
                    metric,
                    synthetic: true,
                }),
                (None, Some(c)) => Ok(MatcherSpec::Radius {
                    c,
                    metric,
                    synthetic: true,
                }),
                (Some(_), Some(_)) => {
                    Err(usage("--matcher scm takes --M or --caliper, not both"))
                }
                (None, None) => Err(usage("--matcher scm requires --M or --caliper")),
            }
        }
        MatcherKind::Propensity => {
            no_caliper("propensity")?;
            no_sbw_flags("propensity")?;
            if args.standardized_distance {
                return Err(usage(
                    "--standardized-distance does not apply to --matcher propensity",
                ));
            }
            Ok(MatcherSpec::PropensityNearest {
                m: require_m("propensity")?,
            })
        }
        MatcherKind::Sbw => {
            no_m("sbw")?;
            no_caliper("sbw")?;
            if args.standardized_distance {
                return Err(usage(
                    "--standardized-distance does not apply to --matcher sbw; \
                     standardisation is the default, see --no-standardize",
                ));
            }
            Ok(MatcherSpec::Balancing {
                delta: args.delta.unwrap_or(0.05),
                standardize: !args.no_standardize,
                s2_neighbors: args.s2_neighbors.unwrap_or(4),
            })
        }
    }
}

/// Builds the variance spec, rejecting parameters of the methods that were
/// not selected.
fn variance_spec(args: &EstimateArgs) -> Result<VarianceSpec, UsageError> {
    if args.variance != VarianceKind::Ai06 && args.ai06_m.is_some() {
        return Err(usage("--ai06-m requires --variance ai06"));
    }
    if args.variance != VarianceKind::Bootstrap {
        if args.bootstrap_b.is_some() {
            return Err(usage("--bootstrap-b requires --variance bootstrap"));
        }
        if args.multiplier.is_some() {
            return Err(usage("--multiplier requires --variance bootstrap"));
        }
    }
    Ok(match args.variance {
        VarianceKind::Pooled => VarianceSpec::Pooled,
        VarianceKind::Ai06 => VarianceSpec::Ai06 {
            m: args.ai06_m.unwrap_or(2),
        },
        VarianceKind::Bootstrap => VarianceSpec::WildBootstrap {
            b: args.bootstrap_b.unwrap_or(200),
            multiplier: match args.multiplier.unwrap_or(MultiplierKind::Rademacher) {
                MultiplierKind::Rademacher => BootstrapMultiplier::Rademacher,
                MultiplierKind::Mammen => BootstrapMultiplier::Mammen,
            },
        },
    })
}

/// Parses and validates an argv vector into a run plan.
///
/// Returns a usage error (exit code 2 at the boundary) for unknown flags,
/// missing required flags, or flag combinations that mix methods.
pub fn parse_args<I, T>(argv: I) -> Result<RunPlan, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    plan_from(cli).map_err(|e| {
        clap::Error::raw(clap::error::ErrorKind::ArgumentConflict, format!("{e}\n"))
    })
}

fn plan_from(cli: Cli) -> Result<RunPlan, UsageError> {
    match cli.command {
        Command::Estimate(args) => {
            let matcher = matcher_spec(&args.matcher)?;
            let variance = variance_spec(&args)?;
            if matches!(matcher, MatcherSpec::Balancing { .. }) {
                if args.variance != VarianceKind::Pooled {
                    return Err(usage(
                        "--matcher sbw supports only --variance pooled",
                    ));
                }
                if args.debias {
                    return Err(usage("--debias does not apply to --matcher sbw"));
                }
            }
            if !(args.level > 0.0 && args.level < 1.0) {
                return Err(usage(format!(
                    "--level must lie strictly between 0 and 1, got {}",
                    args.level
                )));
            }
            let method = MethodSpec {
                name: method_label(&args),
                matcher,
                variance,
                debias: args.debias,
            };
            Ok(RunPlan::Estimate {
                input: args.input,
                method,
                seed: args.seed,
                level: args.level,
                out_dir: args.out_dir,
                threads: args.threads,
            })
        }
        Command::Simulate(args) => Ok(RunPlan::Simulate {
            config: args.config,
            out_dir: args.out_dir,
            threads: args.threads,
        }),
        Command::Diagnose(args) => {
            let matcher = matcher_spec(&args.matcher)?;
            Ok(RunPlan::Diagnose {
                input: args.input,
                matcher,
                out_dir: args.out_dir,
            })
        }
    }
}

/// Stable method label used in reports, derived from the selected flags.
fn method_label(args: &EstimateArgs) -> String {
    let matcher = match args.matcher.matcher {
        MatcherKind::Mnn => "mnn",
        MatcherKind::Radius => "radius",
        MatcherKind::Scm => "scm",
        MatcherKind::Propensity => "propensity",
        MatcherKind::Sbw => "sbw",
    };
    let variance = match args.variance {
        VarianceKind::Pooled => "pooled",
        VarianceKind::Ai06 => "ai06",
        VarianceKind::Bootstrap => "bootstrap",
    };
    let debias = if args.debias { "+debias" } else { "" };
    format!("{matcher}_{variance}{debias}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn estimate_argv(extra: &[&str]) -> Vec<String> {
        let mut argv = vec![
            "matchvar",
            "estimate",
            "--input",
            "d.csv",
            "--outcome-col",
            "y",
            "--treatment-col",
            "z",
            "--seed",
            "1",
        ]
        .into_iter()
        .map(str::to_owned)
        .collect::<Vec<_>>();
        argv.extend(extra.iter().map(|s| s.to_string()));
        argv
    }

    #[test]
    fn parses_mnn_pooled() {
        let plan = parse_args(estimate_argv(&[
            "--matcher", "mnn", "--M", "8", "--variance", "pooled",
        ]))
        .unwrap();
        match plan {
            RunPlan::Estimate { method, seed, .. } => {
                assert_eq!(seed, 1);
                assert_eq!(
                    method.matcher,
                    MatcherSpec::MNearest {
                        m: 8,
                        metric: Metric::Euclidean,
                        synthetic: false,
                    }
                );
                assert_eq!(method.variance, VarianceSpec::Pooled);
                assert_eq!(method.name, "mnn_pooled");
            }
            other => panic!("wrong plan: {other:?}"),
        }
    }

    #[test]
    fn rejects_m_with_radius() {
        let err = parse_args(estimate_argv(&[
            "--matcher", "radius", "--caliper", "1.0", "--M", "8", "--variance", "pooled",
        ]))
        .unwrap_err();
        assert!(err.to_string().contains("--M does not apply"), "{err}");
    }

    #[test]
    fn rejects_missing_required_flags() {
        assert!(parse_args(vec!["matchvar", "estimate", "--matcher", "mnn"]).is_err());
        assert!(parse_args(vec!["matchvar", "simulate"]).is_err());
    }

    #[test]
    fn rejects_unknown_flag() {
        let argv = estimate_argv(&[
            "--matcher", "mnn", "--M", "8", "--variance", "pooled", "--bogus",
        ]);
        assert!(parse_args(argv).is_err());
    }

    #[test]
    fn rejects_seedless_estimate() {
        let argv = vec![
            "matchvar",
            "estimate",
            "--input",
            "d.csv",
            "--outcome-col",
            "y",
            "--treatment-col",
            "z",
            "--matcher",
            "mnn",
            "--M",
            "2",
            "--variance",
            "pooled",
        ];
        assert!(parse_args(argv).is_err());
    }

    #[test]
    fn rejects_bootstrap_knobs_on_pooled() {
        let err = parse_args(estimate_argv(&[
            "--matcher",
            "mnn",
            "--M",
            "8",
            "--variance",
            "pooled",
            "--bootstrap-b",
            "100",
        ]))
        .unwrap_err();
        assert!(err.to_string().contains("--bootstrap-b"), "{err}");
    }

    #[test]
    fn scm_takes_m_or_caliper() {
        let plan = parse_args(estimate_argv(&[
            "--matcher", "scm", "--M", "20", "--variance", "pooled",
        ]))
        .unwrap();
        match plan {
            RunPlan::Estimate { method, .. } => assert_eq!(
                method.matcher,
                MatcherSpec::MNearest {
                    m: 20,
                    metric: Metric::Euclidean,
                    synthetic: true,
                }
            ),
            other => panic!("wrong plan: {other:?}"),
        }
        assert!(parse_args(estimate_argv(&[
            "--matcher", "scm", "--variance", "pooled",
        ]))
        .is_err());
    }

    #[test]
    fn sbw_defaults() {
        let plan = parse_args(estimate_argv(&[
            "--matcher", "sbw", "--variance", "pooled",
        ]))
        .unwrap();
        match plan {
            RunPlan::Estimate { method, .. } => assert_eq!(
                method.matcher,
                MatcherSpec::Balancing {
                    delta: 0.05,
                    standardize: true,
                    s2_neighbors: 4,
                }
            ),
            other => panic!("wrong plan: {other:?}"),
        }
    }

    #[test]
    fn simulate_plan_carries_paths() {
        let plan = parse_args(vec![
            "matchvar", "simulate", "--config", "study.cfg", "--out-dir", "out",
        ])
        .unwrap();
        match plan {
            RunPlan::Simulate {
                config, out_dir, ..
            } => {
                assert_eq!(config, PathBuf::from("study.cfg"));
                assert_eq!(out_dir, PathBuf::from("out"));
            }
            other => panic!("wrong plan: {other:?}"),
        }
    }
}
