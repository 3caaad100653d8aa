//! End-to-end estimation pipeline shared by the command-line interface and
//! the simulation engine: a [`MethodSpec`] names a matcher, a variance
//! method, and the debiasing switch, and [`run_method`] turns a dataset into
//! a point estimate with a confidence interval and diagnostics.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    self, att_estimate, debiased_att, fit_control_model, sbw_att, SbwSolution,
};
use crate::matching::{
    self, match_mnn, match_propensity, match_radius, scm_weights, MatchResult,
    Metric,
};
use crate::variance::{
    ai06_variance, pooled_variance, v_total_hat, wald_ci, wild_bootstrap_ci, BootstrapMultiplier,
    ConfidenceInterval, VarianceReport,
};

/// Salt XORed into the run seed before the cross-fitting fold shuffle so the
/// fold assignment does not reuse the same generator stream as the data.
const FOLD_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Matcher configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum MatcherSpec {
    /// Fixed number of nearest controls; uniform weights, or the
    /// synthetic-control solution within each neighbourhood when
    /// `synthetic` is set.
    MNearest {
        m: usize,
        metric: Metric,
        synthetic: bool,
    },
    /// All controls within the caliper `c * n_C^(-1/k)`; `synthetic`
    /// replaces the uniform within-cluster weights by the synthetic-control
    /// solution.
    Radius {
        c: f64,
        metric: Metric,
        synthetic: bool,
    },
    /// Nearest controls by fitted propensity score.
    PropensityNearest { m: usize },
    /// Balancing weights over all controls; `s2_neighbors` controls the
    /// companion matching used for the pooled noise level.
    Balancing {
        delta: f64,
        standardize: bool,
        s2_neighbors: usize,
    },
}

/// Interval construction.
#[derive(Debug, Clone, PartialEq)]
pub enum VarianceSpec {
    /// Pooled cluster variance with the reuse correction; Wald interval
    /// from the noise variance plus the floored heterogeneity component,
    /// which equals `max(ve_hat, v_total_hat / n_T)`.
    Pooled,
    /// Matched-pair comparison variance with `m` same-group neighbours.
    Ai06 { m: usize },
    /// Multiplier bootstrap percentile interval.
    WildBootstrap {
        b: usize,
        multiplier: BootstrapMultiplier,
    },
}

/// A named combination of matcher, variance method, and debiasing switch.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub matcher: MatcherSpec,
    pub variance: VarianceSpec,
    pub debias: bool,
}

impl MethodSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.matcher {
            MatcherSpec::MNearest { m, .. } | MatcherSpec::PropensityNearest { m } => {
                if *m == 0 {
                    return Err(Error::Parameter(format!(
                        "method {}: number of neighbours must be positive",
                        self.name
                    )));
                }
            }
            MatcherSpec::Radius { c, .. } => {
                if !(*c > 0.0) {
                    return Err(Error::Parameter(format!(
                        "method {}: radius constant must be positive, got {c}",
                        self.name
                    )));
                }
            }
            MatcherSpec::Balancing {
                delta,
                s2_neighbors,
                ..
            } => {
                if !(*delta >= 0.0) {
                    return Err(Error::Parameter(format!(
                        "method {}: balance tolerance must be nonnegative, got {delta}",
                        self.name
                    )));
                }
                if *s2_neighbors == 0 {
                    return Err(Error::Parameter(format!(
                        "method {}: companion neighbour count must be positive",
                        self.name
                    )));
                }
                if self.debias {
                    return Err(Error::Parameter(format!(
                        "method {}: debiasing is not supported with balancing weights",
                        self.name
                    )));
                }
                if self.variance != VarianceSpec::Pooled {
                    return Err(Error::Parameter(format!(
                        "method {}: balancing weights support only the pooled variance",
                        self.name
                    )));
                }
            }
        }
        match &self.variance {
            VarianceSpec::Ai06 { m } if *m == 0 => Err(Error::Parameter(format!(
                "method {}: comparison variance needs at least one neighbour",
                self.name
            ))),
            VarianceSpec::WildBootstrap { b, .. } if *b < 100 => Err(Error::Parameter(format!(
                "method {}: bootstrap needs at least 100 replicates, got {b}",
                self.name
            ))),
            _ => Ok(()),
        }
    }
}

/// Everything one method produced on one dataset.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub name: String,
    /// Matched estimate before any regression adjustment.
    pub tau_hat: f64,
    /// Point estimate the interval is centred on (debiased when requested).
    pub estimate: f64,
    pub interval: ConfidenceInterval,
    /// Per-estimate standard error behind a Wald interval; absent for the
    /// bootstrap.
    pub se: Option<f64>,
    /// `sqrt(ve_hat)`, the noise-only standard error; pooled methods only.
    pub se_e: Option<f64>,
    /// Full pooled-variance decomposition when the pooled method ran.
    pub variance: Option<VarianceReport>,
    /// Mean per-cluster effective sample size of the match weights (for
    /// balancing weights, the ESS of the single weighted control sample).
    pub ess: Option<f64>,
    pub n_matched_treated: usize,
    pub n_unmatched_treated: usize,
    /// Mean number of other treated units sharing at least one control;
    /// absent for balancing weights, which have no clusters.
    pub mean_shared_controls: Option<f64>,
    /// Balancing-weight solve details when that matcher ran.
    pub balance: Option<SbwSolution>,
}

/// Runs every method on the same dataset, reusing match results across
/// methods that share a matcher configuration. Returns one result per
/// method, in order.
pub fn run_methods(
    data: &Dataset,
    methods: &[MethodSpec],
    seed: u64,
    level: f64,
) -> Vec<Result<MethodOutput>> {
    let mut match_cache: Vec<(MatcherSpec, Result<MatchResult>)> = Vec::new();
    let mut model_cache: Option<Result<estimators::ControlModel>> = None;
    methods
        .iter()
        .map(|spec| run_method_cached(data, spec, seed, level, &mut match_cache, &mut model_cache))
        .collect()
}

/// Runs a single method on a dataset.
pub fn run_method(
    data: &Dataset,
    spec: &MethodSpec,
    seed: u64,
    level: f64,
) -> Result<MethodOutput> {
    let mut match_cache = Vec::new();
    let mut model_cache = None;
    run_method_cached(data, spec, seed, level, &mut match_cache, &mut model_cache)
}

fn run_method_cached(
    data: &Dataset,
    spec: &MethodSpec,
    seed: u64,
    level: f64,
    match_cache: &mut Vec<(MatcherSpec, Result<MatchResult>)>,
    model_cache: &mut Option<Result<estimators::ControlModel>>,
) -> Result<MethodOutput> {
    spec.validate()?;
    data.check_estimable()?;
    if let MatcherSpec::Balancing {
        delta,
        standardize,
        s2_neighbors,
    } = spec.matcher
    {
        return run_balancing(data, spec, delta, standardize, s2_neighbors, level);
    }

    if !match_cache.iter().any(|(k, _)| k == &spec.matcher) {
        let result = build_match(data, &spec.matcher);
        match_cache.push((spec.matcher.clone(), result));
    }
    let matched = match &match_cache.iter().find(|(k, _)| k == &spec.matcher).unwrap().1 {
        Ok(m) => m.clone(),
        Err(e) => return Err(clone_error(e)),
    };

    let raw = att_estimate(data, &matched)?;
    let est = if spec.debias {
        if model_cache.is_none() {
            *model_cache = Some(fit_control_model(data, seed ^ FOLD_SEED_SALT));
        }
        match model_cache.as_ref().unwrap() {
            Ok(model) => debiased_att(data, &matched, model)?,
            Err(e) => return Err(clone_error(e)),
        }
    } else {
        raw.clone()
    };

    let n_t = est.contributions.len();
    let cluster_ess = matching::mean_cluster_ess(&matched);
    let diag = matching::diagnostics(&matched, data);

    let (interval, se, se_e, variance) = match &spec.variance {
        VarianceSpec::Pooled => {
            let pooled = pooled_variance(data, &matched)?;
            let report = v_total_hat(data, &matched, &est, &pooled);
            // Per-estimate Wald variance: noise component plus the floored
            // heterogeneity component, i.e. max(ve_hat, v_total_hat / n_T).
            let per_estimate = report.ve_hat + report.vp_hat;
            let ci = wald_ci(est.estimate, per_estimate, level, "wald_pooled")?;
            (
                ci,
                Some(per_estimate.sqrt()),
                Some(report.ve_hat.sqrt()),
                Some(report),
            )
        }
        VarianceSpec::Ai06 { m } => {
            let v = ai06_variance(data, &matched, *m)?;
            let ci = wald_ci(est.estimate, v.v, level, "wald_ai06")?;
            (ci, Some(v.v.sqrt()), None, None)
        }
        VarianceSpec::WildBootstrap { b, multiplier } => {
            let boot = wild_bootstrap_ci(&est, *b, seed, level, *multiplier)?;
            (boot.interval, None, None, None)
        }
    };

    Ok(MethodOutput {
        name: spec.name.clone(),
        tau_hat: raw.estimate,
        estimate: est.estimate,
        interval,
        se,
        se_e,
        variance,
        ess: Some(cluster_ess),
        n_matched_treated: n_t,
        n_unmatched_treated: est.n_unmatched,
        mean_shared_controls: Some(diag.mean_shared_controls),
        balance: None,
    })
}

/// Builds the match result for any cluster-forming matcher. Balancing
/// weights have no clusters and are rejected here; they are handled by the
/// dedicated balancing path inside [`run_method`].
pub fn build_match(data: &Dataset, matcher: &MatcherSpec) -> Result<MatchResult> {
    match matcher {
        MatcherSpec::MNearest {
            m,
            metric,
            synthetic,
        } => {
            let base = match_mnn(data, *m, *metric)?;
            if *synthetic {
                scm_weights(data, &base)
            } else {
                Ok(base)
            }
        }
        MatcherSpec::Radius {
            c,
            metric,
            synthetic,
        } => {
            let base = match_radius(data, *c, *metric)?;
            if *synthetic {
                scm_weights(data, &base)
            } else {
                Ok(base)
            }
        }
        MatcherSpec::PropensityNearest { m } => match_propensity(data, *m),
        MatcherSpec::Balancing { .. } => Err(Error::Parameter(
            "balancing weights do not form matched clusters".into(),
        )),
    }
}

/// Balancing-weight path: weights solve on (optionally standardised)
/// covariates, the point estimate is the weighted mean difference, and the
/// interval uses the noise variance with the pooled level taken from a
/// companion nearest-neighbour matching.
fn run_balancing(
    data: &Dataset,
    spec: &MethodSpec,
    delta: f64,
    standardize: bool,
    s2_neighbors: usize,
    level: f64,
) -> Result<MethodOutput> {
    let working = if standardize {
        data.standardized_covariates()
    } else {
        data.clone()
    };
    let solution = estimators::sbw_weights(&working, delta)?;
    let estimate = sbw_att(data, &solution);

    let companion = match_mnn(&working, s2_neighbors, Metric::Euclidean)?;
    let pooled = pooled_variance(data, &companion)?;
    let (treated, _) = data.split_by_treatment();
    let ve = crate::variance::ve_hat(pooled.s2, treated.len(), solution.ess);
    let interval = wald_ci(estimate, ve, level, "wald_pooled")?;

    Ok(MethodOutput {
        name: spec.name.clone(),
        tau_hat: estimate,
        estimate,
        interval,
        se: Some(ve.sqrt()),
        se_e: Some(ve.sqrt()),
        variance: None,
        ess: Some(solution.ess),
        n_matched_treated: treated.len(),
        n_unmatched_treated: 0,
        mean_shared_controls: None,
        balance: Some(solution),
    })
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::Schema(s) => Error::Schema(s.clone()),
        Error::Parse {
            row,
            column,
            detail,
        } => Error::Parse {
            row: *row,
            column: column.clone(),
            detail: detail.clone(),
        },
        Error::Validation(s) => Error::Validation(s.clone()),
        Error::Parameter(s) => Error::Parameter(s.clone()),
        Error::Estimation(s) => Error::Estimation(s.clone()),
        Error::Fitting(s) => Error::Fitting(s.clone()),
        Error::Infeasible {
            delta,
            min_max_imbalance,
        } => Error::Infeasible {
            delta: *delta,
            min_max_imbalance: *min_max_imbalance,
        },
        Error::Io(io) => Error::Estimation(format!("i/o failure during estimation: {io}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::rng::Rng64;

    fn linear_dataset(n: usize, seed: u64) -> Dataset {
        // Controls on a noisy line, treated shifted by 2.
        let mut rng = Rng64::seed_from(seed);
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        let mut zs = Vec::new();
        for i in 0..n {
            let x = rng.uniform() * 4.0;
            let z = i % 4 == 0;
            let y = 1.0 + 0.5 * x + if z { 2.0 } else { 0.0 } + 0.01 * rng.normal();
            rows.push(vec![x]);
            ys.push(y);
            zs.push(z);
        }
        Dataset::with_index_ids(rows, ys, zs).unwrap()
    }

    fn mnn_pooled(name: &str, m: usize, debias: bool) -> MethodSpec {
        MethodSpec {
            name: name.into(),
            matcher: MatcherSpec::MNearest {
                m,
                metric: Metric::Euclidean,
                synthetic: false,
            },
            variance: VarianceSpec::Pooled,
            debias,
        }
    }

    #[test]
    fn pooled_pipeline_recovers_a_plain_shift() {
        let data = linear_dataset(80, 11);
        let out = run_method(&data, &mnn_pooled("base", 3, false), 5, 0.95).unwrap();
        assert!((out.estimate - 2.0).abs() < 0.3, "estimate {}", out.estimate);
        assert!(out.interval.lower <= out.estimate && out.estimate <= out.interval.upper);
        assert!(out.se.unwrap() > 0.0);
        assert!(out.variance.is_some());
        assert_eq!(out.n_unmatched_treated, 0);
    }

    #[test]
    fn debias_tightens_the_linear_bias() {
        // With a linear outcome and one-sided matching the raw estimate
        // carries a visible bias; the regression adjustment removes it.
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        let mut zs = Vec::new();
        for i in 0..40 {
            let x = i as f64 / 10.0;
            rows.push(vec![x]);
            ys.push(3.0 * x);
            zs.push(false);
        }
        // Treated beyond the control range, so every neighbourhood sits
        // entirely below the treated point and the raw estimate inherits
        // the slope times the matching discrepancy.
        for &x in &[4.0, 4.15, 4.3] {
            rows.push(vec![x]);
            ys.push(3.0 * x + 1.0);
            zs.push(true);
        }
        let data = Dataset::with_index_ids(rows, ys, zs).unwrap();
        let raw = run_method(&data, &mnn_pooled("raw", 4, false), 9, 0.95).unwrap();
        let adj = run_method(&data, &mnn_pooled("adj", 4, true), 9, 0.95).unwrap();
        assert!((adj.estimate - 1.0).abs() < (raw.estimate - 1.0).abs());
        assert!((adj.estimate - 1.0).abs() < 1e-6);
        assert_eq!(adj.tau_hat, raw.tau_hat);
    }

    #[test]
    fn methods_sharing_a_matcher_agree_on_the_point_estimate() {
        let data = linear_dataset(60, 3);
        let specs = vec![
            mnn_pooled("pooled", 2, true),
            MethodSpec {
                name: "boot".into(),
                matcher: MatcherSpec::MNearest {
                    m: 2,
                    metric: Metric::Euclidean,
                    synthetic: false,
                },
                variance: VarianceSpec::WildBootstrap {
                    b: 200,
                    multiplier: BootstrapMultiplier::Rademacher,
                },
                debias: true,
            },
        ];
        let outs = run_methods(&data, &specs, 21, 0.95);
        let a = outs[0].as_ref().unwrap();
        let b = outs[1].as_ref().unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert!(b.se.is_none());
    }

    #[test]
    fn pipeline_is_seed_deterministic() {
        let data = linear_dataset(60, 8);
        let spec = mnn_pooled("det", 2, true);
        let a = run_method(&data, &spec, 77, 0.95).unwrap();
        let b = run_method(&data, &spec, 77, 0.95).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.interval.lower.to_bits(), b.interval.lower.to_bits());
        let c = run_method(&data, &spec, 78, 0.95).unwrap();
        // Same matching, different fold shuffle.
        assert_eq!(a.tau_hat.to_bits(), c.tau_hat.to_bits());
    }

    #[test]
    fn balancing_path_reports_weights_and_interval() {
        let data = linear_dataset(80, 4);
        let spec = MethodSpec {
            name: "sbw".into(),
            matcher: MatcherSpec::Balancing {
                delta: 0.05,
                standardize: true,
                s2_neighbors: 4,
            },
            variance: VarianceSpec::Pooled,
            debias: false,
        };
        let out = run_method(&data, &spec, 13, 0.95).unwrap();
        let sol = out.balance.as_ref().unwrap();
        assert!(sol.kkt_residual <= 1e-8);
        assert!((out.estimate - 2.0).abs() < 0.3, "estimate {}", out.estimate);
        assert!(out.mean_shared_controls.is_none());
        assert!(out.se_e.unwrap() > 0.0);
    }

    #[test]
    fn invalid_method_specs_are_rejected() {
        let bad_debias = MethodSpec {
            name: "x".into(),
            matcher: MatcherSpec::Balancing {
                delta: 0.1,
                standardize: false,
                s2_neighbors: 4,
            },
            variance: VarianceSpec::Pooled,
            debias: true,
        };
        assert!(bad_debias.validate().is_err());

        let bad_boot = MethodSpec {
            name: "x".into(),
            matcher: MatcherSpec::MNearest {
                m: 1,
                metric: Metric::Euclidean,
                synthetic: false,
            },
            variance: VarianceSpec::WildBootstrap {
                b: 50,
                multiplier: BootstrapMultiplier::Rademacher,
            },
            debias: false,
        };
        assert!(bad_boot.validate().is_err());

        let bad_radius = MethodSpec {
            name: "x".into(),
            matcher: MatcherSpec::Radius {
                c: 0.0,
                metric: Metric::Euclidean,
                synthetic: false,
            },
            variance: VarianceSpec::Pooled,
            debias: false,
        };
        assert!(bad_radius.validate().is_err());
    }

    #[test]
    fn ai06_interval_is_symmetric_about_the_estimate() {
        let data = linear_dataset(80, 15);
        let spec = MethodSpec {
            name: "cmp".into(),
            matcher: MatcherSpec::MNearest {
                m: 2,
                metric: Metric::Euclidean,
                synthetic: false,
            },
            variance: VarianceSpec::Ai06 { m: 2 },
            debias: false,
        };
        let out = run_method(&data, &spec, 30, 0.95).unwrap();
        let mid = 0.5 * (out.interval.lower + out.interval.upper);
        assert!((mid - out.estimate).abs() < 1e-12);
        assert!(out.variance.is_none());
    }
}
