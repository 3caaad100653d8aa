//! Monte Carlo coverage engine: drives the synthetic data generators
//! through the estimation pipeline over many seeded replications, tallies
//! interval coverage against a configurable target, and provides sampling
//! and regularity diagnostics.
//!
//! Replications run in parallel but are collected in replication order, and
//! every random quantity is derived arithmetically from the base seed, so a
//! given specification always produces a bit-identical report.

pub mod dgp;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matching::{self, MatchDiagnostics, MatchResult};
use crate::pipeline::{self, MethodOutput, MethodSpec};
use crate::rng::RNG_ALGORITHM;
use crate::stats::{ks_test_standard_normal, KsTest};

pub use dgp::{
    gen_che, gen_kang_schafer, gen_otsu_rai, CheParams, DgpConfig, OtsuRaiParams, OverlapLevel,
};

/// Which quantity a confidence interval must contain to count as covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageTarget {
    /// The population mean effect of the configuration (the default).
    PopulationAtt,
    /// The realised sample mean effect of each replication.
    Satt,
}

impl CoverageTarget {
    /// Stable lowercase name used in configs and reports.
    pub fn name(self) -> &'static str {
        match self {
            CoverageTarget::PopulationAtt => "population_att",
            CoverageTarget::Satt => "satt",
        }
    }

    /// Parses the lowercase name produced by [`CoverageTarget::name`].
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "population_att" => Ok(CoverageTarget::PopulationAtt),
            "satt" => Ok(CoverageTarget::Satt),
            other => Err(Error::Parameter(format!(
                "unknown coverage target '{other}', expected population_att or satt"
            ))),
        }
    }
}

/// Full description of one Monte Carlo study.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub dgp: DgpConfig,
    pub n_reps: usize,
    pub base_seed: u64,
    /// Nominal confidence level of every interval.
    pub level: f64,
    pub target: CoverageTarget,
    pub methods: Vec<MethodSpec>,
}

impl SimulationSpec {
    /// Validates the study description without running anything.
    pub fn validate(&self) -> Result<()> {
        if self.n_reps == 0 {
            return Err(Error::Parameter("n_reps must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Parameter(format!(
                "confidence level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Parameter(
                "a simulation needs at least one method".into(),
            ));
        }
        self.dgp.validate()?;
        for (i, m) in self.methods.iter().enumerate() {
            m.validate()?;
            if self.methods[..i].iter().any(|other| other.name == m.name) {
                return Err(Error::Parameter(format!(
                    "duplicate method name '{}'",
                    m.name
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of one method on one replication. Numeric fields are absent when
/// the method failed on that replication, and `error` holds the message.
#[derive(Debug, Clone)]
pub struct MethodRepRecord {
    pub method: String,
    pub estimate: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    /// Standard error implied by the interval's variance estimate.
    pub se: Option<f64>,
    /// Noise-only standard error, when the variance method reports one.
    pub se_e: Option<f64>,
    pub ess: Option<f64>,
    /// Per-estimate total variance, when the pooled decomposition ran.
    pub v_over_nt: Option<f64>,
    pub shared_controls: Option<f64>,
    pub covered: Option<bool>,
    pub error: Option<String>,
}

impl MethodRepRecord {
    fn from_output(out: &MethodOutput, target: f64) -> Self {
        let v_over_nt = out.variance.as_ref().and_then(|v| {
            (out.n_matched_treated > 0).then(|| v.v_total_hat / out.n_matched_treated as f64)
        });
        MethodRepRecord {
            method: out.name.clone(),
            estimate: Some(out.estimate),
            ci_lower: Some(out.interval.lower),
            ci_upper: Some(out.interval.upper),
            se: out.se,
            se_e: out.se_e,
            ess: out.ess,
            v_over_nt,
            shared_controls: out.mean_shared_controls,
            covered: Some(out.interval.lower <= target && target <= out.interval.upper),
            error: None,
        }
    }

    fn failed(method: String, message: String) -> Self {
        MethodRepRecord {
            method,
            estimate: None,
            ci_lower: None,
            ci_upper: None,
            se: None,
            se_e: None,
            ess: None,
            v_over_nt: None,
            shared_controls: None,
            covered: None,
            error: Some(message),
        }
    }
}

/// Raw record of one replication.
#[derive(Debug, Clone)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub satt: f64,
    pub population_att: f64,
    pub methods: Vec<MethodRepRecord>,
}

/// Per-method aggregate over all replications. Means are taken over the
/// successful replications; optional quantities are averaged over the
/// replications that reported them and are NaN when none did.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub name: String,
    pub n_success: usize,
    pub n_failed: usize,
    /// Fraction of successful replications whose interval contains the
    /// target.
    pub coverage: f64,
    pub mean_ci_length: f64,
    pub mean_se: f64,
    pub mean_se_e: f64,
    pub mean_ess: f64,
    pub mean_shared_controls: f64,
    pub mean_v_over_nt: f64,
    pub mean_estimate: f64,
    /// Sample standard deviation of `estimate - satt` across successful
    /// replications; the empirical counterpart of the noise-only standard
    /// error.
    pub sd_vs_satt: f64,
}

/// Everything a coverage study produces: per-method aggregates plus the raw
/// per-replication records, sorted by replication index.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub rng_algorithm: String,
    pub dgp: String,
    pub n_reps: usize,
    pub base_seed: u64,
    pub level: f64,
    pub target: CoverageTarget,
    pub population_att: f64,
    pub methods: Vec<MethodSummary>,
    pub replications: Vec<RepRecord>,
    /// Methods that failed on more than 5% of replications.
    pub flagged_methods: Vec<String>,
}

/// Caps the number of worker threads used by [`run_coverage`]. Has to be
/// called before the first parallel run; later calls return an error from
/// the underlying pool builder.
pub fn set_max_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Parameter("thread cap must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Parameter(format!("thread pool setup failed: {e}")))
}

/// Runs the full coverage study. Replication `r` uses seed
/// `base_seed + r` (wrapping); every configured method sees the same
/// dataset within a replication. Per-replication estimation failures are
/// recorded in the raw records rather than aborting the study, and a method
/// failing on more than 5% of replications is flagged.
pub fn run_coverage(spec: &SimulationSpec) -> Result<CoverageReport> {
    spec.validate()?;
    let population_att = spec.dgp.population_att();

    let replications: Vec<RepRecord> = (0..spec.n_reps)
        .into_par_iter()
        .map(|rep| run_one_rep(spec, rep, population_att))
        .collect::<Result<Vec<_>>>()?;

    let methods: Vec<MethodSummary> = spec
        .methods
        .iter()
        .enumerate()
        .map(|(k, m)| summarize_method(&m.name, k, &replications))
        .collect();
    let flagged_methods = methods
        .iter()
        .filter(|s| s.n_failed as f64 > 0.05 * spec.n_reps as f64)
        .map(|s| s.name.clone())
        .collect();

    Ok(CoverageReport {
        rng_algorithm: RNG_ALGORITHM.to_string(),
        dgp: spec.dgp.name(),
        n_reps: spec.n_reps,
        base_seed: spec.base_seed,
        level: spec.level,
        target: spec.target,
        population_att,
        methods,
        replications,
        flagged_methods,
    })
}

fn run_one_rep(spec: &SimulationSpec, rep: usize, population_att: f64) -> Result<RepRecord> {
    let seed = spec.base_seed.wrapping_add(rep as u64);
    let (data, truth) = spec.dgp.generate(seed)?;
    let target = match spec.target {
        CoverageTarget::PopulationAtt => population_att,
        CoverageTarget::Satt => truth.satt,
    };
    let outputs = pipeline::run_methods(&data, &spec.methods, seed, spec.level);
    let methods = outputs
        .into_iter()
        .zip(&spec.methods)
        .map(|(out, m)| match out {
            Ok(o) => MethodRepRecord::from_output(&o, target),
            Err(e) => MethodRepRecord::failed(m.name.clone(), e.to_string()),
        })
        .collect();
    Ok(RepRecord {
        rep,
        seed,
        satt: truth.satt,
        population_att,
        methods,
    })
}

fn summarize_method(name: &str, k: usize, replications: &[RepRecord]) -> MethodSummary {
    let mut n_success = 0usize;
    let mut n_failed = 0usize;
    let mut n_covered = 0usize;
    let mut ci_length = Mean::new();
    let mut se = Mean::new();
    let mut se_e = Mean::new();
    let mut ess = Mean::new();
    let mut shared = Mean::new();
    let mut v_over_nt = Mean::new();
    let mut estimate = Mean::new();
    let mut errors: Vec<f64> = Vec::new();

    for rep in replications {
        let r = &rep.methods[k];
        if r.error.is_some() {
            n_failed += 1;
            continue;
        }
        n_success += 1;
        if r.covered == Some(true) {
            n_covered += 1;
        }
        if let (Some(lo), Some(hi)) = (r.ci_lower, r.ci_upper) {
            ci_length.push(hi - lo);
        }
        se.push_opt(r.se);
        se_e.push_opt(r.se_e);
        ess.push_opt(r.ess);
        shared.push_opt(r.shared_controls);
        v_over_nt.push_opt(r.v_over_nt);
        if let Some(est) = r.estimate {
            estimate.push(est);
            errors.push(est - rep.satt);
        }
    }

    let coverage = if n_success > 0 {
        n_covered as f64 / n_success as f64
    } else {
        f64::NAN
    };
    MethodSummary {
        name: name.to_string(),
        n_success,
        n_failed,
        coverage,
        mean_ci_length: ci_length.value(),
        mean_se: se.value(),
        mean_se_e: se_e.value(),
        mean_ess: ess.value(),
        mean_shared_controls: shared.value(),
        mean_v_over_nt: v_over_nt.value(),
        mean_estimate: estimate.value(),
        sd_vs_satt: sample_sd(&errors),
    }
}

/// Running mean that is NaN when nothing was pushed.
struct Mean {
    total: f64,
    n: usize,
}

impl Mean {
    fn new() -> Self {
        Mean { total: 0.0, n: 0 }
    }

    fn push(&mut self, v: f64) {
        self.total += v;
        self.n += 1;
    }

    fn push_opt(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.push(v);
        }
    }

    fn value(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.total / self.n as f64
        }
    }
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// Result of the sampling-distribution diagnostic.
#[derive(Debug, Clone)]
pub struct CltDiagnostic {
    /// Per-replication `(estimate - satt) / se_e` for the first method.
    pub standardized: Vec<f64>,
    pub ks: KsTest,
}

/// Standardizes the first method's estimates by its noise-only standard
/// error against each replication's realised sample effect, and tests the
/// standardized values against the standard normal law.
pub fn clt_diagnostic(spec: &SimulationSpec) -> Result<CltDiagnostic> {
    if spec.n_reps < 100 {
        return Err(Error::Parameter(format!(
            "the sampling-distribution diagnostic needs at least 100 replications, got {}",
            spec.n_reps
        )));
    }
    let report = run_coverage(spec)?;
    let mut standardized = Vec::with_capacity(report.replications.len());
    for rep in &report.replications {
        let m = &rep.methods[0];
        if let (Some(est), Some(se_e)) = (m.estimate, m.se_e) {
            if se_e > 0.0 {
                standardized.push((est - rep.satt) / se_e);
            }
        }
    }
    if standardized.is_empty() {
        return Err(Error::Estimation(
            "the first method never reported a noise standard error".into(),
        ));
    }
    let ks = ks_test_standard_normal(&standardized)?;
    Ok(CltDiagnostic { standardized, ks })
}

/// Regularity diagnostics for a matched configuration.
#[derive(Debug, Clone)]
pub struct AssumptionDiagnostics {
    /// Max over clusters of (sup gradient norm of the control surface over
    /// the cluster's points) times the cluster's covariate-space radius.
    /// Absent when no surface was supplied or no cluster could be
    /// evaluated.
    pub derivative_control: Option<f64>,
    /// Clusters whose surface evaluation failed (outside the surface's
    /// domain).
    pub n_clusters_skipped: usize,
    /// Radius, reuse and tail diagnostics of the matching itself.
    pub matching: MatchDiagnostics,
}

/// Control surface on the covariate scale: returns `None` outside its
/// domain.
pub type Surface<'a> = &'a dyn Fn(&[f64]) -> Option<f64>;

/// Evaluates the derivative-control statistic
/// `max_t sup_{x in C_t} ||grad f0(x)|| * r(C_t)` by centered finite
/// differences on the supplied control surface, together with the matching
/// diagnostics. Radii here are raw Euclidean distances in covariate space,
/// matching the scale on which the gradient is taken. Without a surface the
/// derivative statistic is absent and only the matching diagnostics are
/// reported.
pub fn assumption_diagnostics(
    data: &Dataset,
    m: &MatchResult,
    surface: Option<Surface<'_>>,
) -> AssumptionDiagnostics {
    let matching = matching::diagnostics(m, data);
    let Some(f) = surface else {
        return AssumptionDiagnostics {
            derivative_control: None,
            n_clusters_skipped: 0,
            matching,
        };
    };

    let mut worst: Option<f64> = None;
    let mut skipped = 0usize;
    for cluster in &m.clusters {
        let t = cluster.treated;
        let radius = cluster
            .controls
            .iter()
            .map(|&j| euclidean(data.covariates(t), data.covariates(j)))
            .fold(0.0f64, f64::max);
        let mut grad_sup: Option<f64> = None;
        for &i in std::iter::once(&t).chain(cluster.controls.iter()) {
            if let Some(g) = gradient_norm(f, data.covariates(i)) {
                grad_sup = Some(grad_sup.map_or(g, |cur: f64| cur.max(g)));
            }
        }
        match grad_sup {
            Some(g) => {
                let stat = g * radius;
                worst = Some(worst.map_or(stat, |cur: f64| cur.max(stat)));
            }
            None => skipped += 1,
        }
    }

    AssumptionDiagnostics {
        derivative_control: worst,
        n_clusters_skipped: skipped,
        matching,
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean norm of the centered-finite-difference gradient, with a
/// coordinate-relative step. `None` when any required surface evaluation
/// fails.
fn gradient_norm(f: Surface<'_>, x: &[f64]) -> Option<f64> {
    let mut point = x.to_vec();
    let mut sum_sq = 0.0;
    for i in 0..x.len() {
        let h = 1e-5 * (1.0 + x[i].abs());
        point[i] = x[i] + h;
        let up = f(&point)?;
        point[i] = x[i] - h;
        let down = f(&point)?;
        point[i] = x[i];
        let d = (up - down) / (2.0 * h);
        sum_sq += d * d;
    }
    Some(sum_sq.sqrt())
}
