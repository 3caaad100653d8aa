//! Construction of matched control clusters for each treated unit, weight
//! aggregation across clusters, and reuse diagnostics.
//!
//! Matchers:
//! * [`match_mnn`]: fixed-M nearest neighbours with replacement, uniform
//!   weights `1/M`.
//! * [`match_radius`]: all controls within a caliper `c * n_C^(-1/k)`;
//!   treated units with no control in range are reported as unmatched.
//! * [`scm_weights`]: re-solves the weights of an existing match so each
//!   cluster's weighted covariate mean tracks its treated unit as closely
//!   as possible (a synthetic-control objective on the cluster).
//! * [`match_propensity`]: M nearest neighbours on a fitted logistic score.
//!
//! Distance ties are broken towards the smaller control row index, which
//! makes every matcher fully deterministic.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::simplex;

/// Covariate distance used by the matchers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Plain Euclidean distance on raw covariates.
    Euclidean,
    /// Euclidean distance after dividing each covariate by its full-sample
    /// standard deviation; constant covariates contribute zero.
    Standardized,
}

/// How a [`MatchResult`] was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum MatchMethod {
    MNearest { m: usize },
    Radius { c: f64, caliper: f64 },
    Synthetic,
    PropensityNearest { m: usize },
}

/// One treated unit with its matched controls and simplex weights.
#[derive(Debug, Clone)]
pub struct MatchedCluster {
    pub treated: usize,
    pub controls: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Matched clusters for all treated units that found controls, plus the
/// treated units that did not.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub clusters: Vec<MatchedCluster>,
    pub unmatched_treated: Vec<usize>,
    pub metric: Metric,
    pub method: MatchMethod,
}

impl MatchResult {
    /// Number of treated units with a nonempty cluster.
    pub fn n_matched(&self) -> usize {
        self.clusters.len()
    }
}

/// Aggregate control weights across clusters.
#[derive(Debug, Clone)]
pub struct WeightAggregate {
    /// `w_j = sum_t w_jt`, indexed by dataset row (zero for treated rows).
    pub total_weight: Vec<f64>,
    /// Number of clusters each row appears in.
    pub reuse_count: Vec<usize>,
    /// `sum_j K(j)`, which equals the total number of matched pairs.
    pub total_matches: usize,
    /// Effective sample size `(sum_j w_j)^2 / sum_j w_j^2`.
    pub ess: f64,
}

/// Cluster geometry and control-reuse summary.
#[derive(Debug, Clone)]
pub struct MatchDiagnostics {
    /// Matching radius `r(C_t)` per cluster, aligned with `clusters`.
    pub radii: Vec<f64>,
    /// Mean over treated units of how many other treated units share at
    /// least one matched control with it.
    pub mean_shared_controls: f64,
    /// Empirical survival `P(n_C^(1/k) * r > u)` on the grid
    /// `u = 0.5, 1.0, ..., 5.0`.
    pub scaled_radius_tail: Vec<(f64, f64)>,
    /// Treated units left without any matched control.
    pub n_unmatched: usize,
}

pub(crate) struct DistanceCalc<'a> {
    data: &'a Dataset,
    inv_scales: Option<Vec<f64>>,
}

impl<'a> DistanceCalc<'a> {
    pub(crate) fn new(data: &'a Dataset, metric: Metric) -> Self {
        let inv_scales = match metric {
            Metric::Euclidean => None,
            Metric::Standardized => Some(
                data.covariate_sds()
                    .into_iter()
                    .map(|sd| if sd > 0.0 { 1.0 / sd } else { 0.0 })
                    .collect(),
            ),
        };
        DistanceCalc { data, inv_scales }
    }

    pub(crate) fn dist(&self, i: usize, j: usize) -> f64 {
        let a = self.data.covariates(i);
        let b = self.data.covariates(j);
        let mut acc = 0.0;
        match &self.inv_scales {
            None => {
                for (x, y) in a.iter().zip(b) {
                    let d = x - y;
                    acc += d * d;
                }
            }
            Some(scales) => {
                for ((x, y), s) in a.iter().zip(b).zip(scales) {
                    let d = (x - y) * s;
                    acc += d * d;
                }
            }
        }
        acc.sqrt()
    }

    /// Covariate row `i` with the metric's scaling applied.
    fn scaled_row(&self, i: usize) -> Vec<f64> {
        let row = self.data.covariates(i);
        match &self.inv_scales {
            None => row.to_vec(),
            Some(scales) => row.iter().zip(scales).map(|(x, s)| x * s).collect(),
        }
    }
}

/// Indices of the `m` nearest entries of `dists`, ties towards the smaller
/// index; also returns the largest selected distance.
fn m_smallest(dists: &[(usize, f64)], m: usize) -> (Vec<usize>, f64) {
    let mut order: Vec<&(usize, f64)> = dists.iter().collect();
    order.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let picked: Vec<usize> = order.iter().take(m).map(|e| e.0).collect();
    let radius = order[m - 1].1;
    (picked, radius)
}

/// Matches each treated unit to its `m` nearest controls (with replacement
/// across treated units) under `metric`, weighting each control `1/m`.
pub fn match_mnn(data: &Dataset, m: usize, metric: Metric) -> Result<MatchResult> {
    data.check_estimable()?;
    let (treated, controls) = data.split_by_treatment();
    if m == 0 {
        return Err(Error::Parameter("M must be at least 1".into()));
    }
    if m > controls.len() {
        return Err(Error::Parameter(format!(
            "M = {m} exceeds the {} available controls",
            controls.len()
        )));
    }
    let calc = DistanceCalc::new(data, metric);
    let clusters: Vec<MatchedCluster> = treated
        .par_iter()
        .map(|&t| {
            let dists: Vec<(usize, f64)> =
                controls.iter().map(|&j| (j, calc.dist(t, j))).collect();
            let (picked, _) = m_smallest(&dists, m);
            let w = 1.0 / m as f64;
            MatchedCluster {
                treated: t,
                weights: vec![w; picked.len()],
                controls: picked,
            }
        })
        .collect();
    Ok(MatchResult {
        clusters,
        unmatched_treated: Vec::new(),
        metric,
        method: MatchMethod::MNearest { m },
    })
}

/// Matches each treated unit to every control within the caliper
/// `c * n_C^(-1/k)` (boundary inclusive), with uniform weights. Treated
/// units with an empty neighbourhood are recorded in `unmatched_treated`.
pub fn match_radius(data: &Dataset, c: f64, metric: Metric) -> Result<MatchResult> {
    data.check_estimable()?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Parameter(format!(
            "radius constant must be positive and finite, got {c}"
        )));
    }
    let (treated, controls) = data.split_by_treatment();
    let caliper = c * (controls.len() as f64).powf(-1.0 / data.n_cov() as f64);
    let calc = DistanceCalc::new(data, metric);

    let per_treated: Vec<(usize, Vec<usize>)> = treated
        .par_iter()
        .map(|&t| {
            let mut within: Vec<usize> = controls
                .iter()
                .copied()
                .filter(|&j| calc.dist(t, j) <= caliper)
                .collect();
            within.sort_unstable();
            (t, within)
        })
        .collect();

    let mut clusters = Vec::new();
    let mut unmatched = Vec::new();
    for (t, within) in per_treated {
        if within.is_empty() {
            unmatched.push(t);
        } else {
            let w = 1.0 / within.len() as f64;
            clusters.push(MatchedCluster {
                treated: t,
                weights: vec![w; within.len()],
                controls: within,
            });
        }
    }
    Ok(MatchResult {
        clusters,
        unmatched_treated: unmatched,
        metric,
        method: MatchMethod::Radius { c, caliper },
    })
}

const SCM_KKT_TOL: f64 = 1e-8;
const SCM_WEIGHT_FLOOR: f64 = 1e-12;
const SCM_MAX_ITER: usize = 300;

/// Re-solves the weights of each cluster so the weighted control covariate mean
/// approximates the treated unit's covariates: minimises
/// `|| x_t - sum_j w_j x_j ||^2` over the simplex (in the coordinates of the
/// match's metric), by projected gradient with exact simplex projection.
///
/// Each cluster solve stops at a KKT fixed-point residual of `1e-8` or
/// after 300 accelerated iterations, whichever comes first; in the capped
/// case the best iterate found is kept. Weights below `1e-12` are truncated
/// and the rest renormalised. The resulting weights never fit worse than
/// the uniform weights they start from.
pub fn scm_weights(data: &Dataset, base: &MatchResult) -> Result<MatchResult> {
    let calc = DistanceCalc::new(data, base.metric);
    let clusters: Vec<Result<MatchedCluster>> = base
        .clusters
        .par_iter()
        .map(|cluster| {
            let w = solve_cluster_scm(&calc, cluster)?;
            Ok(MatchedCluster {
                treated: cluster.treated,
                controls: cluster.controls.clone(),
                weights: w,
            })
        })
        .collect();
    let clusters = clusters.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MatchResult {
        clusters,
        unmatched_treated: base.unmatched_treated.clone(),
        metric: base.metric,
        method: MatchMethod::Synthetic,
    })
}

fn solve_cluster_scm(calc: &DistanceCalc<'_>, cluster: &MatchedCluster) -> Result<Vec<f64>> {
    let s = cluster.controls.len();
    if s == 1 {
        return Ok(vec![1.0]);
    }
    let target = calc.scaled_row(cluster.treated);
    let cols: Vec<Vec<f64>> = cluster
        .controls
        .iter()
        .map(|&j| calc.scaled_row(j))
        .collect();
    let k = target.len();

    // Lipschitz constant of the gradient: 2 * lambda_max(G G') computed on
    // the small k x k Gram matrix.
    let mut gram = vec![vec![0.0; k]; k];
    for col in &cols {
        for i in 0..k {
            for j in i..k {
                gram[i][j] += col[i] * col[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            gram[i][j] = gram[j][i];
        }
    }
    let mut v = vec![1.0 / (k as f64).sqrt(); k];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut next = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                next[i] += gram[i][j] * v[j];
            }
        }
        lambda = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if lambda <= 0.0 {
            break;
        }
        for x in next.iter_mut() {
            *x /= lambda;
        }
        v = next;
    }
    let lipschitz = 2.0 * lambda.max(1e-12) * 1.05;

    let objective_grad = |w: &[f64], grad: &mut [f64]| -> f64 {
        let mut resid = vec![0.0; k];
        for (i, r) in resid.iter_mut().enumerate() {
            let mut fit = 0.0;
            for (wj, col) in w.iter().zip(&cols) {
                fit += wj * col[i];
            }
            *r = fit - target[i];
        }
        for (g, col) in grad.iter_mut().zip(&cols) {
            *g = 2.0 * col.iter().zip(&resid).map(|(c, r)| c * r).sum::<f64>();
        }
        resid.iter().map(|r| r * r).sum()
    };

    let uniform = vec![1.0 / s as f64; s];
    let sol = simplex::minimize_on_simplex(
        uniform,
        objective_grad,
        lipschitz,
        SCM_KKT_TOL,
        SCM_MAX_ITER,
    );

    let mut w = sol.w;
    for x in w.iter_mut() {
        if *x < SCM_WEIGHT_FLOOR {
            *x = 0.0;
        }
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::Estimation(
            "synthetic weights vanished after truncation".into(),
        ));
    }
    for x in w.iter_mut() {
        *x /= total;
    }
    Ok(w)
}

/// Fitted logistic propensity model.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    /// Intercept followed by one slope per covariate.
    pub coefficients: Vec<f64>,
    /// Linear predictor per dataset row.
    pub scores: Vec<f64>,
    pub iterations: usize,
}

const LOGIT_CAP: f64 = 30.0;
const LOGIT_TOL: f64 = 1e-8;
const LOGIT_MAX_ITER: usize = 100;
const LOGIT_WEIGHT_FLOOR: f64 = 1e-10;

/// Fits treatment on covariates by iteratively reweighted least squares.
///
/// Linear predictors are capped at +/-30 inside the link, which keeps the
/// fit finite on (nearly) separable data; convergence is declared when the
/// largest coefficient change drops to 1e-8.
pub fn logistic_fit(data: &Dataset) -> Result<LogisticFit> {
    data.check_estimable()?;
    let n = data.n();
    let p = data.n_cov() + 1;
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = Vec::with_capacity(p);
            row.push(1.0);
            row.extend_from_slice(data.covariates(i));
            row
        })
        .collect();
    let ys: Vec<f64> = (0..n)
        .map(|i| if data.is_treated(i) { 1.0 } else { 0.0 })
        .collect();

    let mut beta = vec![0.0; p];
    for iter in 1..=LOGIT_MAX_ITER {
        let mut w = vec![0.0; n];
        let mut z = vec![0.0; n];
        for i in 0..n {
            let eta: f64 = xs[i].iter().zip(&beta).map(|(x, b)| x * b).sum();
            let eta_c = eta.clamp(-LOGIT_CAP, LOGIT_CAP);
            let prob = 1.0 / (1.0 + (-eta_c).exp());
            let wi = (prob * (1.0 - prob)).max(LOGIT_WEIGHT_FLOOR);
            w[i] = wi;
            z[i] = eta_c + (ys[i] - prob) / wi;
        }
        let next = linalg::weighted_solve(&xs, &w, &z).ok_or_else(|| {
            Error::Fitting("singular weighted design in logistic fit".into())
        })?;
        let delta = next
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        beta = next;
        if delta <= LOGIT_TOL {
            let scores = xs
                .iter()
                .map(|row| row.iter().zip(&beta).map(|(x, b)| x * b).sum())
                .collect();
            return Ok(LogisticFit {
                coefficients: beta,
                scores,
                iterations: iter,
            });
        }
    }
    Err(Error::Fitting(format!(
        "logistic fit did not converge in {LOGIT_MAX_ITER} iterations"
    )))
}

/// Matches each treated unit to its `m` nearest controls on the fitted
/// logistic score (absolute difference of linear predictors).
pub fn match_propensity(data: &Dataset, m: usize) -> Result<MatchResult> {
    let fit = logistic_fit(data)?;
    let (treated, controls) = data.split_by_treatment();
    if m == 0 {
        return Err(Error::Parameter("M must be at least 1".into()));
    }
    if m > controls.len() {
        return Err(Error::Parameter(format!(
            "M = {m} exceeds the {} available controls",
            controls.len()
        )));
    }
    let clusters: Vec<MatchedCluster> = treated
        .iter()
        .map(|&t| {
            let dists: Vec<(usize, f64)> = controls
                .iter()
                .map(|&j| (j, (fit.scores[t] - fit.scores[j]).abs()))
                .collect();
            let (picked, _) = m_smallest(&dists, m);
            let w = 1.0 / m as f64;
            MatchedCluster {
                treated: t,
                weights: vec![w; picked.len()],
                controls: picked,
            }
        })
        .collect();
    Ok(MatchResult {
        clusters,
        unmatched_treated: Vec::new(),
        metric: Metric::Euclidean,
        method: MatchMethod::PropensityNearest { m },
    })
}

/// Sums weights per control across clusters and derives the effective
/// sample size of the implied weighting.
pub fn aggregate_weights(m: &MatchResult, n_units: usize) -> WeightAggregate {
    let mut total_weight = vec![0.0; n_units];
    let mut reuse_count = vec![0usize; n_units];
    let mut total_matches = 0;
    for cluster in &m.clusters {
        total_matches += cluster.controls.len();
        for (&j, &w) in cluster.controls.iter().zip(&cluster.weights) {
            total_weight[j] += w;
            reuse_count[j] += 1;
        }
    }
    let sum: f64 = total_weight.iter().sum();
    let sum_sq: f64 = total_weight.iter().map(|w| w * w).sum();
    let ess = if sum_sq > 0.0 { sum * sum / sum_sq } else { 0.0 };
    WeightAggregate {
        total_weight,
        reuse_count,
        total_matches,
        ess,
    }
}

/// Mean over clusters of the per-cluster effective sample size
/// `1 / sum_j w_jt^2`; equals `M` for uniform M-nearest-neighbor weights.
pub fn mean_cluster_ess(m: &MatchResult) -> f64 {
    if m.clusters.is_empty() {
        return 0.0;
    }
    let sum: f64 = m
        .clusters
        .iter()
        .map(|cluster| {
            let sum_sq: f64 = cluster.weights.iter().map(|w| w * w).sum();
            if sum_sq > 0.0 {
                1.0 / sum_sq
            } else {
                0.0
            }
        })
        .sum();
    sum / m.clusters.len() as f64
}

/// Per-treated share counts under the three natural readings of "shared
/// controls"; used to pick and test the reported statistic.
#[doc(hidden)]
pub fn shared_control_stats(m: &MatchResult, n_units: usize) -> (f64, f64, f64) {
    let n_t = m.clusters.len();
    if n_t == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mut users: Vec<Vec<u32>> = vec![Vec::new(); n_units];
    for (ci, cluster) in m.clusters.iter().enumerate() {
        for &j in &cluster.controls {
            users[j].push(ci as u32);
        }
    }
    let mut partners_sum = 0.0;
    let mut members_sum = 0.0;
    let mut cooccur_sum = 0.0;
    let mut seen = vec![false; n_t];
    for (ci, cluster) in m.clusters.iter().enumerate() {
        let mut partners: Vec<u32> = Vec::new();
        for &j in &cluster.controls {
            let others = users[j].iter().filter(|&&u| u != ci as u32).count();
            if others > 0 {
                members_sum += 1.0;
            }
            cooccur_sum += others as f64;
            for &u in &users[j] {
                if u != ci as u32 && !seen[u as usize] {
                    seen[u as usize] = true;
                    partners.push(u);
                }
            }
        }
        partners_sum += partners.len() as f64;
        for u in partners {
            seen[u as usize] = false;
        }
    }
    let n = n_t as f64;
    (partners_sum / n, members_sum / n, cooccur_sum / n)
}

/// Radii, reuse and tail diagnostics for a match.
pub fn diagnostics(m: &MatchResult, data: &Dataset) -> MatchDiagnostics {
    let calc = DistanceCalc::new(data, m.metric);
    let radii: Vec<f64> = m
        .clusters
        .iter()
        .map(|c| {
            c.controls
                .iter()
                .map(|&j| calc.dist(c.treated, j))
                .fold(0.0f64, f64::max)
        })
        .collect();
    let (mean_shared, _, _) = shared_control_stats(m, data.n());
    let (_, controls) = data.split_by_treatment();
    let scale = (controls.len() as f64).powf(1.0 / data.n_cov() as f64);
    let scaled_radius_tail = (1..=10)
        .map(|i| {
            let u = i as f64 * 0.5;
            let frac = if radii.is_empty() {
                0.0
            } else {
                radii.iter().filter(|&&r| scale * r > u).count() as f64 / radii.len() as f64
            };
            (u, frac)
        })
        .collect();
    MatchDiagnostics {
        radii,
        mean_shared_controls: mean_shared,
        scaled_radius_tail,
        n_unmatched: m.unmatched_treated.len(),
    }
}
