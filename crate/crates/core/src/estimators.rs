//! Point estimators: the matched-sample ATT, a regression-debiased variant
//! with two-fold cross-fitting, and quadratic balancing weights.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::matching::MatchResult;
use crate::rng::Rng64;
use crate::simplex;

/// ATT estimate with its per-treated-unit contributions.
#[derive(Debug, Clone)]
pub struct AttEstimate {
    /// Mean of `contributions`.
    pub estimate: f64,
    /// One term per matched treated unit: the treated outcome (minus the
    /// model prediction when debiased) minus the weighted control mean.
    pub contributions: Vec<f64>,
    /// Treated row indices aligned with `contributions`.
    pub treated: Vec<usize>,
    /// Whether the regression adjustment was applied.
    pub debiased: bool,
    /// Treated units excluded because their cluster was empty.
    pub n_unmatched: usize,
}

fn finalize(
    contributions: Vec<f64>,
    treated: Vec<usize>,
    debiased: bool,
    n_unmatched: usize,
) -> Result<AttEstimate> {
    if contributions.is_empty() {
        return Err(Error::Estimation(
            "no treated unit has a matched cluster".into(),
        ));
    }
    let estimate = contributions.iter().sum::<f64>() / contributions.len() as f64;
    Ok(AttEstimate {
        estimate,
        contributions,
        treated,
        debiased,
        n_unmatched,
    })
}

/// Plain matched ATT: the mean over matched treated units of the treated
/// outcome minus the weighted mean of its matched control outcomes.
pub fn att_estimate(data: &Dataset, m: &MatchResult) -> Result<AttEstimate> {
    let contributions: Vec<f64> = m
        .clusters
        .iter()
        .map(|c| {
            let control_mean: f64 = c
                .controls
                .iter()
                .zip(&c.weights)
                .map(|(&j, &w)| w * data.outcome(j))
                .sum();
            data.outcome(c.treated) - control_mean
        })
        .collect();
    let treated = m.clusters.iter().map(|c| c.treated).collect();
    finalize(
        contributions,
        treated,
        false,
        m.unmatched_treated.len(),
    )
}

/// Linear outcome model for the control arm, fitted separately on two
/// random halves so predictions can be cross-fitted.
#[derive(Debug, Clone)]
pub struct ControlModel {
    /// Mean of the two fold fits (intercept first); reporting convenience.
    pub coefficients: Vec<f64>,
    /// Per-fold OLS coefficients (intercept first).
    pub fold_coefficients: [Vec<f64>; 2],
    /// Fold label per dataset row: `Some(0|1)` for controls, `None` for
    /// treated rows.
    pub fold_of: Vec<Option<u8>>,
}

impl ControlModel {
    fn predict_with(&self, fold: usize, x: &[f64]) -> f64 {
        let beta = &self.fold_coefficients[fold];
        beta[0] + x.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Model prediction of the untreated outcome for row `i`: controls use
    /// the model fitted on the opposite fold, treated rows the average of
    /// both fold models.
    pub fn predict(&self, data: &Dataset, i: usize) -> f64 {
        let x = data.covariates(i);
        match self.fold_of[i] {
            Some(f) => self.predict_with(1 - f as usize, x),
            None => 0.5 * (self.predict_with(0, x) + self.predict_with(1, x)),
        }
    }
}

/// Fits the control outcome model: controls are split into two random
/// halves by `seed` and an intercept-plus-linear OLS is fitted on each.
///
/// Requires at least `2 * (k + 1)` controls; a rank-deficient design is an
/// error rather than being silently regularised.
pub fn fit_control_model(data: &Dataset, seed: u64) -> Result<ControlModel> {
    data.check_estimable()?;
    let (_, controls) = data.split_by_treatment();
    let p = data.n_cov() + 1;
    if controls.len() < 2 * p {
        return Err(Error::Fitting(format!(
            "cross-fit regression needs at least {} controls, got {}",
            2 * p,
            controls.len()
        )));
    }

    let mut shuffled = controls.clone();
    let mut rng = Rng64::seed_from(seed);
    rng.shuffle(&mut shuffled);
    let half = shuffled.len().div_ceil(2);

    let mut fold_of = vec![None; data.n()];
    for (pos, &j) in shuffled.iter().enumerate() {
        fold_of[j] = Some(if pos < half { 0 } else { 1 });
    }

    let mut fold_coefficients: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for fold in 0..2 {
        let rows: Vec<Vec<f64>> = shuffled
            .iter()
            .filter(|&&j| fold_of[j] == Some(fold as u8))
            .map(|&j| {
                let mut row = Vec::with_capacity(p);
                row.push(1.0);
                row.extend_from_slice(data.covariates(j));
                row
            })
            .collect();
        let ys: Vec<f64> = shuffled
            .iter()
            .filter(|&&j| fold_of[j] == Some(fold as u8))
            .map(|&j| data.outcome(j))
            .collect();
        fold_coefficients[fold] = linalg::ols(&rows, &ys).ok_or_else(|| {
            Error::Fitting("rank-deficient control design in outcome model".into())
        })?;
    }

    let coefficients = fold_coefficients[0]
        .iter()
        .zip(&fold_coefficients[1])
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Ok(ControlModel {
        coefficients,
        fold_coefficients,
        fold_of,
    })
}

/// Regression-debiased ATT: each contribution is the model residual of the
/// treated unit minus the weighted model residuals of its matched controls,
/// which removes the smooth part of the matching discrepancy.
pub fn debiased_att(
    data: &Dataset,
    m: &MatchResult,
    model: &ControlModel,
) -> Result<AttEstimate> {
    let contributions: Vec<f64> = m
        .clusters
        .iter()
        .map(|c| {
            let treated_resid = data.outcome(c.treated) - model.predict(data, c.treated);
            let control_resid: f64 = c
                .controls
                .iter()
                .zip(&c.weights)
                .map(|(&j, &w)| w * (data.outcome(j) - model.predict(data, j)))
                .sum();
            treated_resid - control_resid
        })
        .collect();
    let treated = m.clusters.iter().map(|c| c.treated).collect();
    finalize(contributions, treated, true, m.unmatched_treated.len())
}

/// Balancing weights that minimise `sum_j w_j^2` over the simplex subject
/// to per-covariate mean balance within `delta`.
#[derive(Debug, Clone)]
pub struct SbwSolution {
    /// Weight per dataset row; zero on treated rows, sums to one over
    /// controls.
    pub weights: Vec<f64>,
    /// Absolute difference per covariate between the treated mean and the
    /// weighted control mean.
    pub imbalance: Vec<f64>,
    /// Tolerance the solve was run at.
    pub delta: f64,
    /// `sum_j w_j^2` at the solution.
    pub objective: f64,
    /// Effective sample size of the weights.
    pub ess: f64,
    /// Worst violation of the first-order conditions at the solution.
    pub kkt_residual: f64,
}

/// ATT implied by balancing weights: treated outcome mean minus the
/// weighted control outcome mean.
pub fn sbw_att(data: &Dataset, sol: &SbwSolution) -> f64 {
    let (treated, controls) = data.split_by_treatment();
    let treated_mean: f64 =
        treated.iter().map(|&t| data.outcome(t)).sum::<f64>() / treated.len() as f64;
    let control_mean: f64 = controls
        .iter()
        .map(|&j| sol.weights[j] * data.outcome(j))
        .sum();
    treated_mean - control_mean
}

const SBW_TOL: f64 = 1e-8;
const SBW_FEAS_SLACK: f64 = 1e-9;
const SBW_INNER_ITER: usize = 200_000;

struct SbwProblem {
    /// Control covariates, row per control (possibly scaled).
    rows: Vec<Vec<f64>>,
    /// Treated covariate means.
    target: Vec<f64>,
    /// Spectral norm of the control covariate Gram matrix.
    gram_norm: f64,
}

impl SbwProblem {
    fn new(data: &Dataset, controls: &[usize], treated: &[usize]) -> Self {
        let k = data.n_cov();
        let rows: Vec<Vec<f64>> = controls
            .iter()
            .map(|&j| data.covariates(j).to_vec())
            .collect();
        let mut target = vec![0.0; k];
        for &t in treated {
            for (acc, &v) in target.iter_mut().zip(data.covariates(t)) {
                *acc += v;
            }
        }
        for v in target.iter_mut() {
            *v /= treated.len() as f64;
        }

        let mut gram = vec![vec![0.0; k]; k];
        for row in &rows {
            for i in 0..k {
                for j in i..k {
                    gram[i][j] += row[i] * row[j];
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
        SbwProblem {
            rows,
            target,
            gram_norm: lambda.max(1e-12),
        }
    }

    /// Signed imbalance per covariate at `w`.
    fn imbalance(&self, w: &[f64]) -> Vec<f64> {
        let k = self.target.len();
        let mut g = vec![0.0; k];
        for (row, &wj) in self.rows.iter().zip(w) {
            for (acc, &v) in g.iter_mut().zip(row) {
                *acc += wj * v;
            }
        }
        for (acc, &t) in g.iter_mut().zip(&self.target) {
            *acc -= t;
        }
        g
    }

    /// Minimises the squared constraint excess at tolerance `delta`;
    /// returns the weights and the worst absolute imbalance reached.
    fn min_violation(&self, delta: f64) -> (Vec<f64>, f64) {
        let n = self.rows.len();
        let lipschitz = 4.0 * self.gram_norm + 1.0;
        let sol = simplex::minimize_on_simplex(
            vec![1.0 / n as f64; n],
            |w, grad| {
                let g = self.imbalance(w);
                let mut f = 0.0;
                let mut coeff = vec![0.0; g.len()];
                for (d, &gd) in g.iter().enumerate() {
                    let excess = (gd.abs() - delta).max(0.0);
                    f += excess * excess;
                    coeff[d] = 2.0 * excess * gd.signum();
                }
                for (gi, row) in grad.iter_mut().zip(&self.rows) {
                    *gi = coeff.iter().zip(row).map(|(c, v)| c * v).sum();
                }
                f
            },
            lipschitz,
            1e-12,
            SBW_INNER_ITER,
        );
        let worst = self
            .imbalance(&sol.w)
            .iter()
            .fold(0.0f64, |m, g| m.max(g.abs()));
        (sol.w, worst)
    }
}

/// Solves the balancing-weight program at tolerance `delta` by an augmented
/// Lagrangian over the balance constraints with projected gradient inner
/// solves; convergence is gated on feasibility within `1e-8` and a KKT
/// fixed-point residual of `1e-8`.
///
/// When no simplex point satisfies the balance constraints, the returned
/// error carries the smallest worst-case imbalance located by bisection.
pub fn sbw_weights(data: &Dataset, delta: f64) -> Result<SbwSolution> {
    data.check_estimable()?;
    if delta < 0.0 || delta.is_nan() {
        return Err(Error::Parameter(format!(
            "balance tolerance must be nonnegative, got {delta}"
        )));
    }
    let (treated, controls) = data.split_by_treatment();
    let problem = SbwProblem::new(data, &controls, &treated);
    let k = data.n_cov();

    // Feasibility probe. On failure, bisect for the smallest reachable
    // worst-case imbalance to report.
    let (w_feas, worst) = problem.min_violation(delta);
    if worst > delta + SBW_TOL {
        let (_, mut hi) = problem.min_violation(0.0);
        let mut lo = 0.0;
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            let (_, reached) = problem.min_violation(mid);
            if reached <= mid + SBW_FEAS_SLACK {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        return Err(Error::Infeasible {
            delta,
            min_max_imbalance: hi,
        });
    }

    // Augmented Lagrangian on h_{2d} = g_d - delta <= 0 and
    // h_{2d+1} = -g_d - delta <= 0.
    let mut w = w_feas;
    let mut lambda = vec![0.0; 2 * k];
    let mut rho = 10.0;
    let mut result: Option<SbwSolution> = None;
    for _outer in 0..60 {
        let lipschitz = 2.0 + 2.0 * rho * problem.gram_norm;
        let sol = simplex::minimize_on_simplex(
            std::mem::take(&mut w),
            |w, grad| {
                let g = problem.imbalance(w);
                let mut f: f64 = w.iter().map(|x| x * x).sum();
                let mut coeff = vec![0.0; k];
                for d in 0..k {
                    let hp = g[d] - delta;
                    let hm = -g[d] - delta;
                    let ap = (lambda[2 * d] + rho * hp).max(0.0);
                    let am = (lambda[2 * d + 1] + rho * hm).max(0.0);
                    f += (ap * ap - lambda[2 * d] * lambda[2 * d]) / (2.0 * rho);
                    f += (am * am - lambda[2 * d + 1] * lambda[2 * d + 1]) / (2.0 * rho);
                    coeff[d] = ap - am;
                }
                for ((gi, row), &wi) in grad.iter_mut().zip(&problem.rows).zip(w.iter()) {
                    *gi = 2.0 * wi + coeff.iter().zip(row).map(|(c, v)| c * v).sum::<f64>();
                }
                f
            },
            lipschitz,
            SBW_TOL * 0.1,
            SBW_INNER_ITER,
        );
        w = sol.w;

        let g = problem.imbalance(&w);
        let mut max_violation = 0.0f64;
        for d in 0..k {
            let hp = g[d] - delta;
            let hm = -g[d] - delta;
            lambda[2 * d] = (lambda[2 * d] + rho * hp).max(0.0);
            lambda[2 * d + 1] = (lambda[2 * d + 1] + rho * hm).max(0.0);
            max_violation = max_violation.max(hp).max(hm);
        }

        // KKT residual of the original program at (w, lambda).
        let mut grad_l: Vec<f64> = w.iter().map(|&wi| 2.0 * wi).collect();
        for d in 0..k {
            let c = lambda[2 * d] - lambda[2 * d + 1];
            for (gi, row) in grad_l.iter_mut().zip(&problem.rows) {
                *gi += c * row[d];
            }
        }
        let stationarity_target: Vec<f64> =
            w.iter().zip(&grad_l).map(|(wi, gi)| wi - gi).collect();
        let proj = simplex::project_to_simplex(&stationarity_target);
        let stationarity = w
            .iter()
            .zip(&proj)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let kkt = stationarity.max(max_violation.max(0.0));

        if kkt <= SBW_TOL {
            let mut weights = vec![0.0; data.n()];
            for (&j, &wj) in controls.iter().zip(&w) {
                weights[j] = wj;
            }
            let objective: f64 = w.iter().map(|x| x * x).sum();
            let sum: f64 = w.iter().sum();
            let ess = sum * sum / objective.max(f64::MIN_POSITIVE);
            result = Some(SbwSolution {
                weights,
                imbalance: g.iter().map(|x| x.abs()).collect(),
                delta,
                objective,
                ess,
                kkt_residual: kkt,
            });
            break;
        }
        if max_violation > SBW_TOL {
            rho = (rho * 4.0).min(1e9);
        }
    }

    result.ok_or_else(|| {
        Error::Estimation(
            "balancing-weight solve did not reach the KKT tolerance".into(),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{match_mnn, Metric};

    fn dataset(
        xs: Vec<Vec<f64>>,
        ys: Vec<f64>,
        z: Vec<bool>,
    ) -> Dataset {
        Dataset::with_index_ids(xs, ys, z).unwrap()
    }

    #[test]
    fn att_on_a_hand_example() {
        // Treated y=5 matched to controls y=2,4 with equal weight: tau = 2.
        let d = dataset(
            vec![vec![0.0], vec![-0.1], vec![0.1]],
            vec![5.0, 2.0, 4.0],
            vec![true, false, false],
        );
        let m = match_mnn(&d, 2, Metric::Euclidean).unwrap();
        let est = att_estimate(&d, &m).unwrap();
        assert!((est.estimate - 2.0).abs() < 1e-12);
        assert_eq!(est.contributions.len(), 1);
        assert!(!est.debiased);
    }

    #[test]
    fn estimate_is_mean_of_contributions() {
        let mut rng = crate::rng::Rng64::seed_from(3);
        let n = 40;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.normal()]).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let z: Vec<bool> = (0..n).map(|i| i % 4 == 0).collect();
        let d = dataset(xs, ys, z);
        let m = match_mnn(&d, 3, Metric::Euclidean).unwrap();
        let est = att_estimate(&d, &m).unwrap();
        let mean = est.contributions.iter().sum::<f64>() / est.contributions.len() as f64;
        assert!((est.estimate - mean).abs() < 1e-14);
    }

    #[test]
    fn att_shift_invariant_and_scale_equivariant() {
        let mut rng = crate::rng::Rng64::seed_from(17);
        for trial in 0..20 {
            let n = 12 + (trial % 5) * 7;
            let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.normal(), rng.normal()]).collect();
            let ys: Vec<f64> = (0..n).map(|_| 3.0 * rng.normal() + 1.0).collect();
            let z: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
            let (shift, scale) = (rng.normal() * 10.0, 1.0 + rng.uniform() * 4.0);

            let base = att_estimate(
                &dataset(xs.clone(), ys.clone(), z.clone()),
                &match_mnn(&dataset(xs.clone(), ys.clone(), z.clone()), 2, Metric::Euclidean)
                    .unwrap(),
            )
            .unwrap();
            let shifted_ys: Vec<f64> = ys.iter().map(|y| y + shift).collect();
            let shifted = att_estimate(
                &dataset(xs.clone(), shifted_ys.clone(), z.clone()),
                &match_mnn(
                    &dataset(xs.clone(), shifted_ys, z.clone()),
                    2,
                    Metric::Euclidean,
                )
                .unwrap(),
            )
            .unwrap();
            let scaled_ys: Vec<f64> = ys.iter().map(|y| y * scale).collect();
            let scaled = att_estimate(
                &dataset(xs.clone(), scaled_ys.clone(), z.clone()),
                &match_mnn(&dataset(xs, scaled_ys, z), 2, Metric::Euclidean).unwrap(),
            )
            .unwrap();

            assert!(
                (shifted.estimate - base.estimate).abs() < 1e-10,
                "shift changed the estimate: {} vs {}",
                shifted.estimate,
                base.estimate
            );
            assert!(
                (scaled.estimate - scale * base.estimate).abs() < 1e-10,
                "scaling is not equivariant: {} vs {}",
                scaled.estimate,
                scale * base.estimate
            );
        }
    }

    #[test]
    fn control_model_recovers_noiseless_linear_outcomes() {
        let mut rng = crate::rng::Rng64::seed_from(9);
        let beta = [1.5, -2.0, 0.5];
        let n = 50;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut z = Vec::new();
        for i in 0..n {
            let x = [rng.normal(), rng.normal()];
            xs.push(x.to_vec());
            ys.push(beta[0] + beta[1] * x[0] + beta[2] * x[1]);
            z.push(i < 5);
        }
        let d = dataset(xs, ys, z);
        let model = fit_control_model(&d, 42).unwrap();
        for fold in 0..2 {
            for (est, truth) in model.fold_coefficients[fold].iter().zip(beta) {
                assert!((est - truth).abs() < 1e-8, "fold {fold}: {est} vs {truth}");
            }
        }
        for (est, truth) in model.coefficients.iter().zip(beta) {
            assert!((est - truth).abs() < 1e-8);
        }
    }

    #[test]
    fn control_model_rejects_duplicate_covariate() {
        let mut rng = crate::rng::Rng64::seed_from(10);
        let n = 30;
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v = rng.normal();
                vec![v, v]
            })
            .collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let z: Vec<bool> = (0..n).map(|i| i < 3).collect();
        let err = fit_control_model(&dataset(xs, ys, z), 1).unwrap_err();
        assert!(matches!(err, Error::Fitting(_)), "{err}");
    }

    #[test]
    fn control_model_requires_enough_controls() {
        let d = dataset(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![0.0; 4],
            vec![true, false, false, false],
        );
        let err = fit_control_model(&d, 1).unwrap_err();
        assert!(matches!(err, Error::Fitting(_)), "{err}");
    }

    #[test]
    fn fold_split_halves_controls_and_skips_treated() {
        let mut rng = crate::rng::Rng64::seed_from(4);
        let n = 41;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.normal()]).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let z: Vec<bool> = (0..n).map(|i| i < 6).collect();
        let d = dataset(xs, ys, z);
        let model = fit_control_model(&d, 7).unwrap();
        let f0 = model.fold_of.iter().filter(|f| **f == Some(0)).count();
        let f1 = model.fold_of.iter().filter(|f| **f == Some(1)).count();
        assert_eq!(f0 + f1, 35);
        assert!(f0.abs_diff(f1) <= 1);
        for i in 0..6 {
            assert_eq!(model.fold_of[i], None);
        }
        // Different seeds give different splits.
        let other = fit_control_model(&d, 8).unwrap();
        assert_ne!(model.fold_of, other.fold_of);
        // Same seed reproduces the split exactly.
        let again = fit_control_model(&d, 7).unwrap();
        assert_eq!(model.fold_of, again.fold_of);
    }

    #[test]
    fn debiased_att_is_exact_under_linear_truth_and_no_noise() {
        // Outcomes are exactly linear in x and tau is constant, so the
        // debiased estimator recovers the effect with zero error.
        let mut rng = crate::rng::Rng64::seed_from(21);
        let tau = 1.25;
        let beta = [0.3, 2.0];
        let n = 60;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut z = Vec::new();
        for i in 0..n {
            let x = rng.normal();
            let treated = i < 10;
            xs.push(vec![x]);
            ys.push(beta[0] + beta[1] * x + if treated { tau } else { 0.0 });
            z.push(treated);
        }
        let d = dataset(xs, ys, z);
        let m = match_mnn(&d, 4, Metric::Euclidean).unwrap();
        let model = fit_control_model(&d, 99).unwrap();
        let est = debiased_att(&d, &m, &model).unwrap();
        assert!((est.estimate - tau).abs() < 1e-10, "{}", est.estimate);
        assert!(est.debiased);
    }

    #[test]
    fn sbw_uniform_when_delta_is_infinite() {
        let mut rng = crate::rng::Rng64::seed_from(31);
        let n = 12;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let z: Vec<bool> = (0..n).map(|i| i < 4).collect();
        let d = dataset(xs, ys, z);
        let sol = sbw_weights(&d, f64::INFINITY).unwrap();
        let (_, controls) = d.split_by_treatment();
        for &j in &controls {
            assert!((sol.weights[j] - 1.0 / 8.0).abs() < 1e-9);
        }
        assert!((sol.objective - 1.0 / 8.0).abs() < 1e-9);
        assert!((sol.ess - 8.0).abs() < 1e-6);
    }

    #[test]
    fn sbw_exact_balance_with_symmetric_controls() {
        // Controls at -1 and +1 around the treated mean 0 with delta = 0:
        // the only balanced point is (1/2, 1/2).
        let d = dataset(
            vec![vec![0.0], vec![-1.0], vec![1.0]],
            vec![1.0, 0.5, 1.5],
            vec![true, false, false],
        );
        let sol = sbw_weights(&d, 0.0).unwrap();
        assert!((sol.weights[1] - 0.5).abs() < 1e-7, "{:?}", sol.weights);
        assert!((sol.weights[2] - 0.5).abs() < 1e-7);
        assert!(sol.imbalance[0] <= 1e-8);
        // Implied ATT: 1.0 - (0.5*0.5 + 0.5*1.5) = 0.
        assert!(sbw_att(&d, &sol).abs() < 1e-7);
    }

    #[test]
    fn sbw_infeasible_reports_minimal_imbalance() {
        // Treated mean 10, controls at 0 and 1: best reachable imbalance 9.
        let d = dataset(
            vec![vec![10.0], vec![0.0], vec![1.0]],
            vec![0.0; 3],
            vec![true, false, false],
        );
        let err = sbw_weights(&d, 0.5).unwrap_err();
        match err {
            Error::Infeasible {
                min_max_imbalance, ..
            } => {
                assert!((min_max_imbalance - 9.0).abs() < 1e-3, "{min_max_imbalance}");
            }
            other => panic!("expected infeasible, got {other}"),
        }
    }

    #[test]
    fn sbw_objective_beats_random_feasible_candidates() {
        let mut rng = crate::rng::Rng64::seed_from(55);
        for _ in 0..20 {
            let n_c = 4 + (rng.next_u64() % 3) as usize;
            let k = 1 + (rng.next_u64() % 2) as usize;
            let mut xs = vec![(0..k).map(|_| rng.normal()).collect::<Vec<f64>>()];
            let mut z = vec![true];
            for _ in 0..n_c {
                xs.push((0..k).map(|_| rng.normal()).collect());
                z.push(false);
            }
            let n = xs.len();
            let d = dataset(xs, vec![0.0; n], z);
            let delta = 0.8;
            let sol = match sbw_weights(&d, delta) {
                Ok(s) => s,
                Err(Error::Infeasible { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            let (_, controls) = d.split_by_treatment();
            let problem = SbwProblem::new(&d, &controls, &d.split_by_treatment().0);
            for _ in 0..1000 {
                // Random simplex point by normalised exponentials.
                let raw: Vec<f64> = (0..n_c).map(|_| -rng.uniform().max(1e-12).ln()).collect();
                let total: f64 = raw.iter().sum();
                let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
                let feasible = problem
                    .imbalance(&w)
                    .iter()
                    .all(|g| g.abs() <= delta);
                if feasible {
                    let obj: f64 = w.iter().map(|x| x * x).sum();
                    assert!(
                        sol.objective <= obj + 1e-7,
                        "candidate beats solution: {} < {}",
                        obj,
                        sol.objective
                    );
                }
            }
        }
    }

    #[test]
    fn sbw_scale_invariance() {
        let mut rng = crate::rng::Rng64::seed_from(77);
        let n = 10;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let z: Vec<bool> = (0..n).map(|i| i < 3).collect();
        let d = dataset(xs.clone(), ys.clone(), z.clone());
        let delta = 0.6;
        let a = match sbw_weights(&d, delta) {
            Ok(s) => s,
            Err(_) => return,
        };

        let scale = 7.5;
        let xs2: Vec<Vec<f64>> = xs
            .iter()
            .map(|r| r.iter().map(|v| v * scale).collect())
            .collect();
        // Shift outcomes too: weights must not depend on Y at all.
        let ys2: Vec<f64> = ys.iter().map(|y| y + 100.0).collect();
        let d2 = dataset(xs2, ys2, z);
        let b = sbw_weights(&d2, delta * scale).unwrap();
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert!((wa - wb).abs() < 1e-5, "{wa} vs {wb}");
        }
    }
}
