//! Euclidean projection onto the probability simplex and the projected
//! gradient loop used by the synthetic-control and balancing-weight solvers.

/// Exact Euclidean projection of `v` onto `{w : w_j >= 0, sum_j w_j = 1}`
/// via the sort-and-threshold construction.
pub(crate) fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    debug_assert!(n > 0);
    let mut u: Vec<f64> = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

pub(crate) struct SimplexSolution {
    pub w: Vec<f64>,
    /// Convergence diagnostics; asserted on in tests.
    #[allow(dead_code)]
    pub kkt_residual: f64,
    #[allow(dead_code)]
    pub iterations: usize,
    #[allow(dead_code)]
    pub converged: bool,
}

/// Iterations between convergence checks; each check costs one extra
/// gradient evaluation and projection.
const CHECK_EVERY: usize = 16;

/// Minimises a smooth convex function over the probability simplex by
/// accelerated projected gradient descent (fixed step `1 / lipschitz`,
/// Nesterov momentum, gradient-based adaptive restart).
///
/// `objective_grad` must write the gradient at `w` into its second argument
/// and return the objective value. Convergence is declared when the
/// fixed-point residual `max_j |w_j - P(w - grad(w))_j|` drops to `tol`;
/// the residual is evaluated every few iterations to keep the per-iteration
/// cost at one gradient call. When the iteration cap is reached first, the
/// checked iterate with the lowest objective is returned, so the result
/// never fits worse than the starting point.
pub(crate) fn minimize_on_simplex<F>(
    w0: Vec<f64>,
    mut objective_grad: F,
    lipschitz: f64,
    tol: f64,
    max_iter: usize,
) -> SimplexSolution
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = w0.len();
    let step = 1.0 / lipschitz.max(1e-12);
    let mut w = w0;
    let mut w_prev = w.clone();
    let mut t = 1.0f64;
    let mut grad = vec![0.0; n];
    let mut grad_y = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut best_w = w.clone();
    let mut best_f = f64::INFINITY;
    let mut iterations = 0;

    for iter in 0..=max_iter {
        iterations = iter;
        if iter % CHECK_EVERY == 0 || iter == max_iter {
            let f = objective_grad(&w, &mut grad);
            if f < best_f {
                best_f = f;
                best_w.copy_from_slice(&w);
            }
            let unit_target: Vec<f64> =
                w.iter().zip(&grad).map(|(wi, gi)| wi - gi).collect();
            let unit_proj = project_to_simplex(&unit_target);
            residual = w
                .iter()
                .zip(&unit_proj)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if residual <= tol || iter == max_iter {
                break;
            }
        }

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let y: Vec<f64> = w
            .iter()
            .zip(&w_prev)
            .map(|(wi, pi)| wi + beta * (wi - pi))
            .collect();
        objective_grad(&y, &mut grad_y);
        let target: Vec<f64> = y
            .iter()
            .zip(&grad_y)
            .map(|(yi, gi)| yi - step * gi)
            .collect();
        let w_next = project_to_simplex(&target);

        // Momentum pointing away from the direction of progress means the
        // extrapolation has overshot; restart the momentum sequence.
        let overshoot: f64 = y
            .iter()
            .zip(&w_next)
            .zip(&w)
            .map(|((yi, ni), wi)| (yi - ni) * (ni - wi))
            .sum();
        w_prev = w;
        if overshoot > 0.0 {
            t = 1.0;
        } else {
            t = t_next;
        }
        w = w_next;
    }

    if residual <= tol {
        SimplexSolution {
            w,
            kkt_residual: residual,
            iterations,
            converged: true,
        }
    } else {
        SimplexSolution {
            w: best_w,
            kkt_residual: residual,
            iterations,
            converged: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_on_simplex(w: &[f64]) {
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn projection_of_simplex_point_is_identity() {
        let v = vec![0.2, 0.3, 0.5];
        let p = project_to_simplex(&v);
        for (a, b) in p.iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_matches_hand_cases() {
        let p = project_to_simplex(&[2.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1].abs() < 1e-15);

        let p = project_to_simplex(&[0.6, 0.6]);
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);

        // Uniform shift leaves the projection unchanged.
        let a = project_to_simplex(&[0.1, -0.4, 0.9]);
        let b = project_to_simplex(&[10.1, 9.6, 10.9]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_on_simplex(&a);
    }

    #[test]
    fn projection_agrees_with_brute_force_grid() {
        // Dense grid search over the 3-simplex as an independent oracle.
        let targets = [
            vec![0.4, 0.1, -0.2],
            vec![1.5, 1.4, 1.3],
            vec![-1.0, 0.0, 1.0],
        ];
        for v in targets {
            let p = project_to_simplex(&v);
            assert_on_simplex(&p);
            let d_proj: f64 = p.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            let steps = 200;
            for i in 0..=steps {
                for j in 0..=(steps - i) {
                    let w = [
                        i as f64 / steps as f64,
                        j as f64 / steps as f64,
                        (steps - i - j) as f64 / steps as f64,
                    ];
                    let d: f64 = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
                    assert!(d_proj <= d + 1e-9, "grid point {w:?} beats projection");
                }
            }
        }
    }

    #[test]
    fn pgd_solves_separable_quadratic() {
        // min sum (w_i - c_i)^2 over the simplex equals projecting c.
        let c = [0.8, 0.5, -0.3, 0.2];
        let sol = minimize_on_simplex(
            vec![0.25; 4],
            |w, g| {
                let mut f = 0.0;
                for i in 0..4 {
                    g[i] = 2.0 * (w[i] - c[i]);
                    f += (w[i] - c[i]) * (w[i] - c[i]);
                }
                f
            },
            2.0,
            1e-12,
            10_000,
        );
        assert!(sol.converged);
        let expected = project_to_simplex(&c);
        for (a, b) in sol.w.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
