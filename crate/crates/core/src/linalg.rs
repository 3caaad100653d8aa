//! Small dense linear solves backing the regression and propensity fits.

/// Solves `a * x = b` by Gauss-Jordan elimination with partial pivoting.
///
/// Returns `None` when a pivot falls below `REL_PIVOT_TOL` times the largest
/// absolute entry of `a`, which signals (numerical) rank deficiency.
pub(crate) fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    const REL_PIVOT_TOL: f64 = 1e-12;

    let n = a.len();
    debug_assert!(a.iter().all(|row| row.len() == n));
    debug_assert_eq!(b.len(), n);

    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let tol = REL_PIVOT_TOL * scale;

    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot_row][col].abs() < tol {
            return None;
        }
        m.swap(col, pivot_row);
        let pivot = m[col][col];
        for v in m[col].iter_mut() {
            *v /= pivot;
        }
        for row in 0..n {
            if row != col && m[row][col] != 0.0 {
                let factor = m[row][col];
                let (upper, lower) = m.split_at_mut(col.max(row));
                let (src, dst) = if row < col {
                    (&lower[0], &mut upper[row])
                } else {
                    (&upper[col], &mut lower[0])
                };
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d -= factor * s;
                }
            }
        }
    }

    Some((0..n).map(|i| m[i][n]).collect())
}

/// Ordinary least squares of `ys` on design rows `xs` (each row already
/// includes any intercept column). Returns `None` on rank deficiency.
pub(crate) fn ols(xs: &[Vec<f64>], ys: &[f64]) -> Option<Vec<f64>> {
    let p = xs.first()?.len();
    if xs.len() < p {
        return None;
    }
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, &y) in xs.iter().zip(ys) {
        for i in 0..p {
            xty[i] += row[i] * y;
            for j in i..p {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[i][j] = xtx[j][i];
        }
    }
    solve(&xtx, &xty)
}

/// Weighted least squares step used by the logistic fit: solves
/// `(X' W X) beta = X' z` for diagonal weights `w`.
pub(crate) fn weighted_solve(xs: &[Vec<f64>], w: &[f64], z: &[f64]) -> Option<Vec<f64>> {
    let p = xs.first()?.len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xtz = vec![0.0; p];
    for ((row, &wi), &zi) in xs.iter().zip(w).zip(z) {
        for i in 0..p {
            xtz[i] += wi * row[i] * zi;
            for j in i..p {
                xtx[i][j] += wi * row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[i][j] = xtx[j][i];
        }
    }
    solve(&xtx, &xtz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let b = vec![5.0, 10.0];
        let x = solve(&a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_singular() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve(&a, &[1.0, 2.0]).is_none());
    }

    #[test]
    fn ols_recovers_exact_linear_map() {
        let xs: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![1.0, i as f64, (i * i) as f64 * 0.1])
            .collect();
        let beta = [2.0, -1.5, 0.75];
        let ys: Vec<f64> = xs
            .iter()
            .map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect();
        let fit = ols(&xs, &ys).unwrap();
        for (est, truth) in fit.iter().zip(beta) {
            assert!((est - truth).abs() < 1e-10);
        }
    }

    #[test]
    fn ols_rejects_duplicate_column() {
        let xs: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![1.0, i as f64, i as f64])
            .collect();
        let ys: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert!(ols(&xs, &ys).is_none());
    }
}
