//! Small dense linear solves for the surrogate-model explainers.

use ndarray::{Array1, Array2};

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `1e-12` in magnitude.
pub(crate) fn solve_linear(mut a: Array2<f64>, mut b: Array1<f64>) -> Option<Array1<f64>> {
    let n = b.len();
    debug_assert_eq!(a.nrows(), n);
    debug_assert_eq!(a.ncols(), n);
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[[row, col]].abs() > a[[pivot, col]].abs() {
                pivot = row;
            }
        }
        if a[[pivot, col]].abs() < 1e-12 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap([pivot, j], [col, j]);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let factor = a[[row, col]] / a[[col, col]];
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[[row, j]] -= factor * a[[col, j]];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a[[row, j]] * x[j];
        }
        x[row] = acc / a[[row, row]];
    }
    Some(x)
}

/// Weighted ridge regression via the normal equations:
/// `(XᵀWX + λ diag(penalize)) β = XᵀWy`.
///
/// `penalize` selects which coefficients the ridge term applies to, so an
/// intercept column can stay unpenalized.
pub(crate) fn weighted_ridge(
    x: &Array2<f64>,
    y: &Array1<f64>,
    w: &Array1<f64>,
    lambda: f64,
    penalize: &[bool],
) -> Option<Array1<f64>> {
    let (rows, cols) = x.dim();
    debug_assert_eq!(y.len(), rows);
    debug_assert_eq!(w.len(), rows);
    debug_assert_eq!(penalize.len(), cols);
    let mut xtwx = Array2::zeros((cols, cols));
    let mut xtwy = Array1::zeros(cols);
    for r in 0..rows {
        let wr = w[r];
        if wr == 0.0 {
            continue;
        }
        for i in 0..cols {
            let xi = x[[r, i]];
            if xi == 0.0 {
                continue;
            }
            let wxi = wr * xi;
            for j in i..cols {
                xtwx[[i, j]] += wxi * x[[r, j]];
            }
            xtwy[i] += wxi * y[r];
        }
    }
    for i in 0..cols {
        for j in 0..i {
            xtwx[[i, j]] = xtwx[[j, i]];
        }
        if penalize[i] {
            xtwx[[i, i]] += lambda;
        }
    }
    solve_linear(xtwx, xtwy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn solve_recovers_known_solution() {
        let a = array![[2.0, 1.0], [1.0, 3.0]];
        let x_true = array![0.4, -1.2];
        let b = a.dot(&x_true);
        let x = solve_linear(a, b).unwrap();
        assert_abs_diff_eq!(x[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], -1.2, epsilon = 1e-12);
    }

    #[test]
    fn solve_handles_permuted_rows() {
        // First pivot is zero without row swapping.
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        let b = array![2.0, 3.0];
        let x = solve_linear(a, b).unwrap();
        assert_abs_diff_eq!(x[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn solve_reports_singular_matrix() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let b = array![1.0, 2.0];
        assert!(solve_linear(a, b).is_none());
    }

    #[test]
    fn unweighted_regression_matches_exact_fit() {
        // y = 1 + 2 z1 - 0.5 z2 on four distinct design points.
        let x = array![
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
        ];
        let y = array![1.0, 3.0, 0.5, 2.5];
        let w = Array1::ones(4);
        let beta = weighted_ridge(&x, &y, &w, 0.0, &[false, false, false]).unwrap();
        assert_abs_diff_eq!(beta[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(beta[1], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(beta[2], -0.5, epsilon = 1e-10);
    }

    #[test]
    fn ridge_shrinks_penalized_coefficients_only() {
        let x = array![[1.0, 1.0], [1.0, 2.0], [1.0, 3.0]];
        let y = array![2.0, 4.0, 6.0];
        let w = Array1::ones(3);
        let exact = weighted_ridge(&x, &y, &w, 0.0, &[false, false]).unwrap();
        let shrunk = weighted_ridge(&x, &y, &w, 10.0, &[false, true]).unwrap();
        assert_abs_diff_eq!(exact[1], 2.0, epsilon = 1e-10);
        assert!(shrunk[1].abs() < exact[1].abs());
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let x = array![[1.0, 1.0], [1.0, 2.0], [1.0, 9.0]];
        let y = array![2.0, 4.0, 100.0];
        let w = array![1.0, 1.0, 0.0];
        let beta = weighted_ridge(&x, &y, &w, 0.0, &[false, false]).unwrap();
        assert_abs_diff_eq!(beta[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(beta[1], 2.0, epsilon = 1e-10);
    }
}
