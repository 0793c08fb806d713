//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Power-iteration tolerance on the relative change of the singular value estimate.
pub const POWER_ITER_TOL: f64 = 1e-10;
pub const POWER_ITER_MAX: usize = 500;

/// Largest singular value of `a`, by power iteration on `a^T a`.
///
/// The start vector is the all-ones vector plus a small index-dependent tilt so
/// that it is not orthogonal to the leading right singular vector for the
/// structured matrices used in the tests.
pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let frob = a.norm();
    if frob == 0.0 {
        return 0.0;
    }
    let ata = a.transpose() * a;
    let n = ata.nrows();
    let mut x = Vector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64 + 1.0).sqrt());
    x /= x.norm();
    let mut sigma_sq = 0.0;
    for _ in 0..POWER_ITER_MAX {
        let y = &ata * &x;
        let ny = y.norm();
        if ny == 0.0 {
            // x landed in the null space; restart from a coordinate vector
            // carrying the largest column norm.
            let (j, _) = (0..n)
                .map(|j| (j, ata[(j, j)]))
                .fold((0, f64::MIN), |acc, c| if c.1 > acc.1 { c } else { acc });
            x = Vector::zeros(n);
            x[j] = 1.0;
            continue;
        }
        let next = x.dot(&y);
        x = y / ny;
        if (next - sigma_sq).abs() <= POWER_ITER_TOL * next.abs().max(f64::MIN_POSITIVE) {
            sigma_sq = next;
            break;
        }
        sigma_sq = next;
    }
    // Rayleigh quotient of the final iterate.
    let rq = x.dot(&(&ata * &x));
    rq.max(sigma_sq).max(0.0).sqrt()
}

/// Cosine similarity; zero when either argument vanishes.
pub fn correlation(a: &Vector, b: &Vector) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn vector_from_slice(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

/// Row-major nested vectors into a matrix. Rows must share a length.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Option<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, -3.0, 2.0]));
        assert_relative_eq!(spectral_norm(&a), 3.0, epsilon = 1e-9);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let a = Matrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.3, 4.0, -1.0]);
        let svd = a.clone().svd(false, false);
        let top = svd.singular_values.max();
        assert_relative_eq!(spectral_norm(&a), top, epsilon = 1e-8);
    }

    #[test]
    fn spectral_norm_zero_and_rank_one() {
        assert_eq!(spectral_norm(&Matrix::zeros(2, 3)), 0.0);
        let u = Vector::from_vec(vec![1.0, 2.0]);
        let w = Vector::from_vec(vec![0.0, 3.0, 4.0]);
        let a = &u * w.transpose();
        assert_relative_eq!(spectral_norm(&a), u.norm() * w.norm(), epsilon = 1e-9);
    }

    #[test]
    fn correlation_basics() {
        let a = Vector::from_vec(vec![1.0, 0.0]);
        let b = Vector::from_vec(vec![2.0, 0.0]);
        assert_relative_eq!(correlation(&a, &b), 1.0);
        assert_eq!(correlation(&a, &Vector::zeros(2)), 0.0);
    }
}
