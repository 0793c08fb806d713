//! Lawson-Hanson non-negative least squares and the least-distance program
//! built on it.

use crate::linalg::{Matrix, Vector};

const MAX_OUTER: usize = 1000;

/// `argmin_{x ≥ 0} ‖A x − b‖`. Returns the minimizer and the residual vector `A x − b`.
pub fn nnls(a: &Matrix, b: &Vector) -> (Vector, Vector) {
    let n = a.ncols();
    let mut x = Vector::zeros(n);
    if n == 0 {
        return (x, -b.clone());
    }
    let mut passive = vec![false; n];
    let col_scale = a.column_iter().map(|c| c.norm()).fold(0.0f64, f64::max).max(1.0);
    let tol = 1e-12 * col_scale * col_scale * b.norm().max(1.0);

    for _ in 0..MAX_OUTER {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;

        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let z = solve_passive(a, b, &idx);
            if idx.iter().zip(z.iter()).all(|(_, &zi)| zi > 0.0) {
                x.fill(0.0);
                for (&k, &zi) in idx.iter().zip(z.iter()) {
                    x[k] = zi;
                }
                break;
            }
            let mut step = 1.0f64;
            for (&k, &zi) in idx.iter().zip(z.iter()) {
                if zi <= 0.0 {
                    let denom = x[k] - zi;
                    if denom > 0.0 {
                        step = step.min(x[k] / denom);
                    }
                }
            }
            let mut znew = Vector::zeros(n);
            for (&k, &zi) in idx.iter().zip(z.iter()) {
                znew[k] = zi;
            }
            x = &x + (znew - &x) * step;
            for &k in &idx {
                if x[k] <= 1e-15 {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    let r = a * &x - b;
    (x, r)
}

fn solve_passive(a: &Matrix, b: &Vector, idx: &[usize]) -> Vector {
    let sub = a.select_columns(idx);
    sub.svd(true, true)
        .solve(b, 1e-13)
        .unwrap_or_else(|_| Vector::zeros(idx.len()))
}

/// Outcome of `min ‖p‖ s.t. G p ≥ h`.
pub enum LdpOutcome {
    /// Minimizer and non-negative multipliers with `p = G^T λ`.
    Solved { p: Vector, lambda: Vector },
    /// A non-negative `u` with `G^T u ≈ 0` and `h^T u = 1`.
    Infeasible { certificate: Vector },
}

/// Least-distance programming via NNLS on `[G^T; h^T] u ≈ e_{d+1}`.
///
/// The NNLS residual shrinks like `1/(1 + ‖p‖²)`, so a long solution is
/// resolved a second time with `h` rescaled to put `‖p‖` near one.
pub fn ldp(g: &Matrix, h: &Vector) -> LdpOutcome {
    let mut best = ldp_once(g, h);
    let mut scale = 1.0;
    for _ in 0..8 {
        let LdpOutcome::Solved { p, .. } = &best else { return best };
        let s = p.norm();
        if !s.is_finite() || (s - scale).abs() <= 1e-3 * scale || (scale == 1.0 && s <= 2.0) {
            break;
        }
        match ldp_once(g, &(h / s)) {
            LdpOutcome::Solved { p, lambda } => {
                best = LdpOutcome::Solved { p: p * s, lambda: lambda * s };
                scale = s;
            }
            LdpOutcome::Infeasible { .. } => break,
        }
    }
    best
}

fn ldp_once(g: &Matrix, h: &Vector) -> LdpOutcome {
    let (m, d) = g.shape();
    if m == 0 || h.iter().all(|&v| v <= 0.0) {
        return LdpOutcome::Solved { p: Vector::zeros(d), lambda: Vector::zeros(m) };
    }
    let mut e = Matrix::zeros(d + 1, m);
    e.view_mut((0, 0), (d, m)).copy_from(&g.transpose());
    e.row_mut(d).copy_from(&h.transpose());
    let mut f = Vector::zeros(d + 1);
    f[d] = 1.0;
    let (u, r) = nnls(&e, &f);
    let last = -r[d];
    if r.norm() <= 1e-9 || last <= 1e-12 {
        let hu = h.dot(&u);
        let cert = if hu > 0.0 { &u / hu } else { u };
        return LdpOutcome::Infeasible { certificate: cert };
    }
    let p = -r.rows(0, d) / r[d];
    let lambda = u / last;
    LdpOutcome::Solved { p, lambda }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn nnls_matches_unconstrained_when_positive() {
        let a = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        let (x, _) = nnls(&a, &b);
        assert_relative_eq!(x, Vector::from_vec(vec![1.0, 2.0]), epsilon = 1e-12);
    }

    #[test]
    fn nnls_clamps_negative_component() {
        let a = Matrix::identity(2, 2);
        let b = Vector::from_vec(vec![-1.0, 2.0]);
        let (x, r) = nnls(&a, &b);
        assert_eq!(x[0], 0.0);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(r.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ldp_single_halfspace() {
        let g = Matrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let h = Vector::from_vec(vec![1.0]);
        match ldp(&g, &h) {
            LdpOutcome::Solved { p, lambda } => {
                assert_relative_eq!(p, Vector::from_vec(vec![3.0 / 25.0, 4.0 / 25.0]), epsilon = 1e-12);
                assert_relative_eq!(lambda[0], 1.0 / 25.0, epsilon = 1e-12);
            }
            LdpOutcome::Infeasible { .. } => panic!("feasible"),
        }
    }

    #[test]
    fn ldp_detects_contradiction() {
        let g = Matrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let h = Vector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(ldp(&g, &h), LdpOutcome::Infeasible { .. }));
    }
}
