//! Exhaustive active-set enumeration for small min-norm programs.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

use super::solver::refine_on_active;
use super::{att_constraints, ConstraintSystem, SvmSolution, SvmStatus};

pub const ORACLE_MAX_CONSTRAINTS: usize = 20;
pub const ORACLE_MAX_DIM: usize = 4;

/// Same program as `att_svm`, solved by trying every candidate active set.
pub fn qp_oracle(keys: &[Matrix], selection: &[usize]) -> Result<SvmSolution> {
    let sys = att_constraints(keys, selection, |_| 1.0, |_, _| true)?;
    min_norm_oracle(&sys)
}

/// For each subset of at most `d` linearly independent normals, the point
/// `G_S^T (G_S G_S^T)^{-1} b_S` is a KKT candidate when its multipliers are
/// non-negative and it satisfies every constraint. The optimum is always one of them.
pub fn min_norm_oracle(sys: &ConstraintSystem) -> Result<SvmSolution> {
    let (m, d) = sys.normals.shape();
    if m > ORACLE_MAX_CONSTRAINTS || d > ORACLE_MAX_DIM {
        return Err(Error::SizeLimit(format!(
            "{m} constraints in dimension {d}; oracle handles at most {ORACLE_MAX_CONSTRAINTS} in dimension {ORACLE_MAX_DIM}"
        )));
    }
    let g = &sys.normals;
    let h = &sys.offsets;
    let mut best: Option<(f64, Vector, Vector)> = None;
    let mut subset = Vec::with_capacity(d);
    visit_subsets(m, d.min(m), 0, &mut subset, &mut |s| {
        let Some((p, lam)) = candidate(g, h, s) else { return };
        let norm = p.norm();
        if best.as_ref().is_none_or(|(b, _, _)| norm < *b) {
            let mut full = Vector::zeros(m);
            for (&c, &l) in s.iter().zip(lam.iter()) {
                full[c] = l.max(0.0);
            }
            best = Some((norm, p, full));
        }
    });
    Ok(match best {
        Some((_, p, lam)) => {
            let p = refine_on_active(g, h, &p);
            SvmSolution::from_parts(sys, p, lam, SvmStatus::Optimal)
        }
        None => SvmSolution::from_parts(sys, Vector::zeros(d), Vector::zeros(m), SvmStatus::Infeasible),
    })
}

fn visit_subsets(m: usize, max: usize, start: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    f(cur);
    if cur.len() == max {
        return;
    }
    for c in start..m {
        cur.push(c);
        visit_subsets(m, max, c + 1, cur, f);
        cur.pop();
    }
}

fn candidate(g: &Matrix, h: &Vector, s: &[usize]) -> Option<(Vector, Vector)> {
    let d = g.ncols();
    let (p, lam) = if s.is_empty() {
        (Vector::zeros(d), Vector::zeros(0))
    } else {
        let gs = g.select_rows(s);
        let sv = gs.clone().svd(false, false).singular_values;
        let (hi, lo) = (sv.max(), sv.min());
        if hi == 0.0 || lo <= 1e-10 * hi {
            return None;
        }
        let hs = Vector::from_iterator(s.len(), s.iter().map(|&c| h[c]));
        let gram = &gs * gs.transpose();
        let lam = gram.lu().solve(&hs)?;
        if lam.iter().any(|&l| l < -1e-10) {
            return None;
        }
        (gs.transpose() * &lam, lam)
    };
    let slack = g * &p - h;
    // The Gram solve loses accuracy in proportion to the solution's length.
    let tol = 1e-9 * (1.0 + h.amax()) * (1.0 + p.norm());
    slack.iter().all(|&x| x >= -tol).then_some((p, lam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix_from_rows;
    use approx::assert_relative_eq;

    #[test]
    fn single_constraint_closed_form() {
        let k = vec![matrix_from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap()];
        let s = qp_oracle(&k, &[0]).unwrap();
        assert_relative_eq!(s.solution, Vector::from_vec(vec![0.12, 0.16]), epsilon = 1e-12);
    }

    #[test]
    fn infeasible_and_size_limits() {
        let k = vec![
            matrix_from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
            matrix_from_rows(&[vec![-1.0], vec![0.0]]).unwrap(),
        ];
        assert_eq!(qp_oracle(&k, &[0, 0]).unwrap().status, SvmStatus::Infeasible);
        let big = vec![Matrix::from_fn(22, 2, |i, j| (i * 2 + j) as f64)];
        assert!(matches!(qp_oracle(&big, &[0]), Err(Error::SizeLimit(_))));
    }
}
