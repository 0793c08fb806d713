//! Max-margin programs over token selections: ATT-SVM, its relaxed variant,
//! the label SVM and the multi-optimal generalization, plus a brute-force oracle.

mod nnls;
mod oracle;
mod solver;

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub use nnls::{ldp, nnls, LdpOutcome};
pub use oracle::{min_norm_oracle, qp_oracle, ORACLE_MAX_CONSTRAINTS, ORACLE_MAX_DIM};
pub use solver::{DUAL_BLOWUP, FEAS_TOL, ITERATION_BUDGET, KKT_TOL};

/// Default cap on the number of selections enumerated by combinatorial searches.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

/// One token index per input.
pub type TokenSelection = Vec<usize>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvmStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

impl fmt::Display for SvmStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SvmStatus::Optimal => "optimal",
            SvmStatus::Infeasible => "infeasible",
            SvmStatus::IterationLimit => "iteration_limit",
        })
    }
}

/// Constraint label: input `i`, competing token `t`. Label-SVM constraints use `t = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConstraintId {
    pub i: usize,
    pub t: usize,
}

/// The rows `w_c^T p ≥ b_c` of a max-margin program.
#[derive(Clone, Debug)]
pub struct ConstraintSystem {
    pub ids: Vec<ConstraintId>,
    pub normals: Matrix,
    pub offsets: Vector,
}

impl ConstraintSystem {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    fn from_rows(d: usize, rows: Vec<(ConstraintId, Vector, f64)>) -> Self {
        let m = rows.len();
        let mut normals = Matrix::zeros(m, d);
        let mut offsets = Vector::zeros(m);
        let mut ids = Vec::with_capacity(m);
        for (c, (id, w, b)) in rows.into_iter().enumerate() {
            normals.set_row(c, &w.transpose());
            offsets[c] = b;
            ids.push(id);
        }
        Self { ids, normals, offsets }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmSolution {
    pub solution: Vector,
    pub norm: f64,
    /// `1/‖solution‖`; absent unless optimal with a nonzero solution.
    pub margin: Option<f64>,
    pub status: SvmStatus,
    pub active: Vec<ConstraintId>,
    /// One multiplier per constraint, in the order of `constraints`.
    pub duals: Vec<f64>,
    pub constraints: Vec<ConstraintId>,
}

/// JSON layout `{solution, norm, margin, status, active:[{i,t}], duals}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SvmSolutionFile {
    pub solution: Vec<f64>,
    pub norm: f64,
    pub margin: Option<f64>,
    pub status: SvmStatus,
    pub active: Vec<ConstraintId>,
    pub duals: Vec<f64>,
}

impl SvmSolution {
    fn from_parts(sys: &ConstraintSystem, p: Vector, lambda: Vector, status: SvmStatus) -> Self {
        let norm = p.norm();
        let margin = (status == SvmStatus::Optimal && norm > 0.0).then(|| 1.0 / norm);
        let active = if status == SvmStatus::Optimal {
            let tol = active_tol(margin.unwrap_or(0.0));
            let slack = &sys.normals * &p - &sys.offsets;
            sys.ids
                .iter()
                .zip(slack.iter())
                .filter(|(_, &s)| s <= tol)
                .map(|(id, _)| *id)
                .collect()
        } else {
            Vec::new()
        };
        Self {
            solution: p,
            norm,
            margin,
            status,
            active,
            duals: lambda.iter().map(|&l| l.max(0.0)).collect(),
            constraints: sys.ids.clone(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SvmStatus::Optimal
    }

    /// Fails with `NotOptimal` unless the status is optimal.
    pub fn require_optimal(&self) -> Result<&Self> {
        if self.is_optimal() {
            Ok(self)
        } else {
            Err(Error::NotOptimal(self.status.to_string()))
        }
    }

    pub fn active_tol(&self) -> f64 {
        active_tol(self.margin.unwrap_or(0.0))
    }

    pub fn to_file(&self) -> SvmSolutionFile {
        SvmSolutionFile {
            solution: self.solution.iter().copied().collect(),
            norm: self.norm,
            margin: self.margin,
            status: self.status,
            active: self.active.clone(),
            duals: self.duals.clone(),
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

/// Slack below which a constraint counts as holding with equality.
pub fn active_tol(margin: f64) -> f64 {
    1e-6 * (1.0 + margin)
}

/// Solves `min ‖p‖ s.t. normals · p ≥ offsets` with the main solver.
pub fn solve_system(sys: &ConstraintSystem) -> SvmSolution {
    let r = solver::min_norm_point(&sys.normals, &sys.offsets);
    SvmSolution::from_parts(sys, r.p, r.lambda, r.status)
}

pub(crate) fn key_dim(keys: &[Matrix]) -> Result<usize> {
    let d = keys
        .first()
        .map(|k| k.ncols())
        .ok_or_else(|| Error::InvalidInput("no inputs".into()))?;
    if d == 0 {
        return Err(Error::InvalidInput("key dimension must be at least 1".into()));
    }
    if let Some(i) = keys.iter().position(|k| k.ncols() != d) {
        return Err(Error::DimensionMismatch(format!("input {i} keys have {} columns, expected {d}", keys[i].ncols())));
    }
    if let Some(i) = keys.iter().position(|k| k.nrows() == 0) {
        return Err(Error::InvalidInput(format!("input {i} has no tokens")));
    }
    Ok(d)
}

pub fn validate_selection(keys: &[Matrix], selection: &[usize]) -> Result<()> {
    if selection.len() != keys.len() {
        return Err(Error::DimensionMismatch(format!(
            "selection has {} entries for {} inputs",
            selection.len(),
            keys.len()
        )));
    }
    for (i, (&a, k)) in selection.iter().zip(keys).enumerate() {
        if a >= k.nrows() {
            return Err(Error::InvalidInput(format!("input {i}: token {a} out of range 0..{}", k.nrows())));
        }
    }
    Ok(())
}

/// Constraints `p^T (k_{iα_i} − k_{it}) ≥ b_i` for every `t ≠ α_i` admitted by `keep`.
pub fn att_constraints(
    keys: &[Matrix],
    selection: &[usize],
    offset: impl Fn(usize) -> f64,
    keep: impl Fn(usize, usize) -> bool,
) -> Result<ConstraintSystem> {
    let d = key_dim(keys)?;
    validate_selection(keys, selection)?;
    let mut rows = Vec::new();
    for (i, (k, &a)) in keys.iter().zip(selection).enumerate() {
        let sel = k.row(a).transpose();
        for t in 0..k.nrows() {
            if t != a && keep(i, t) {
                rows.push((ConstraintId { i, t }, &sel - k.row(t).transpose(), offset(i)));
            }
        }
    }
    Ok(ConstraintSystem::from_rows(d, rows))
}

/// `min ‖p‖ s.t. p^T (k_{iα_i} − k_{it}) ≥ 1` for all `i` and `t ≠ α_i`.
pub fn att_svm(keys: &[Matrix], selection: &[usize]) -> Result<SvmSolution> {
    Ok(solve_system(&att_constraints(keys, selection, |_| 1.0, |_, _| true)?))
}

/// ATT-SVM with margin 1 only on inputs in `support` and margin 0 elsewhere.
pub fn relaxed_att_svm(keys: &[Matrix], selection: &[usize], support: &[usize]) -> Result<SvmSolution> {
    if let Some(&i) = support.iter().find(|&&i| i >= keys.len()) {
        return Err(Error::InvalidInput(format!("support index {i} out of range")));
    }
    let sys = att_constraints(
        keys,
        selection,
        |i| if support.contains(&i) { 1.0 } else { 0.0 },
        |_, _| true,
    )?;
    Ok(solve_system(&sys))
}

/// Hard-margin classifier `min ‖v‖ s.t. Y_i v^T r_i ≥ 1`.
pub fn label_svm(features: &[Vector], labels: &[f64]) -> Result<SvmSolution> {
    let d = features
        .first()
        .map(|f| f.len())
        .ok_or_else(|| Error::InvalidInput("label SVM needs at least one point".into()))?;
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} features but {} labels", features.len(), labels.len())));
    }
    let mut rows = Vec::with_capacity(features.len());
    for (i, (r, &y)) in features.iter().zip(labels).enumerate() {
        if r.len() != d {
            return Err(Error::DimensionMismatch(format!("feature {i} has length {}", r.len())));
        }
        if y != 1.0 && y != -1.0 {
            return Err(Error::InvalidInput(format!("label {i} is {y}, expected ±1")));
        }
        rows.push((ConstraintId { i, t: 0 }, r * y, 1.0));
    }
    Ok(solve_system(&ConstraintSystem::from_rows(d, rows)))
}

/// Support indices (inputs with an active constraint) of a label-SVM solution.
pub fn support_indices(sol: &SvmSolution) -> Vec<usize> {
    let mut idx: Vec<usize> = sol.active.iter().map(|c| c.i).collect();
    idx.dedup();
    idx
}

/// Per-input optimal sets `O_i`; the complement `R̄_i` is implied by the token count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OptimalSets {
    sets: Vec<Vec<usize>>,
    counts: Vec<usize>,
}

impl OptimalSets {
    pub fn new(sets: Vec<Vec<usize>>, token_counts: &[usize]) -> Result<Self> {
        if sets.len() != token_counts.len() {
            return Err(Error::DimensionMismatch(format!("{} sets for {} inputs", sets.len(), token_counts.len())));
        }
        let mut clean = Vec::with_capacity(sets.len());
        for (i, (mut s, &t)) in sets.into_iter().zip(token_counts).enumerate() {
            s.sort_unstable();
            s.dedup();
            if s.is_empty() {
                return Err(Error::InvalidInput(format!("input {i}: empty optimal set")));
            }
            if s.iter().any(|&a| a >= t) {
                return Err(Error::InvalidInput(format!("input {i}: optimal index out of range 0..{t}")));
            }
            clean.push(s);
        }
        Ok(Self { sets: clean, counts: token_counts.to_vec() })
    }

    pub fn optimal(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn non_optimal(&self, i: usize) -> Vec<usize> {
        (0..self.counts[i]).filter(|t| !self.sets[i].contains(t)).collect()
    }

    pub fn is_non_optimal(&self, i: usize, t: usize) -> bool {
        !self.sets[i].contains(&t)
    }

    pub fn combinations(&self) -> u128 {
        self.sets.iter().map(|s| s.len() as u128).product()
    }

    fn decode(&self, mut code: u128) -> Vec<usize> {
        // Last input varies fastest so codes ascend in lexicographic order.
        let mut alpha = vec![0; self.sets.len()];
        for i in (0..self.sets.len()).rev() {
            let base = self.sets[i].len() as u128;
            alpha[i] = self.sets[i][(code % base) as usize];
            code /= base;
        }
        alpha
    }
}

#[derive(Clone, Debug)]
pub struct GeneralizedSvm {
    /// Lexicographically first minimum, or a non-optimal placeholder when none exists.
    pub best: SvmSolution,
    pub selection: TokenSelection,
    /// Every selection attaining the minimum norm, in lexicographic order.
    pub minima: Vec<(TokenSelection, SvmSolution)>,
}

/// Solves the multi-optimal program exactly by enumerating `α ∈ Π O_i`.
pub fn generalized_att_svm(keys: &[Matrix], sets: &OptimalSets, budget: u128) -> Result<GeneralizedSvm> {
    let d = key_dim(keys)?;
    if sets.sets.len() != keys.len() || sets.counts.iter().zip(keys).any(|(&c, k)| c != k.nrows()) {
        return Err(Error::DimensionMismatch("optimal sets do not match the keys".into()));
    }
    let total = sets.combinations();
    if total > budget {
        return Err(Error::BudgetExceeded { required: total, budget });
    }
    let solved: Vec<Result<(TokenSelection, SvmSolution)>> = (0..total)
        .into_par_iter()
        .map(|code| {
            let alpha = sets.decode(code);
            let sys = att_constraints(keys, &alpha, |_| 1.0, |i, t| sets.is_non_optimal(i, t))?;
            Ok((alpha, solve_system(&sys)))
        })
        .collect();
    let solved = solved.into_iter().collect::<Result<Vec<_>>>()?;

    let best_norm = solved
        .iter()
        .filter(|(_, s)| s.is_optimal())
        .map(|(_, s)| s.norm)
        .fold(f64::INFINITY, f64::min);
    if best_norm.is_infinite() {
        let status = if solved.iter().any(|(_, s)| s.status == SvmStatus::IterationLimit) {
            SvmStatus::IterationLimit
        } else {
            SvmStatus::Infeasible
        };
        let empty = ConstraintSystem::from_rows(d, Vec::new());
        let mut best = SvmSolution::from_parts(&empty, Vector::zeros(d), Vector::zeros(0), status);
        best.margin = None;
        return Ok(GeneralizedSvm { best, selection: sets.decode(0), minima: Vec::new() });
    }
    let tie = 1e-9 * (1.0 + best_norm);
    let minima: Vec<(TokenSelection, SvmSolution)> = solved
        .into_iter()
        .filter(|(_, s)| s.is_optimal() && s.norm <= best_norm + tie)
        .collect();
    let (selection, best) = minima[0].clone();
    Ok(GeneralizedSvm { best, selection, minima })
}
