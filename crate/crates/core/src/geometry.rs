//! Token selections, directional margins, SVM neighbours, local optimality and
//! the cone around a max-margin direction.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::TokenDataset;
use crate::error::{Error, Result};
use crate::linalg::{correlation, Matrix, Vector};
use crate::loss::LossKind;
use crate::model::{self, softmax_of, token_scores, AttentionParams, ScoreTable};
use crate::svm::{self, SvmSolution, TokenSelection};

/// Canonical (smallest-index) selection plus the full argmax set of each input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Selection {
    pub canonical: TokenSelection,
    pub ties: Vec<Vec<usize>>,
}

impl Selection {
    pub fn is_unique(&self) -> bool {
        self.ties.iter().all(|t| t.len() == 1)
    }
}

fn argmax_set(values: &[f64], tol: f64) -> Vec<usize> {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..values.len()).filter(|&t| values[t] >= best - tol).collect()
}

fn selection_from(rows: impl Iterator<Item = Vec<usize>>) -> Selection {
    let ties: Vec<Vec<usize>> = rows.collect();
    Selection { canonical: ties.iter().map(|t| t[0]).collect(), ties }
}

/// Highest-score tokens of each input.
pub fn optimal_tokens(scores: &ScoreTable) -> Selection {
    selection_from(scores.rows().iter().map(|row| {
        let scale = row.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        argmax_set(row, 1e-12 * (1.0 + scale))
    }))
}

/// `argmax_t k_it^T q` per input.
pub fn selected_tokens(keys: &[Matrix], q: &Vector) -> Result<Selection> {
    let qn = q.norm();
    if qn == 0.0 {
        return Err(Error::InvalidInput("reference direction is zero".into()));
    }
    let kmax = max_key_norm(keys);
    let tol = 1e-10 * (1.0 + qn * kmax);
    let mut rows = Vec::with_capacity(keys.len());
    for (i, k) in keys.iter().enumerate() {
        if k.ncols() != q.len() {
            return Err(Error::DimensionMismatch(format!("input {i}: keys have {} columns, q has {}", k.ncols(), q.len())));
        }
        let a: Vec<f64> = (k * q).iter().copied().collect();
        rows.push(argmax_set(&a, tol));
    }
    Ok(selection_from(rows.into_iter()))
}

pub fn max_key_norm(keys: &[Matrix]) -> f64 {
    keys.iter()
        .flat_map(|k| k.row_iter().map(|r| r.norm()).collect::<Vec<_>>())
        .fold(0.0f64, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionalProfile {
    pub selection: TokenSelection,
    pub ties: Vec<Vec<usize>>,
    /// Smallest margin `(k_{iα_i} − k_it)^T q` over all non-selected tokens.
    pub gamma: f64,
    /// Constraints attaining `gamma`.
    pub minimizers: Vec<(usize, usize)>,
    /// Gap from `gamma` to the next distinct margin; infinite when there is none.
    pub delta: f64,
    /// Whether every minimizer scores strictly below its selected token; needs scores.
    pub neighbor_optimal: Option<bool>,
}

pub fn directional_margin_profile(keys: &[Matrix], q: &Vector, scores: Option<&ScoreTable>) -> Result<DirectionalProfile> {
    let sel = selected_tokens(keys, q)?;
    if let Some((i, t)) = sel.ties.iter().enumerate().find(|(_, t)| t.len() > 1) {
        return Err(Error::AmbiguousProfile { input: i, ties: t.clone() });
    }
    let mut margins = Vec::new();
    for (i, (k, &a)) in keys.iter().zip(&sel.canonical).enumerate() {
        let sa = k.row(a).dot(&q.transpose());
        for t in 0..k.nrows() {
            if t != a {
                margins.push(((i, t), sa - k.row(t).dot(&q.transpose())));
            }
        }
    }
    if margins.is_empty() {
        return Ok(DirectionalProfile {
            selection: sel.canonical,
            ties: sel.ties,
            gamma: f64::INFINITY,
            minimizers: Vec::new(),
            delta: f64::INFINITY,
            neighbor_optimal: scores.map(|_| true),
        });
    }
    let gamma = margins.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * (1.0 + gamma.abs());
    let minimizers: Vec<(usize, usize)> = margins.iter().filter(|m| m.1 <= gamma + tol).map(|m| m.0).collect();
    let delta = margins
        .iter()
        .filter(|m| m.1 > gamma + tol)
        .map(|m| m.1 - gamma)
        .fold(f64::INFINITY, f64::min);
    let neighbor_optimal = scores.map(|s| minimizers.iter().all(|&(i, t)| s.row(i)[t] < s.row(i)[sel.canonical[i]]));
    Ok(DirectionalProfile { selection: sel.canonical, ties: sel.ties, gamma, minimizers, delta, neighbor_optimal })
}

/// Tokens whose ATT-SVM constraint is active at the solution, per input.
pub fn svm_neighbors(keys: &[Matrix], svm: &SvmSolution, selection: &[usize]) -> Result<Vec<Vec<usize>>> {
    svm.require_optimal()?;
    svm::validate_selection(keys, selection)?;
    let tol = svm.active_tol();
    let p = &svm.solution;
    Ok(keys
        .iter()
        .zip(selection)
        .map(|(k, &a)| {
            let sa = k.row(a).dot(&p.transpose());
            (0..k.nrows())
                .filter(|&t| t != a && ((sa - k.row(t).dot(&p.transpose())) - 1.0).abs() <= tol)
                .collect()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LocalOptimality {
    pub per_input: Vec<bool>,
    pub overall: bool,
}

/// `γ_{iα_i} > γ_it` for every neighbour `t` of every input.
pub fn local_optimality_check(scores: &ScoreTable, neighbors: &[Vec<usize>], selection: &[usize]) -> LocalOptimality {
    let per_input: Vec<bool> = neighbors
        .iter()
        .zip(selection)
        .enumerate()
        .map(|(i, (nb, &a))| nb.iter().all(|&t| scores.row(i)[t] < scores.row(i)[a]))
        .collect();
    let overall = per_input.iter().all(|&b| b);
    LocalOptimality { per_input, overall }
}

#[derive(Clone, Debug)]
pub struct LmmCandidate {
    pub selection: TokenSelection,
    pub solution: SvmSolution,
    pub neighbors: Vec<Vec<usize>>,
    pub locally_optimal: bool,
    pub globally_optimal: bool,
}

/// Every selection with a feasible ATT-SVM, flagged for local and global optimality.
pub fn lmm_enumeration(ds: &TokenDataset, v: &Vector, budget: u128) -> Result<Vec<LmmCandidate>> {
    let scores = token_scores(ds, v)?;
    let keys = ds.keys();
    let counts = ds.token_counts();
    let total: u128 = counts.iter().map(|&c| c as u128).product();
    if total > budget {
        return Err(Error::BudgetExceeded { required: total, budget });
    }
    let opt = optimal_tokens(&scores);
    let decode = |mut code: u128| {
        let mut alpha = vec![0; counts.len()];
        for i in (0..counts.len()).rev() {
            alpha[i] = (code % counts[i] as u128) as usize;
            code /= counts[i] as u128;
        }
        alpha
    };
    let found: Vec<Result<Option<LmmCandidate>>> = (0..total)
        .into_par_iter()
        .map(|code| {
            let alpha = decode(code);
            let sol = svm::att_svm(&keys, &alpha)?;
            if !sol.is_optimal() {
                return Ok(None);
            }
            let neighbors = svm_neighbors(&keys, &sol, &alpha)?;
            let locally_optimal = local_optimality_check(&scores, &neighbors, &alpha).overall;
            let globally_optimal = alpha.iter().zip(&opt.ties).all(|(a, t)| t.contains(a));
            Ok(Some(LmmCandidate { selection: alpha, solution: sol, neighbors, locally_optimal, globally_optimal }))
        })
        .collect();
    Ok(found.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConeParameters {
    pub theta: f64,
    /// Half the smallest margin gap between a neighbour and a non-neighbour; infinite without non-neighbours.
    pub delta: f64,
    pub a: f64,
    pub mu: f64,
}

impl ConeParameters {
    pub fn delta_is_finite(&self) -> bool {
        self.delta.is_finite()
    }

    /// `δ > 0`, required for the cone argument to apply.
    pub fn is_valid(&self) -> bool {
        self.delta > 0.0
    }
}

pub fn cone_parameters(keys: &[Matrix], svm: &SvmSolution, selection: &[usize]) -> Result<ConeParameters> {
    let neighbors = svm_neighbors(keys, svm, selection)?;
    let p = &svm.solution;
    let pn = p.norm();
    if pn == 0.0 {
        return Err(Error::InvalidInput("max-margin direction is zero".into()));
    }
    let mut gap = f64::INFINITY;
    for ((k, &a), nb) in keys.iter().zip(selection).zip(&neighbors) {
        let proj: Vec<f64> = (k * p).iter().copied().collect();
        for &t in nb {
            for tau in 0..k.nrows() {
                if tau != a && !nb.contains(&tau) {
                    gap = gap.min(proj[t] - proj[tau]);
                }
            }
        }
    }
    let delta = 0.5 * gap;
    let a = max_key_norm(keys) * pn;
    let mu = 0.125 * (delta.min(0.5) / a).powi(2);
    Ok(ConeParameters { theta: 1.0 / pn, delta, a, mu })
}

/// `{p : corr(p, q) ≥ 1 − μ, ‖p‖ ≥ R₀}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConeSpec {
    pub q: Vector,
    pub mu: f64,
    pub r0: f64,
}

impl ConeSpec {
    pub fn new(q: Vector, mu: f64, r0: f64) -> Result<Self> {
        if q.norm() == 0.0 || !q.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("cone axis must be a finite nonzero vector".into()));
        }
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::InvalidInput(format!("cone width μ = {mu} outside (0, 1)")));
        }
        if !(r0 >= 0.0) {
            return Err(Error::InvalidInput(format!("cone radius R0 = {r0} is negative")));
        }
        Ok(Self { q, mu, r0 })
    }

    pub fn axis(&self) -> Vector {
        &self.q / self.q.norm()
    }
}

pub fn cone_membership(p: &Vector, cone: &ConeSpec) -> bool {
    let n = p.norm();
    if n == 0.0 {
        return false;
    }
    correlation(p, &cone.q) >= 1.0 - cone.mu - 1e-12 && n >= cone.r0 * (1.0 - 1e-12)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SaturationMetrics {
    pub avg_max_prob: f64,
    pub avg_sparsity: f64,
    pub max_prob: Vec<f64>,
    /// `‖s‖₁ / ‖s‖₂²`: 1 for one-hot, `T` for uniform.
    pub sparsity: Vec<f64>,
}

pub fn saturation_metrics(ds: &TokenDataset, p: &Vector) -> Result<SaturationMetrics> {
    saturation_with(ds, p, None)
}

/// As `saturation_metrics`, with keys recomputed as `X W^T` when `w` is given.
pub fn saturation_with(ds: &TokenDataset, p: &Vector, w: Option<&Matrix>) -> Result<SaturationMetrics> {
    if p.len() != ds.dim() {
        return Err(Error::DimensionMismatch(format!("p has length {} but d = {}", p.len(), ds.dim())));
    }
    let mut max_prob = Vec::with_capacity(ds.len());
    let mut sparsity = Vec::with_capacity(ds.len());
    for r in ds.inputs() {
        let a = match w {
            Some(w) => r.tokens() * (w.transpose() * p),
            None => r.keys() * p,
        };
        let s = softmax_of(&a);
        max_prob.push(s.max());
        sparsity.push(s.sum() / s.norm_squared());
    }
    let n = ds.len() as f64;
    Ok(SaturationMetrics {
        avg_max_prob: max_prob.iter().sum::<f64>() / n,
        avg_sparsity: sparsity.iter().sum::<f64>() / n,
        max_prob,
        sparsity,
    })
}

/// `⟨∇L(p), gmm⟩`.
pub fn global_descent_check(ds: &TokenDataset, v: &Vector, kind: LossKind, p: &Vector, gmm: &Vector) -> Result<f64> {
    if gmm.norm() == 0.0 {
        return Err(Error::InvalidInput("reference direction is zero".into()));
    }
    let g = model::grad_p(ds, &AttentionParams::new(p.clone(), v.clone()), kind)?;
    Ok(g.dot(gmm))
}

/// `min_i min_{t ∈ T_i} γ_{iα_i} − γ_it`; infinite when no input has neighbours.
pub fn score_gap(scores: &ScoreTable, selection: &[usize], neighbors: &[Vec<usize>]) -> f64 {
    neighbors
        .iter()
        .zip(selection)
        .enumerate()
        .flat_map(|(i, (nb, &a))| nb.iter().map(move |&t| scores.row(i)[a] - scores.row(i)[t]))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RankReport {
    pub dim: usize,
    /// Rank of each input's key matrix.
    pub key_ranks: Vec<usize>,
    /// Rank of all key differences `k_it − k_iτ` stacked together.
    pub difference_rank: usize,
}

/// Numerical ranks of the key geometry; informative only.
pub fn rank_report(keys: &[Matrix]) -> Result<RankReport> {
    let dim = svm::key_dim(keys)?;
    let rank = |m: &Matrix| {
        if m.nrows() == 0 {
            return 0;
        }
        let sv = m.clone().svd(false, false).singular_values;
        let tol = 1e-10 * sv.max().max(1.0);
        sv.iter().filter(|&&s| s > tol).count()
    };
    let mut diffs = Vec::new();
    for k in keys {
        for t in 1..k.nrows() {
            diffs.push(k.row(t) - k.row(0));
        }
    }
    let stacked = if diffs.is_empty() { Matrix::zeros(0, dim) } else { Matrix::from_rows(&diffs) };
    Ok(RankReport { dim, key_ranks: keys.iter().map(rank).collect(), difference_rank: rank(&stacked) })
}
