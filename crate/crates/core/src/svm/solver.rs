//! Minimum-norm point of a polyhedron `{p : w_c^T p ≥ b_c}`: least distance
//! programming through NNLS, backed by dual coordinate ascent with an exact
//! active-set polish.

use crate::linalg::{Matrix, Vector};

use super::nnls::{ldp, LdpOutcome};
use super::SvmStatus;

/// Sweep budget for the coordinate ascent.
pub const ITERATION_BUDGET: usize = 100_000;
/// Dual objective beyond which the program is declared infeasible.
pub const DUAL_BLOWUP: f64 = 1e12;
pub const FEAS_TOL: f64 = 1e-8;
pub const KKT_TOL: f64 = 1e-6;
const POLISH_EVERY: usize = 20;
/// Relative duality gap at which a coordinate-ascent iterate is accepted as is.
const GAP_TOL: f64 = 1e-14;
/// Slack, relative to `1 + ‖p‖`, below which a constraint counts as active.
const ACTIVE_TOL: f64 = 1e-6;

pub(crate) struct QpResult {
    pub p: Vector,
    pub lambda: Vector,
    pub status: SvmStatus,
}

pub(crate) struct Kkt {
    pub feasibility: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    /// `1 + ‖p‖` and `1 + max λ`, the scales the last two conditions are judged against.
    pub p_scale: f64,
    pub lambda_scale: f64,
}

/// Worst violation of each KKT condition at `(p, λ)`.
pub(crate) fn kkt(g: &Matrix, h: &Vector, p: &Vector, lambda: &Vector) -> Kkt {
    let slack = g * p - h;
    let feasibility = slack.iter().fold(0.0f64, |m, &s| m.max(-s));
    let stationarity = (p - g.transpose() * lambda).norm();
    let complementarity = slack
        .iter()
        .zip(lambda.iter())
        .fold(0.0f64, |m, (&s, &l)| m.max((l * s).abs()));
    let lambda_scale = 1.0 + lambda.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    Kkt { feasibility, stationarity, complementarity, p_scale: 1.0 + p.norm(), lambda_scale }
}

/// `½‖p‖² − (h^T λ − ½‖p‖²)` for `p = G^T λ`, i.e. `Σ λ_c slack_c`.
fn duality_gap(g: &Matrix, h: &Vector, p: &Vector, lambda: &Vector) -> f64 {
    (g * p - h).dot(lambda).abs()
}

fn kkt_ok(k: &Kkt) -> bool {
    k.feasibility <= FEAS_TOL && k.stationarity <= KKT_TOL * k.p_scale && k.complementarity <= KKT_TOL * k.lambda_scale
}

/// Solves `min ‖p‖ s.t. G p ≥ h` with `G` holding one constraint normal per row.
pub(crate) fn min_norm_point(g: &Matrix, h: &Vector) -> QpResult {
    let mut r = solve_raw(g, h);
    if r.status == SvmStatus::Optimal {
        r.p = refine_on_active(g, h, &r.p);
    }
    r
}

/// Recomputes an optimal `p` as the least-norm solution of its active
/// constraints held with equality. Two nearby answers with the same active
/// set come out identical.
pub(crate) fn refine_on_active(g: &Matrix, h: &Vector, p: &Vector) -> Vector {
    let scale = 1.0 + p.norm();
    let slack = g * p - h;
    let idx: Vec<usize> = (0..g.nrows()).filter(|&c| slack[c] <= ACTIVE_TOL * scale).collect();
    if idx.is_empty() {
        return p.clone();
    }
    let sub_g = g.select_rows(&idx);
    let sub_h = Vector::from_iterator(idx.len(), idx.iter().map(|&c| h[c]));
    let svd = sub_g.svd(true, true);
    let cutoff = 1e-12 * svd.singular_values.max();
    let Ok(q) = svd.solve(&sub_h, cutoff) else { return p.clone() };
    let feasible = (g * &q - h).iter().all(|&s| s >= -FEAS_TOL);
    if feasible && (&q - p).norm() <= ACTIVE_TOL * scale {
        q
    } else {
        p.clone()
    }
}

fn solve_raw(g: &Matrix, h: &Vector) -> QpResult {
    let (m, d) = g.shape();
    if m == 0 || h.iter().all(|&b| b <= 0.0) {
        return QpResult { p: Vector::zeros(d), lambda: Vector::zeros(m), status: SvmStatus::Optimal };
    }
    // The NNLS route either certifies infeasibility or usually solves the
    // program outright; coordinate ascent covers the cases where its answer
    // fails the KKT check.
    match ldp(g, h) {
        LdpOutcome::Infeasible { .. } => {
            return QpResult { p: Vector::zeros(d), lambda: Vector::zeros(m), status: SvmStatus::Infeasible };
        }
        LdpOutcome::Solved { p, lambda } => {
            if kkt_ok(&kkt(g, h, &p, &lambda)) {
                return QpResult { p, lambda, status: SvmStatus::Optimal };
            }
        }
    }

    let sq: Vec<f64> = g.row_iter().map(|r| r.norm_squared()).collect();
    let mut lambda = Vector::zeros(m);
    let mut p = Vector::zeros(d);
    for sweep in 1..=ITERATION_BUDGET {
        for c in 0..m {
            if sq[c] == 0.0 {
                continue;
            }
            let row = g.row(c);
            let slack = (row * &p)[0] - h[c];
            let next = (lambda[c] - slack / sq[c]).max(0.0);
            let delta = next - lambda[c];
            if delta != 0.0 {
                lambda[c] = next;
                p += row.transpose() * delta;
            }
        }
        let dual = h.dot(&lambda) - 0.5 * p.norm_squared();
        if !dual.is_finite() || dual > DUAL_BLOWUP {
            return QpResult { p: Vector::zeros(d), lambda: Vector::zeros(m), status: SvmStatus::Infeasible };
        }
        if kkt_ok(&kkt(g, h, &p, &lambda)) {
            // p = G^T λ holds by construction, so the KKT test alone is loose;
            // prefer the exact active-set solution, else wait for a tiny gap.
            if let Some(done) = polish(g, h, &p, &lambda) {
                return done;
            }
            if duality_gap(g, h, &p, &lambda) <= GAP_TOL * (1.0 + p.norm_squared()) {
                return QpResult { p, lambda, status: SvmStatus::Optimal };
            }
        }
        if sweep % POLISH_EVERY == 0 {
            if let Some(done) = polish(g, h, &p, &lambda) {
                return done;
            }
        }
    }
    QpResult { p, lambda, status: SvmStatus::IterationLimit }
}

/// Exact solve restricted to the constraints that look active; accepted only
/// when the result is feasible for the full program.
fn polish(g: &Matrix, h: &Vector, p: &Vector, lambda: &Vector) -> Option<QpResult> {
    let scale = 1.0 + p.norm();
    let slack = g * p - h;
    let idx: Vec<usize> = (0..g.nrows())
        .filter(|&c| lambda[c] > 0.0 || slack[c] <= 1e-3 * scale)
        .collect();
    if idx.is_empty() {
        return None;
    }
    let sub_g = g.select_rows(&idx);
    let sub_h = Vector::from_iterator(idx.len(), idx.iter().map(|&c| h[c]));
    let LdpOutcome::Solved { p: cand, lambda: sub_l } = ldp(&sub_g, &sub_h) else {
        return None;
    };
    let mut full = Vector::zeros(g.nrows());
    for (&c, &l) in idx.iter().zip(sub_l.iter()) {
        full[c] = l;
    }
    kkt_ok(&kkt(g, h, &cand, &full)).then_some(QpResult { p: cand, lambda: full, status: SvmStatus::Optimal })
}
