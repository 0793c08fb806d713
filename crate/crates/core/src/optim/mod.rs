//! Gradient descent on the attention weights and the regularization paths
//! whose directions those iterates are compared against.

mod path;

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::dataset::TokenDataset;
use crate::error::{Error, Result};
use crate::geometry::saturation_with;
use crate::linalg::{correlation, Matrix, Vector};
use crate::loss::LossKind;
use crate::model::{grad_w, loss_grad_p, smoothness_bound, AttentionParams};

pub use path::{
    classify_cone_path, cone_restricted_path, joint_reg_path, minimize_in_set, project_ball, project_cone_shell, projected_gd_ball,
    regularization_path, BallConfig, BallSolution, ConePathOutcome, JointPathPoint, PathPoint,
};

pub const DEFAULT_GRAD_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_STEPS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    GradTol,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub norm: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub corr: Option<f64>,
    pub max_prob: f64,
    pub sparsity: f64,
}

/// Per-step record of a run, initial state included.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub final_iterate: Vector,
    pub step_size: f64,
    pub stop_reason: StopReason,
    /// `η > 1/L_p` for a loss where the smoothness bound is available.
    pub step_exceeds_smoothness: bool,
}

pub const TRAJECTORY_HEADER: [&str; 7] = ["step", "norm", "loss", "grad_norm", "corr", "max_prob", "sparsity"];
pub const PATH_HEADER: [&str; 4] = ["R", "norm", "loss", "corr"];

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("trajectory always holds the initial record")
    }

    /// First step whose average max probability reaches `threshold`.
    pub fn first_step_reaching(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.max_prob >= threshold).map(|r| r.step)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.norm.to_string(),
                r.loss.to_string(),
                r.grad_norm.to_string(),
                r.corr.map_or_else(String::new, |c| c.to_string()),
                r.max_prob.to_string(),
                r.sparsity.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub fn write_path_csv<W: Write>(points: &[PathPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PATH_HEADER).map_err(csv_err)?;
    for p in points {
        w.write_record([p.r.to_string(), p.minimizer.norm().to_string(), p.loss.to_string(), p.corr.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

#[derive(Clone, Debug)]
pub struct GdConfig {
    pub eta: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    /// Direction to report correlation against.
    pub target: Option<Vector>,
}

impl GdConfig {
    pub fn new(eta: f64, max_steps: usize) -> Self {
        Self { eta, max_steps, grad_tol: DEFAULT_GRAD_TOL, target: None }
    }

    pub fn with_target(mut self, target: Vector) -> Self {
        self.target = Some(target);
        self
    }

    pub fn with_grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = tol;
        self
    }
}

/// `0.5 / L_p`, the default vanilla step.
pub fn default_step(ds: &TokenDataset, v: &Vector, kind: LossKind) -> Result<f64> {
    let l = smoothness_bound(ds, v, None, kind)?;
    Ok(if l > 0.0 { 0.5 / l } else { 1.0 })
}

/// Vanilla step for runs started inside a cone of width `mu`: the smaller of
/// `1/L_p` and `μ/(1−μ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LocalStep {
    pub eta: f64,
    pub smoothness_term: f64,
    pub cone_term: f64,
    /// The cone term is the smaller one.
    pub cone_term_binds: bool,
}

pub fn local_step(ds: &TokenDataset, v: &Vector, kind: LossKind, mu: f64) -> Result<LocalStep> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidInput(format!("cone width μ = {mu} outside (0, 1)")));
    }
    let l = smoothness_bound(ds, v, None, kind)?;
    let smoothness_term = if l > 0.0 { 1.0 / l } else { f64::INFINITY };
    let cone_term = mu / (1.0 - mu);
    let cone_term_binds = cone_term < smoothness_term;
    Ok(LocalStep { eta: smoothness_term.min(cone_term), smoothness_term, cone_term, cone_term_binds })
}

fn check_run(ds: &TokenDataset, v: &Vector, p0: &Vector, eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidInput(format!("step size {eta} must be positive")));
    }
    for (name, x) in [("v", v), ("p0", p0)] {
        if x.len() != ds.dim() {
            return Err(Error::DimensionMismatch(format!("{name} has length {} but d = {}", x.len(), ds.dim())));
        }
    }
    Ok(())
}

fn run(
    ds: &TokenDataset,
    v: &Vector,
    kind: LossKind,
    p0: &Vector,
    cfg: &GdConfig,
    normalized: bool,
) -> Result<Trajectory> {
    check_run(ds, v, p0, cfg.eta)?;
    let mut params = AttentionParams::new(p0.clone(), v.clone());
    let mut records = Vec::new();
    let stop_reason;
    let mut step = 0;
    loop {
        let (loss, g) = loss_grad_p(ds, &params, kind);
        let gn = g.norm();
        let sat = saturation_with(ds, &params.p, None)?;
        records.push(StepRecord {
            step,
            norm: params.p.norm(),
            loss,
            grad_norm: gn,
            corr: cfg.target.as_ref().map(|t| correlation(&params.p, t)),
            max_prob: sat.avg_max_prob,
            sparsity: sat.avg_sparsity,
        });
        if !loss.is_finite() || !gn.is_finite() {
            stop_reason = StopReason::Diverged;
            break;
        }
        if (normalized && gn == 0.0) || (!normalized && gn <= cfg.grad_tol) {
            stop_reason = StopReason::GradTol;
            break;
        }
        if step == cfg.max_steps {
            stop_reason = StopReason::Budget;
            break;
        }
        let scale = if normalized { cfg.eta / gn } else { cfg.eta };
        params.p -= g * scale;
        step += 1;
    }
    let step_exceeds_smoothness = !normalized
        && kind.satisfies_loss_assumption()
        && smoothness_bound(ds, v, None, kind).is_ok_and(|l| cfg.eta * l > 1.0);
    Ok(Trajectory { records, final_iterate: params.p, step_size: cfg.eta, stop_reason, step_exceeds_smoothness })
}

/// `p(t+1) = p(t) − η ∇L(p(t))`.
pub fn gd(ds: &TokenDataset, v: &Vector, kind: LossKind, p0: &Vector, cfg: &GdConfig) -> Result<Trajectory> {
    run(ds, v, kind, p0, cfg, false)
}

/// `p(t+1) = p(t) − η ∇L/‖∇L‖`; stops cleanly on an exactly zero gradient.
pub fn normalized_gd(ds: &TokenDataset, v: &Vector, kind: LossKind, p0: &Vector, cfg: &GdConfig) -> Result<Trajectory> {
    run(ds, v, kind, p0, cfg, true)
}

#[derive(Clone, Debug)]
pub struct GdOnWReport {
    pub p: Vec<Vector>,
    pub w: Vec<Matrix>,
    /// `‖W(t) − u p(t)^T/‖u‖²‖_F` per step.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
}

/// Runs GD on `W` with query `u` (keys `X W^T`) next to GD on `p` with keys `X`,
/// starting from `W(0) = u p0^T/‖u‖²` with step `η/‖u‖²`.
pub fn gd_on_w(
    ds: &TokenDataset,
    v: &Vector,
    kind: LossKind,
    u: &Vector,
    p0: &Vector,
    eta: f64,
    max_steps: usize,
) -> Result<GdOnWReport> {
    check_run(ds, v, p0, eta)?;
    let un2 = u.norm_squared();
    if un2 == 0.0 {
        return Err(Error::InvalidInput("query vector u is zero".into()));
    }
    if u.len() != ds.dim() {
        return Err(Error::DimensionMismatch(format!("u has length {} but d = {}", u.len(), ds.dim())));
    }
    let d = ds.dim();
    let mut wp = AttentionParams::with_key_query(u.clone(), v.clone(), u * p0.transpose() / un2);
    let mut pp = AttentionParams::with_key_query(p0.clone(), v.clone(), Matrix::identity(d, d));
    let mut ps = vec![pp.p.clone()];
    let mut ws = vec![wp.w.clone().unwrap()];
    let mut deviations = vec![0.0];
    for _ in 0..max_steps {
        let gw = grad_w(ds, &wp, kind)?;
        let (_, gp) = loss_grad_p(ds, &pp, kind);
        if let Some(w) = wp.w.as_mut() {
            *w -= gw * (eta / un2);
        }
        pp.p -= gp * eta;
        let w = wp.w.as_ref().unwrap();
        deviations.push((w - u * pp.p.transpose() / un2).norm());
        ps.push(pp.p.clone());
        ws.push(w.clone());
    }
    let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
    Ok(GdOnWReport { p: ps, w: ws, deviations, max_deviation })
}
