//! Norm-constrained minimizers of the training loss: ball, cone-restricted and
//! joint `(v, p)` regularization paths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::dataset::TokenDataset;
use crate::error::{Error, Result};
use crate::geometry::ConeSpec;
use crate::linalg::{correlation, Vector};
use crate::loss::LossKind;
use crate::model::{excess_loss_grad_p, loss, loss_grad_v, AttentionParams};

#[derive(Clone, Debug)]
pub struct BallConfig {
    /// Initial trial step; the line search adapts it from there.
    pub eta: f64,
    pub max_steps: usize,
    /// Stop when the projected-gradient step is this small relative to the gradient.
    pub tol: f64,
    pub starts: usize,
    pub seed: u64,
}

impl Default for BallConfig {
    fn default() -> Self {
        Self { eta: 1.0, max_steps: 20_000, tol: 1e-9, starts: 8, seed: 0x5eed }
    }
}

#[derive(Clone, Debug)]
pub struct BallSolution {
    pub p: Vector,
    pub loss: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct PathPoint {
    pub r: f64,
    pub minimizer: Vector,
    pub loss: f64,
    pub corr: f64,
    pub converged: bool,
}

/// Projected gradient descent with backtracking on `f` over the set whose
/// projector is `project`, from a single start.
pub fn minimize_in_set(
    objective: &dyn Fn(&Vector) -> (f64, Vector),
    project: &dyn Fn(&Vector) -> Vector,
    p0: &Vector,
    cfg: &BallConfig,
) -> BallSolution {
    let mut p = project(p0);
    let (mut f, mut g) = objective(&p);
    let mut step = cfg.eta;
    let mut converged = false;
    let mut iterations = 0;
    'outer: while iterations < cfg.max_steps {
        let gn = g.norm();
        if gn == 0.0 {
            converged = true;
            break;
        }
        // Smallest step that still moves p at its current magnitude.
        let floor = 1e-8 * (1.0 + p.norm()) / gn;
        if !floor.is_finite() {
            converged = true;
            break;
        }
        step = step.max(floor);
        loop {
            let q = project(&(&p - &g * step));
            let d = &q - &p;
            let dn = d.norm();
            if dn == 0.0 {
                converged = true;
                break 'outer;
            }
            let (fq, gq) = objective(&q);
            let decrease = fq <= f - 1e-4 * dn * dn / step;
            // Once the loss stops resolving the change, accept a step that
            // does not overshoot along the segment.
            let flat = (f - fq).abs() <= 8.0 * f64::EPSILON * f.abs().max(f64::MIN_POSITIVE) && gq.dot(&d) <= 0.0;
            if fq.is_finite() && (decrease || flat) {
                let measure = dn / (step * gn);
                p = q;
                f = fq;
                g = gq;
                step = (step * 2.0).min(1e300);
                iterations += 1;
                if measure <= cfg.tol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            // Below the floor only a bounded number of further halvings.
            if step <= floor * 1e-12 {
                break 'outer;
            }
            step *= 0.5;
        }
    }
    BallSolution { p, loss: f, converged, iterations }
}

pub fn project_ball(p: &Vector, r: f64) -> Vector {
    let n = p.norm();
    if n > r {
        p * (r / n)
    } else {
        p.clone()
    }
}

/// Projects onto the circular cone around `cone.q`, then clamps the norm to `[R₀, r]`.
pub fn project_cone_shell(p: &Vector, cone: &ConeSpec, r: f64) -> Vector {
    let axis = cone.axis();
    let c = 1.0 - cone.mu;
    let s = (1.0 - c * c).sqrt();
    let a = p.dot(&axis);
    let w = p - &axis * a;
    let b = w.norm();
    let x = if a >= 0.0 && b * c <= a * s {
        p.clone()
    } else if a * c + b * s <= 0.0 {
        Vector::zeros(p.len())
    } else {
        let u = &axis * c + &w * (s / b);
        &u * p.dot(&u)
    };
    let n = x.norm();
    if n == 0.0 {
        axis * cone.r0.max(1e-12 * r)
    } else if n < cone.r0 {
        x * (cone.r0 / n)
    } else if n > r {
        x * (r / n)
    } else {
        x
    }
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    loop {
        let z = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n = z.norm();
        if n > 1e-12 {
            return z / n;
        }
    }
}

fn best_of(
    objective: &dyn Fn(&Vector) -> (f64, Vector),
    project: &dyn Fn(&Vector) -> Vector,
    starts: Vec<Vector>,
    cfg: &BallConfig,
) -> BallSolution {
    starts
        .iter()
        .map(|s| minimize_in_set(objective, project, s, cfg))
        .min_by(|a, b| a.loss.total_cmp(&b.loss))
        .expect("at least one start")
}

fn start_points(p0: &Vector, r: f64, cfg: &BallConfig, seed: u64, extra: impl Fn(Vector) -> Vector) -> Vec<Vector> {
    let mut starts = vec![p0.clone()];
    let n0 = p0.norm();
    if n0 > 0.0 && cfg.starts > 1 {
        starts.push(p0 * (r / n0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while starts.len() < cfg.starts.max(1) {
        starts.push(extra(random_unit(&mut rng, p0.len()) * r));
    }
    starts
}

fn check_dims(ds: &TokenDataset, v: &Vector, p0: &Vector) -> Result<()> {
    if v.len() != ds.dim() || p0.len() != ds.dim() {
        return Err(Error::DimensionMismatch(format!("v/p0 lengths {}/{} but d = {}", v.len(), p0.len(), ds.dim())));
    }
    Ok(())
}

/// Approximate `argmin_{‖p‖ ≤ R} L(p)` by multi-start projected descent.
pub fn projected_gd_ball(
    ds: &TokenDataset,
    v: &Vector,
    kind: LossKind,
    r: f64,
    p0: &Vector,
    cfg: &BallConfig,
) -> Result<BallSolution> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!("radius {r} must be positive")));
    }
    check_dims(ds, v, p0)?;
    let obj = |p: &Vector| excess_loss_grad_p(ds, &AttentionParams::new(p.clone(), v.clone()), kind);
    let proj = |p: &Vector| project_ball(p, r);
    let starts = start_points(&project_ball(p0, r), r, cfg, cfg.seed, |x| x);
    let mut best = best_of(&obj, &proj, starts, cfg);
    best.loss = true_loss(ds, v, kind, &best.p);
    Ok(best)
}

fn true_loss(ds: &TokenDataset, v: &Vector, kind: LossKind, p: &Vector) -> f64 {
    loss(ds, &AttentionParams::new(p.clone(), v.clone()), kind).unwrap_or(f64::NAN)
}

fn check_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::InvalidInput("empty radius schedule".into()));
    }
    if schedule[0] <= 0.0 || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("radius schedule must be positive and strictly increasing".into()));
    }
    Ok(())
}

/// `p̄(R)` along `schedule`, warm-started from the previous radius.
pub fn regularization_path(
    ds: &TokenDataset,
    v: &Vector,
    kind: LossKind,
    schedule: &[f64],
    target: &Vector,
    cfg: &BallConfig,
) -> Result<Vec<PathPoint>> {
    check_schedule(schedule)?;
    let mut prev = Vector::zeros(ds.dim());
    let mut out = Vec::with_capacity(schedule.len());
    for (k, &r) in schedule.iter().enumerate() {
        let run_cfg = BallConfig { seed: cfg.seed.wrapping_add(k as u64), ..cfg.clone() };
        let sol = projected_gd_ball(ds, v, kind, r, &prev, &run_cfg)?;
        out.push(PathPoint { r, corr: correlation(&sol.p, target), minimizer: sol.p.clone(), loss: sol.loss, converged: sol.converged });
        prev = sol.p;
    }
    Ok(out)
}

/// Minimizers over `{‖p‖ ≤ R} ∩ cone`, warm-started along `schedule`; correlation is against the cone axis.
pub fn cone_restricted_path(
    ds: &TokenDataset,
    v: &Vector,
    kind: LossKind,
    cone: &ConeSpec,
    schedule: &[f64],
    cfg: &BallConfig,
) -> Result<Vec<PathPoint>> {
    check_schedule(schedule)?;
    if cone.q.len() != ds.dim() {
        return Err(Error::DimensionMismatch("cone axis does not match the dataset".into()));
    }
    if let Some(&r) = schedule.iter().find(|&&r| r < cone.r0) {
        return Err(Error::InvalidInput(format!("radius {r} below the cone's inner radius {}", cone.r0)));
    }
    let obj = |p: &Vector| excess_loss_grad_p(ds, &AttentionParams::new(p.clone(), v.clone()), kind);
    let mut prev = cone.axis() * schedule[0];
    let mut out = Vec::with_capacity(schedule.len());
    for (k, &r) in schedule.iter().enumerate() {
        let proj = |p: &Vector| project_cone_shell(p, cone, r);
        let mut starts = start_points(&proj(&prev), r, cfg, cfg.seed.wrapping_add(k as u64), |x| proj(&x));
        starts.push(cone.axis() * r);
        let sol = best_of(&obj, &proj, starts, cfg);
        let l = true_loss(ds, v, kind, &sol.p);
        out.push(PathPoint { r, corr: correlation(&sol.p, &cone.q), minimizer: sol.p.clone(), loss: l, converged: sol.converged });
        prev = sol.p;
    }
    Ok(out)
}

/// How a cone-restricted path ends up relative to the cone axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConePathOutcome {
    /// The last minimizer is interior: its norm stopped short of the radius.
    NormStalls { norm: f64, radius: f64 },
    /// The direction stays at least `deviation = 1 − corr` away from the axis.
    DirectionDeviates { deviation: f64 },
    ConvergesToAxis { corr: f64 },
}

/// Classifies the final point of a cone path: interior if its norm is below
/// `0.99 R`, deviating if `1 − corr > min_deviation`.
pub fn classify_cone_path(points: &[PathPoint], min_deviation: f64) -> Option<ConePathOutcome> {
    let last = points.last()?;
    let norm = last.minimizer.norm();
    Some(if norm < 0.99 * last.r {
        ConePathOutcome::NormStalls { norm, radius: last.r }
    } else if 1.0 - last.corr > min_deviation {
        ConePathOutcome::DirectionDeviates { deviation: 1.0 - last.corr }
    } else {
        ConePathOutcome::ConvergesToAxis { corr: last.corr }
    })
}

#[derive(Clone, Debug)]
pub struct JointPathPoint {
    pub r: f64,
    pub big_r: f64,
    pub v: Vector,
    pub p: Vector,
    pub loss: f64,
    pub v_corr: f64,
    pub p_corr: f64,
    pub converged: bool,
}

const JOINT_ROUNDS: usize = 200;

/// Alternating block minimization of `L(v, p)` over `‖v‖ ≤ r`, `‖p‖ ≤ R`.
pub fn joint_reg_path(
    ds: &TokenDataset,
    kind: LossKind,
    schedule: &[(f64, f64)],
    v_target: &Vector,
    p_target: &Vector,
    cfg: &BallConfig,
) -> Result<Vec<JointPathPoint>> {
    if schedule.is_empty() {
        return Err(Error::InvalidInput("empty radius schedule".into()));
    }
    if schedule.iter().any(|&(r, big)| r <= 0.0 || big <= 0.0)
        || schedule.windows(2).any(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1)
    {
        return Err(Error::InvalidInput("joint schedule must be positive and nondecreasing".into()));
    }
    let d = ds.dim();
    let mut v = Vector::zeros(d);
    let mut p = Vector::zeros(d);
    let block = BallConfig { starts: 1, max_steps: cfg.max_steps.min(5_000), ..cfg.clone() };
    let mut out = Vec::with_capacity(schedule.len());
    for &(r, big_r) in schedule {
        let mut converged = false;
        let mut loss = f64::NAN;
        for _ in 0..JOINT_ROUNDS {
            let p_fixed = p.clone();
            let obj_v = |x: &Vector| loss_grad_v(ds, &AttentionParams::new(p_fixed.clone(), x.clone()), kind);
            let sv = minimize_in_set(&obj_v, &|x: &Vector| project_ball(x, r), &v, &block);
            let v_move = (&sv.p - &v).norm();
            v = sv.p;
            let v_fixed = v.clone();
            let obj_p = |x: &Vector| excess_loss_grad_p(ds, &AttentionParams::new(x.clone(), v_fixed.clone()), kind);
            let sp = minimize_in_set(&obj_p, &|x: &Vector| project_ball(x, big_r), &p, &block);
            let p_move = (&sp.p - &p).norm();
            loss = true_loss(ds, &v, kind, &sp.p);
            p = sp.p;
            if v_move <= cfg.tol * (1.0 + r) && p_move <= cfg.tol * (1.0 + big_r) && sv.converged && sp.converged {
                converged = true;
                break;
            }
        }
        out.push(JointPathPoint {
            r,
            big_r,
            v_corr: correlation(&v, v_target),
            p_corr: correlation(&p, p_target),
            v: v.clone(),
            p: p.clone(),
            loss,
            converged,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InputRecord;
    use crate::linalg::{matrix_from_rows, Matrix};
    use crate::model::loss;

    fn m(rows: &[&[f64]]) -> Matrix {
        matrix_from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn interior_minimizer_of_a_quadratic() {
        let c = v(&[0.3, -0.4]);
        let obj = |x: &Vector| ((x - &c).norm_squared(), (x - &c) * 2.0);
        let sol = minimize_in_set(&obj, &|x: &Vector| project_ball(x, 2.0), &v(&[1.0, 1.0]), &BallConfig::default());
        assert!(sol.converged);
        assert!((sol.p - c).norm() < 1e-8);
    }

    #[test]
    fn boundary_minimizer_of_a_quadratic() {
        let c = v(&[3.0, 4.0]);
        let obj = |x: &Vector| ((x - &c).norm_squared(), (x - &c) * 2.0);
        let sol = minimize_in_set(&obj, &|x: &Vector| project_ball(x, 1.0), &v(&[0.0, 0.0]), &BallConfig::default());
        assert!((sol.p - v(&[0.6, 0.8])).norm() < 1e-8);
    }

    #[test]
    fn ball_solution_stays_in_ball_and_matches_grid() {
        let x = m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        let ds = TokenDataset::new(vec![InputRecord::self_keyed(x, 1.0).unwrap()], None).unwrap();
        let head = v(&[1.0, 0.2]);
        let r = 1.5;
        let sol = projected_gd_ball(&ds, &head, LossKind::Logistic, r, &v(&[0.0, 0.0]), &BallConfig::default()).unwrap();
        assert!(sol.p.norm() <= r * (1.0 + 1e-8));
        assert!((sol.p.norm() - r).abs() < 1e-8);
        let mut best = f64::INFINITY;
        for k in 0..3600 {
            let th = k as f64 * std::f64::consts::TAU / 3600.0;
            let p = v(&[r * th.cos(), r * th.sin()]);
            best = best.min(loss(&ds, &AttentionParams::new(p, head.clone()), LossKind::Logistic).unwrap());
        }
        assert!(sol.loss <= best + 1e-9);
    }

    #[test]
    fn cone_projection_is_feasible() {
        let cone = ConeSpec::new(v(&[1.0, 1.0]), 0.05, 1.0).unwrap();
        for p in [v(&[-3.0, 0.5]), v(&[0.1, 0.0]), v(&[5.0, 4.0]), v(&[0.0, 0.0])] {
            let x = project_cone_shell(&p, &cone, 4.0);
            assert!(crate::geometry::cone_membership(&x, &cone), "{p:?} -> {x:?}");
            assert!(x.norm() <= 4.0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn cone_path_rejects_small_radius() {
        let ds = TokenDataset::new(vec![InputRecord::self_keyed(m(&[&[1.0], &[0.0]]), 1.0).unwrap()], None).unwrap();
        let cone = ConeSpec::new(v(&[1.0]), 0.1, 2.0).unwrap();
        assert!(cone_restricted_path(&ds, &v(&[1.0]), LossKind::Logistic, &cone, &[1.0], &BallConfig::default()).is_err());
    }

    #[test]
    fn joint_path_single_token() {
        let ds = TokenDataset::new(vec![InputRecord::self_keyed(m(&[&[0.0, 2.0]]), 1.0).unwrap()], None).unwrap();
        let pts = joint_reg_path(&ds, LossKind::Logistic, &[(1.0, 1.0), (2.0, 2.0)], &v(&[0.0, 1.0]), &v(&[1.0, 0.0]), &BallConfig::default()).unwrap();
        let last = pts.last().unwrap();
        assert!(last.v_corr > 0.999999);
        assert_eq!(last.p, v(&[0.0, 0.0]));
    }
}
