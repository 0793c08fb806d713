//! Per-input gradient magnitudes on the two-input instance whose optimal
//! tokens have scores 1 and `C`.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::Result;
use crate::linalg::Vector;
use crate::loss::LossKind;
use crate::model::{grad_p, per_input_grad_p, AttentionParams};
use crate::optim::default_step;

use super::instances::loss_bias;

/// Both optimal tokens carry softmax probability 0.95 here.
pub fn bias_reference_point() -> Vector {
    Vector::from_vec(vec![19f64.ln(), 19f64.ln(), 0.0])
}

#[derive(Clone, Debug, Serialize)]
pub struct LossBiasReport {
    pub c: f64,
    pub kind: LossKind,
    pub reference_p: Vec<f64>,
    /// `‖∇L_1‖, ‖∇L_2‖` at the reference point.
    pub grad_norms: [f64; 2],
    pub expected: Option<&'static str>,
    pub holds: Option<bool>,
    /// `(step, ‖∇L_1‖, ‖∇L_2‖)` along GD from the origin with step `0.5/L_p`.
    pub trajectory: Vec<(usize, f64, f64)>,
}

fn norms(ds: &crate::TokenDataset, v: &Vector, p: &Vector, kind: LossKind) -> Result<[f64; 2]> {
    let g = per_input_grad_p(ds, &AttentionParams::new(p.clone(), v.clone()), kind)?;
    Ok([g[0].norm(), g[1].norm()])
}

/// Expected ordering of `‖∇L_2‖` against `‖∇L_1‖`: the correlation loss weighs
/// inputs by score, the logistic loss by `γ e^{−γ}`, so the larger-score input
/// loses influence once `C > 1`. Symmetric at `C = 1`.
fn expectation(c: f64, kind: LossKind) -> Option<Ordering> {
    match (c.partial_cmp(&1.0)?, kind) {
        (Ordering::Equal, _) => Some(Ordering::Equal),
        (Ordering::Greater, LossKind::Correlation) => Some(Ordering::Greater),
        (Ordering::Less, LossKind::Correlation) => Some(Ordering::Less),
        (Ordering::Greater, LossKind::Logistic) => Some(Ordering::Less),
        _ => None,
    }
}

pub fn loss_bias_probe(c: f64, kind: LossKind, steps: usize) -> Result<LossBiasReport> {
    let inst = loss_bias(c)?;
    let (ds, v) = (&inst.dataset, &inst.v);
    let p_ref = bias_reference_point();
    let [g1, g2] = norms(ds, v, &p_ref, kind)?;
    let exp = expectation(c, kind);
    let holds = exp.map(|o| match o {
        Ordering::Equal => (g1 - g2).abs() <= 0.05 * g1.max(g2),
        Ordering::Greater => g2 > g1,
        Ordering::Less => g1 > g2,
    });
    let eta = default_step(ds, v, kind)?;
    let mut p = Vector::zeros(3);
    let mut trajectory = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let [a, b] = norms(ds, v, &p, kind)?;
        trajectory.push((step, a, b));
        p -= grad_p(ds, &AttentionParams::new(p.clone(), v.clone()), kind)? * eta;
    }
    Ok(LossBiasReport {
        c,
        kind,
        reference_p: p_ref.iter().copied().collect(),
        grad_norms: [g1, g2],
        expected: exp.map(|o| match o {
            Ordering::Equal => "equal",
            Ordering::Greater => "input 2 larger",
            Ordering::Less => "input 1 larger",
        }),
        holds,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_at_unit_ratio() {
        for kind in [LossKind::Correlation, LossKind::Logistic] {
            let r = loss_bias_probe(1.0, kind, 5).unwrap();
            assert_eq!(r.holds, Some(true));
            assert!((r.grad_norms[0] - r.grad_norms[1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn orderings_at_three() {
        let c = loss_bias_probe(3.0, LossKind::Correlation, 5).unwrap();
        assert!(c.grad_norms[1] > c.grad_norms[0]);
        let l = loss_bias_probe(3.0, LossKind::Logistic, 5).unwrap();
        assert!(l.grad_norms[0] > l.grad_norms[1]);
        assert_eq!(l.trajectory.len(), 6);
    }
}
