//! The attention prediction model `f(X) = v^T X^T softmax(K p)`, its losses,
//! exact gradients and the smoothness constant of the loss in `p`.

use std::borrow::Cow;

use serde::Serialize;

use crate::dataset::{InputRecord, TokenDataset};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, Matrix, Vector};
use crate::loss::LossKind;

/// Attention weights `p`, prediction head `v`, and an optional key-query matrix `W`.
///
/// When `w` is set the keys are recomputed as `X_i W^T` and `p` plays the
/// role of the query; otherwise the dataset's stored keys are used.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub p: Vector,
    pub v: Vector,
    pub w: Option<Matrix>,
}

impl AttentionParams {
    pub fn new(p: Vector, v: Vector) -> Self {
        Self { p, v, w: None }
    }

    pub fn with_key_query(p: Vector, v: Vector, w: Matrix) -> Self {
        Self { p, v, w: Some(w) }
    }

    fn check(&self, ds: &TokenDataset) -> Result<()> {
        let d = ds.dim();
        if self.p.len() != d {
            return Err(Error::DimensionMismatch(format!("p has length {} but d = {d}", self.p.len())));
        }
        if self.v.len() != d {
            return Err(Error::DimensionMismatch(format!("v has length {} but d = {d}", self.v.len())));
        }
        if let Some(w) = &self.w {
            if w.shape() != (d, d) {
                return Err(Error::DimensionMismatch(format!("W is {:?}, expected ({d}, {d})", w.shape())));
            }
        }
        Ok(())
    }
}

/// Per-input token scores `γ_it = Y_i v^T x_it`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreTable {
    rows: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn validate_logits(a: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("softmax of a non-finite entry".into()));
    }
    Ok(())
}

pub(crate) fn softmax_of(a: &Vector) -> Vector {
    let max = a.max();
    let mut s = a.map(|x| (x - max).exp());
    let z = s.sum();
    s /= z;
    s
}

pub fn softmax(a: &[f64]) -> Result<Vector> {
    validate_logits(a)?;
    Ok(softmax_of(&Vector::from_column_slice(a)))
}

/// `diag(s) - s s^T` for `s = softmax(a)`.
pub fn softmax_jacobian(a: &[f64]) -> Result<Matrix> {
    let s = softmax(a)?;
    Ok(Matrix::from_diagonal(&s) - &s * s.transpose())
}

/// `(diag(s) - s s^T) g` without forming the matrix.
///
/// Uses `s_t Σ_τ s_τ (g_t − g_τ)`; the direct `s_t g_t − s_t (s^T g)` cancels
/// to noise once one probability is within rounding of 1.
pub(crate) fn jacobian_apply(s: &Vector, g: &Vector) -> Vector {
    Vector::from_fn(s.len(), |t, _| {
        let inner: f64 = s.iter().zip(g.iter()).map(|(&st, &gt)| st * (g[t] - gt)).sum();
        s[t] * inner
    })
}

fn keys_for<'a>(rec: &'a InputRecord, w: Option<&Matrix>) -> Cow<'a, Matrix> {
    match w {
        Some(w) => Cow::Owned(rec.tokens() * w.transpose()),
        None => Cow::Borrowed(rec.keys()),
    }
}

/// Cached per-input quantities at the current parameters.
pub(crate) struct InputState {
    pub s: Vector,
    /// `Y_i X_i v`
    pub gamma: Vector,
    /// `Y_i f(X_i)`
    pub margin: f64,
}

fn input_state(rec: &InputRecord, keys: &Matrix, p: &Vector, v: &Vector) -> InputState {
    let s = softmax_of(&(keys * p));
    let gamma = rec.tokens() * v * rec.label();
    let margin = gamma.dot(&s);
    InputState { s, gamma, margin }
}

pub fn attention_features(ds: &TokenDataset, p: &Vector) -> Result<Vec<Vector>> {
    if p.len() != ds.dim() {
        return Err(Error::DimensionMismatch(format!("p has length {} but d = {}", p.len(), ds.dim())));
    }
    Ok(ds
        .inputs()
        .iter()
        .map(|r| r.tokens().transpose() * softmax_of(&(r.keys() * p)))
        .collect())
}

pub fn predict(ds: &TokenDataset, params: &AttentionParams) -> Result<Vec<f64>> {
    params.check(ds)?;
    let w = params.w.as_ref();
    Ok(ds
        .inputs()
        .iter()
        .map(|r| {
            let k = keys_for(r, w);
            let s = softmax_of(&(k.as_ref() * &params.p));
            (r.tokens() * &params.v).dot(&s)
        })
        .collect())
}

pub fn loss(ds: &TokenDataset, params: &AttentionParams, kind: LossKind) -> Result<f64> {
    params.check(ds)?;
    Ok(loss_unchecked(ds, params, kind))
}

pub(crate) fn loss_unchecked(ds: &TokenDataset, params: &AttentionParams, kind: LossKind) -> f64 {
    let w = params.w.as_ref();
    let total: f64 = ds
        .inputs()
        .iter()
        .map(|r| {
            let k = keys_for(r, w);
            kind.value(input_state(r, &k, &params.p, &params.v).margin)
        })
        .sum();
    total / ds.len() as f64
}

/// Loss and `∇_p` in one pass.
pub(crate) fn loss_grad_p(ds: &TokenDataset, params: &AttentionParams, kind: LossKind) -> (f64, Vector) {
    let w = params.w.as_ref();
    let mut total = 0.0;
    let mut grad = Vector::zeros(ds.dim());
    for r in ds.inputs() {
        let k = keys_for(r, w);
        let st = input_state(r, &k, &params.p, &params.v);
        total += kind.value(st.margin);
        let dl = kind.derivative(st.margin);
        grad += k.transpose() * jacobian_apply(&st.s, &st.gamma) * dl;
    }
    let n = ds.len() as f64;
    (total / n, grad / n)
}

/// Loss minus its value with every input attending only to its best-scoring
/// token, with `∇_p`. The offset does not depend on `p`, and the difference stays
/// resolvable when the attention is saturated and the raw loss is flat in floating point.
pub(crate) fn excess_loss_grad_p(ds: &TokenDataset, params: &AttentionParams, kind: LossKind) -> (f64, Vector) {
    let w = params.w.as_ref();
    let mut total = 0.0;
    let mut grad = Vector::zeros(ds.dim());
    for r in ds.inputs() {
        let k = keys_for(r, w);
        let st = input_state(r, &k, &params.p, &params.v);
        let top = st.gamma.max();
        let eps: f64 = st.s.iter().zip(st.gamma.iter()).map(|(&s, &g)| s * (top - g)).sum();
        total += kind.excess(top, eps);
        grad += k.transpose() * jacobian_apply(&st.s, &st.gamma) * kind.derivative(top - eps);
    }
    let n = ds.len() as f64;
    (total / n, grad / n)
}

pub fn grad_p(ds: &TokenDataset, params: &AttentionParams, kind: LossKind) -> Result<Vector> {
    params.check(ds)?;
    Ok(loss_grad_p(ds, params, kind).1)
}

/// Contribution of each input to `∇_p` (each already divided by `n`).
pub fn per_input_grad_p(ds: &TokenDataset, params: &AttentionParams, kind: LossKind) -> Result<Vec<Vector>> {
    params.check(ds)?;
    let w = params.w.as_ref();
    let n = ds.len() as f64;
    Ok(ds
        .inputs()
        .iter()
        .map(|r| {
            let k = keys_for(r, w);
            let st = input_state(r, &k, &params.p, &params.v);
            k.transpose() * jacobian_apply(&st.s, &st.gamma) * (kind.derivative(st.margin) / n)
        })
        .collect())
}

pub(crate) fn loss_grad_v(ds: &TokenDataset, params: &AttentionParams, kind: LossKind) -> (f64, Vector) {
    let w = params.w.as_ref();
    let mut total = 0.0;
    let mut grad = Vector::zeros(ds.dim());
    for r in ds.inputs() {
        let k = keys_for(r, w);
        let st = input_state(r, &k, &params.p, &params.v);
        total += kind.value(st.margin);
        let feat = r.tokens().transpose() * &st.s;
        grad += feat * (kind.derivative(st.margin) * r.label());
    }
    let n = ds.len() as f64;
    (total / n, grad / n)
}

pub fn grad_v(ds: &TokenDataset, params: &AttentionParams, kind: LossKind) -> Result<Vector> {
    params.check(ds)?;
    Ok(loss_grad_v(ds, params, kind).1)
}

/// `∇_W` of the loss when keys are `X_i W^T` and `p` is the query:
/// `p (1/n Σ ℓ'_i X_i^T S'(a_i) γ_i)^T`.
pub fn grad_w(ds: &TokenDataset, params: &AttentionParams, kind: LossKind) -> Result<Matrix> {
    params.check(ds)?;
    let w = params
        .w
        .as_ref()
        .ok_or_else(|| Error::Mode("grad_W requires a key-query matrix W".into()))?;
    let mut g = Vector::zeros(ds.dim());
    for r in ds.inputs() {
        let k = r.tokens() * w.transpose();
        let st = input_state(r, &k, &params.p, &params.v);
        g += r.tokens().transpose() * jacobian_apply(&st.s, &st.gamma) * kind.derivative(st.margin);
    }
    g /= ds.len() as f64;
    Ok(&params.p * g.transpose())
}

/// Smoothness constant `L_p = (1/n) Σ [M0 ‖v‖²‖W‖²‖X_i‖⁴ + 3 M1 ‖v‖ ‖W‖² ‖X_i‖³]`.
///
/// `w` falls back to the dataset's key-query matrix, then to the identity; the
/// identity is only accepted when the stored keys equal the tokens.
pub fn smoothness_bound(ds: &TokenDataset, v: &Vector, w: Option<&Matrix>, kind: LossKind) -> Result<f64> {
    if v.len() != ds.dim() {
        return Err(Error::DimensionMismatch(format!("v has length {} but d = {}", v.len(), ds.dim())));
    }
    let w_norm = match w.or(ds.key_query()) {
        Some(w) => {
            if w.shape() != (ds.dim(), ds.dim()) {
                return Err(Error::DimensionMismatch(format!("W is {:?}", w.shape())));
            }
            spectral_norm(w)
        }
        None if ds.keys_are_tokens() => 1.0,
        None => {
            return Err(Error::Mode(
                "keys are not tied to tokens and no key-query matrix was given".into(),
            ))
        }
    };
    let v_norm = v.norm();
    let max_token = ds
        .inputs()
        .iter()
        .flat_map(|r| r.tokens().row_iter().map(|row| row.norm()).collect::<Vec<_>>())
        .fold(0.0f64, f64::max);
    let c = kind.constants(v_norm * max_token);
    let total: f64 = ds
        .inputs()
        .iter()
        .map(|r| {
            let x = spectral_norm(r.tokens());
            c.m0 * v_norm.powi(2) * w_norm.powi(2) * x.powi(4) + 3.0 * c.m1 * v_norm * w_norm.powi(2) * x.powi(3)
        })
        .sum();
    Ok(total / ds.len() as f64)
}

pub fn token_scores(ds: &TokenDataset, v: &Vector) -> Result<ScoreTable> {
    if v.len() != ds.dim() {
        return Err(Error::DimensionMismatch(format!("v has length {} but d = {}", v.len(), ds.dim())));
    }
    Ok(ScoreTable::from_rows(
        ds.inputs()
            .iter()
            .map(|r| (r.tokens() * v * r.label()).iter().copied().collect())
            .collect(),
    ))
}

/// Residual of the first-token expansion of `a^T (diag(s) - s s^T) γ` and its
/// bound `2 Γ A (1 - s_1)²`, with `Γ = max |γ_t - γ_τ|` and `A = max |a_t|`.
pub fn key_lemma_residual(a: &[f64], s: &[f64], gamma: &[f64]) -> Result<(f64, f64)> {
    let t = a.len();
    if t == 0 || s.len() != t || gamma.len() != t {
        return Err(Error::DimensionMismatch(format!(
            "lengths a={}, s={}, γ={}",
            a.len(),
            s.len(),
            gamma.len()
        )));
    }
    let mass: f64 = s.iter().sum();
    if s.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("s is not a probability vector".into()));
    }
    let a_diag_g: f64 = (0..t).map(|i| a[i] * s[i] * gamma[i]).sum();
    let a_s: f64 = (0..t).map(|i| a[i] * s[i]).sum();
    let s_g: f64 = (0..t).map(|i| s[i] * gamma[i]).sum();
    let expansion: f64 = (1..t).map(|i| (a[0] - a[i]) * s[i] * (gamma[0] - gamma[i])).sum();
    let residual = (a_diag_g - a_s * s_g - expansion).abs();

    let spread = gamma.iter().fold(f64::MIN, |m, &g| m.max(g)) - gamma.iter().fold(f64::MAX, |m, &g| m.min(g));
    let a_max = a.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let bound = 2.0 * spread * a_max * (1.0 - s[0]).powi(2);
    if residual > bound + 1e-12 {
        return Err(Error::BoundViolated { residual, bound });
    }
    Ok((residual, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix_from_rows;
    use approx::assert_relative_eq;

    fn m(rows: &[&[f64]]) -> Matrix {
        matrix_from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for x in s.iter() {
            assert_relative_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let s = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert_relative_eq!(s[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s[1], 1.0 / 3.0, epsilon = 1e-15);
        let big = softmax(&[1000.0, 999.0]).unwrap();
        assert!(big.iter().all(|x| x.is_finite() && *x > 0.0));
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn jacobian_examples() {
        assert_eq!(softmax_jacobian(&[3.7]).unwrap(), Matrix::zeros(1, 1));
        let j = softmax_jacobian(&[0.0, 0.0]).unwrap();
        assert_relative_eq!(j, m(&[&[0.25, -0.25], &[-0.25, 0.25]]), epsilon = 1e-15);
        let j = softmax_jacobian(&[0.3, -1.2, 2.0, 0.1]).unwrap();
        assert_relative_eq!(j, j.transpose(), epsilon = 1e-15);
        for row in j.row_iter() {
            assert!(row.sum().abs() < 1e-15);
        }
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let a = [0.4, -0.3, 1.1];
        let u = v(&[0.2, -0.7, 0.5]);
        let eps = 1e-7;
        let shifted: Vec<f64> = a.iter().zip(u.iter()).map(|(x, d)| x + eps * d).collect();
        let fd = (softmax(&shifted).unwrap() - softmax(&a).unwrap()) / eps;
        let j = softmax_jacobian(&a).unwrap() * &u;
        assert_relative_eq!(fd, j, epsilon = 1e-6);
    }

    #[test]
    fn attention_feature_examples() {
        let x = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let ds = TokenDataset::new(vec![InputRecord::self_keyed(x, 1.0).unwrap()], None).unwrap();
        let f = attention_features(&ds, &v(&[2f64.ln(), 0.0])).unwrap();
        assert_relative_eq!(f[0], v(&[2.0 / 3.0, 1.0 / 3.0]), epsilon = 1e-15);
        let f0 = attention_features(&ds, &v(&[0.0, 0.0])).unwrap();
        assert_relative_eq!(f0[0], v(&[0.5, 0.5]), epsilon = 1e-15);
        let single = TokenDataset::new(vec![InputRecord::self_keyed(m(&[&[3.0, -1.0]]), 1.0).unwrap()], None).unwrap();
        assert_eq!(attention_features(&single, &v(&[9.0, 9.0])).unwrap()[0], v(&[3.0, -1.0]));
        assert!(attention_features(&ds, &v(&[1.0])).is_err());
    }

    #[test]
    fn loss_examples() {
        let x = m(&[&[1.0, 2.0], &[-1.0, 0.5]]);
        let ds = TokenDataset::new(vec![InputRecord::self_keyed(x, -1.0).unwrap()], None).unwrap();
        let zero_head = AttentionParams::new(v(&[0.3, 0.1]), v(&[0.0, 0.0]));
        assert_eq!(loss(&ds, &zero_head, LossKind::Correlation).unwrap(), 0.0);
        assert_relative_eq!(loss(&ds, &zero_head, LossKind::Logistic).unwrap(), 2f64.ln());
        assert_eq!(predict(&ds, &zero_head).unwrap(), vec![0.0]);
    }

    #[test]
    fn grad_w_requires_key_query() {
        let ds = TokenDataset::new(vec![InputRecord::self_keyed(m(&[&[1.0], &[2.0]]), 1.0).unwrap()], None).unwrap();
        let params = AttentionParams::new(v(&[0.1]), v(&[1.0]));
        assert!(matches!(grad_w(&ds, &params, LossKind::Logistic), Err(Error::Mode(_))));
    }

    #[test]
    fn smoothness_unit_instance() {
        // ‖v‖ = ‖W‖ = ‖X‖ = 1, logistic: 1/4 + 3 = 3.25
        let ds = TokenDataset::new(vec![InputRecord::self_keyed(m(&[&[1.0, 0.0]]), 1.0).unwrap()], None).unwrap();
        let l = smoothness_bound(&ds, &v(&[0.0, 1.0]), Some(&Matrix::identity(2, 2)), LossKind::Logistic).unwrap();
        assert_relative_eq!(l, 3.25, epsilon = 1e-12);
        assert_eq!(smoothness_bound(&ds, &v(&[0.0, 0.0]), None, LossKind::Logistic).unwrap(), 0.0);
    }

    #[test]
    fn smoothness_needs_w_for_untied_keys() {
        let rec = InputRecord::new(m(&[&[1.0, 0.0]]), m(&[&[0.0, 1.0]]), 1.0).unwrap();
        let ds = TokenDataset::new(vec![rec], None).unwrap();
        assert!(matches!(
            smoothness_bound(&ds, &v(&[1.0, 0.0]), None, LossKind::Logistic),
            Err(Error::Mode(_))
        ));
    }

    #[test]
    fn scores_follow_labels() {
        let x = m(&[&[-0.1, 1.0, 0.9], &[0.0, 0.0, 0.2]]);
        let pos = TokenDataset::new(vec![InputRecord::self_keyed(x.clone(), 1.0).unwrap()], None).unwrap();
        let neg = TokenDataset::new(vec![InputRecord::self_keyed(x, -1.0).unwrap()], None).unwrap();
        let head = v(&[0.0, 0.0, 1.0]);
        let sp = token_scores(&pos, &head).unwrap();
        let sn = token_scores(&neg, &head).unwrap();
        assert_eq!(sp.row(0)[0], 0.9);
        assert_eq!(sn.row(0), &[-0.9, -0.2]);
        assert!(token_scores(&pos, &v(&[0.0; 3].map(|_| 0.0))).unwrap().row(0).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn key_lemma_closed_form_two_tokens() {
        let (res, bound) = key_lemma_residual(&[1.0, -1.0], &[0.9, 0.1], &[1.0, 0.0]).unwrap();
        assert_relative_eq!(res, 0.02, epsilon = 1e-15);
        assert_relative_eq!(bound, 0.02, epsilon = 1e-15);
        assert_eq!(key_lemma_residual(&[4.0], &[1.0], &[2.0]).unwrap(), (0.0, 0.0));
        assert!(key_lemma_residual(&[1.0, 2.0], &[0.5, 0.6], &[0.0, 1.0]).is_err());
        assert!(key_lemma_residual(&[1.0], &[1.0], &[0.0, 1.0]).is_err());
    }
}
