//! Property tests for the attention model, losses and gradients.

use attn_margin::linalg::spectral_norm;
use attn_margin::model::{
    attention_features, grad_p, grad_v, grad_w, key_lemma_residual, loss, predict, smoothness_bound, softmax, token_scores,
    AttentionParams,
};
use attn_margin::{InputRecord, LossKind, Matrix, TokenDataset, Vector};
use proptest::prelude::*;

const KINDS: [LossKind; 3] = [LossKind::Logistic, LossKind::Exponential, LossKind::Correlation];

fn entries(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

/// `(tokens per input, labels, d)` with entries in [-1, 1].
fn instance() -> impl Strategy<Value = (TokenDataset, Vector, Vector)> {
    (1usize..=5, 1usize..=8, 2usize..=6)
        .prop_flat_map(|(n, t, d)| {
            (
                prop::collection::vec(entries(t * d), n),
                prop::collection::vec(prop::bool::ANY, n),
                entries(d),
                entries(d),
                Just((t, d)),
            )
        })
        .prop_map(|(xs, ys, p, v, (t, d))| {
            let tokens = xs.into_iter().map(|x| Matrix::from_row_slice(t, d, &x)).collect();
            let labels = ys.into_iter().map(|y| if y { 1.0 } else { -1.0 }).collect();
            let ds = TokenDataset::from_key_query(tokens, labels, Matrix::identity(d, d)).unwrap();
            (ds, Vector::from_vec(p), Vector::from_vec(v))
        })
}

fn params(p: &Vector, v: &Vector) -> AttentionParams {
    AttentionParams::new(p.clone(), v.clone())
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_normalized_and_shift_invariant(a in prop::collection::vec(-30.0f64..30.0, 1..12), c in -50.0f64..50.0) {
        let s = softmax(&a).unwrap();
        prop_assert!((s.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(s.iter().all(|&x| x > 0.0));
        let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
        let s2 = softmax(&shifted).unwrap();
        prop_assert!((s - s2).amax() <= 1e-12);
    }

    #[test]
    fn grad_p_matches_central_differences((ds, p, v) in instance()) {
        for kind in KINDS {
            let g = grad_p(&ds, &params(&p, &v), kind).unwrap();
            for k in 0..p.len() {
                let h = 1e-5;
                let mut hi = p.clone();
                hi[k] += h;
                let mut lo = p.clone();
                lo[k] -= h;
                let fd = (loss(&ds, &params(&hi, &v), kind).unwrap() - loss(&ds, &params(&lo, &v), kind).unwrap()) / (2.0 * h);
                prop_assert!(rel_err(fd, g[k]) <= 1e-6, "{kind:?} coord {k}: fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn grad_v_matches_central_differences((ds, p, v) in instance()) {
        for kind in KINDS {
            let g = grad_v(&ds, &params(&p, &v), kind).unwrap();
            for k in 0..v.len() {
                let h = 1e-5;
                let mut hi = v.clone();
                hi[k] += h;
                let mut lo = v.clone();
                lo[k] -= h;
                let fd = (loss(&ds, &params(&p, &hi), kind).unwrap() - loss(&ds, &params(&p, &lo), kind).unwrap()) / (2.0 * h);
                prop_assert!(rel_err(fd, g[k]) <= 1e-6, "{kind:?} coord {k}: fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn grad_w_matches_central_differences((ds, p, v) in instance(), w_entries in entries(36)) {
        let d = ds.dim();
        let w = Matrix::from_row_slice(d, d, &w_entries[..d * d]);
        let at = |w: &Matrix| AttentionParams::with_key_query(p.clone(), v.clone(), w.clone());
        let g = grad_w(&ds, &at(&w), LossKind::Logistic).unwrap();
        for r in 0..d {
            for c in 0..d {
                let h = 1e-5;
                let mut hi = w.clone();
                hi[(r, c)] += h;
                let mut lo = w.clone();
                lo[(r, c)] -= h;
                let fd = (loss(&ds, &at(&hi), LossKind::Logistic).unwrap() - loss(&ds, &at(&lo), LossKind::Logistic).unwrap()) / (2.0 * h);
                prop_assert!(rel_err(fd, g[(r, c)]) <= 1e-6, "entry ({r},{c}): fd {fd} vs {}", g[(r, c)]);
            }
        }
    }

    #[test]
    fn loss_invariant_to_token_permutation((ds, p, v) in instance(), seed in any::<u64>()) {
        let inputs: Vec<InputRecord> = ds
            .inputs()
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let t = r.token_count();
                let shift = ((seed >> (i % 8)) as usize) % t;
                let order: Vec<usize> = (0..t).map(|k| (k + shift) % t).collect();
                InputRecord::new(r.tokens().select_rows(&order), r.keys().select_rows(&order), r.label()).unwrap()
            })
            .collect();
        let permuted = TokenDataset::new(inputs, None).unwrap();
        for kind in KINDS {
            let a = loss(&ds, &params(&p, &v), kind).unwrap();
            let b = loss(&permuted, &params(&p, &v), kind).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn bounded_losses_stay_positive((ds, p, v) in instance()) {
        prop_assert!(loss(&ds, &params(&p, &v), LossKind::Logistic).unwrap() > 0.0);
        prop_assert!(loss(&ds, &params(&p, &v), LossKind::Exponential).unwrap() > 0.0);
    }

    #[test]
    fn gradient_is_lipschitz_with_the_smoothness_bound((ds, p, v) in instance(), q in entries(6)) {
        let q = Vector::from_column_slice(&q[..ds.dim()]) * 3.0;
        for kind in [LossKind::Logistic, LossKind::Correlation] {
            let lp = smoothness_bound(&ds, &v, None, kind).unwrap();
            let gp = grad_p(&ds, &params(&p, &v), kind).unwrap();
            let gq = grad_p(&ds, &params(&q, &v), kind).unwrap();
            prop_assert!((gp - gq).norm() <= lp * (&p - &q).norm() + 1e-12);
        }
    }

    #[test]
    fn key_lemma_bound_holds(
        (a, s_raw, g) in (1usize..=10).prop_flat_map(|t| (entries(t), prop::collection::vec(0.01f64..1.0, t), entries(t)))
    ) {
        let total: f64 = s_raw.iter().sum();
        let s: Vec<f64> = s_raw.iter().map(|x| x / total).collect();
        let (residual, bound) = key_lemma_residual(&a, &s, &g).unwrap();
        prop_assert!(residual <= bound + 1e-12);
    }

    #[test]
    fn features_lie_in_the_token_hull((ds, p, _v) in instance()) {
        let feats = attention_features(&ds, &p).unwrap();
        for (r, x) in ds.inputs().iter().zip(&feats) {
            for c in 0..ds.dim() {
                let col = r.tokens().column(c);
                prop_assert!(x[c] >= col.min() - 1e-12 && x[c] <= col.max() + 1e-12);
            }
        }
    }

    #[test]
    fn flipping_a_label_negates_its_scores((ds, _p, v) in instance()) {
        let flipped: Vec<InputRecord> = ds
            .inputs()
            .iter()
            .map(|r| InputRecord::new(r.tokens().clone(), r.keys().clone(), -r.label()).unwrap())
            .collect();
        let a = token_scores(&ds, &v).unwrap();
        let b = token_scores(&TokenDataset::new(flipped, None).unwrap(), &v).unwrap();
        for (ra, rb) in a.rows().iter().zip(b.rows()) {
            prop_assert!(ra.iter().zip(rb).all(|(x, y)| *x == -*y));
        }
    }
}

#[test]
fn single_token_inputs_have_no_attention_gradient() {
    let tokens = vec![Matrix::from_row_slice(1, 3, &[0.3, -0.2, 0.9]), Matrix::from_row_slice(1, 3, &[-1.0, 0.5, 0.1])];
    let ds = TokenDataset::from_key_query(tokens, vec![1.0, -1.0], Matrix::identity(3, 3)).unwrap();
    let (p, v) = (Vector::from_vec(vec![2.0, -1.0, 0.5]), Vector::from_vec(vec![0.4, 0.1, -0.7]));
    for kind in KINDS {
        assert_eq!(grad_p(&ds, &params(&p, &v), kind).unwrap().amax(), 0.0);
    }
    let f = predict(&ds, &params(&p, &v)).unwrap();
    assert!((f[0] - (0.3 * 0.4 - 0.2 * 0.1 - 0.9 * 0.7)).abs() < 1e-15);
}

#[test]
fn equal_scores_give_zero_attention_gradient() {
    // v only sees the third coordinate, which is constant within each input.
    let tokens = vec![
        Matrix::from_row_slice(3, 3, &[0.0, 0.0, 0.5, 1.0, 0.0, 0.5, -0.1, 1.0, 0.5]),
        Matrix::from_row_slice(2, 3, &[0.7, -0.3, -0.2, 0.1, 0.9, -0.2]),
    ];
    let ds = TokenDataset::from_key_query(tokens, vec![1.0, 1.0], Matrix::identity(3, 3)).unwrap();
    let (p, v) = (Vector::from_vec(vec![1.3, -0.4, 0.2]), Vector::from_vec(vec![0.0, 0.0, 1.0]));
    for kind in KINDS {
        assert!(grad_p(&ds, &params(&p, &v), kind).unwrap().amax() <= 1e-15);
    }
}

#[test]
fn correlation_grad_v_is_negative_mean_feature() {
    let tokens = vec![Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), Matrix::from_row_slice(2, 2, &[0.5, 0.5, -1.0, 0.2])];
    let ds = TokenDataset::from_key_query(tokens, vec![1.0, -1.0], Matrix::identity(2, 2)).unwrap();
    let (p, v) = (Vector::from_vec(vec![2f64.ln(), 0.0]), Vector::from_vec(vec![0.3, -0.6]));
    let feats = attention_features(&ds, &p).unwrap();
    let expected = -(&feats[0] * 1.0 + &feats[1] * -1.0) / 2.0;
    let g = grad_v(&ds, &params(&p, &v), LossKind::Correlation).unwrap();
    assert!((g - expected).amax() <= 1e-15);
}

#[test]
fn single_input_w_gradient_is_rank_one_along_p() {
    let tokens = vec![Matrix::from_row_slice(3, 2, &[0.2, -0.5, 1.0, 0.3, -0.7, 0.8])];
    let w = Matrix::from_row_slice(2, 2, &[0.5, -0.2, 0.1, 1.1]);
    let ds = TokenDataset::from_key_query(tokens, vec![1.0], w.clone()).unwrap();
    let p = Vector::from_vec(vec![0.9, -1.3]);
    let g = grad_w(&ds, &AttentionParams::with_key_query(p.clone(), Vector::from_vec(vec![1.0, 0.5]), w), LossKind::Logistic).unwrap();
    let sv = g.clone().svd(false, false).singular_values;
    assert!(sv.min() <= 1e-14 * sv.max().max(1e-300));
    // Columns are multiples of p.
    for c in 0..2 {
        let col = g.column(c);
        assert!((col[0] * p[1] - col[1] * p[0]).abs() <= 1e-15);
    }
    assert!(spectral_norm(&g) > 0.0);
}
