//! Acceptance checks shared by `attn-margin check` and the test suite.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::TokenDataset;
use crate::error::Result;
use crate::geometry::global_descent_check;
use crate::linalg::{Matrix, Vector};
use crate::loss::LossKind;
use crate::model::{grad_p, grad_v, grad_w, key_lemma_residual, loss, smoothness_bound, softmax, AttentionParams};
use crate::optim::{gd, GdConfig};
use crate::svm::{att_svm, qp_oracle, SvmStatus};

use super::bias::loss_bias_probe;
use super::census::{census_csv_bytes, run_census, CensusSpec};
use super::config::OptimizerKind;
use super::instances::{fig1a, fig1b, fig1c, fig2a, fig2b};
use super::scenarios::{
    census_assertions, global_runs, joint_assertions, joint_study, doubling_schedule, lemma2_study, local_assertions,
    local_runs, loss_bias_assertions, saturation_assertions, saturation_study, Assertion, CORR_LEVEL,
};

pub const CHECK_SEED: u64 = 20_231_006;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    /// Wall-clock limit for the criterion.
    pub budget_seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<4} {} ({:.2}s / {:.0}s) {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.budget_seconds,
            self.detail
        )
    }
}

pub const CRITERIA: [(u8, &str, f64); 13] = [
    (1, "gradient correctness", 10.0),
    (2, "svm oracle equivalence", 30.0),
    (3, "descent lemma", 60.0),
    (4, "global descent sign", 30.0),
    (5, "key lemma bound", 5.0),
    (6, "W/p equivalence", 10.0),
    (7, "global convergence on the single-input instance", 30.0),
    (8, "local convergence inside the cone", 60.0),
    (9, "random census", 900.0),
    (10, "joint regularization path", 300.0),
    (11, "saturation dynamics", 60.0),
    (12, "loss bias", 30.0),
    (13, "census determinism", 900.0),
];

/// Runs the given criteria (all when empty), in order.
pub fn run_checks(ids: &[u8]) -> Vec<CheckResult> {
    CRITERIA
        .iter()
        .filter(|(id, _, _)| ids.is_empty() || ids.contains(id))
        .map(|&(id, name, budget)| {
            let start = Instant::now();
            let (passed, detail) = match run_one(id) {
                Ok(a) => fold(&a),
                Err(e) => (false, format!("error: {e}")),
            };
            let seconds = start.elapsed().as_secs_f64();
            CheckResult { id, name, passed: passed && seconds <= budget, detail, seconds, budget_seconds: budget }
        })
        .collect()
}

fn fold(a: &[Assertion]) -> (bool, String) {
    let passed = a.iter().all(|x| x.passed);
    let detail = a
        .iter()
        .map(|x| format!("{}{}: {}", if x.passed { "" } else { "FAILED " }, x.name, x.detail))
        .collect::<Vec<_>>()
        .join("; ");
    (passed, detail)
}

fn run_one(id: u8) -> Result<Vec<Assertion>> {
    match id {
        1 => gradient_check(),
        2 => oracle_check(),
        3 => descent_lemma_check(),
        4 => global_sign_check(),
        5 => key_lemma_check(),
        6 => lemma2_check(),
        7 => fig1a_check(),
        8 => fig1b_check(),
        9 => census_check(),
        10 => joint_check(),
        11 => saturation_check(),
        12 => bias_check(),
        13 => determinism_check(),
        _ => Ok(vec![Assertion::new("known criterion", false, format!("no criterion {id}"))]),
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn uniform_vector(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() { 1.0 } else { -1.0 }
}

/// Relative error with the denominator floored at 1e-3, so near-zero
/// gradients are compared absolutely.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-3)
}

fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut y = x.to_vec();
    (0..x.len())
        .map(|j| {
            y[j] = x[j] + h;
            let up = f(&y);
            y[j] = x[j] - h;
            let down = f(&y);
            y[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn gradient_check() -> Result<Vec<Assertion>> {
    let mut rng = ChaCha8Rng::seed_from_u64(CHECK_SEED);
    let mut worst = [0.0f64; 3];
    for k in 0..100 {
        let (n, t, d) = (rng.random_range(1..=5), rng.random_range(1..=8), rng.random_range(1..=6));
        let inputs = (0..n).map(|_| uniform_matrix(&mut rng, t, d)).collect();
        let labels = (0..n).map(|_| sign(&mut rng)).collect();
        let w = uniform_matrix(&mut rng, d, d);
        let ds = TokenDataset::from_key_query(inputs, labels, w.clone())?;
        let kind = LossKind::ALL[k % 3];
        let params = AttentionParams::with_key_query(uniform_vector(&mut rng, d), uniform_vector(&mut rng, d), w.clone());
        let at = |p: &[f64], v: &[f64], w: &[f64]| {
            let pr = AttentionParams::with_key_query(
                Vector::from_column_slice(p),
                Vector::from_column_slice(v),
                Matrix::from_column_slice(d, d, w),
            );
            loss(&ds, &pr, kind).expect("shapes fixed")
        };
        let (p, v, wv) = (params.p.as_slice().to_vec(), params.v.as_slice().to_vec(), w.as_slice().to_vec());
        let ga = grad_p(&ds, &params, kind)?;
        let gv = grad_v(&ds, &params, kind)?;
        let gw = grad_w(&ds, &params, kind)?;
        worst[0] = worst[0].max(rel_err(ga.as_slice(), &central_diff(&p, |x| at(x, &v, &wv))));
        worst[1] = worst[1].max(rel_err(gv.as_slice(), &central_diff(&v, |x| at(&p, x, &wv))));
        worst[2] = worst[2].max(rel_err(gw.as_slice(), &central_diff(&wv, |x| at(&p, &v, x))));
    }
    Ok(["grad_p", "grad_v", "grad_W"]
        .iter()
        .zip(worst)
        .map(|(name, e)| Assertion::new(format!("{name} matches central differences"), e <= 1e-6, format!("max rel err {e:.2e}")))
        .collect())
}

fn oracle_check() -> Result<Vec<Assertion>> {
    let mut rng = ChaCha8Rng::seed_from_u64(CHECK_SEED + 2);
    let (mut feasible, mut infeasible, mut worst_dp, mut worst_gap, mut disagree) = (0, 0, 0.0f64, 0.0f64, 0);
    let mut attempts = 0;
    while feasible < 200 && attempts < 10_000 {
        attempts += 1;
        let d = rng.random_range(1..=4);
        let n = rng.random_range(1..=4);
        let t = rng.random_range(2..=(20 / n + 1).min(6));
        let keys: Vec<Matrix> = (0..n).map(|_| uniform_matrix(&mut rng, t, d) * 2.0).collect();
        let sel: Vec<usize> = (0..n).map(|_| rng.random_range(0..t)).collect();
        let a = att_svm(&keys, &sel)?;
        let o = qp_oracle(&keys, &sel)?;
        if (a.status == SvmStatus::Optimal) != (o.status == SvmStatus::Optimal) {
            disagree += 1;
            continue;
        }
        if a.status == SvmStatus::Optimal {
            feasible += 1;
            worst_dp = worst_dp.max((&a.solution - &o.solution).norm());
            worst_gap = worst_gap.max((0.5 * a.norm * a.norm - 0.5 * o.norm * o.norm).abs());
        } else {
            infeasible += 1;
        }
    }
    Ok(vec![
        Assertion::new("200 feasible instances", feasible == 200, format!("{feasible} feasible, {infeasible} infeasible")),
        Assertion::new("solutions agree", worst_dp <= 1e-6, format!("max |dp| {worst_dp:.2e}")),
        Assertion::new("objectives agree", worst_gap <= 1e-9, format!("max gap {worst_gap:.2e}")),
        Assertion::new("feasibility classified identically", disagree == 0, format!("{disagree} disagreements")),
    ])
}

fn random_dataset(rng: &mut ChaCha8Rng) -> (TokenDataset, Vector) {
    let (n, t, d) = (rng.random_range(1..=5), rng.random_range(2..=8), rng.random_range(2..=6));
    let inputs = (0..n).map(|_| uniform_matrix(rng, t, d)).collect();
    let labels = (0..n).map(|_| sign(rng)).collect();
    let ds = TokenDataset::from_key_query(inputs, labels, Matrix::identity(d, d)).expect("valid shapes");
    let v = uniform_vector(rng, d);
    (ds, v)
}

fn descent_lemma_check() -> Result<Vec<Assertion>> {
    let mut rng = ChaCha8Rng::seed_from_u64(CHECK_SEED + 3);
    let (mut violations, mut steps, mut worst) = (0usize, 0usize, f64::NEG_INFINITY);
    for _ in 0..100 {
        let (ds, v) = random_dataset(&mut rng);
        let lp = smoothness_bound(&ds, &v, None, LossKind::Logistic)?;
        let eta = 0.5 / lp;
        let p0 = uniform_vector(&mut rng, ds.dim());
        let t = gd(&ds, &v, LossKind::Logistic, &p0, &GdConfig::new(eta, 500))?;
        for w in t.records.windows(2) {
            let excess = w[1].loss - w[0].loss + 0.5 * eta * w[0].grad_norm.powi(2);
            worst = worst.max(excess);
            steps += 1;
            if excess > 1e-12 {
                violations += 1;
            }
        }
    }
    Ok(vec![Assertion::new(
        "L(t+1) - L(t) <= -(eta/2)|grad|^2",
        violations == 0,
        format!("{violations} violations over {steps} steps, worst slack {worst:.2e}"),
    )])
}

/// Random instance where every non-optimal token of an input has score 0
/// and the optimal one score 1, keys in the first `d − 1` coordinates.
fn equal_score_instance(rng: &mut ChaCha8Rng) -> Result<Option<(TokenDataset, Vector, Vector)>> {
    let (n, t, d) = (rng.random_range(1..=4), rng.random_range(2..=5), rng.random_range(3..=5));
    let mut tokens = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = sign(rng);
        let opt = rng.random_range(0..t);
        let mut x = uniform_matrix(rng, t, d);
        for r in 0..t {
            x[(r, d - 1)] = if r == opt { y } else { 0.0 };
        }
        tokens.push(x);
        labels.push(y);
    }
    let mut diag = Vector::from_element(d, 1.0);
    diag[d - 1] = 0.0;
    let w = Matrix::from_diagonal(&diag);
    let ds = TokenDataset::from_key_query(tokens, labels, w)?;
    let mut v = Vector::zeros(d);
    v[d - 1] = 1.0;
    match super::scenarios::gmm_direction(&ds, &v) {
        Ok((_, g)) => Ok(Some((ds, v, g.solution))),
        Err(_) => Ok(None),
    }
}

fn global_sign_check() -> Result<Vec<Assertion>> {
    let mut rng = ChaCha8Rng::seed_from_u64(CHECK_SEED + 4);
    let (mut instances, mut positive, mut evaluated, mut worst) = (0, 0, 0, f64::NEG_INFINITY);
    while instances < 20 {
        let Some((ds, v, gmm)) = equal_score_instance(&mut rng)? else { continue };
        instances += 1;
        for _ in 0..1000 {
            let dir = super::random::unit_sphere(&mut rng, ds.dim());
            let p = dir * (10.0 * rng.random::<f64>());
            let s = global_descent_check(&ds, &v, LossKind::Logistic, &p, &gmm)?;
            evaluated += 1;
            worst = worst.max(s);
            if s >= 0.0 {
                positive += 1;
            }
        }
    }
    Ok(vec![Assertion::new(
        "<grad L(p), p_mm> < 0",
        positive == 0,
        format!("{positive} nonnegative of {evaluated}, max {worst:.3e}"),
    )])
}

fn key_lemma_check() -> Result<Vec<Assertion>> {
    let mut rng = ChaCha8Rng::seed_from_u64(CHECK_SEED + 5);
    let (mut violations, mut tightest) = (0, 0.0f64);
    for _ in 0..1000 {
        let t = rng.random_range(1..=10);
        let a: Vec<f64> = (0..t).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g: Vec<f64> = (0..t).map(|_| rng.random_range(-3.0..3.0)).collect();
        let logits: Vec<f64> = (0..t).map(|_| rng.random_range(-4.0..4.0)).collect();
        let s = softmax(&logits)?;
        match key_lemma_residual(&a, s.as_slice(), &g) {
            Ok((r, b)) if b > 0.0 => tightest = tightest.max(r / b),
            Ok(_) => {}
            Err(_) => violations += 1,
        }
    }
    Ok(vec![Assertion::new(
        "residual <= 2 Gamma A (1 - s_1)^2",
        violations == 0,
        format!("{violations} violations in 1000 triples, max residual/bound {tightest:.3}"),
    )])
}

fn lemma2_check() -> Result<Vec<Assertion>> {
    let rows = lemma2_study(20, 100, CHECK_SEED + 6, None)?;
    let worst = rows.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
    Ok(vec![Assertion::new("max_t |W(t) - u p(t)^T/|u|^2|_F <= 1e-8", worst <= 1e-8, format!("{worst:.3e} over {} instances", rows.len()))])
}

fn fig1a_check() -> Result<Vec<Assertion>> {
    let inst = fig1a();
    let runs = global_runs(&inst.dataset, &inst.v, LossKind::Logistic, OptimizerKind::NormalizedGd, 0.1, 2000, 8, CHECK_SEED + 7)?;
    let worst = runs.final_corrs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(vec![Assertion::new(
        "all 8 starts reach the GMM direction",
        worst >= CORR_LEVEL,
        format!("min corr {worst:.6}"),
    )])
}

fn fig1b_check() -> Result<Vec<Assertion>> {
    let inst = fig1b();
    let runs = local_runs(&inst.dataset, &inst.v, LossKind::Logistic, 0.1, 2000, CHECK_SEED + 8)?;
    Ok(local_assertions(&runs))
}

fn census_check() -> Result<Vec<Assertion>> {
    let (_, report) = run_census(&CensusSpec::new(CHECK_SEED + 9))?;
    Ok(census_assertions(&report))
}

fn joint_check() -> Result<Vec<Assertion>> {
    let mut out = Vec::new();
    for (inst, support) in [(fig2a(), true), (fig2b(), false)] {
        let study = joint_study(&inst.dataset, &inst.v, &doubling_schedule(8))?;
        out.extend(joint_assertions(&study, support).into_iter().map(|mut a| {
            a.name = format!("{}: {}", inst.name, a.name);
            a
        }));
    }
    Ok(out)
}

fn saturation_check() -> Result<Vec<Assertion>> {
    let inst = fig1c();
    Ok(saturation_assertions(&saturation_study(&inst.dataset, &inst.v, LossKind::Logistic, 2000)?))
}

fn bias_check() -> Result<Vec<Assertion>> {
    let mut reports = Vec::new();
    for c in [2.0, 3.0, 5.0] {
        for kind in [LossKind::Correlation, LossKind::Logistic] {
            reports.push(loss_bias_probe(c, kind, 100)?);
        }
    }
    Ok(loss_bias_assertions(&reports))
}

fn determinism_check() -> Result<Vec<Assertion>> {
    let spec = CensusSpec::new(CHECK_SEED + 13);
    let hash = |jobs| -> Result<String> {
        let (rows, _) = run_census(&CensusSpec { jobs, ..spec.clone() })?;
        let digest = Sha256::digest(census_csv_bytes(&rows)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    };
    let (a, b) = (hash(None)?, hash(Some(2))?);
    Ok(vec![Assertion::new("census CSV hashes match", a == b, format!("{} vs {}", &a[..16], &b[..16]))])
}
