//! The scenario registry: each scenario computes its result, writes CSV/JSON
//! artifacts and a `summary.json` with its assertions.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::dataset::TokenDataset;
use crate::error::{Error, Result};
use crate::geometry::{
    cone_parameters, lmm_enumeration, optimal_tokens, saturation_metrics, ConeParameters, ConeSpec,
};
use crate::linalg::{correlation, Vector};
use crate::loss::LossKind;
use crate::model::{loss_grad_p, loss_grad_v, predict, token_scores, AttentionParams};
use crate::optim::{
    classify_cone_path, cone_restricted_path, default_step, gd, gd_on_w, joint_reg_path, local_step, normalized_gd,
    regularization_path, write_path_csv, BallConfig, ConePathOutcome, GdConfig, JointPathPoint, LocalStep, PathPoint,
    Trajectory,
};
use crate::svm::{
    att_svm, generalized_att_svm, label_svm, relaxed_att_svm, support_indices, OptimalSets, SvmSolution,
    TokenSelection, ENUMERATION_BUDGET,
};

use super::bias::{loss_bias_probe, LossBiasReport};
use super::census::{run_census, write_census_csv, CensusReport, CensusSpec};
use super::config::{DatasetSource, ExperimentConfig, OptimizerKind};
use super::random::{generate_random_dataset, trial_seed, unit_sphere};

pub const CORR_LEVEL: f64 = 0.99;

#[derive(Clone, Debug, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub dataset: String,
    pub passed: bool,
    pub assertions: Vec<Assertion>,
    pub artifacts: Vec<String>,
    pub metrics: serde_json::Value,
    pub seconds: f64,
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn trajectory(&mut self, name: &str, t: &Trajectory) -> Result<()> {
        let p = self.path(name);
        t.save_csv(p)
    }

    fn reg_path(&mut self, name: &str, pts: &[PathPoint]) -> Result<()> {
        let p = self.path(name);
        write_path_csv(pts, std::fs::File::create(p)?)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        std::fs::write(p, serde_json::to_string_pretty(value)?)?;
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(p).map_err(|e| Error::Io(e.to_string()))?;
        w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
        for r in rows {
            w.write_record(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn vec_json(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

/// ATT-SVM direction of the highest-score tokens; ties go through the
/// multi-optimal program.
pub fn gmm_direction(ds: &TokenDataset, v: &Vector) -> Result<(TokenSelection, SvmSolution)> {
    let scores = token_scores(ds, v)?;
    let opt = optimal_tokens(&scores);
    let keys = ds.keys();
    let (sel, sol) = if opt.is_unique() {
        (opt.canonical.clone(), att_svm(&keys, &opt.canonical)?)
    } else {
        let sets = OptimalSets::new(opt.ties.clone(), &ds.token_counts())?;
        let g = generalized_att_svm(&keys, &sets, ENUMERATION_BUDGET)?;
        (g.selection, g.best)
    };
    sol.require_optimal()?;
    Ok((sel, sol))
}

/// Directions that actually move the logits: the range of `W` when present.
fn key_space(ds: &TokenDataset, z: Vector) -> Vector {
    match ds.key_query() {
        Some(w) => w * z,
        None => z,
    }
}

fn random_direction(ds: &TokenDataset, rng: &mut ChaCha8Rng) -> Vector {
    loop {
        let z = key_space(ds, unit_sphere(rng, ds.dim()));
        let n = z.norm();
        if n > 1e-8 {
            return z / n;
        }
    }
}

/// `count` seeded starting points of norm `radius` in the key space.
pub fn initializations(ds: &TokenDataset, count: usize, radius: f64, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_direction(ds, &mut rng) * radius).collect()
}

fn run_kind(
    kind_opt: OptimizerKind,
    ds: &TokenDataset,
    v: &Vector,
    kind: LossKind,
    p0: &Vector,
    cfg: &GdConfig,
) -> Result<Trajectory> {
    match kind_opt {
        OptimizerKind::Gd => gd(ds, v, kind, p0, cfg),
        OptimizerKind::NormalizedGd => normalized_gd(ds, v, kind, p0, cfg),
    }
}

#[derive(Clone, Debug)]
pub struct GlobalRuns {
    pub selection: TokenSelection,
    pub gmm: SvmSolution,
    pub starts: Vec<Vector>,
    pub trajectories: Vec<Trajectory>,
    pub final_corrs: Vec<f64>,
}

pub fn global_runs(
    ds: &TokenDataset,
    v: &Vector,
    kind: LossKind,
    optimizer: OptimizerKind,
    eta: f64,
    steps: usize,
    starts: usize,
    seed: u64,
) -> Result<GlobalRuns> {
    let (selection, gmm) = gmm_direction(ds, v)?;
    let starts = initializations(ds, starts, 1.0, seed);
    let cfg = GdConfig::new(eta, steps).with_target(gmm.solution.clone());
    let trajectories =
        starts.iter().map(|p0| run_kind(optimizer, ds, v, kind, p0, &cfg)).collect::<Result<Vec<_>>>()?;
    let final_corrs = trajectories.iter().map(|t| correlation(&t.final_iterate, &gmm.solution)).collect();
    Ok(GlobalRuns { selection, gmm, starts, trajectories, final_corrs })
}

#[derive(Clone, Debug, Serialize)]
pub struct LmmStudy {
    pub selection: TokenSelection,
    pub direction: Vec<f64>,
    pub cone: ConeParameters,
    /// Vanilla step the cone width would allow; the runs themselves use normalized GD.
    pub vanilla_step: LocalStep,
    /// Smallest doubling of 1 at which the direction saturates to 0.99.
    pub radius: f64,
    pub inside_corrs: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalRuns {
    pub gmm_selection: TokenSelection,
    pub gmm: Vec<f64>,
    pub studies: Vec<LmmStudy>,
    /// `(start, final correlation to the GMM)` for starts outside every cone.
    pub outside: Vec<(Vec<f64>, f64)>,
}

/// Smallest `R = 2^k ≥ 1` with average max-probability at least `level` along `dir`.
pub fn saturation_radius(ds: &TokenDataset, dir: &Vector, level: f64) -> Result<f64> {
    let unit = dir / dir.norm();
    let mut r = 1.0;
    while saturation_metrics(ds, &(&unit * r))?.avg_max_prob < level {
        r *= 2.0;
        if r > 1e6 {
            return Err(Error::InvalidInput("direction does not saturate the softmax".into()));
        }
    }
    Ok(r)
}

/// Starting points inside `{corr ≥ 1 − μ, ‖p‖ = R}` around `axis`: the axis
/// itself and tilts to correlation `1 − μ/2`.
pub fn cone_starts(ds: &TokenDataset, axis: &Vector, mu: f64, r: f64, count: usize, seed: u64) -> Vec<Vector> {
    let a = axis / axis.norm();
    let cos = 1.0 - 0.5 * mu;
    let sin = (1.0 - cos * cos).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![&a * r];
    while out.len() < count {
        let z = random_direction(ds, &mut rng);
        let w = &z - &a * z.dot(&a);
        if w.norm() < 1e-8 {
            continue;
        }
        out.push((&a * cos + w.normalize() * sin) * r);
    }
    out
}

pub fn local_runs(ds: &TokenDataset, v: &Vector, kind: LossKind, eta: f64, steps: usize, seed: u64) -> Result<LocalRuns> {
    let (gmm_selection, gmm) = gmm_direction(ds, v)?;
    let keys = ds.keys();
    let candidates = lmm_enumeration(ds, v, ENUMERATION_BUDGET)?;
    let cfg = GdConfig::new(eta, steps);
    let mut studies = Vec::new();
    let mut cones = Vec::new();
    let mut radius = 1.0f64;
    for (k, c) in candidates.iter().filter(|c| c.locally_optimal && !c.globally_optimal).enumerate() {
        let cone = cone_parameters(&keys, &c.solution, &c.selection)?;
        let r = saturation_radius(ds, &c.solution.solution, 0.99)?;
        radius = radius.max(r);
        let inside = cone_starts(ds, &c.solution.solution, cone.mu, r, 8, trial_seed(seed, k as u64));
        let inside_corrs = inside
            .iter()
            .map(|p0| Ok(correlation(&normalized_gd(ds, v, kind, p0, &cfg)?.final_iterate, &c.solution.solution)))
            .collect::<Result<Vec<_>>>()?;
        cones.push(ConeSpec::new(c.solution.solution.clone(), cone.mu, r)?);
        studies.push(LmmStudy {
            selection: c.selection.clone(),
            direction: vec_json(&c.solution.solution),
            vanilla_step: local_step(ds, v, kind, cone.mu)?,
            cone,
            radius: r,
            inside_corrs,
        });
    }
    let mut outside = Vec::new();
    for p0 in initializations(ds, 16, radius, trial_seed(seed, 1 << 20)) {
        if cones.iter().any(|c| crate::geometry::cone_membership(&p0, c)) {
            continue;
        }
        let end = normalized_gd(ds, v, kind, &p0, &cfg)?.final_iterate;
        outside.push((vec_json(&p0), correlation(&end, &gmm.solution)));
    }
    Ok(LocalRuns { gmm_selection, gmm: vec_json(&gmm.solution), studies, outside })
}

pub fn local_assertions(runs: &LocalRuns) -> Vec<Assertion> {
    let mut out = vec![Assertion::new(
        "non-global LMM exists",
        !runs.studies.is_empty(),
        format!("{} locally optimal, not globally optimal selections", runs.studies.len()),
    )];
    for s in &runs.studies {
        let worst = s.inside_corrs.iter().copied().fold(f64::INFINITY, f64::min);
        out.push(Assertion::new(
            format!("starts inside cone of {:?} converge to it", s.selection),
            worst >= CORR_LEVEL,
            format!("min corr {worst:.6} over {} starts, mu {:.3e}, R {}", s.inside_corrs.len(), s.cone.mu, s.radius),
        ));
    }
    let best = runs.outside.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
    let hits = runs.outside.iter().filter(|o| o.1 >= CORR_LEVEL).count();
    out.push(Assertion::new(
        "some start outside the cones reaches the GMM",
        hits > 0,
        format!("{hits}/{} outside starts with corr >= {CORR_LEVEL}, best {best:.6}", runs.outside.len()),
    ));
    out
}

#[derive(Clone, Debug)]
pub struct JointStudy {
    pub selection: TokenSelection,
    pub label: SvmSolution,
    pub mm: SvmSolution,
    pub relaxed: SvmSolution,
    pub support: Vec<usize>,
    pub points: Vec<JointPathPoint>,
    pub p_corr_relaxed: Vec<f64>,
}

pub fn doubling_schedule(levels: usize) -> Vec<(f64, f64)> {
    (0..levels).map(|k| (2f64.powi(k as i32), 2f64.powi(k as i32))).collect()
}

/// Joint `(v, p)` path with targets from the optimal tokens under `v`.
pub fn joint_study(ds: &TokenDataset, v: &Vector, schedule: &[(f64, f64)]) -> Result<JointStudy> {
    let scores = token_scores(ds, v)?;
    let selection = optimal_tokens(&scores).canonical;
    let keys = ds.keys();
    let features: Vec<Vector> =
        ds.inputs().iter().zip(&selection).map(|(r, &a)| r.tokens().row(a).transpose()).collect();
    let label = label_svm(&features, &ds.labels())?;
    label.require_optimal()?;
    let support = support_indices(&label);
    let mm = att_svm(&keys, &selection)?;
    mm.require_optimal()?;
    let relaxed = relaxed_att_svm(&keys, &selection, &support)?;
    relaxed.require_optimal()?;
    let points = joint_reg_path(ds, LossKind::Logistic, schedule, &label.solution, &mm.solution, &BallConfig::default())?;
    let p_corr_relaxed = points.iter().map(|pt| correlation(&pt.p, &relaxed.solution)).collect();
    Ok(JointStudy { selection, label, mm, relaxed, support, points, p_corr_relaxed })
}

pub fn joint_assertions(study: &JointStudy, all_support: bool) -> Vec<Assertion> {
    let last = study.points.last().expect("nonempty schedule");
    let relax = *study.p_corr_relaxed.last().expect("nonempty schedule");
    let mut out = vec![Assertion::new(
        "support pattern",
        (study.support.len() == study.selection.len()) == all_support,
        format!("label-SVM support {:?} of {} inputs", study.support, study.selection.len()),
    )];
    out.push(Assertion::new("v aligns with the label SVM", last.v_corr >= 0.98, format!("v corr {:.6}", last.v_corr)));
    if all_support {
        out.push(Assertion::new("p aligns with the ATT-SVM", last.p_corr >= 0.98, format!("p corr {:.6}", last.p_corr)));
    } else {
        out.push(Assertion::new("p aligns with the relaxed SVM", relax >= 0.98, format!("p corr to relaxed {relax:.6}")));
        out.push(Assertion::new(
            "relaxed beats full ATT-SVM",
            relax >= last.p_corr + 0.01,
            format!("relaxed {relax:.6} vs full {:.6}", last.p_corr),
        ));
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbabilityRecord {
    pub step: usize,
    pub softmax_prob: f64,
    pub logistic_prob: f64,
    pub v_norm: f64,
    pub p_norm: f64,
}

/// Joint normalized GD on `(v, p)` from zero; records the average top softmax
/// probability and the average logistic output probability.
pub fn joint_probabilities(ds: &TokenDataset, eta: f64, steps: usize) -> Result<Vec<ProbabilityRecord>> {
    let d = ds.dim();
    let mut params = AttentionParams::new(Vector::zeros(d), Vector::zeros(d));
    let mut out = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let sat = saturation_metrics(ds, &params.p)?;
        let preds = predict(ds, &params)?;
        let logistic = preds.iter().zip(ds.labels()).map(|(f, y)| 1.0 / (1.0 + (-y * f).exp())).sum::<f64>()
            / ds.len() as f64;
        out.push(ProbabilityRecord {
            step,
            softmax_prob: sat.avg_max_prob,
            logistic_prob: logistic,
            v_norm: params.v.norm(),
            p_norm: params.p.norm(),
        });
        if step == steps {
            break;
        }
        let (_, gv) = loss_grad_v(ds, &params, LossKind::Logistic);
        let (_, gp) = loss_grad_p(ds, &params, LossKind::Logistic);
        let n = (gv.norm_squared() + gp.norm_squared()).sqrt();
        if n == 0.0 {
            break;
        }
        params.v -= gv * (eta / n);
        params.p -= gp * (eta / n);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SaturationStudy {
    pub normalized: Trajectory,
    pub vanilla: Trajectory,
    pub normalized_hit: Option<usize>,
    pub vanilla_hit: Option<usize>,
    pub normalized_ratio: f64,
    pub vanilla_ratio: f64,
}

/// Last-quartile over first-quartile norm increment.
pub fn norm_increment_ratio(t: &Trajectory) -> f64 {
    let n: Vec<f64> = t.records.iter().map(|r| r.norm).collect();
    let m = n.len() - 1;
    let q = m / 4;
    if q == 0 {
        return f64::NAN;
    }
    (n[m] - n[m - q]) / (n[q] - n[0])
}

pub const SATURATION_TARGET: f64 = 1.0 - 1e-3;

pub fn saturation_study(ds: &TokenDataset, v: &Vector, kind: LossKind, steps: usize) -> Result<SaturationStudy> {
    let p0 = Vector::zeros(ds.dim());
    let target = gmm_direction(ds, v).ok().map(|g| g.1.solution);
    let mk = |eta| {
        let c = GdConfig::new(eta, steps).with_grad_tol(0.0);
        match &target {
            Some(t) => c.with_target(t.clone()),
            None => c,
        }
    };
    let normalized = normalized_gd(ds, v, kind, &p0, &mk(0.1))?;
    let vanilla = gd(ds, v, kind, &p0, &mk(1.0))?;
    Ok(SaturationStudy {
        normalized_hit: normalized.first_step_reaching(SATURATION_TARGET),
        vanilla_hit: vanilla.first_step_reaching(SATURATION_TARGET),
        normalized_ratio: norm_increment_ratio(&normalized),
        vanilla_ratio: norm_increment_ratio(&vanilla),
        normalized,
        vanilla,
    })
}

pub fn saturation_assertions(s: &SaturationStudy) -> Vec<Assertion> {
    let faster = match (s.normalized_hit, s.vanilla_hit) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    };
    vec![
        Assertion::new(
            "normalized GD saturates first",
            faster,
            format!("first step with max-prob >= 1-1e-3: normalized {:?}, vanilla {:?}", s.normalized_hit, s.vanilla_hit),
        ),
        Assertion::new(
            "normalized GD norm keeps growing",
            s.normalized_ratio >= 0.5,
            format!("increment ratio {:.4}", s.normalized_ratio),
        ),
        Assertion::new("vanilla GD norm growth decays", s.vanilla_ratio < 0.5, format!("increment ratio {:.4}", s.vanilla_ratio)),
    ]
}

#[derive(Clone, Debug, Serialize)]
pub struct Lemma2Instance {
    pub instance: usize,
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub max_deviation: f64,
}

/// GD on `W` against GD on `p` over random instances and random `(u, p0)`.
pub fn lemma2_study(instances: usize, steps: usize, seed: u64, source: Option<&DatasetSource>) -> Result<Vec<Lemma2Instance>> {
    (0..instances)
        .map(|k| {
            let s = trial_seed(seed, k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (ds, v) = match source {
                Some(DatasetSource::Random { n, t, d, seed }) => generate_random_dataset(*n, *t, *d, trial_seed(*seed, k as u64))?,
                Some(other) => {
                    let cfg = ExperimentConfig { dataset: Some(other.clone()), ..Default::default() };
                    let r = cfg.resolve_dataset("fig1a")?;
                    (r.dataset, r.v)
                }
                None => {
                    let (n, t, d) = (rng.random_range(1..=4), rng.random_range(2..=5), rng.random_range(2..=4));
                    generate_random_dataset(n, t, d, rng.random())?
                }
            };
            let d = ds.dim();
            let u = unit_sphere(&mut rng, d) * rng.random_range(0.5..2.0);
            let p0 = unit_sphere(&mut rng, d) * rng.random_range(0.0..1.0);
            let eta = default_step(&ds, &v, LossKind::Logistic)?;
            let rep = gd_on_w(&ds, &v, LossKind::Logistic, &u, &p0, eta, steps)?;
            Ok(Lemma2Instance { instance: k, n: ds.len(), t: ds.inputs()[0].token_count(), d, max_deviation: rep.max_deviation })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ConeFailureStudy {
    pub axis: Vector,
    pub mu: f64,
    pub points: Vec<PathPoint>,
    pub outcome: ConePathOutcome,
    pub control_selection: TokenSelection,
    pub control: Vec<PathPoint>,
}

pub const CONE_FAILURE_MU: f64 = 0.05;
pub const CONE_DEVIATION: f64 = 0.01;

/// Cone path around the normalized midpoint of the first two locally optimal
/// directions, and, as a control, around a non-global one with its own `μ`.
pub fn cone_failure_study(ds: &TokenDataset, v: &Vector, kind: LossKind) -> Result<ConeFailureStudy> {
    let keys = ds.keys();
    let lmms: Vec<_> = lmm_enumeration(ds, v, ENUMERATION_BUDGET)?.into_iter().filter(|c| c.locally_optimal).collect();
    if lmms.len() < 2 {
        return Err(Error::InvalidInput(format!("need two locally optimal directions, found {}", lmms.len())));
    }
    let unit = |s: &SvmSolution| &s.solution / s.norm;
    let axis = unit(&lmms[0].solution) + unit(&lmms[1].solution);
    let cone = ConeSpec::new(axis.clone(), CONE_FAILURE_MU, 1.0)?;
    let schedule: Vec<f64> = (0..8).map(|k| 2f64.powi(k)).collect();
    let cfg = BallConfig::default();
    let points = cone_restricted_path(ds, v, kind, &cone, &schedule, &cfg)?;
    let outcome = classify_cone_path(&points, CONE_DEVIATION).expect("nonempty schedule");

    let c = lmms.iter().find(|c| !c.globally_optimal).unwrap_or(&lmms[0]);
    let params = cone_parameters(&keys, &c.solution, &c.selection)?;
    let r0 = saturation_radius(ds, &c.solution.solution, 0.99)?;
    let control_cone = ConeSpec::new(c.solution.solution.clone(), params.mu, r0)?;
    let control_schedule: Vec<f64> = (0..6).map(|k| r0 * 2f64.powi(k)).collect();
    let control = cone_restricted_path(ds, v, kind, &control_cone, &control_schedule, &cfg)?;
    Ok(ConeFailureStudy { axis, mu: CONE_FAILURE_MU, points, outcome, control_selection: c.selection.clone(), control })
}

pub fn cone_failure_assertions(s: &ConeFailureStudy) -> Vec<Assertion> {
    let control = s.control.last().map_or(f64::NAN, |p| p.corr);
    vec![
        Assertion::new(
            "midpoint cone path does not converge to its axis",
            !matches!(s.outcome, ConePathOutcome::ConvergesToAxis { .. }),
            format!("{:?}", s.outcome),
        ),
        Assertion::new(
            "LMM cone path converges to its axis",
            control >= CORR_LEVEL,
            format!("selection {:?}, final corr {control:.6}", s.control_selection),
        ),
    ]
}

/// Criterion-style census assertions.
pub fn census_assertions(report: &CensusReport) -> Vec<Assertion> {
    let ns: Vec<f64> = report.per_d.iter().map(|s| s.non_saturated).collect();
    let decreasing = ns.windows(2).all(|w| w[1] < w[0] || (w[0] == 0.0 && w[1] == 0.0));
    let (mut corr_sum, mut corr_n, mut neg, mut sat) = (0.0, 0usize, 0.0, 0.0);
    for s in &report.per_d {
        let saturated = (1.0 - s.non_saturated) * s.trials as f64;
        if let Some(c) = s.mean_corr {
            // mean_corr averages saturated runs with a feasible SVM; weight by saturated count.
            corr_sum += c * saturated;
            corr_n += saturated.round() as usize;
        }
        if let Some(g) = s.negative_gap {
            neg += g * saturated;
        }
        sat += saturated;
    }
    let mean_corr = if corr_n > 0 { corr_sum / corr_n as f64 } else { f64::NAN };
    let neg_frac = if sat > 0.0 { neg / sat } else { f64::NAN };
    vec![
        Assertion::new("non-saturated fraction decreases with d", decreasing, format!("{ns:?}")),
        Assertion::new("saturated runs align with their max-margin direction", mean_corr >= 0.98, format!("mean corr {mean_corr:.6}")),
        Assertion::new("negative score gaps are rare", neg_frac <= 0.05, format!("fraction {neg_frac:.4}")),
    ]
}

pub fn loss_bias_assertions(reports: &[LossBiasReport]) -> Vec<Assertion> {
    let mut out: Vec<Assertion> = reports
        .iter()
        .filter_map(|r| {
            r.holds.map(|h| {
                Assertion::new(
                    format!("C = {} {}: {}", r.c, r.kind.name(), r.expected.unwrap_or("")),
                    h,
                    format!("grad norms {:.6e}, {:.6e}", r.grad_norms[0], r.grad_norms[1]),
                )
            })
        })
        .collect();
    for kind in [LossKind::Correlation, LossKind::Logistic] {
        let mut ratios: Vec<(f64, f64)> =
            reports.iter().filter(|r| r.kind == kind && r.c > 1.0).map(|r| (r.c, r.grad_norms[1] / r.grad_norms[0])).collect();
        ratios.sort_by(|a, b| a.0.total_cmp(&b.0));
        if ratios.len() >= 2 {
            let ok = ratios.windows(2).all(|w| match kind {
                LossKind::Correlation => w[1].1 > w[0].1,
                _ => w[1].1 < w[0].1,
            });
            out.push(Assertion::new(
                format!("{} input-2 influence trend in C", kind.name()),
                ok,
                format!("{ratios:?}"),
            ));
        }
    }
    out
}

fn path_rows(pts: &[JointPathPoint], relaxed: &[f64]) -> Vec<Vec<String>> {
    pts.iter()
        .zip(relaxed)
        .map(|(p, rc)| {
            vec![
                p.r.to_string(),
                p.big_r.to_string(),
                p.v.norm().to_string(),
                p.p.norm().to_string(),
                p.loss.to_string(),
                p.v_corr.to_string(),
                p.p_corr.to_string(),
                rc.to_string(),
            ]
        })
        .collect()
}

const JOINT_HEADER: [&str; 8] = ["r", "R", "v_norm", "p_norm", "loss", "v_corr", "p_corr", "p_corr_relaxed"];

/// Runs `cfg`'s scenario and writes its artifacts under `out`.
pub fn run_scenario(cfg: &ExperimentConfig, out: &Path) -> Result<ScenarioSummary> {
    cfg.validate()?;
    let name = cfg.scenario_name()?.to_string();
    let start = Instant::now();
    let mut art = Artifacts::new(out)?;
    let seed = cfg.seed.unwrap_or(0);
    let kind = cfg.loss_kind();
    let (dataset, assertions, metrics) = match name.as_str() {
        "fig1_global" => {
            let r = cfg.resolve_dataset("fig1a")?;
            let (eta, steps) = cfg.schedule_or(0.1, 2000);
            let opt = cfg.optimizer_kind_or(OptimizerKind::NormalizedGd);
            let runs = global_runs(&r.dataset, &r.v, kind, opt, eta, steps, cfg.trials.unwrap_or(8), seed)?;
            for (k, t) in runs.trajectories.iter().enumerate() {
                art.trajectory(&format!("trajectory_{k}.csv"), t)?;
            }
            let schedule = [1.0, 2.0, 5.0, 10.0, 20.0, 40.0];
            let path = regularization_path(&r.dataset, &r.v, kind, &schedule, &runs.gmm.solution, &BallConfig::default())?;
            art.reg_path("path.csv", &path)?;
            art.json("gmm.json", &runs.gmm.to_file())?;
            let worst = runs.final_corrs.iter().copied().fold(f64::INFINITY, f64::min);
            let corrs: Vec<f64> = path.iter().map(|p| p.corr).collect();
            let last = *corrs.last().expect("nonempty");
            let monotone = corrs.windows(2).all(|w| w[1] >= w[0] - 1e-3);
            (
                r.label,
                vec![
                    Assertion::new("every start converges to the GMM direction", worst >= CORR_LEVEL, format!("min final corr {worst:.6}")),
                    Assertion::new("regularization path reaches the GMM direction", last >= 0.999, format!("corr at R=40 {last:.6}")),
                    Assertion::new("path correlation is nondecreasing", monotone, format!("{corrs:?}")),
                ],
                json!({"final_corrs": runs.final_corrs, "path_corrs": corrs, "gmm_selection": runs.selection}),
            )
        }
        "fig1_local" => {
            let r = cfg.resolve_dataset("fig1b")?;
            let (eta, steps) = cfg.schedule_or(0.1, 2000);
            let runs = local_runs(&r.dataset, &r.v, kind, eta, steps, seed)?;
            art.json("local_runs.json", &runs)?;
            (r.label, local_assertions(&runs), json!({"studies": runs.studies.len(), "outside": runs.outside.len()}))
        }
        "fig1_multi" => {
            let r = cfg.resolve_dataset("fig1c")?;
            let (eta, steps) = cfg.schedule_or(0.1, 2000);
            let (sel, gmm) = gmm_direction(&r.dataset, &r.v)?;
            let p0 = Vector::zeros(r.dataset.dim());
            let cfg_gd = GdConfig::new(eta, steps).with_target(gmm.solution.clone());
            let traj = normalized_gd(&r.dataset, &r.v, kind, &p0, &cfg_gd)?;
            art.trajectory("normalized.csv", &traj)?;
            let schedule = [1.0, 2.0, 5.0, 10.0, 20.0, 40.0];
            let path = regularization_path(&r.dataset, &r.v, kind, &schedule, &gmm.solution, &BallConfig::default())?;
            art.reg_path("path.csv", &path)?;
            let c = traj.last().corr.unwrap_or(f64::NAN);
            let pc = path.last().map_or(f64::NAN, |p| p.corr);
            (
                r.label,
                vec![
                    Assertion::new("normalized GD converges to the GMM direction", c >= CORR_LEVEL, format!("final corr {c:.6}")),
                    Assertion::new("regularization path converges to the GMM direction", pc >= CORR_LEVEL, format!("corr at R=40 {pc:.6}")),
                ],
                json!({"gmm_selection": sel, "gmm": vec_json(&gmm.solution), "final_corr": c, "path_corr": pc}),
            )
        }
        "fig2_joint_support" | "fig2_joint_nonsupport" => {
            let support = name == "fig2_joint_support";
            let r = cfg.resolve_dataset(if support { "fig2a" } else { "fig2b" })?;
            let study = joint_study(&r.dataset, &r.v, &doubling_schedule(8))?;
            art.csv("joint_path.csv", &JOINT_HEADER, path_rows(&study.points, &study.p_corr_relaxed))?;
            art.json(
                "svm.json",
                &json!({"label": study.label.to_file(), "att": study.mm.to_file(), "relaxed": study.relaxed.to_file(), "support": study.support}),
            )?;
            (r.label, joint_assertions(&study, support), json!({"support": study.support}))
        }
        "fig2_probabilities" => {
            let r = cfg.resolve_dataset("fig2a")?;
            let (eta, steps) = cfg.schedule_or(0.1, 2000);
            let recs = joint_probabilities(&r.dataset, eta, steps)?;
            art.csv(
                "probabilities.csv",
                &["step", "softmax_prob", "logistic_prob", "v_norm", "p_norm"],
                recs.iter().map(|x| {
                    vec![x.step.to_string(), x.softmax_prob.to_string(), x.logistic_prob.to_string(), x.v_norm.to_string(), x.p_norm.to_string()]
                }),
            )?;
            let last = recs.last().expect("initial record");
            (
                r.label,
                vec![
                    Assertion::new("softmax selects the optimal tokens", last.softmax_prob >= CORR_LEVEL, format!("{:.6}", last.softmax_prob)),
                    Assertion::new("outputs are classified confidently", last.logistic_prob >= CORR_LEVEL, format!("{:.6}", last.logistic_prob)),
                ],
                json!({"softmax_prob": last.softmax_prob, "logistic_prob": last.logistic_prob}),
            )
        }
        "fig3_loss_bias" => {
            let ratios = cfg.ratios.clone().unwrap_or_else(|| vec![1.0, 2.0, 3.0, 5.0]);
            let (_, steps) = cfg.schedule_or(1.0, 500);
            let mut reports = Vec::new();
            for &c in &ratios {
                for k in [LossKind::Correlation, LossKind::Logistic] {
                    reports.push(loss_bias_probe(c, k, steps)?);
                }
            }
            art.csv(
                "loss_bias_trajectories.csv",
                &["C", "loss", "step", "grad_norm_1", "grad_norm_2"],
                reports.iter().flat_map(|r| {
                    r.trajectory.iter().map(move |&(s, a, b)| {
                        vec![r.c.to_string(), r.kind.name().to_string(), s.to_string(), a.to_string(), b.to_string()]
                    })
                }),
            )?;
            let summary: Vec<_> = reports
                .iter()
                .map(|r| json!({"C": r.c, "loss": r.kind, "grad_norms": r.grad_norms, "expected": r.expected, "holds": r.holds}))
                .collect();
            art.json("loss_bias.json", &summary)?;
            ("builtin:loss_bias".to_string(), loss_bias_assertions(&reports), json!({"reference_p": vec_json(&super::bias::bias_reference_point())}))
        }
        "fig4_census" => {
            let seed = match (&cfg.dataset, cfg.seed) {
                (_, Some(s)) => s,
                (Some(DatasetSource::Random { seed, .. }), None) => *seed,
                _ => return Err(Error::InvalidInput("fig4_census needs a seed".into())),
            };
            let mut spec = CensusSpec::new(seed);
            if let Some(DatasetSource::Random { n, t, .. }) = &cfg.dataset {
                spec.n = *n;
                spec.t = *t;
            }
            if let Some(d) = &cfg.dims {
                spec.dims = d.clone();
            }
            spec.trials = cfg.trials.unwrap_or(spec.trials);
            spec.jobs = cfg.jobs;
            (spec.eta, spec.steps) = cfg.schedule_or(spec.eta, spec.steps);
            let (rows, report) = run_census(&spec)?;
            let p = art.path("census.csv");
            write_census_csv(&rows, std::fs::File::create(p)?)?;
            art.json("census_report.json", &report)?;
            let label = format!("random:n={},T={},seed={}", spec.n, spec.t, spec.seed);
            (label, census_assertions(&report), serde_json::to_value(&report.per_d)?)
        }
        "saturation_dynamics" => {
            let r = cfg.resolve_dataset("fig1c")?;
            let (_, steps) = cfg.schedule_or(0.1, 2000);
            let s = saturation_study(&r.dataset, &r.v, kind, steps)?;
            art.trajectory("normalized.csv", &s.normalized)?;
            art.trajectory("vanilla.csv", &s.vanilla)?;
            (
                r.label,
                saturation_assertions(&s),
                json!({"normalized_hit": s.normalized_hit, "vanilla_hit": s.vanilla_hit,
                       "normalized_ratio": s.normalized_ratio, "vanilla_ratio": s.vanilla_ratio}),
            )
        }
        "lemma2_equivalence" => {
            let (_, steps) = cfg.schedule_or(1.0, 100);
            let rows = lemma2_study(cfg.trials.unwrap_or(20), steps, seed, cfg.dataset.as_ref())?;
            art.csv(
                "lemma2.csv",
                &["instance", "n", "T", "d", "max_deviation"],
                rows.iter().map(|r| {
                    vec![r.instance.to_string(), r.n.to_string(), r.t.to_string(), r.d.to_string(), r.max_deviation.to_string()]
                }),
            )?;
            let worst = rows.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
            (
                "random".to_string(),
                vec![Assertion::new("W iterates track u p^T/|u|^2", worst <= 1e-8, format!("max deviation {worst:.3e}"))],
                json!({"max_deviation": worst}),
            )
        }
        "cone_failure" => {
            let r = cfg.resolve_dataset("fig1b")?;
            let s = cone_failure_study(&r.dataset, &r.v, kind)?;
            art.reg_path("midpoint_path.csv", &s.points)?;
            art.reg_path("control_path.csv", &s.control)?;
            (
                r.label,
                cone_failure_assertions(&s),
                json!({"axis": vec_json(&s.axis), "mu": s.mu, "outcome": s.outcome}),
            )
        }
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    let mut summary = ScenarioSummary {
        scenario: name,
        dataset,
        passed: assertions.iter().all(|a| a.passed),
        assertions,
        artifacts: Vec::new(),
        metrics,
        seconds: 0.0,
    };
    let summary_path = art.path("summary.json");
    summary.artifacts = art.files.clone();
    summary.seconds = start.elapsed().as_secs_f64();
    std::fs::write(summary_path, serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
