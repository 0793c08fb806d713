//! Random-trial census: how often normalized GD saturates the softmax and
//! whether the tokens it selects form a locally or globally optimal
//! max-margin direction.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{local_optimality_check, optimal_tokens, saturation_metrics, score_gap, selected_tokens, svm_neighbors};
use crate::linalg::{correlation, Vector};
use crate::loss::LossKind;
use crate::model::token_scores;
use crate::optim::{csv_err, normalized_gd, GdConfig};
use crate::svm::att_svm;

use super::random::{generate_random_dataset, trial_seed};

pub const CENSUS_HEADER: [&str; 7] = ["d", "trial", "saturated", "lmm_match", "gmm_match", "corr", "score_gap"];
pub const SATURATION_LEVEL: f64 = 1.0 - 1e-5;
pub const MATCH_CORR: f64 = 0.99;
pub const HISTOGRAM_BIN: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CensusSpec {
    pub n: usize,
    pub t: usize,
    pub dims: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub steps: usize,
    pub eta: f64,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl CensusSpec {
    pub fn new(seed: u64) -> Self {
        Self { n: 6, t: 10, dims: vec![2, 4, 8, 16, 32, 64], trials: 200, seed, steps: 1000, eta: 1.0, jobs: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CensusRow {
    pub d: usize,
    pub trial: usize,
    pub saturated: bool,
    pub lmm_match: bool,
    pub gmm_match: bool,
    /// Correlation of the final iterate with the max-margin direction of its selected tokens.
    pub corr: Option<f64>,
    pub score_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CensusSummary {
    pub d: usize,
    pub trials: usize,
    pub non_saturated: f64,
    pub lmm_matched: f64,
    pub gmm_matched: f64,
    /// Saturated but not LMM-matched.
    pub residual: f64,
    /// Mean over saturated runs with a feasible max-margin problem.
    pub mean_corr: Option<f64>,
    /// Fraction of saturated runs with a negative score gap.
    pub negative_gap: Option<f64>,
    pub gap_histogram: Vec<HistogramBin>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CensusReport {
    pub spec: CensusSpec,
    pub per_d: Vec<CensusSummary>,
}

/// One trial: normalized GD from zero, then classify the selected tokens.
pub fn census_trial(n: usize, t: usize, d: usize, seed: u64, steps: usize, eta: f64) -> Result<CensusRow> {
    let (ds, v) = generate_random_dataset(n, t, d, seed)?;
    let traj = normalized_gd(&ds, &v, LossKind::Logistic, &Vector::zeros(d), &GdConfig::new(eta, steps))?;
    let p = &traj.final_iterate;
    let mut row = CensusRow { d, trial: 0, saturated: false, lmm_match: false, gmm_match: false, corr: None, score_gap: None };
    if p.norm() == 0.0 || saturation_metrics(&ds, p)?.avg_max_prob < SATURATION_LEVEL {
        return Ok(row);
    }
    row.saturated = true;
    let keys = ds.keys();
    let alpha = selected_tokens(&keys, p)?.canonical;
    let svm = att_svm(&keys, &alpha)?;
    if !svm.is_optimal() {
        return Ok(row);
    }
    let scores = token_scores(&ds, &v)?;
    let neighbors = svm_neighbors(&keys, &svm, &alpha)?;
    let corr = correlation(p, &svm.solution);
    let local = local_optimality_check(&scores, &neighbors, &alpha).overall;
    let global = alpha.iter().zip(&optimal_tokens(&scores).ties).all(|(a, ties)| ties.contains(a));
    row.corr = Some(corr);
    row.score_gap = Some(score_gap(&scores, &alpha, &neighbors));
    row.lmm_match = local && corr >= MATCH_CORR;
    row.gmm_match = row.lmm_match && global;
    Ok(row)
}

fn trial_stream(d: usize, trial: usize) -> u64 {
    ((d as u64) << 32) | trial as u64
}

pub fn run_census(spec: &CensusSpec) -> Result<(Vec<CensusRow>, CensusReport)> {
    if spec.trials == 0 || spec.dims.is_empty() || spec.dims.contains(&0) || spec.n == 0 || spec.t == 0 {
        return Err(Error::InvalidInput("census needs positive n, T, trials and dims".into()));
    }
    let jobs: Vec<(usize, usize)> = spec.dims.iter().flat_map(|&d| (0..spec.trials).map(move |k| (d, k))).collect();
    let work = || -> Result<Vec<CensusRow>> {
        jobs.par_iter()
            .map(|&(d, k)| {
                let seed = trial_seed(spec.seed, trial_stream(d, k));
                let mut row = census_trial(spec.n, spec.t, d, seed, spec.steps, spec.eta)?;
                row.trial = k;
                Ok(row)
            })
            .collect()
    };
    let rows = match spec.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let per_d = spec.dims.iter().map(|&d| summarize(d, rows.iter().filter(|r| r.d == d))).collect();
    Ok((rows, CensusReport { spec: spec.clone(), per_d }))
}

fn summarize<'a>(d: usize, rows: impl Iterator<Item = &'a CensusRow>) -> CensusSummary {
    let rows: Vec<&CensusRow> = rows.collect();
    let total = rows.len() as f64;
    let frac = |k: usize| if rows.is_empty() { 0.0 } else { k as f64 / total };
    let saturated: Vec<&&CensusRow> = rows.iter().filter(|r| r.saturated).collect();
    let lmm = rows.iter().filter(|r| r.lmm_match).count();
    let corrs: Vec<f64> = saturated.iter().filter_map(|r| r.corr).collect();
    let gaps: Vec<f64> = saturated.iter().filter_map(|r| r.score_gap).filter(|g| g.is_finite()).collect();
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for g in &gaps {
        *bins.entry((g / HISTOGRAM_BIN).floor() as i64).or_default() += 1;
    }
    CensusSummary {
        d,
        trials: rows.len(),
        non_saturated: frac(rows.len() - saturated.len()),
        lmm_matched: frac(lmm),
        gmm_matched: frac(rows.iter().filter(|r| r.gmm_match).count()),
        residual: frac(saturated.len() - lmm),
        mean_corr: (!corrs.is_empty()).then(|| corrs.iter().sum::<f64>() / corrs.len() as f64),
        negative_gap: (!saturated.is_empty()).then(|| {
            saturated.iter().filter(|r| r.score_gap.is_some_and(|g| g < 0.0)).count() as f64 / saturated.len() as f64
        }),
        gap_histogram: bins.into_iter().map(|(k, count)| HistogramBin { lower: k as f64 * HISTOGRAM_BIN, count }).collect(),
    }
}

pub fn write_census_csv<W: Write>(rows: &[CensusRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CENSUS_HEADER).map_err(csv_err)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.d.to_string(),
            r.trial.to_string(),
            r.saturated.to_string(),
            r.lmm_match.to_string(),
            r.gmm_match.to_string(),
            opt(r.corr),
            opt(r.score_gap),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn census_csv_bytes(rows: &[CensusRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_census_csv(rows, &mut buf)?;
    Ok(buf)
}
