use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::TokenDataset;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::loss::LossKind;

use super::instances::builtin;
use super::random::generate_random_dataset;

pub const SCENARIOS: [&str; 11] = [
    "fig1_global",
    "fig1_local",
    "fig1_multi",
    "fig2_joint_support",
    "fig2_joint_nonsupport",
    "fig2_probabilities",
    "fig3_loss_bias",
    "fig4_census",
    "saturation_dynamics",
    "lemma2_equivalence",
    "cone_failure",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Builtin { name: String },
    Random { n: usize, t: usize, d: usize, seed: u64 },
    /// Dataset JSON file; the head comes from `ExperimentConfig::head`.
    File { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Gd,
    NormalizedGd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub steps: Option<usize>,
}

/// Directions a run can be correlated against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// ATT-SVM direction of the optimal tokens.
    Gmm,
    /// ATT-SVM direction of the tokens the run ends up selecting.
    Selected,
    Label,
    Relaxed,
}

/// Everything except the scenario name is optional; scenarios fall back to
/// their own defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub dataset: Option<DatasetSource>,
    #[serde(default)]
    pub head: Option<Vec<f64>>,
    #[serde(default)]
    pub optimizer: Option<OptimizerSpec>,
    #[serde(default)]
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub targets: Vec<Target>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Census dimensions.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    /// Score ratios for the loss-bias probe.
    #[serde(default)]
    pub ratios: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn for_scenario(name: &str) -> Self {
        Self { scenario: Some(name.to_string()), ..Self::default() }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn scenario_name(&self) -> Result<&str> {
        let name = self.scenario.as_deref().ok_or_else(|| Error::InvalidInput("no scenario given".into()))?;
        if !SCENARIOS.contains(&name) {
            return Err(Error::UnknownScenario(name.to_string()));
        }
        Ok(name)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario_name()?;
        if let Some(o) = &self.optimizer {
            if let Some(eta) = o.eta {
                if !(eta > 0.0 && eta.is_finite()) {
                    return Err(Error::InvalidInput(format!("optimizer eta {eta} must be positive")));
                }
            }
        }
        if self.trials == Some(0) {
            return Err(Error::InvalidInput("trials must be positive".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidInput("jobs must be positive".into()));
        }
        if let Some(dims) = &self.dims {
            if dims.is_empty() || dims.contains(&0) {
                return Err(Error::InvalidInput("census dims must be nonempty and positive".into()));
            }
        }
        if let Some(r) = &self.ratios {
            if r.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
                return Err(Error::InvalidInput("score ratios must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss.unwrap_or(LossKind::Logistic)
    }

    /// `(eta, steps)` from the optimizer spec, else the given defaults.
    pub fn schedule_or(&self, eta: f64, steps: usize) -> (f64, usize) {
        match &self.optimizer {
            Some(o) => (o.eta.unwrap_or(eta), o.steps.unwrap_or(steps)),
            None => (eta, steps),
        }
    }

    pub fn optimizer_kind_or(&self, kind: OptimizerKind) -> OptimizerKind {
        self.optimizer.as_ref().map_or(kind, |o| o.kind)
    }

    /// Dataset and head for the configured source, or the named builtin.
    pub fn resolve_dataset(&self, default_builtin: &str) -> Result<ResolvedDataset> {
        let source = self.dataset.clone().unwrap_or(DatasetSource::Builtin { name: default_builtin.to_string() });
        let head_override = self.head.as_ref().map(|h| Vector::from_column_slice(h));
        let (dataset, v, label) = match &source {
            DatasetSource::Builtin { name } => {
                let inst = builtin(name)?;
                (inst.dataset, inst.v, format!("builtin:{name}"))
            }
            DatasetSource::Random { n, t, d, seed } => {
                let (ds, v) = generate_random_dataset(*n, *t, *d, *seed)?;
                (ds, v, format!("random:n={n},T={t},d={d},seed={seed}"))
            }
            DatasetSource::File { path } => {
                let ds = TokenDataset::load(path)?;
                let v = head_override
                    .clone()
                    .ok_or_else(|| Error::InvalidInput("a file dataset needs `head` in the config".into()))?;
                (ds, v, format!("file:{}", path.display()))
            }
        };
        let v = head_override.unwrap_or(v);
        if v.len() != dataset.dim() {
            return Err(Error::DimensionMismatch(format!("head has length {} but d = {}", v.len(), dataset.dim())));
        }
        Ok(ResolvedDataset { dataset, v, label })
    }
}

#[derive(Clone, Debug)]
pub struct ResolvedDataset {
    pub dataset: TokenDataset,
    pub v: Vector,
    pub label: String,
}
