//! Reference instances, random generation and the scenario runner.

pub mod bias;
pub mod census;
pub mod checks;
pub mod config;
pub mod instances;
pub mod random;
pub mod scenarios;

pub use bias::{loss_bias_probe, LossBiasReport};
pub use census::{run_census, write_census_csv, CensusReport, CensusRow, CensusSpec, CensusSummary};
pub use checks::{run_checks, CheckResult, CRITERIA};
pub use config::{DatasetSource, ExperimentConfig, OptimizerKind, OptimizerSpec, Target, SCENARIOS};
pub use instances::{builtin, BuiltinInstance};
pub use random::{generate_random_dataset, trial_seed};
pub use scenarios::{run_scenario, Assertion, ScenarioSummary};
