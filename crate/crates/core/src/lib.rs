//! Single-layer softmax attention: training model, max-margin token-selection
//! programs, gradient methods and the geometry used to diagnose their limits.

pub mod dataset;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod svm;

pub use dataset::{InputRecord, TokenDataset};
pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use loss::{LossConstants, LossKind};
pub use model::{AttentionParams, ScoreTable};
pub use svm::{att_svm, label_svm, qp_oracle, relaxed_att_svm, SvmSolution, SvmStatus, TokenSelection};
