//! Second-order gradient boosting of depth-1 trees with logistic loss.
//!
//! Missing feature values are routed per stump to whichever side gave the
//! larger gain during training.

mod binning;
mod ensemble;
mod io;
mod loss;
mod stump;
mod train;

use thiserror::Error;

pub use binning::{bin_feature, compute_cuts, BinnedFeature, BinnedMatrix, FeatureMatrix};
pub use ensemble::StumpEnsemble;
pub use io::{load_model, read_model, save_model, write_model, SCHEMA_VERSION};
pub use loss::{log_loss, logistic_grad_hess, mean_log_loss, sigmoid};
pub use stump::{fit_stump, leaf_weight, split_gain, SplitParams, SplitResult, Stump};
pub use train::{train, train_matrix, RoundStats, StopReason, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("no split satisfies the child-hessian constraint with positive gain")]
    NoValidSplit,
    #[error("{0} fold has a single class")]
    DegenerateLabels(&'static str),
    #[error("expected {expected} features, got {got}")]
    FeatureCountMismatch { expected: usize, got: usize },
    #[error("model schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { expected: u32, found: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
